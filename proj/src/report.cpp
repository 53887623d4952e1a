#include "oisa/report.hpp"

#include "oisa/assembly.hpp"
#include "oisa/error.hpp"

#include <algorithm>
#include <iomanip>
#include <set>
#include <sstream>

namespace oisa::report {

namespace {

nlohmann::json split_json(const eval::SplitSummary& s) {
  return {{"count", s.count}, {"J", s.j},   {"F", s.f}, {"JF", s.jf}, {"meteor_count", s.meteor_count},
          {"METEOR", s.meteor}};
}

eval::SplitSummary split_from(const nlohmann::json& j) {
  eval::SplitSummary s;
  s.count = j.value("count", 0);
  s.j = j.value("J", 0.0);
  s.f = j.value("F", 0.0);
  s.jf = j.value("JF", 0.0);
  s.meteor_count = j.value("meteor_count", 0);
  s.meteor = j.value("METEOR", 0.0);
  return s;
}

std::string pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << 100.0 * v;
  return os.str();
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

// Rows for one ablation: runs sharing every setting except `key`.
void comparison(std::ostringstream& md, const std::string& title, const std::string& column,
                const std::vector<std::pair<std::string, const RunEntry*>>& rows) {
  md << "## " << title << "\n\n| " << column << " | run | J | F | J&F |\n|---|---|---|---|---|\n";
  for (const auto& [label, r] : rows)
    md << "| " << label << " | " << r->name << " | " << pct(r->overall.j) << " | " << pct(r->overall.f) << " | "
       << pct(r->overall.jf) << " |\n";
  md << '\n';
}

}  // namespace

nlohmann::json summary_to_json(const eval::EvalReport& rep, const std::optional<std::string>& regime,
                               const std::optional<std::string>& layout) {
  nlohmann::json j;
  j["overall"] = split_json(rep.overall);
  nlohmann::json splits = nlohmann::json::object();
  for (const auto& [form, s] : rep.splits) splits[data::to_string(form)] = split_json(s);
  j["splits"] = splits;
  j["missing"] = rep.missing;
  j["regime"] = regime ? nlohmann::json(*regime) : nlohmann::json();
  j["layout"] = layout ? nlohmann::json(*layout) : nlohmann::json();
  return j;
}

RunEntry run_from_json(const std::string& name, const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("overall")) throw DataError("run " + name + ": summary has no overall scores");
  RunEntry r;
  r.name = name;
  if (j.contains("regime") && j["regime"].is_string()) r.regime = j["regime"].get<std::string>();
  if (j.contains("layout") && j["layout"].is_string()) r.layout = j["layout"].get<std::string>();
  r.overall = split_from(j.at("overall"));
  if (j.contains("splits"))
    for (const auto& [k, v] : j.at("splits").items()) r.splits[data::parse_form(k)] = split_from(v);
  return r;
}

Rendered render(const std::vector<RunEntry>& runs, const std::vector<std::string>& missing) {
  std::ostringstream md;
  md << "# Evaluation report\n\n";
  if (runs.empty()) {
    md << "No evaluated runs were found; this report is empty.\n";
    if (!missing.empty()) {
      md << "\nMissing runs:\n";
      for (const auto& m : missing) md << "- " << m << '\n';
    }
    return {md.str(), "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"320\" height=\"40\"><text x=\"8\" y=\"24\">"
                      "no runs</text></svg>\n"};
  }

  md << "## Per-split J&F\n\n| run |";
  for (auto f : data::kAllForms) md << ' ' << data::to_string(f) << " |";
  md << " All | METEOR |\n|---|";
  for (std::size_t i = 0; i < std::size(data::kAllForms); ++i) md << "---|";
  md << "---|---|\n";
  for (const auto& r : runs) {
    md << "| " << r.name << " |";
    for (auto f : data::kAllForms) {
      auto it = r.splits.find(f);
      md << ' ' << (it == r.splits.end() ? std::string("-") : pct(it->second.jf)) << " |";
    }
    md << ' ' << pct(r.overall.jf) << " | " << (r.overall.meteor_count ? pct(r.overall.meteor) : std::string("-"))
       << " |\n";
  }
  md << '\n';

  std::set<std::string> regimes, layouts;
  for (const auto& r : runs) {
    if (r.regime) regimes.insert(*r.regime);
    if (r.layout) layouts.insert(*r.layout);
  }
  if (regimes.size() > 1) {
    std::vector<std::pair<std::string, const RunEntry*>> rows;
    for (const std::string name : {"OTSA", "QP"})
      for (const auto& r : runs)
        if (r.regime == name) rows.emplace_back(name, &r);
    comparison(md, "Query type", "query", rows);
  }
  if (layouts.size() > 1) {
    std::vector<std::pair<std::string, const RunEntry*>> rows;
    for (auto l : {assembly::Layout::WEIGHTED_SUM, assembly::Layout::ATTENTION, assembly::Layout::CONCAT,
                   assembly::Layout::AVI, assembly::Layout::AVI_CONCAT})
      for (const auto& r : runs)
        if (r.layout == assembly::to_string(l)) rows.emplace_back(assembly::to_string(l), &r);
    comparison(md, "Fusion type", "fusion", rows);
  }
  if (!missing.empty()) {
    md << "## Missing runs\n\n";
    for (const auto& m : missing) md << "- " << m << '\n';
  }

  const int bar_w = 48, gap = 16, h = 200, top = 20, base = top + h;
  const int width = gap + static_cast<int>(runs.size()) * (bar_w + gap);
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << base + 40 << "\">\n";
  svg << "<line x1=\"0\" y1=\"" << base << "\" x2=\"" << width << "\" y2=\"" << base << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const double v = std::clamp(runs[i].overall.jf, 0.0, 1.0);
    const int x = gap + static_cast<int>(i) * (bar_w + gap);
    const int bh = static_cast<int>(v * h + 0.5);
    svg << "<rect x=\"" << x << "\" y=\"" << base - bh << "\" width=\"" << bar_w << "\" height=\"" << bh
        << "\" fill=\"steelblue\"/>\n";
    svg << "<text x=\"" << x << "\" y=\"" << base - bh - 4 << "\" font-size=\"11\">" << pct(v) << "</text>\n";
    svg << "<text x=\"" << x << "\" y=\"" << base + 16 << "\" font-size=\"11\">" << escape(runs[i].name)
        << "</text>\n";
  }
  svg << "</svg>\n";
  return {md.str(), svg.str()};
}

}  // namespace oisa::report
