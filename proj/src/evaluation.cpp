#include "oisa/evaluation.hpp"

#include "oisa/error.hpp"
#include "oisa/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace oisa::eval {

namespace {

void same_shape(const data::MaskGrid& a, const data::MaskGrid& b, const char* what) {
  if (a.height != b.height || a.width != b.width)
    throw DataError(std::string(what) + ": resolution mismatch " + std::to_string(a.height) + "x" +
                    std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
}

// Pixels of `b` that lie within `tol` of some set pixel of `a`.
std::size_t matched(const data::MaskGrid& b, const data::MaskGrid& a, double tol) {
  const int r = static_cast<int>(std::floor(tol));
  std::vector<std::pair<int, int>> disk;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (dy * dy + dx * dx <= tol * tol) disk.emplace_back(dy, dx);
  std::size_t n = 0;
  for (int y = 0; y < b.height; ++y)
    for (int x = 0; x < b.width; ++x) {
      if (!b.at(y, x)) continue;
      for (const auto& [dy, dx] : disk) {
        const int yy = y + dy, xx = x + dx;
        if (yy >= 0 && yy < a.height && xx >= 0 && xx < a.width && a.at(yy, xx)) {
          ++n;
          break;
        }
      }
    }
  return n;
}

}  // namespace

double region_j(const data::MaskGrid& pred, const data::MaskGrid& gt) {
  same_shape(pred, gt, "region_j");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.cells.size(); ++i) {
    inter += pred.cells[i] && gt.cells[i];
    uni += pred.cells[i] || gt.cells[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

data::MaskGrid boundary(const data::MaskGrid& mask) {
  data::MaskGrid out(mask.height, mask.width);
  auto inside = [&](int y, int x) { return y >= 0 && y < mask.height && x >= 0 && x < mask.width && mask.at(y, x); };
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x) && !(inside(y - 1, x) && inside(y + 1, x) && inside(y, x - 1) && inside(y, x + 1)))
        out.at(y, x) = 1;
  return out;
}

double boundary_f(const data::MaskGrid& pred, const data::MaskGrid& gt, double tolerance) {
  same_shape(pred, gt, "boundary_f");
  const auto bp = boundary(pred), bg = boundary(gt);
  const std::size_t np = bp.area(), ng = bg.area();
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  const double precision = static_cast<double>(matched(bp, bg, tolerance)) / static_cast<double>(np);
  const double recall = static_cast<double>(matched(bg, bp, tolerance)) / static_cast<double>(ng);
  if (precision + recall == 0) return 0.0;
  return 2 * precision * recall / (precision + recall);
}

double default_tolerance(int height, int width) {
  return std::max(1.0, 0.008 * std::sqrt(static_cast<double>(height) * height + static_cast<double>(width) * width));
}

Score evaluate_expression(const std::vector<data::MaskGrid>& pred, const std::vector<data::MaskGrid>& gt,
                          bool no_target, double tolerance) {
  if (pred.size() != gt.size())
    throw DataError("prediction has " + std::to_string(pred.size()) + " frames, ground truth " +
                    std::to_string(gt.size()));
  Score s;
  if (no_target) {
    const bool empty = std::all_of(pred.begin(), pred.end(), [](const data::MaskGrid& m) { return m.empty(); });
    s.j = s.f = s.jf = empty ? 1.0 : 0.0;
    return s;
  }
  if (pred.empty()) return s;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    s.j += region_j(pred[i], gt[i]);
    s.f += boundary_f(pred[i], gt[i], tolerance);
  }
  s.j /= static_cast<double>(pred.size());
  s.f /= static_cast<double>(pred.size());
  s.jf = (s.j + s.f) / 2;
  return s;
}

std::optional<MeteorStats> meteor(const std::string& candidate, const std::string& reference) {
  const auto cand = split_words(candidate), ref = split_words(reference);
  if (ref.empty()) return std::nullopt;
  MeteorStats st;
  if (cand.empty()) return st;
  std::vector<int> align(cand.size(), -1);  // candidate position -> reference position
  std::vector<bool> used(ref.size(), false);
  auto stage = [&](auto key) {
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (align[i] >= 0) continue;
      const auto k = key(cand[i]);
      for (std::size_t r = 0; r < ref.size(); ++r)
        if (!used[r] && key(ref[r]) == k) {
          align[i] = static_cast<int>(r);
          used[r] = true;
          break;
        }
    }
  };
  auto lower = [](const std::string& w) {
    std::string out;
    for (char c : w) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    return out;
  };
  stage(lower);
  stage([&](const std::string& w) { return porter_stem(lower(w)); });

  int prev = -2;
  for (int a : align) {
    if (a < 0) {
      prev = -2;
      continue;
    }
    ++st.matches;
    if (a != prev + 1) ++st.chunks;
    prev = a;
  }
  if (st.matches == 0) return st;
  st.precision = static_cast<double>(st.matches) / static_cast<double>(cand.size());
  st.recall = static_cast<double>(st.matches) / static_cast<double>(ref.size());
  st.fmean = 10 * st.precision * st.recall / (st.recall + 9 * st.precision);
  st.penalty = 0.5 * std::pow(static_cast<double>(st.chunks) / st.matches, 3);
  st.score = st.fmean * (1 - st.penalty);
  return st;
}

std::optional<double> meteor_score(const std::string& candidate, const std::string& reference) {
  const auto st = meteor(candidate, reference);
  if (!st) return std::nullopt;
  return st->score;
}

std::filesystem::path prediction_frame_path(const std::filesystem::path& dir, const std::string& sample_id,
                                            const std::string& expression_id, int frame) {
  char name[32];
  std::snprintf(name, sizeof name, "frame_%05d.rle", frame);
  return dir / sample_id / expression_id / name;
}

void write_prediction(const std::filesystem::path& dir, const std::string& sample_id, const std::string& expression_id,
                      const std::vector<data::MaskGrid>& frames, const std::string& answer,
                      const std::optional<std::string>& explanation) {
  const auto base = dir / sample_id / expression_id;
  std::filesystem::create_directories(base);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    std::ofstream out(prediction_frame_path(dir, sample_id, expression_id, static_cast<int>(f)));
    if (!out) throw DataError("cannot write prediction under " + base.string());
    out << data::rle_to_text(data::encode_rle(frames[f]));
  }
  std::ofstream(base / "answer.txt") << answer << '\n';
  if (explanation) std::ofstream(base / "explanation.txt") << *explanation << '\n';
}

namespace {

std::optional<std::string> read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) return std::nullopt;
  std::stringstream ss;
  ss << in.rdbuf();
  std::string s = ss.str();
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

void add(SplitSummary& s, const ExpressionResult& r) {
  ++s.count;
  s.j += r.score.j;
  s.f += r.score.f;
  s.jf += r.score.jf;
  if (r.meteor) {
    ++s.meteor_count;
    s.meteor += *r.meteor;
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

EvalReport evaluate_dataset(const data::Manifest& manifest, const std::filesystem::path& predictions,
                            std::optional<double> tolerance) {
  EvalReport rep;
  for (const auto& s : manifest.samples) {
    const int n = static_cast<int>(s.frames.size());
    const double tol = tolerance.value_or(default_tolerance(s.height, s.width));
    for (const auto& e : s.expressions) {
      ExpressionResult r;
      r.sample_id = s.id;
      r.expression_id = e.id;
      r.form = e.form;
      r.no_target = e.no_target();
      std::vector<data::MaskGrid> pred, gt;
      for (int f = 0; f < n; ++f) {
        gt.push_back(s.union_mask(e.target_ids, f));
        const auto text = read_text(prediction_frame_path(predictions, s.id, e.id, f));
        if (!text) {
          r.missing = true;
          break;
        }
        try {
          pred.push_back(data::decode_rle(data::rle_from_text(*text), s.id + "/" + e.id));
        } catch (const Error& err) {
          rep.warnings.push_back(s.id + "/" + e.id + ": unreadable prediction frame " + std::to_string(f) + " (" +
                                 err.what() + ")");
          r.missing = true;
          break;
        }
        if (pred.back().height != s.height || pred.back().width != s.width) {
          rep.warnings.push_back(s.id + "/" + e.id + ": prediction frame " + std::to_string(f) +
                                 " has the wrong resolution");
          r.missing = true;
          break;
        }
      }
      if (r.missing) {
        ++rep.missing;
        rep.warnings.push_back(s.id + "/" + e.id + ": missing prediction, scored 0");
      } else {
        r.score = evaluate_expression(pred, gt, r.no_target, tol);
      }
      if (e.explanation) {
        const auto cand = read_text(predictions / s.id / e.id / "explanation.txt");
        r.meteor = meteor_score(cand.value_or(""), *e.explanation);
      }
      rep.expressions.push_back(std::move(r));
    }
  }
  std::sort(rep.expressions.begin(), rep.expressions.end(), [](const auto& a, const auto& b) {
    return std::tie(a.sample_id, a.expression_id) < std::tie(b.sample_id, b.expression_id);
  });
  for (const auto& r : rep.expressions) add(rep.splits[r.form], r);
  int nonempty = 0;
  for (auto& [form, s] : rep.splits) {
    if (s.count == 0) continue;
    s.j /= s.count;
    s.f /= s.count;
    s.jf /= s.count;
    if (s.meteor_count > 0) s.meteor /= s.meteor_count;
    rep.overall.j += s.j;
    rep.overall.f += s.f;
    rep.overall.jf += s.jf;
    rep.overall.count += s.count;
    rep.overall.meteor += s.meteor * s.meteor_count;
    rep.overall.meteor_count += s.meteor_count;
    ++nonempty;
  }
  if (nonempty > 0) {
    rep.overall.j /= nonempty;
    rep.overall.f /= nonempty;
    rep.overall.jf /= nonempty;
  }
  if (rep.overall.meteor_count > 0) rep.overall.meteor /= rep.overall.meteor_count;
  return rep;
}

std::string report_table(const EvalReport& rep) {
  std::ostringstream os;
  os << std::left << std::setw(6) << "split" << std::right << std::setw(7) << "count" << std::setw(9) << "J"
     << std::setw(9) << "F" << std::setw(9) << "J&F" << std::setw(9) << "METEOR" << '\n';
  auto row = [&](const std::string& name, const SplitSummary& s) {
    os << std::left << std::setw(6) << name << std::right << std::setw(7) << s.count << std::setw(9) << fmt(s.j)
       << std::setw(9) << fmt(s.f) << std::setw(9) << fmt(s.jf) << std::setw(9)
       << (s.meteor_count ? fmt(s.meteor) : std::string("-")) << '\n';
  };
  for (auto form : data::kAllForms) {
    auto it = rep.splits.find(form);
    if (it != rep.splits.end()) row(data::to_string(form), it->second);
  }
  row("All", rep.overall);
  if (rep.missing) os << "missing predictions: " << rep.missing << '\n';
  return os.str();
}

std::string report_csv(const EvalReport& rep) {
  std::ostringstream os;
  os << "sample_id,expression_id,form,no_target,J,F,JF,meteor,missing\n";
  for (const auto& r : rep.expressions)
    os << r.sample_id << ',' << r.expression_id << ',' << data::to_string(r.form) << ',' << (r.no_target ? 1 : 0)
       << ',' << fmt(r.score.j) << ',' << fmt(r.score.f) << ',' << fmt(r.score.jf) << ','
       << (r.meteor ? fmt(*r.meteor) : std::string()) << ',' << (r.missing ? 1 : 0) << '\n';
  return os.str();
}

std::string summary_csv(const EvalReport& rep) {
  std::ostringstream os;
  os << "split,count,J,F,JF,meteor_count,METEOR\n";
  auto row = [&](const std::string& name, const SplitSummary& s) {
    os << name << ',' << s.count << ',' << fmt(s.j) << ',' << fmt(s.f) << ',' << fmt(s.jf) << ',' << s.meteor_count
       << ',' << (s.meteor_count ? fmt(s.meteor) : std::string()) << '\n';
  };
  for (const auto& [form, s] : rep.splits) row(data::to_string(form), s);
  row("All", rep.overall);
  return os.str();
}

}  // namespace oisa::eval
