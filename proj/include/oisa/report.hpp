#pragma once

#include "oisa/evaluation.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace oisa::report {

// One evaluated run as stored by `oisa eval` in summary.json.
struct RunEntry {
  std::string name;
  std::optional<std::string> regime;
  std::optional<std::string> layout;
  eval::SplitSummary overall;
  std::map<data::ExpressionForm, eval::SplitSummary> splits;
};

nlohmann::json summary_to_json(const eval::EvalReport& rep, const std::optional<std::string>& regime,
                               const std::optional<std::string>& layout);
RunEntry run_from_json(const std::string& name, const nlohmann::json& j);

struct Rendered {
  std::string markdown;
  std::string svg;  // J&F bar chart, one bar per run
};

// Per-split table for every run, plus the query-type comparison when runs
// differ in regime and the fusion-type comparison when they differ in layout.
// Missing runs are listed; no runs at all gives a stub with a notice.
Rendered render(const std::vector<RunEntry>& runs, const std::vector<std::string>& missing);

}  // namespace oisa::report
