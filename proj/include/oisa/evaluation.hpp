#pragma once

#include "oisa/data_model.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace oisa::eval {

// IoU; two empty masks score 1.
double region_j(const data::MaskGrid& pred, const data::MaskGrid& gt);

// Pixels of the mask with at least one 4-neighbour outside it (the image
// border counts as outside).
data::MaskGrid boundary(const data::MaskGrid& mask);
// Boundary F-measure: a boundary pixel matches when the other boundary has a
// pixel within Euclidean distance `tolerance`. Both boundaries empty gives 1,
// exactly one empty gives 0.
double boundary_f(const data::MaskGrid& pred, const data::MaskGrid& gt, double tolerance);
// max(1, 0.008 * image diagonal).
double default_tolerance(int height, int width);

struct Score {
  double j = 0;
  double f = 0;
  double jf = 0;
};

// No-target expressions score 1 only when every predicted frame is empty.
// Otherwise J and F are averaged over frames and J&F = (J + F) / 2.
Score evaluate_expression(const std::vector<data::MaskGrid>& pred, const std::vector<data::MaskGrid>& gt,
                          bool no_target, double tolerance);

std::string porter_stem(const std::string& word);

struct MeteorStats {
  int matches = 0;
  int chunks = 0;
  double precision = 0;
  double recall = 0;
  double fmean = 0;
  double penalty = 0;
  double score = 0;
};
// Exact then stem matching, each stage pairing a candidate word with the
// earliest free reference word. Empty reference gives nullopt.
std::optional<MeteorStats> meteor(const std::string& candidate, const std::string& reference);
std::optional<double> meteor_score(const std::string& candidate, const std::string& reference);

struct ExpressionResult {
  std::string sample_id;
  std::string expression_id;
  data::ExpressionForm form = data::ExpressionForm::I;
  bool no_target = false;
  Score score;
  std::optional<double> meteor;
  bool missing = false;
};

struct SplitSummary {
  int count = 0;
  double j = 0;
  double f = 0;
  double jf = 0;
  int meteor_count = 0;
  double meteor = 0;
};

struct EvalReport {
  std::vector<ExpressionResult> expressions;  // sorted by (sample, expression)
  std::map<data::ExpressionForm, SplitSummary> splits;
  SplitSummary overall;  // J, F, J&F: mean of the non-empty split means; METEOR pooled
  int missing = 0;
  std::vector<std::string> warnings;
};

// Predictions: <dir>/<sample_id>/<expression_id>/frame_%05d.rle for every
// video frame, plus an optional explanation.txt.
EvalReport evaluate_dataset(const data::Manifest& manifest, const std::filesystem::path& predictions,
                            std::optional<double> tolerance = std::nullopt);

std::string report_table(const EvalReport& report);
std::string report_csv(const EvalReport& report);
// One line per split plus "All": split,count,J,F,JF,meteor_count,METEOR.
std::string summary_csv(const EvalReport& report);

// Prediction dump helpers shared with inference.
std::filesystem::path prediction_frame_path(const std::filesystem::path& dir, const std::string& sample_id,
                                            const std::string& expression_id, int frame);
void write_prediction(const std::filesystem::path& dir, const std::string& sample_id, const std::string& expression_id,
                      const std::vector<data::MaskGrid>& frames, const std::string& answer,
                      const std::optional<std::string>& explanation);

}  // namespace oisa::eval
