#pragma once

#include "oisa/evaluation.hpp"
#include "oisa/training.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace oisa {

struct ExpressionOutput {
  std::string expression_id;
  std::string answer;
  std::optional<std::string> explanation;
  std::vector<data::MaskGrid> masks;  // every video frame
};

// Inference-mode frame sampling, then non-sampled frames copy the mask of the
// nearest sampled frame.
std::vector<ExpressionOutput> predict_sample(const Model& model, const data::VideoSample& sample,
                                             const synth::SampleMedia& media, const train::TrainConfig& cfg);

void write_sample_predictions(const std::filesystem::path& dir, const data::VideoSample& sample,
                              const std::vector<ExpressionOutput>& outputs);

// Scores predictions in memory with the same rules as evaluate_dataset.
eval::ExpressionResult score_expression(const data::VideoSample& sample, const data::Expression& expr,
                                        const ExpressionOutput& out, std::optional<double> tolerance = std::nullopt);

struct CorpusScore {
  std::vector<eval::ExpressionResult> results;
  double mean_jf = 0;  // plain mean over expressions
  double mean_ce = 0;  // teacher-forced text CE over expressions
};
CorpusScore score_corpus(const Model& model, const train::Corpus& corpus, const train::TrainConfig& cfg);

}  // namespace oisa
