#include "oisa/pipeline.hpp"

#include "oisa/error.hpp"

namespace oisa {

std::vector<ExpressionOutput> predict_sample(const Model& model, const data::VideoSample& sample,
                                             const synth::SampleMedia& media, const train::TrainConfig& cfg) {
  ag::NoGradGuard no_grad;
  const int n = static_cast<int>(sample.frames.size());
  const auto frames = train::sample_frames(n, cfg, train::Mode::infer);
  const auto content = model.encode(media, frames);
  const auto nearest = nearest_sampled(n, frames);
  std::vector<ExpressionOutput> out;
  for (const auto& e : sample.expressions) {
    const auto p = model.predict(content, e, media);
    ExpressionOutput o;
    o.expression_id = e.id;
    o.answer = p.answer;
    o.explanation = p.explanation;
    for (int f = 0; f < n; ++f) o.masks.push_back(p.masks[static_cast<std::size_t>(nearest[f])]);
    out.push_back(std::move(o));
  }
  return out;
}

void write_sample_predictions(const std::filesystem::path& dir, const data::VideoSample& sample,
                              const std::vector<ExpressionOutput>& outputs) {
  for (const auto& o : outputs) eval::write_prediction(dir, sample.id, o.expression_id, o.masks, o.answer, o.explanation);
}

eval::ExpressionResult score_expression(const data::VideoSample& sample, const data::Expression& expr,
                                        const ExpressionOutput& out, std::optional<double> tolerance) {
  eval::ExpressionResult r;
  r.sample_id = sample.id;
  r.expression_id = expr.id;
  r.form = expr.form;
  r.no_target = expr.no_target();
  std::vector<data::MaskGrid> gt;
  for (int f = 0; f < static_cast<int>(sample.frames.size()); ++f) gt.push_back(sample.union_mask(expr.target_ids, f));
  r.score = eval::evaluate_expression(out.masks, gt, r.no_target,
                                      tolerance.value_or(eval::default_tolerance(sample.height, sample.width)));
  if (expr.explanation) r.meteor = eval::meteor_score(out.explanation.value_or(""), *expr.explanation);
  return r;
}

CorpusScore score_corpus(const Model& model, const train::Corpus& corpus, const train::TrainConfig& cfg) {
  CorpusScore cs;
  double ce = 0;
  for (std::size_t s = 0; s < corpus.samples.size(); ++s) {
    const auto& sample = corpus.samples[s];
    const auto outputs = predict_sample(model, sample, corpus.media[s], cfg);
    for (std::size_t e = 0; e < sample.expressions.size(); ++e) {
      cs.results.push_back(score_expression(sample, sample.expressions[e], outputs[e]));
      cs.mean_jf += cs.results.back().score.jf;
    }
    ag::NoGradGuard no_grad;
    const auto content = model.encode(corpus.media[s],
                                      train::sample_frames(static_cast<int>(sample.frames.size()), cfg, train::Mode::train));
    for (const auto& e : sample.expressions) ce += model.forward(content, e, corpus.media[s]).lm.loss.value()(0, 0);
  }
  if (!cs.results.empty()) {
    cs.mean_jf /= static_cast<double>(cs.results.size());
    cs.mean_ce = ce / static_cast<double>(cs.results.size());
  }
  return cs;
}

}  // namespace oisa
