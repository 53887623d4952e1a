#include "oisa/model.hpp"

#include "oisa/checkpoint.hpp"
#include "oisa/error.hpp"

namespace oisa {

void ModelConfig::validate() const {
  encoder.validate();
  lm.validate();
  mask.validate();
  if (encoder.d != lm.d || mask.d != lm.d)
    throw ConfigError("encoder, language model and mask head widths must agree (" + std::to_string(encoder.d) + ", " +
                      std::to_string(lm.d) + ", " + std::to_string(mask.d) + ")");
  if (lm.vocab < Vocabulary(256).word_count())
    throw ConfigError("vocabulary of " + std::to_string(lm.vocab) + " ids cannot hold the word list");
  if (sparse_pool < 1 || encoder.grid_h() % sparse_pool != 0 || encoder.grid_w() % sparse_pool != 0)
    throw ConfigError("sparse pool must divide the token grid");
  if (max_answer < 1) throw ConfigError("max_answer must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"encoder", c.encoder},
       {"lm", c.lm},
       {"mask", c.mask},
       {"layout", assembly::to_string(c.layout)},
       {"regime", mask::to_string(c.regime)},
       {"sparse_pool", c.sparse_pool},
       {"max_answer", c.max_answer},
       {"prompt",
        {{"system", c.prompt.system},
         {"content_prefix", c.prompt.content_prefix},
         {"expression_prefix", c.prompt.expression_prefix},
         {"answer_prefix", c.prompt.answer_prefix},
         {"content_first", c.prompt.content_first}}}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (j.contains("encoder")) c.encoder = j.at("encoder").get<enc::EncoderConfig>();
  if (j.contains("lm")) c.lm = j.at("lm").get<lm::LMConfig>();
  if (j.contains("mask")) c.mask = j.at("mask").get<mask::MaskHeadConfig>();
  if (j.contains("layout")) c.layout = assembly::parse_layout(j.at("layout").get<std::string>());
  if (j.contains("regime")) c.regime = mask::parse_regime(j.at("regime").get<std::string>());
  c.sparse_pool = j.value("sparse_pool", c.sparse_pool);
  c.max_answer = j.value("max_answer", c.max_answer);
  if (j.contains("prompt")) {
    const auto& p = j.at("prompt");
    c.prompt.system = p.value("system", c.prompt.system);
    c.prompt.content_prefix = p.value("content_prefix", c.prompt.content_prefix);
    c.prompt.expression_prefix = p.value("expression_prefix", c.prompt.expression_prefix);
    c.prompt.answer_prefix = p.value("answer_prefix", c.prompt.answer_prefix);
    c.prompt.content_first = p.value("content_first", c.prompt.content_first);
  }
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), vocab_(cfg.lm.vocab), ps_(seed) {
  encoders_ = enc::Encoders::create(ps_, cfg.encoder);
  fusion_ = assembly::Fusion::create(ps_, cfg.lm.d);
  lm_ = lm::LanguageModel::create(ps_, cfg.lm);
  mask_ = mask::MaskHead::create(ps_, cfg.mask, cfg.encoder.patch);
}

std::unique_ptr<Model> Model::create(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return std::unique_ptr<Model>(new Model(cfg, seed));
}

std::unique_ptr<Model> Model::load(const std::filesystem::path& checkpoint) {
  const auto j = read_checkpoint_config(checkpoint);
  ModelConfig cfg;
  try {
    cfg = j.get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + checkpoint.string() + " has an incompatible config: " + e.what());
  }
  auto m = create(cfg, 0);
  load_checkpoint(checkpoint, m->ps_);
  return m;
}

void Model::save(const std::filesystem::path& checkpoint) const { save_checkpoint(checkpoint, cfg_, ps_); }

EncodedContent Model::encode(const synth::SampleMedia& media, const FrameSelection& frames) const {
  EncodedContent out;
  out.frames = frames;
  std::vector<enc::TokenBlock> blocks;
  for (int k = 0; k < frames.size(); ++k) {
    const int f = frames.indices[k];
    if (f < 0 || f >= static_cast<int>(media.frames.size()))
      throw DataError("frame " + std::to_string(f) + " outside the video");
    auto block = encoders_.encode_frame(media.frames[f], f);
    out.pyramids.push_back(mask_.build_pyramid(block));
    blocks.push_back(frames.dense[k] ? block : assembly::sparsify(block, cfg_.sparse_pool));
  }
  out.content = assembly::interleave_av(blocks, encoders_.encode_audio(media.audio), cfg_.layout, fusion_,
                                        lm_.embedder());
  return out;
}

assembly::ExpressionSegment Model::expression(const data::Expression& expr, const synth::SampleMedia& media) const {
  static const synth::ExpressionMedia none;
  auto it = media.payloads.find(expr.id);
  return assembly::compose_expression(expr, it == media.payloads.end() ? none : it->second, encoders_, vocab_,
                                      lm_.embedder());
}

ExpressionForward Model::forward(const EncodedContent& content, const data::Expression& expr,
                                 const synth::SampleMedia& media) const {
  ExpressionForward out;
  const auto answer = lm::answer_ids(expr.target_ids.size(), expr.explanation, vocab_);
  out.prompt = assembly::build_prompt(content.content, expression(expr, media), cfg_.prompt, answer,
                                      cfg_.lm.context, vocab_, lm_.embedder());
  out.lm = lm_.forward(out.prompt, true);
  for (const auto& q : lm_.seg_queries(out.prompt, out.lm.hidden))
    out.masks.push_back(mask_.segment_sequence(q.embedding, content.pyramids, cfg_.regime));
  return out;
}

Prediction Model::predict(const EncodedContent& content, const data::Expression& expr,
                          const synth::SampleMedia& media) const {
  ag::NoGradGuard no_grad;
  const auto prompt = assembly::build_prompt(content.content, expression(expr, media), cfg_.prompt, {},
                                             cfg_.lm.context, vocab_, lm_.embedder());
  const auto gen = lm_.generate(prompt, vocab_, cfg_.max_answer);
  Prediction p;
  p.answer = gen.text;
  p.explanation = gen.explanation;
  p.seg_count = static_cast<int>(gen.seg_queries.size());
  const int h = cfg_.encoder.height, w = cfg_.encoder.width;
  p.masks.assign(content.pyramids.size(), data::MaskGrid(h, w));
  for (const auto& q : gen.seg_queries) {
    const auto logits = mask_.segment_sequence(q.embedding, content.pyramids, cfg_.regime);
    for (std::size_t f = 0; f < logits.size(); ++f) {
      const auto m = mask::binarize(logits[f]);
      for (std::size_t i = 0; i < m.cells.size(); ++i) p.masks[f].cells[i] |= m.cells[i];
    }
  }
  return p;
}

std::vector<int> nearest_sampled(int n_frames, const FrameSelection& frames) {
  std::vector<int> out(static_cast<std::size_t>(std::max(n_frames, 0)), -1);
  if (frames.indices.empty()) return out;
  for (int f = 0; f < n_frames; ++f) {
    int best = 0;
    for (int k = 1; k < frames.size(); ++k)
      if (std::abs(frames.indices[k] - f) < std::abs(frames.indices[best] - f)) best = k;
    out[f] = best;
  }
  return out;
}

}  // namespace oisa
