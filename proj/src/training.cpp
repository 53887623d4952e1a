#include "oisa/training.hpp"

#include "oisa/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace oisa::train {

std::string to_string(Stage s) {
  switch (s) {
    case Stage::pretrain: return "pretrain";
    case Stage::align: return "align";
    case Stage::tune: return "tune";
  }
  return "";
}

Stage parse_stage(const std::string& name) {
  for (Stage s : {Stage::pretrain, Stage::align, Stage::tune})
    if (to_string(s) == name) return s;
  throw ConfigError("unknown training stage: " + name);
}

void TrainConfig::validate() const {
  if (frames_train < 1 || frames_infer < 1) throw ConfigError("frame counts must be positive");
  if (frames_train_max < 0) throw ConfigError("frames_train_max must be non-negative");
  if (dense_train < 0 || dense_train > frames_train || dense_infer < 0 || dense_infer > frames_infer)
    throw ConfigError("dense frame count must lie in [0, frames]");
  if (!(lambda_text > 0 && lambda_dice > 0 && lambda_bce > 0)) throw ConfigError("loss weights must be positive");
  if (!(lr > 0) || !(clip_norm > 0)) throw ConfigError("lr and clip_norm must be positive");
  if (steps < 0 || warmup < 0 || expressions_per_step < 1) throw ConfigError("invalid step counts");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"stage", to_string(c.stage)},
       {"frames_train", c.frames_train},
       {"dense_train", c.dense_train},
       {"frames_train_max", c.frames_train_max},
       {"frames_infer", c.frames_infer},
       {"dense_infer", c.dense_infer},
       {"lambda_text", c.lambda_text},
       {"lambda_dice", c.lambda_dice},
       {"lambda_bce", c.lambda_bce},
       {"lr", c.lr},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"eps", c.eps},
       {"weight_decay", c.weight_decay},
       {"clip_norm", c.clip_norm},
       {"warmup", c.warmup},
       {"steps", c.steps},
       {"expressions_per_step", c.expressions_per_step},
       {"alternate_regimes", c.alternate_regimes},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("stage")) c.stage = parse_stage(j.at("stage").get<std::string>());
  c.frames_train = j.value("frames_train", c.frames_train);
  c.dense_train = j.value("dense_train", c.dense_train);
  c.frames_train_max = j.value("frames_train_max", c.frames_train_max);
  c.frames_infer = j.value("frames_infer", c.frames_infer);
  c.dense_infer = j.value("dense_infer", c.dense_infer);
  c.lambda_text = j.value("lambda_text", c.lambda_text);
  c.lambda_dice = j.value("lambda_dice", c.lambda_dice);
  c.lambda_bce = j.value("lambda_bce", c.lambda_bce);
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.warmup = j.value("warmup", c.warmup);
  c.steps = j.value("steps", c.steps);
  c.expressions_per_step = j.value("expressions_per_step", c.expressions_per_step);
  c.alternate_regimes = j.value("alternate_regimes", c.alternate_regimes);
  c.seed = j.value("seed", c.seed);
}

FrameSelection sample_frames(int n_frames, int count, int dense) {
  FrameSelection s;
  if (n_frames <= 0 || count <= 0) return s;
  if (n_frames <= count) {
    s.indices.resize(static_cast<std::size_t>(n_frames));
    std::iota(s.indices.begin(), s.indices.end(), 0);
  } else if (count == 1) {
    s.indices = {0};
  } else {
    for (int i = 0; i < count; ++i)
      s.indices.push_back(static_cast<int>(std::lround(static_cast<double>(i) * (n_frames - 1) / (count - 1))));
  }
  s.dense.assign(s.indices.size(), false);
  for (int i = 0; i < std::min(dense, s.size()); ++i) s.dense[static_cast<std::size_t>(i)] = true;
  return s;
}

FrameSelection sample_frames(int n_frames, const TrainConfig& cfg, Mode mode) {
  return mode == Mode::train ? sample_frames(n_frames, cfg.frames_train, cfg.dense_train)
                             : sample_frames(n_frames, cfg.frames_infer, cfg.dense_infer);
}

ag::Mat mask_to_mat(const data::MaskGrid& mask) {
  ag::Mat m(mask.height, mask.width);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) m(y, x) = mask.at(y, x);
  return m;
}

ag::Var dice_loss(const ag::Var& logits, const data::MaskGrid& target) {
  if (logits.rows() != target.height || logits.cols() != target.width)
    throw DataError("dice loss: logits " + std::to_string(logits.rows()) + "x" + std::to_string(logits.cols()) +
                    " vs target " + std::to_string(target.height) + "x" + std::to_string(target.width));
  return ag::dice_loss(logits, mask_to_mat(target), 1.0);
}

ag::Var bce_mask_loss(const ag::Var& logits, const data::MaskGrid& target) {
  if (logits.rows() != target.height || logits.cols() != target.width)
    throw DataError("bce loss: logits " + std::to_string(logits.rows()) + "x" + std::to_string(logits.cols()) +
                    " vs target " + std::to_string(target.height) + "x" + std::to_string(target.width));
  return ag::bce_with_logits(logits, mask_to_mat(target));
}

namespace {

struct PairCost {
  ag::Var dice, bce;
  double weighted = 0;
};

// Mean over sampled frames of dice and bce between one query's masks and one object's track.
PairCost pair_cost(const std::vector<ag::Var>& masks, const data::VideoSample& sample, const std::string& object,
                   const FrameSelection& frames, const TrainConfig& cfg) {
  std::vector<ag::Var> dice, bce;
  for (int k = 0; k < frames.size(); ++k) {
    const auto target = sample.union_mask({object}, frames.indices[k]);
    dice.push_back(dice_loss(masks[k], target));
    bce.push_back(bce_mask_loss(masks[k], target));
  }
  const double inv = 1.0 / static_cast<double>(frames.size());
  PairCost c{ag::scale(ag::sum(ag::concat_rows(dice)), inv), ag::scale(ag::sum(ag::concat_rows(bce)), inv)};
  c.weighted = cfg.lambda_dice * c.dice.value()(0, 0) + cfg.lambda_bce * c.bce.value()(0, 0);
  return c;
}

}  // namespace

Loss compute_loss(const Model& model, const Batch& batch, const TrainConfig& cfg) {
  if (!batch.sample || !batch.media) throw ConfigError("batch " + batch.id + " has no sample");
  if (batch.expressions.empty()) throw ConfigError("batch " + batch.id + " has no expressions");
  const auto content = model.encode(*batch.media, batch.frames);
  std::vector<ag::Var> terms;
  Loss loss;
  const double inv = 1.0 / static_cast<double>(batch.expressions.size());
  for (int e : batch.expressions) {
    const auto& expr = batch.sample->expressions.at(static_cast<std::size_t>(e));
    const auto fwd = model.forward(content, expr, *batch.media);
    const double ce = fwd.lm.loss.value()(0, 0);
    loss.ce += ce * inv;
    loss.parts.text += cfg.lambda_text * ce * inv;
    terms.push_back(ag::scale(fwd.lm.loss, cfg.lambda_text * inv));
    const auto& targets = expr.target_ids;
    if (targets.empty() || fwd.masks.empty()) continue;
    const std::size_t n = std::min(targets.size(), fwd.masks.size());
    std::vector<std::vector<PairCost>> cost(fwd.masks.size());
    for (std::size_t q = 0; q < fwd.masks.size(); ++q)
      for (const auto& t : targets) cost[q].push_back(pair_cost(fwd.masks[q], *batch.sample, t, batch.frames, cfg));
    // Exhaustive assignment: target counts stay small.
    std::vector<std::size_t> perm(targets.size());
    std::iota(perm.begin(), perm.end(), 0);
    // Identity start keeps the assignment defined when costs are NaN.
    std::vector<std::size_t> best(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n));
    double best_cost = std::numeric_limits<double>::infinity();
    do {
      double c = 0;
      for (std::size_t q = 0; q < n; ++q) c += cost[q][perm[q]].weighted;
      if (c < best_cost) {
        best_cost = c;
        best.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n));
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    const double qn = inv / static_cast<double>(n);
    for (std::size_t q = 0; q < n; ++q) {
      const auto& pc = cost[q][best[q]];
      loss.parts.dice += cfg.lambda_dice * pc.dice.value()(0, 0) * qn;
      loss.parts.bce += cfg.lambda_bce * pc.bce.value()(0, 0) * qn;
      terms.push_back(ag::scale(pc.dice, cfg.lambda_dice * qn));
      terms.push_back(ag::scale(pc.bce, cfg.lambda_bce * qn));
    }
  }
  loss.total = ag::sum(ag::concat_rows(terms));
  loss.parts.total = loss.total.value()(0, 0);
  return loss;
}

AdamW::AdamW(std::vector<nn::NamedParam> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.push_back(ag::Mat::Zero(p.var.rows(), p.var.cols()));
    v_.push_back(ag::Mat::Zero(p.var.rows(), p.var.cols()));
  }
}

double AdamW::step() {
  double sq = 0;
  for (const auto& p : params_) sq += p.var.grad().squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm at step " + std::to_string(t_ + 1));
  const double clip = norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
  ++t_;
  const double warm = cfg_.warmup > 0 ? std::min(1.0, static_cast<double>(t_) / cfg_.warmup) : 1.0;
  const double lr = cfg_.lr * warm;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_), bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& w = params_[i].var.mutable_value();
    const auto& raw = params_[i].var.grad();
    const ag::Mat g = raw.size() == 0 ? ag::Mat::Zero(w.rows(), w.cols()) : ag::Mat(raw * clip);
    m_[i] = cfg_.beta1 * m_[i] + (1 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1 - cfg_.beta2) * g.cwiseProduct(g);
    const bool decay = w.rows() > 1 && w.cols() > 1;
    if (decay && cfg_.weight_decay > 0) w *= 1.0 - lr * cfg_.weight_decay;
    w.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
  return norm;
}

std::vector<nn::NamedParam> trainable(const Model& model, Stage stage) {
  std::vector<nn::NamedParam> out;
  for (const auto& p : model.params().params()) {
    const bool take = stage == Stage::tune || (stage == Stage::align && p.name.rfind("audio_proj.", 0) == 0) ||
                      (stage == Stage::pretrain && p.name.rfind("lm.", 0) == 0);
    if (take) out.push_back(p);
  }
  return out;
}

namespace {

void check_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericError("non-finite loss in batch " + what);
}

}  // namespace

LossBreakdown train_step(Model& model, const Batch& batch, const TrainConfig& cfg, AdamW& opt) {
  model.params().zero_grad();
  const Loss loss = compute_loss(model, batch, cfg);
  check_finite(loss.parts.total, batch.id);
  ag::backward(loss.total);
  opt.step();
  return loss.parts;
}

Corpus load_corpus(const std::filesystem::path& root) {
  Corpus c;
  const auto manifest = data::read_manifest(root / "manifest.json");
  const auto violations = data::validate_manifest(manifest, root);
  if (!violations.empty()) {
    const auto& v = violations.front();
    throw DataError("manifest violation in " + v.sample_id + " (" + v.field + "): " + v.rule + " " + v.detail);
  }
  for (const auto& s : manifest.samples) {
    c.media.push_back(synth::load_media(root, s));
    c.samples.push_back(s);
  }
  return c;
}

Corpus make_corpus(std::vector<synth::GeneratedSample> generated) {
  Corpus c;
  for (auto& g : generated) {
    c.samples.push_back(std::move(g.record));
    c.media.push_back(std::move(g.media));
  }
  return c;
}

std::vector<LossBreakdown> run_tune(Model& model, const Corpus& corpus, const TrainConfig& cfg,
                                    const StepCallback& on_step) {
  cfg.validate();
  if (corpus.samples.empty()) throw DataError("training corpus is empty");
  AdamW opt(trainable(model, Stage::tune), cfg);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(corpus.samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<LossBreakdown> history;
  const auto regime = model.config().regime;
  std::size_t cursor = order.size();
  for (int step = 0; step < cfg.steps; ++step) {
    if (cursor == order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const std::size_t s = order[cursor++];
    const auto& sample = corpus.samples[s];
    Batch b;
    b.sample = &sample;
    b.media = &corpus.media[s];
    int count = cfg.frames_train;
    if (cfg.frames_train_max > cfg.frames_train)
      count += static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.frames_train_max - cfg.frames_train + 1));
    b.frames = sample_frames(static_cast<int>(sample.frames.size()), count, cfg.dense_train);
    b.id = "step " + std::to_string(step) + " sample " + sample.id;
    std::vector<int> all(sample.expressions.size());
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(std::min(all.size(), static_cast<std::size_t>(cfg.expressions_per_step)));
    std::sort(all.begin(), all.end());
    b.expressions = all;
    if (b.expressions.empty()) continue;
    if (cfg.alternate_regimes) model.set_regime(rng() % 2 ? mask::Regime::OTSA : mask::Regime::QP);
    history.push_back(train_step(model, b, cfg, opt));
    if (on_step) on_step(step, history.back());
  }
  model.set_regime(regime);
  return history;
}

std::vector<TranscriptPair> transcript_corpus(const Corpus& corpus, const Vocabulary& vocab) {
  std::set<std::string> texts;
  for (const auto& s : corpus.samples)
    for (const auto& e : s.expressions)
      if (!e.text.empty()) texts.insert(synth::strip_placeholders(e.text));
  std::vector<TranscriptPair> out;
  for (const auto& t : texts) out.push_back({synth::synth_speech(t, vocab), t});
  return out;
}

assembly::AssembledPrompt transcription_prompt(const Model& model, const TranscriptPair& pair, bool from_speech) {
  const auto& vocab = model.vocab();
  const auto embed = model.lm().embedder();
  const auto words = vocab.encode(pair.text);
  std::vector<int> head{Vocabulary::kBos};
  for (int id : vocab.encode("transcribe :")) head.push_back(id);
  std::vector<int> tail = vocab.encode("answer :");
  const std::size_t answer_at = tail.size();
  tail.insert(tail.end(), words.begin(), words.end());
  tail.push_back(Vocabulary::kEos);

  assembly::AssembledPrompt p;
  std::vector<ag::Var> parts{embed(head)};
  auto push_ids = [&](const std::vector<int>& ids, assembly::Tag tag) {
    for (int id : ids) {
      p.tags.push_back(tag);
      p.frame_index.push_back(-1);
      p.token_ids.push_back(id);
    }
  };
  push_ids(head, assembly::Tag::special);
  p.tags.back() = assembly::Tag::text;
  if (from_speech) {
    const auto block = model.encoders().encode_audio(pair.speech);
    if (block.length() > 0) {
      parts.push_back(block.tokens);
      for (int i = 0; i < block.length(); ++i) {
        p.tags.push_back(assembly::Tag::speech_payload);
        p.frame_index.push_back(-1);
        p.token_ids.push_back(-1);
      }
    }
  } else {
    const auto spelled = vocab.spell(words);
    parts.push_back(embed(spelled));
    push_ids(spelled, assembly::Tag::text);
  }
  p.answer_start = p.length() + static_cast<int>(answer_at);
  parts.push_back(embed(tail));
  push_ids(tail, assembly::Tag::text);
  p.tokens = ag::concat_rows(parts);
  return p;
}

namespace {

std::vector<double> fit_transcripts(Model& model, const std::vector<TranscriptPair>& pairs, const TrainConfig& cfg,
                                    Stage stage, bool from_speech, const std::function<void(int, double)>& on_step) {
  cfg.validate();
  if (pairs.empty()) throw DataError("transcript corpus is empty");
  AdamW opt(trainable(model, stage), cfg);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<double> history;
  const int per_step = cfg.expressions_per_step;
  for (int step = 0; step < cfg.steps; ++step) {
    model.params().zero_grad();
    std::vector<ag::Var> terms;
    double total = 0;
    for (int k = 0; k < per_step; ++k) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto& pair = pairs[order[cursor++]];
      const auto out = model.lm().forward(transcription_prompt(model, pair, from_speech), true);
      terms.push_back(ag::scale(out.loss, 1.0 / per_step));
      total += out.loss.value()(0, 0) / per_step;
    }
    check_finite(total, to_string(stage) + " step " + std::to_string(step));
    ag::backward(ag::sum(ag::concat_rows(terms)));
    opt.step();
    history.push_back(total);
    if (on_step) on_step(step, total);
  }
  return history;
}

}  // namespace

std::vector<double> pretrain_language_model(Model& model, const std::vector<TranscriptPair>& pairs,
                                            const TrainConfig& cfg, const std::function<void(int, double)>& on_step) {
  return fit_transcripts(model, pairs, cfg, Stage::pretrain, false, on_step);
}

std::vector<double> align_audio_stage(Model& model, const std::vector<TranscriptPair>& pairs, const TrainConfig& cfg,
                                      const std::function<void(int, double)>& on_step) {
  if (cfg.stage != Stage::align) throw ConfigError("align_audio_stage requires stage align");
  return fit_transcripts(model, pairs, cfg, Stage::align, true, on_step);
}

double transcription_loss(const Model& model, const std::vector<TranscriptPair>& pairs, bool from_speech) {
  ag::NoGradGuard no_grad;
  double total = 0;
  for (const auto& p : pairs) total += model.lm().forward(transcription_prompt(model, p, from_speech), true).loss.value()(0, 0);
  return pairs.empty() ? 0.0 : total / static_cast<double>(pairs.size());
}

nn::ParamStore snapshot(const nn::ParamStore& ps) {
  nn::ParamStore copy;
  for (const auto& p : ps.params()) copy.add(p.name, p.var.value());
  return copy;
}

std::map<std::string, double> parameter_deltas(const nn::ParamStore& before, const nn::ParamStore& after) {
  std::map<std::string, double> out;
  for (const auto& p : after.params()) {
    const auto* b = before.find(p.name);
    if (!b || b->var.value().rows() != p.var.value().rows() || b->var.value().cols() != p.var.value().cols())
      throw DataError("parameter " + p.name + " missing or reshaped");
    out[p.name] = (p.var.value() - b->var.value()).cwiseAbs().maxCoeff();
  }
  return out;
}

}  // namespace oisa::train
