#pragma once

#include "oisa/model.hpp"

#include <json.hpp>

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace oisa::train {

// `pretrain` is a text-only warm-up of the language model that stands in for
// a pretrained LLM; `align` and `tune` are the two training stages.
enum class Stage { pretrain, align, tune };
std::string to_string(Stage s);
Stage parse_stage(const std::string& name);

struct TrainConfig {
  Stage stage = Stage::tune;
  int frames_train = 10;
  int dense_train = 4;
  // When above frames_train, each tune step draws its frame count uniformly
  // from [frames_train, frames_train_max].
  int frames_train_max = 0;
  int frames_infer = 32;
  int dense_infer = 4;
  double lambda_text = 1.0;
  double lambda_dice = 1.0;
  double lambda_bce = 1.0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;
  int warmup = 20;
  int steps = 100;
  int expressions_per_step = 4;
  // Tune steps draw QP or OTSA with equal odds so one set of weights serves both regimes.
  bool alternate_regimes = false;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

enum class Mode { train, infer };

// Rounded linspace over [0, n_frames) including both endpoints; the first
// `dense` sampled frames are dense. Short videos contribute every frame.
FrameSelection sample_frames(int n_frames, int count, int dense);
FrameSelection sample_frames(int n_frames, const TrainConfig& cfg, Mode mode);

ag::Mat mask_to_mat(const data::MaskGrid& mask);
// 1 - (2 sum(p t) + 1) / (sum p + sum t + 1), p = sigmoid(logits).
ag::Var dice_loss(const ag::Var& logits, const data::MaskGrid& target);
// Mean per-pixel binary cross-entropy on logits.
ag::Var bce_mask_loss(const ag::Var& logits, const data::MaskGrid& target);

// Weighted components; total = text + dice + bce.
struct LossBreakdown {
  double text = 0;
  double dice = 0;
  double bce = 0;
  double total = 0;
};

struct Loss {
  ag::Var total;
  LossBreakdown parts;
  double ce = 0;  // unweighted mean text CE
};

// One video with a subset of its expressions; the content is encoded once.
struct Batch {
  const data::VideoSample* sample = nullptr;
  const synth::SampleMedia* media = nullptr;
  std::vector<int> expressions;  // indices into sample->expressions
  FrameSelection frames;
  std::string id;
};

// Mask targets follow the sorted target ids; with several [SEG] queries the
// cheapest query-to-target assignment is supervised.
Loss compute_loss(const Model& model, const Batch& batch, const TrainConfig& cfg);

class AdamW {
 public:
  AdamW(std::vector<nn::NamedParam> params, const TrainConfig& cfg);
  // Clips the global gradient norm, then updates. Returns the pre-clip norm.
  double step();
  int steps_taken() const { return t_; }
  const std::vector<nn::NamedParam>& params() const { return params_; }

 private:
  std::vector<nn::NamedParam> params_;
  std::vector<ag::Mat> m_, v_;
  TrainConfig cfg_;
  int t_ = 0;
};

// Parameters a stage may update.
std::vector<nn::NamedParam> trainable(const Model& model, Stage stage);

// Forward, backward and one optimizer step. NaN or infinite loss raises
// NumericError naming the batch.
LossBreakdown train_step(Model& model, const Batch& batch, const TrainConfig& cfg, AdamW& opt);

// A training corpus: manifest records with loaded media.
struct Corpus {
  std::vector<data::VideoSample> samples;
  std::vector<synth::SampleMedia> media;
};
Corpus load_corpus(const std::filesystem::path& root);
Corpus make_corpus(std::vector<synth::GeneratedSample> generated);

using StepCallback = std::function<void(int step, const LossBreakdown&)>;

// Tune stage: each step takes the next video of a seeded shuffle and
// `expressions_per_step` of its expressions.
std::vector<LossBreakdown> run_tune(Model& model, const Corpus& corpus, const TrainConfig& cfg,
                                    const StepCallback& on_step = {});

// Speech/transcript pairs for the pretrain and align stages.
struct TranscriptPair {
  media::Waveform speech;
  std::string text;
};
// Every distinct expression text of the corpus (placeholders removed), spoken with the tone code.
std::vector<TranscriptPair> transcript_corpus(const Corpus& corpus, const Vocabulary& vocab);

// "transcribe :" prompt whose source is the spelled tone code (text) or the audio tokens (speech).
assembly::AssembledPrompt transcription_prompt(const Model& model, const TranscriptPair& pair, bool from_speech);

// Text-only warm-up: updates lm.* from spelled transcripts.
std::vector<double> pretrain_language_model(Model& model, const std::vector<TranscriptPair>& pairs,
                                            const TrainConfig& cfg, const std::function<void(int, double)>& on_step = {});
// Align stage: updates only audio_proj.* from speech transcripts; returns per-step CE.
std::vector<double> align_audio_stage(Model& model, const std::vector<TranscriptPair>& pairs, const TrainConfig& cfg,
                                      const std::function<void(int, double)>& on_step = {});
// Mean transcript CE over the pairs.
double transcription_loss(const Model& model, const std::vector<TranscriptPair>& pairs, bool from_speech);

// Max |after - before| per parameter name.
std::map<std::string, double> parameter_deltas(const nn::ParamStore& before, const nn::ParamStore& after);
nn::ParamStore snapshot(const nn::ParamStore& ps);

}  // namespace oisa::train
