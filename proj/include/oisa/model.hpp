#pragma once

#include "oisa/assembly.hpp"
#include "oisa/encoders.hpp"
#include "oisa/lm.hpp"
#include "oisa/mask_head.hpp"
#include "oisa/synth.hpp"
#include "oisa/tokenizer.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace oisa {

struct ModelConfig {
  enc::EncoderConfig encoder;
  lm::LMConfig lm;
  mask::MaskHeadConfig mask;
  assembly::Layout layout = assembly::Layout::AVI;
  mask::Regime regime = mask::Regime::QP;
  int sparse_pool = 2;  // per side, so sparse frames keep L_v / 4 tokens
  int max_answer = 24;
  assembly::PromptTemplate prompt;

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Sampled frame indices in temporal order; dense frames keep every vision token.
struct FrameSelection {
  std::vector<int> indices;
  std::vector<bool> dense;

  int size() const { return static_cast<int>(indices.size()); }
};

// For every video frame, the position in `frames` of the closest sampled frame (earlier wins ties).
std::vector<int> nearest_sampled(int n_frames, const FrameSelection& frames);

// Everything per sample that expressions share.
struct EncodedContent {
  FrameSelection frames;
  assembly::AssembledPrompt content;
  std::vector<mask::FeaturePyramid> pyramids;  // one per sampled frame
};

// Per-expression training forward: prompt, LM output and one mask sequence per [SEG].
struct ExpressionForward {
  assembly::AssembledPrompt prompt;
  lm::LMOutput lm;
  std::vector<std::vector<ag::Var>> masks;  // [query][sampled frame], full-resolution logits
};

struct Prediction {
  std::string answer;
  std::optional<std::string> explanation;
  int seg_count = 0;
  std::vector<data::MaskGrid> masks;  // union over queries, one per sampled frame
};

class Model {
 public:
  static std::unique_ptr<Model> create(const ModelConfig& cfg, std::uint64_t seed);
  // Restores config and weights; incompatible files raise DataError.
  static std::unique_ptr<Model> load(const std::filesystem::path& checkpoint);
  void save(const std::filesystem::path& checkpoint) const;

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }
  const enc::Encoders& encoders() const { return encoders_; }
  const assembly::Fusion& fusion() const { return fusion_; }
  const lm::LanguageModel& lm() const { return lm_; }
  const mask::MaskHead& mask_head() const { return mask_; }

  // Regime and layout switches leave every weight untouched.
  void set_regime(mask::Regime r) { cfg_.regime = r; }
  void set_layout(assembly::Layout l) { cfg_.layout = l; }

  EncodedContent encode(const synth::SampleMedia& media, const FrameSelection& frames) const;
  assembly::ExpressionSegment expression(const data::Expression& expr, const synth::SampleMedia& media) const;
  ExpressionForward forward(const EncodedContent& content, const data::Expression& expr,
                            const synth::SampleMedia& media) const;
  Prediction predict(const EncodedContent& content, const data::Expression& expr,
                     const synth::SampleMedia& media) const;

 private:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  ModelConfig cfg_;
  Vocabulary vocab_;
  nn::ParamStore ps_;
  enc::Encoders encoders_;
  assembly::Fusion fusion_;
  lm::LanguageModel lm_;
  mask::MaskHead mask_;
};

}  // namespace oisa
