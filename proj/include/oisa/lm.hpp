#pragma once

#include "oisa/assembly.hpp"
#include "oisa/nn.hpp"
#include "oisa/tokenizer.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace oisa::lm {

using ag::Var;

struct LMConfig {
  int d = 64;
  int n_layers = 2;
  int n_heads = 4;
  int vocab = 160;
  int context = 2048;
  double rope_base = 10000.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const LMConfig& c);
void from_json(const nlohmann::json& j, LMConfig& c);

struct SegQuery {
  Var embedding;  // 1 x d
  int source_position = -1;
};

struct LMOutput {
  Var hidden;  // L x d, after the final norm
  Var logits;  // L x vocab
  Var loss;    // 1x1 CE over the answer region; undefined without targets
  int scored = 0;
};

struct Generation {
  std::vector<int> ids;  // generated answer ids, EOS excluded
  std::string text;
  std::optional<std::string> explanation;
  std::vector<SegQuery> seg_queries;
  bool truncated = false;
};

// Answer templates: "it is [SEG] ." (optionally "it is [SEG] because ... ."),
// "they are [SEG] , [SEG] and [SEG] .", "there is no such object .", then EOS.
std::vector<int> answer_ids(std::size_t n_targets, const std::optional<std::string>& explanation,
                            const Vocabulary& vocab);
// "because ..." clause of an answer, without the closing period.
std::optional<std::string> extract_explanation(const std::string& answer);

class LanguageModel {
 public:
  // Registers "lm." and "seg_proj." parameters.
  static LanguageModel create(nn::ParamStore& ps, const LMConfig& cfg);

  const LMConfig& config() const { return cfg_; }
  Var embed(const std::vector<int>& ids) const;
  assembly::Embedder embedder() const;

  // Causal pass. With `score_answer`, CE is taken over next-token targets
  // from prompt.answer_start onward.
  LMOutput forward(const assembly::AssembledPrompt& prompt, bool score_answer) const;
  Var hidden(const Var& tokens) const;
  Var head(const Var& hidden) const;

  // Projects the hidden state at each [SEG] input position of `prompt`.
  std::vector<SegQuery> seg_queries(const assembly::AssembledPrompt& prompt, const Var& hidden) const;

  // Greedy decoding from a prompt that ends at the answer start.
  Generation generate(const assembly::AssembledPrompt& prompt, const Vocabulary& vocab, int max_new = 32) const;

 private:
  LMConfig cfg_;
  Var table_;  // vocab x d
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm norm_;
  nn::Linear out_;
  nn::Linear seg_proj_;
};

// One line per generated token: step<TAB>id<TAB>token<TAB>seg.
std::string decode_trace(const Generation& g, const Vocabulary& vocab);

}  // namespace oisa::lm
