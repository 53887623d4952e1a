#pragma once

#include "oisa/data_model.hpp"
#include "oisa/encoders.hpp"
#include "oisa/nn.hpp"
#include "oisa/synth.hpp"
#include "oisa/tokenizer.hpp"

#include <functional>
#include <string>
#include <vector>

namespace oisa::assembly {

using ag::Var;
using enc::TokenBlock;

enum class Tag : std::uint8_t { vision, audio, text, image_payload, sound_payload, speech_payload, special };
enum class Layout { AVI, AVI_CONCAT, CONCAT, WEIGHTED_SUM, ATTENTION };

std::string to_string(Tag t);
std::string to_string(Layout l);
Layout parse_layout(const std::string& name);

// Tag pattern of the content region for N frames of the given token counts
// and L_A audio tokens. <frame> separators are tagged special.
struct TagPattern {
  std::vector<Tag> tags;
  std::vector<int> frame_index;  // -1 when not tied to a frame
};
TagPattern layout_pattern(const std::vector<int>& frame_tokens, int audio_len, Layout layout);
// Clip lengths of the AVI split: floor(L_A / N) each, the last L_A mod N clips get one more.
std::vector<int> clip_lengths(int audio_len, int n_frames);

struct AssembledPrompt {
  Var tokens;                    // L x d
  std::vector<Tag> tags;
  std::vector<int> frame_index;  // -1 when not tied to a frame
  std::vector<int> token_ids;    // vocabulary id for text/special tokens, -1 otherwise
  Layout layout = Layout::AVI;
  int n_frames = 0;
  int clip_len = 0;   // L_a (base clip length)
  int audio_len = 0;  // L_A
  int answer_start = -1;

  int length() const { return static_cast<int>(tags.size()); }
};

// Text embedding lookup (the LM's input table).
using Embedder = std::function<Var(const std::vector<int>& ids)>;

// Learned fusion parameters for the WEIGHTED_SUM and ATTENTION baselines.
struct Fusion {
  Var mix;  // 1x1 scalar weight
  nn::Linear query, key, value;

  static Fusion create(nn::ParamStore& ps, int d);
};

// Average-pools the token grid of sparse frames by `pool` per side.
TokenBlock sparsify(const TokenBlock& block, int pool);

AssembledPrompt interleave_av(const std::vector<TokenBlock>& frames, const TokenBlock& audio, Layout layout,
                              const Fusion& fusion, const Embedder& embed);

struct ExpressionSegment {
  Var tokens;
  std::vector<Tag> tags;
  std::vector<int> token_ids;
  int length() const { return static_cast<int>(tags.size()); }
};

// Text forms: tokenized text with <SOUND>/<IMAGE> replaced by the payload
// tokens. Speech forms: speech tokens followed by the sound and image payloads.
ExpressionSegment compose_expression(const data::Expression& expr, const synth::ExpressionMedia& media,
                                     const enc::Encoders& encoders, const Vocabulary& vocab, const Embedder& embed);

struct PromptTemplate {
  std::string system = "segment the referred object .";
  std::string content_prefix = "video :";
  std::string expression_prefix = "query :";
  std::string answer_prefix = "answer :";
  bool content_first = true;
};

// [BOS][system][content][expression][answer prefix][answer ids]. With empty
// `answer_ids` the prompt ends where generation starts.
AssembledPrompt build_prompt(const AssembledPrompt& content, const ExpressionSegment& expression,
                             const PromptTemplate& tmpl, const std::vector<int>& answer_ids, int context,
                             const Vocabulary& vocab, const Embedder& embed);

// One line per token: index<TAB>tag<TAB>frame_index ("-" when none).
std::string layout_dump(const AssembledPrompt& prompt);

}  // namespace oisa::assembly
