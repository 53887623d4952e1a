#pragma once

#include "oisa/data_model.hpp"
#include "oisa/encoders.hpp"
#include "oisa/nn.hpp"

#include <json.hpp>

#include <array>
#include <map>
#include <string>
#include <vector>

namespace oisa::mask {

using ag::Var;

struct MaskHeadConfig {
  int d = 64;         // SegQuery width
  int channels = 64;  // C
  int n_blocks = 3;
  int n_heads = 4;
  bool self_attention = false;  // must stay false: the decoder carries a single query

  void validate() const;
};

void to_json(nlohmann::json& j, const MaskHeadConfig& c);
void from_json(const nlohmann::json& j, MaskHeadConfig& c);

enum class Regime { QP, OTSA };
std::string to_string(Regime r);
Regime parse_regime(const std::string& name);

struct FeaturePyramid {
  // Strides 8, 16, 32 after the top-down pixel decoder; (H*W) x C each.
  std::array<Var, 3> levels;
  std::array<std::pair<int, int>, 3> dims;
  Var mask_features;  // stride 4, (mh*mw) x C
  int mh = 0, mw = 0;
  int height = 0, width = 0;  // full frame resolution
};

struct TrackState {
  Var query;  // 1 x C
  int frame_cursor = 0;
  std::vector<Var> mask_logits_history;
};

// Fixed 2D sine embedding, (h*w) x channels.
ag::Mat sine_position(int h, int w, int channels);

class MaskHead {
 public:
  // Registers "mask." parameters. `patch` maps the token grid back to pixels.
  static MaskHead create(nn::ParamStore& ps, const MaskHeadConfig& cfg, int patch);

  const MaskHeadConfig& config() const { return cfg_; }

  FeaturePyramid build_pyramid(const enc::TokenBlock& vision) const;
  TrackState init_state(const Var& seg_query) const;
  // Full-resolution mask logits (height x width); advances the state.
  Var decode_frame(TrackState& state, const FeaturePyramid& pyramid) const;
  std::vector<Var> segment_sequence(const Var& seg_query, const std::vector<FeaturePyramid>& pyramids,
                                    Regime regime) const;

  // Low-level pieces exposed for analysis.
  Var refine(const Var& query, const FeaturePyramid& pyramid) const;
  Var mask_logits(const Var& refined_query, const FeaturePyramid& pyramid) const;

 private:
  struct Block {
    nn::LayerNorm ln_q, ln_ffn;
    nn::Linear q, k, v, o;
    nn::Mlp ffn;
  };

  MaskHeadConfig cfg_;
  int patch_ = 8;
  nn::Linear query_init_;
  Var adapter8_w_, adapter8_b_, down16_w_, down16_b_, down32_w_, down32_b_;
  std::array<Var, 3> lateral_w_, lateral_b_;
  Var up_w_, up_b_, mask_proj_w_, mask_proj_b_;
  Var level_embed_;  // 3 x C
  std::vector<Block> blocks_;
  nn::LayerNorm embed_norm_;
  nn::Mlp embed_mlp_;
};

data::MaskGrid binarize(const Var& logits);

// Scalar counts per top-level module and the number of self-attention scalars in the mask decoder.
struct Census {
  std::map<std::string, std::size_t> by_module;
  std::size_t decoder_self_attention = 0;
  std::size_t total = 0;
};
Census parameter_census(const nn::ParamStore& ps);

}  // namespace oisa::mask
