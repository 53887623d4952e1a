#pragma once

#include "oisa/autograd.hpp"
#include "oisa/media.hpp"
#include "oisa/nn.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace oisa::enc {

using ag::Mat;
using ag::Var;

enum class Modality { vision, audio, image_payload, text };

struct TokenBlock {
  Var tokens;  // L x d
  Modality modality = Modality::vision;
  std::optional<int> frame_index;
  int grid_h = 0;  // token grid for vision-like blocks
  int grid_w = 0;
  bool empty = false;  // zero-length audio (no waveform)

  int length() const { return empty ? 0 : static_cast<int>(tokens.rows()); }
};

struct EncoderConfig {
  int d = 64;
  int patch = 8;
  int height = 64;  // canvas
  int width = 64;
  int audio_window = 1000;
  int spectrogram_bins = 48;
  int n_layers = 1;
  int n_heads = 4;
  int audio_proj_hidden = 128;

  int grid_h() const { return height / patch; }
  int grid_w() const { return width / patch; }
  int lv() const { return grid_h() * grid_w(); }
  void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

// Log-magnitude spectrogram: one row per complete window, bins at
// (8 + 4 j) cycles per window.
Mat spectrogram(const media::Waveform& wave, int window, int bins);
// Patch pixels in [0, 1], one row per patch in raster order, (py, px, c) inside a patch.
Mat patchify(const media::Image& image, int patch);

class Encoders {
 public:
  // Registers parameters under "vision.", "audio." and "audio_proj.".
  static Encoders create(nn::ParamStore& ps, const EncoderConfig& cfg);

  const EncoderConfig& config() const { return cfg_; }

  std::vector<TokenBlock> encode_frames(const std::vector<media::Image>& frames) const;
  TokenBlock encode_frame(const media::Image& frame, int index) const;
  TokenBlock encode_audio(const media::Waveform& wave) const;
  TokenBlock encode_image_payload(const media::Image& image) const;
  // Spectrogram + input projection only (time-local, strided).
  Var audio_front_end(const media::Waveform& wave) const;

 private:
  Var vision_tokens(const media::Image& image) const;

  EncoderConfig cfg_;
  nn::Linear patch_embed_;
  Var pos_embed_;  // grid_h*grid_w x d
  std::vector<nn::TransformerBlock> vision_blocks_;
  nn::LayerNorm vision_norm_;
  nn::Linear audio_in_;
  std::vector<nn::TransformerBlock> audio_blocks_;
  nn::LayerNorm audio_norm_;
  nn::Mlp audio_proj_;
  Mat dft_cos_, dft_sin_;
};

}  // namespace oisa::enc
