#include "oisa/encoders.hpp"

#include "oisa/error.hpp"

#include <cmath>
#include <numbers>

namespace oisa::enc {

void EncoderConfig::validate() const {
  if (d <= 0 || patch <= 0 || n_heads <= 0 || audio_window <= 0 || spectrogram_bins <= 0)
    throw ConfigError("encoder sizes must be positive");
  if (height % patch != 0 || width % patch != 0)
    throw ConfigError("canvas " + std::to_string(height) + "x" + std::to_string(width) +
                      " not divisible by patch " + std::to_string(patch));
  if (d % n_heads != 0) throw ConfigError("d must be divisible by n_heads");
  if (8 + 4 * (spectrogram_bins - 1) >= audio_window / 2) throw ConfigError("spectrogram bins exceed Nyquist");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"d", c.d},
       {"patch", c.patch},
       {"height", c.height},
       {"width", c.width},
       {"audio_window", c.audio_window},
       {"spectrogram_bins", c.spectrogram_bins},
       {"n_layers", c.n_layers},
       {"n_heads", c.n_heads},
       {"audio_proj_hidden", c.audio_proj_hidden}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.d = j.value("d", c.d);
  c.patch = j.value("patch", c.patch);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.audio_window = j.value("audio_window", c.audio_window);
  c.spectrogram_bins = j.value("spectrogram_bins", c.spectrogram_bins);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.audio_proj_hidden = j.value("audio_proj_hidden", c.audio_proj_hidden);
}

namespace {

void dft_tables(int window, int bins, Mat& cos_t, Mat& sin_t) {
  cos_t.resize(window, bins);
  sin_t.resize(window, bins);
  for (int i = 0; i < window; ++i)
    for (int j = 0; j < bins; ++j) {
      const double ph = 2 * std::numbers::pi * (8.0 + 4.0 * j) * i / window;
      cos_t(i, j) = std::cos(ph);
      sin_t(i, j) = std::sin(ph);
    }
}

Mat spectrogram_with(const media::Waveform& wave, int window, const Mat& cos_t, const Mat& sin_t) {
  const int frames = static_cast<int>(wave.size() / window);
  Mat x(frames, window);
  for (int f = 0; f < frames; ++f)
    for (int i = 0; i < window; ++i) x(f, i) = wave.value(static_cast<std::size_t>(f) * window + i);
  const Mat re = x * cos_t, im = x * sin_t;
  // A full-scale sinusoid on a bin has magnitude window / 2.
  const double norm = 2.0 / window;
  Mat out(frames, cos_t.cols());
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double mag = std::sqrt(re.data()[i] * re.data()[i] + im.data()[i] * im.data()[i]) * norm;
    out.data()[i] = std::log1p(10.0 * mag);
  }
  return out;
}

}  // namespace

Mat spectrogram(const media::Waveform& wave, int window, int bins) {
  Mat c, s;
  dft_tables(window, bins, c, s);
  return spectrogram_with(wave, window, c, s);
}

Mat patchify(const media::Image& image, int patch) {
  const int gh = image.height / patch, gw = image.width / patch;
  Mat out(gh * gw, patch * patch * 3);
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      const int row = gy * gw + gx;
      int col = 0;
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          for (int c = 0; c < 3; ++c) out(row, col++) = image.at(gy * patch + py, gx * patch + px, c) / 255.0;
    }
  return out;
}

Encoders Encoders::create(nn::ParamStore& ps, const EncoderConfig& cfg) {
  cfg.validate();
  Encoders e;
  e.cfg_ = cfg;
  const int d = cfg.d;
  e.patch_embed_ = nn::Linear::create(ps, "vision.patch", cfg.patch * cfg.patch * 3, d);
  e.pos_embed_ = ps.normal("vision.pos", cfg.lv(), d, 0.02);
  for (int l = 0; l < cfg.n_layers; ++l)
    e.vision_blocks_.push_back(
        nn::TransformerBlock::create(ps, "vision.block" + std::to_string(l), d, cfg.n_heads, 4 * d, cfg.n_layers));
  e.vision_norm_ = nn::LayerNorm::create(ps, "vision.norm", d);
  e.audio_in_ = nn::Linear::create(ps, "audio.in", cfg.spectrogram_bins, d);
  for (int l = 0; l < cfg.n_layers; ++l)
    e.audio_blocks_.push_back(
        nn::TransformerBlock::create(ps, "audio.block" + std::to_string(l), d, cfg.n_heads, 4 * d, cfg.n_layers));
  e.audio_norm_ = nn::LayerNorm::create(ps, "audio.norm", d);
  e.audio_proj_ = nn::Mlp::create(ps, "audio_proj", d, cfg.audio_proj_hidden, d);
  dft_tables(cfg.audio_window, cfg.spectrogram_bins, e.dft_cos_, e.dft_sin_);
  return e;
}

Var Encoders::vision_tokens(const media::Image& image) const {
  const int gh = image.height / cfg_.patch, gw = image.width / cfg_.patch;
  std::vector<Eigen::Index> pos_rows;
  pos_rows.reserve(static_cast<std::size_t>(gh) * gw);
  for (int y = 0; y < gh; ++y)
    for (int x = 0; x < gw; ++x) pos_rows.push_back(static_cast<Eigen::Index>(y) * cfg_.grid_w() + x);
  Var x = ag::add(patch_embed_(ag::constant(patchify(image, cfg_.patch))), ag::select_rows(pos_embed_, pos_rows));
  for (const auto& b : vision_blocks_) x = b(x, false);
  return vision_norm_(x);
}

TokenBlock Encoders::encode_frame(const media::Image& frame, int index) const {
  if (frame.height != cfg_.height || frame.width != cfg_.width)
    throw DataError("frame " + std::to_string(index) + " has resolution " + std::to_string(frame.height) + "x" +
                    std::to_string(frame.width) + ", expected " + std::to_string(cfg_.height) + "x" +
                    std::to_string(cfg_.width));
  TokenBlock b;
  b.tokens = vision_tokens(frame);
  b.modality = Modality::vision;
  b.frame_index = index;
  b.grid_h = cfg_.grid_h();
  b.grid_w = cfg_.grid_w();
  return b;
}

std::vector<TokenBlock> Encoders::encode_frames(const std::vector<media::Image>& frames) const {
  std::vector<TokenBlock> out;
  out.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) out.push_back(encode_frame(frames[i], static_cast<int>(i)));
  return out;
}

TokenBlock Encoders::encode_image_payload(const media::Image& image) const {
  if (image.height % cfg_.patch != 0 || image.width % cfg_.patch != 0 || image.height > cfg_.height ||
      image.width > cfg_.width || image.height == 0 || image.width == 0)
    throw DataError("image payload " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                    " incompatible with patch " + std::to_string(cfg_.patch) + " and canvas " +
                    std::to_string(cfg_.height) + "x" + std::to_string(cfg_.width));
  TokenBlock b;
  b.tokens = vision_tokens(image);
  b.modality = Modality::image_payload;
  b.grid_h = image.height / cfg_.patch;
  b.grid_w = image.width / cfg_.patch;
  return b;
}

Var Encoders::audio_front_end(const media::Waveform& wave) const {
  return audio_in_(ag::constant(spectrogram_with(wave, cfg_.audio_window, dft_cos_, dft_sin_)));
}

TokenBlock Encoders::encode_audio(const media::Waveform& wave) const {
  TokenBlock b;
  b.modality = Modality::audio;
  if (wave.size() < static_cast<std::size_t>(cfg_.audio_window)) {
    b.empty = true;
    b.tokens = ag::constant(Mat(0, cfg_.d));
    return b;
  }
  Var x = audio_front_end(wave);
  for (const auto& blk : audio_blocks_) x = blk(x, false);
  b.tokens = audio_proj_(audio_norm_(x));
  return b;
}

}  // namespace oisa::enc
