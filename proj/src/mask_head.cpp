#include "oisa/mask_head.hpp"

#include "oisa/error.hpp"

#include <cmath>

namespace oisa::mask {

void MaskHeadConfig::validate() const {
  if (self_attention) throw ConfigError("mask decoder blocks must not contain self-attention");
  if (d <= 0 || channels <= 0 || n_blocks <= 0 || n_heads <= 0) throw ConfigError("mask head sizes must be positive");
  if (channels % n_heads != 0) throw ConfigError("mask channels must be divisible by heads");
  if (channels % 4 != 0) throw ConfigError("mask channels must be divisible by 4 for the sine embedding");
}

void to_json(nlohmann::json& j, const MaskHeadConfig& c) {
  j = {{"d", c.d}, {"channels", c.channels}, {"n_blocks", c.n_blocks}, {"n_heads", c.n_heads},
       {"self_attention", c.self_attention}};
}

void from_json(const nlohmann::json& j, MaskHeadConfig& c) {
  c.d = j.value("d", c.d);
  c.channels = j.value("channels", c.channels);
  c.n_blocks = j.value("n_blocks", c.n_blocks);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.self_attention = j.value("self_attention", c.self_attention);
}

std::string to_string(Regime r) { return r == Regime::QP ? "QP" : "OTSA"; }

Regime parse_regime(const std::string& name) {
  if (name == "QP") return Regime::QP;
  if (name == "OTSA") return Regime::OTSA;
  throw ConfigError("unknown mask regime: " + name);
}

ag::Mat sine_position(int h, int w, int channels) {
  const int quarter = channels / 4;
  ag::Mat pe(h * w, channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double cy = (y + 0.5) / h * 2 * M_PI, cx = (x + 0.5) / w * 2 * M_PI;
      for (int c = 0; c < quarter; ++c) {
        const double f = std::pow(10000.0, -static_cast<double>(c) / quarter);
        const int r = y * w + x;
        pe(r, c) = std::sin(cy * f);
        pe(r, quarter + c) = std::cos(cy * f);
        pe(r, 2 * quarter + c) = std::sin(cx * f);
        pe(r, 3 * quarter + c) = std::cos(cx * f);
      }
    }
  return pe;
}

MaskHead MaskHead::create(nn::ParamStore& ps, const MaskHeadConfig& cfg, int patch) {
  cfg.validate();
  MaskHead m;
  m.cfg_ = cfg;
  m.patch_ = patch;
  const int c = cfg.channels;
  auto conv = [&](const std::string& name, int k, int cin, int cout, Var& w, Var& b) {
    w = ps.normal(name + ".weight", k * k * cin, cout, 1.0 / std::sqrt(static_cast<double>(k * k * cin)));
    b = ps.zeros(name + ".bias", 1, cout);
  };
  m.query_init_ = nn::Linear::create(ps, "mask.query_init", cfg.d, c);
  conv("mask.adapter.s8", 1, cfg.d, c, m.adapter8_w_, m.adapter8_b_);
  conv("mask.adapter.s16", 2, c, c, m.down16_w_, m.down16_b_);
  conv("mask.adapter.s32", 2, c, c, m.down32_w_, m.down32_b_);
  for (int l = 0; l < 3; ++l)
    conv("mask.pixel.lateral" + std::to_string(8 << l), 1, c, c, m.lateral_w_[l], m.lateral_b_[l]);
  m.up_w_ = ps.normal("mask.pixel.up4.weight", c, 4 * c, 1.0 / std::sqrt(static_cast<double>(c)));
  m.up_b_ = ps.zeros("mask.pixel.up4.bias", 1, c);
  conv("mask.pixel.mask_proj", 1, c, c, m.mask_proj_w_, m.mask_proj_b_);
  m.level_embed_ = ps.normal("mask.decoder.level_embed", 3, c, 0.1);
  for (int i = 0; i < cfg.n_blocks; ++i) {
    const std::string p = "mask.decoder.block" + std::to_string(i);
    Block b;
    b.ln_q = nn::LayerNorm::create(ps, p + ".cross_attn.norm", c);
    b.q = nn::Linear::create(ps, p + ".cross_attn.q", c, c);
    b.k = nn::Linear::create(ps, p + ".cross_attn.k", c, c);
    b.v = nn::Linear::create(ps, p + ".cross_attn.v", c, c);
    b.o = nn::Linear::create(ps, p + ".cross_attn.o", c, c, true, 1.0 / std::sqrt(2.0 * cfg.n_blocks));
    b.ln_ffn = nn::LayerNorm::create(ps, p + ".ffn.norm", c);
    b.ffn = nn::Mlp::create(ps, p + ".ffn", c, 4 * c, c, 1.0 / std::sqrt(2.0 * cfg.n_blocks));
    m.blocks_.push_back(std::move(b));
  }
  m.embed_norm_ = nn::LayerNorm::create(ps, "mask.embed.norm", c);
  m.embed_mlp_ = nn::Mlp::create(ps, "mask.embed.mlp", c, c, c);
  return m;
}

FeaturePyramid MaskHead::build_pyramid(const enc::TokenBlock& vision) const {
  const int h8 = vision.grid_h, w8 = vision.grid_w;
  if (h8 != w8) throw DataError("token grid " + std::to_string(h8) + "x" + std::to_string(w8) + " is not square");
  if (h8 % 4 != 0) throw DataError("token grid side " + std::to_string(h8) + " must be divisible by 4");
  if (vision.tokens.rows() != static_cast<Eigen::Index>(h8) * w8) throw DataError("token count does not match grid");
  FeaturePyramid f;
  f.height = h8 * patch_;
  f.width = w8 * patch_;
  const Var s8 = ag::conv2d(vision.tokens, h8, w8, adapter8_w_, adapter8_b_, 1, 1, 0);
  const Var s16 = ag::conv2d(s8, h8, w8, down16_w_, down16_b_, 2, 2, 0);
  const Var s32 = ag::conv2d(s16, h8 / 2, w8 / 2, down32_w_, down32_b_, 2, 2, 0);
  // Top-down pathway.
  const Var p32 = ag::conv2d(s32, h8 / 4, w8 / 4, lateral_w_[2], lateral_b_[2], 1, 1, 0);
  const Var p16 = ag::add(ag::conv2d(s16, h8 / 2, w8 / 2, lateral_w_[1], lateral_b_[1], 1, 1, 0),
                          ag::upsample_nearest2x(p32, h8 / 4, w8 / 4));
  const Var p8 = ag::add(ag::conv2d(s8, h8, w8, lateral_w_[0], lateral_b_[0], 1, 1, 0),
                         ag::upsample_nearest2x(p16, h8 / 2, w8 / 2));
  f.levels = {p8, p16, p32};
  f.dims = {std::pair{h8, w8}, std::pair{h8 / 2, w8 / 2}, std::pair{h8 / 4, w8 / 4}};
  f.mh = 2 * h8;
  f.mw = 2 * w8;
  f.mask_features = ag::conv2d(ag::gelu(ag::conv_transpose2x2(p8, h8, w8, up_w_, up_b_)), f.mh, f.mw, mask_proj_w_,
                               mask_proj_b_, 1, 1, 0);
  return f;
}

TrackState MaskHead::init_state(const Var& seg_query) const {
  TrackState s;
  s.query = query_init_(seg_query);
  return s;
}

Var MaskHead::refine(const Var& query, const FeaturePyramid& f) const {
  Var q = query;
  for (int i = 0; i < cfg_.n_blocks; ++i) {
    const int level = 2 - (i % 3);  // coarse to fine: strides 32, 16, 8
    const auto [h, w] = f.dims[level];
    const Var& mem = f.levels[level];
    const Var lvl = ag::slice_rows(level_embed_, level, 1);
    const Var keys = ag::add_row(ag::add(mem, ag::constant(sine_position(h, w, cfg_.channels))), lvl);
    const auto& b = blocks_[i];
    const Var attn = ag::attention(b.q(b.ln_q(q)), b.k(keys), b.v(ag::add_row(mem, lvl)), cfg_.n_heads, false);
    q = ag::add(q, b.o(attn));
    q = ag::add(q, b.ffn(b.ln_ffn(q)));
  }
  return q;
}

Var MaskHead::mask_logits(const Var& refined, const FeaturePyramid& f) const {
  const Var embed = embed_mlp_(embed_norm_(refined));                          // 1 x C
  const Var low = ag::reshape(ag::matmul_nt(f.mask_features, embed), f.mh, f.mw);  // stride 4
  return ag::bilinear_resize(low, f.height, f.width);
}

Var MaskHead::decode_frame(TrackState& state, const FeaturePyramid& f) const {
  const Var refined = refine(state.query, f);
  const Var logits = mask_logits(refined, f);
  state.query = refined;
  ++state.frame_cursor;
  state.mask_logits_history.push_back(logits);
  return logits;
}

std::vector<Var> MaskHead::segment_sequence(const Var& seg_query, const std::vector<FeaturePyramid>& pyramids,
                                            Regime regime) const {
  std::vector<Var> out;
  if (pyramids.empty()) return out;
  TrackState state = init_state(seg_query);
  const Var q0 = state.query;
  for (const auto& f : pyramids) {
    if (regime == Regime::OTSA) state.query = q0;
    out.push_back(decode_frame(state, f));
  }
  return out;
}

data::MaskGrid binarize(const Var& logits) {
  const auto& v = logits.value();
  data::MaskGrid g(static_cast<int>(v.rows()), static_cast<int>(v.cols()));
  for (Eigen::Index i = 0; i < v.size(); ++i) g.cells[static_cast<std::size_t>(i)] = v.data()[i] > 0 ? 1 : 0;
  return g;
}

Census parameter_census(const nn::ParamStore& ps) {
  Census c;
  for (const auto& p : ps.params()) {
    const auto n = static_cast<std::size_t>(p.var.value().size());
    c.by_module[p.name.substr(0, p.name.find('.'))] += n;
    c.total += n;
    if (p.name.rfind("mask.decoder", 0) == 0 && p.name.find("self_attn") != std::string::npos)
      c.decoder_self_attention += n;
  }
  return c;
}

}  // namespace oisa::mask
