#include "doctest.h"
#include "gradcheck.hpp"

#include "oisa/error.hpp"
#include "oisa/mask_head.hpp"

#include <random>

using namespace oisa;
using namespace oisa::mask;

namespace {

enc::TokenBlock tokens(int grid, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  ag::Mat m(grid * grid, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  enc::TokenBlock b;
  b.tokens = ag::Var(m, true);
  b.grid_h = b.grid_w = grid;
  return b;
}

struct Fixture {
  nn::ParamStore ps{7};
  MaskHead head = MaskHead::create(ps, {16, 16, 3, 2, false}, 8);
  ag::Var seg = ag::Var(ag::Mat::Random(1, 16), true);
};

bool same(const ag::Var& a, const ag::Var& b) { return a.value() == b.value(); }

}  // namespace

TEST_CASE("pyramid shapes") {
  nn::ParamStore ps(1);
  const auto head = MaskHead::create(ps, {64, 64, 3, 4, false}, 8);
  const auto f = head.build_pyramid(tokens(8, 64, 1));
  CHECK(f.dims[0] == std::pair{8, 8});
  CHECK(f.dims[1] == std::pair{4, 4});
  CHECK(f.dims[2] == std::pair{2, 2});
  CHECK(f.levels[2].rows() == 4);
  CHECK(f.mh == 16);
  CHECK(f.mask_features.rows() == 256);
  CHECK(f.mask_features.cols() == 64);
  const auto state = head.init_state(ag::Var(ag::Mat::Random(1, 64)));
  auto s = state;
  CHECK(head.decode_frame(s, f).rows() == 64);
  CHECK(s.frame_cursor == 1);

  auto bad = tokens(8, 64, 1);
  bad.grid_h = 4;
  bad.grid_w = 16;
  CHECK_THROWS_AS(head.build_pyramid(bad), DataError);
}

TEST_CASE("zero tokens give bias-only features") {
  Fixture fx;
  auto t = tokens(4, 16, 1);
  t.tokens = ag::Var(ag::Mat::Zero(16, 16));
  const auto f = fx.head.build_pyramid(t);
  for (const auto& level : f.levels)
    for (Eigen::Index r = 1; r < level.rows(); ++r) CHECK(level.value().row(r) == level.value().row(0));
  for (Eigen::Index r = 1; r < f.mask_features.rows(); r += 7)
    CHECK((f.mask_features.value().row(r) - f.mask_features.value().row(0)).norm() < 1e-12);
  // The stride-8 adapter output is exactly its bias (zero at init) routed through the laterals.
  const auto* b8 = fx.ps.find("mask.adapter.s8.bias");
  REQUIRE(b8);
  CHECK(b8->var.value().isZero());
}

TEST_CASE("pixel decoder gradients") {
  Fixture fx;
  const auto t = tokens(4, 16, 2);
  const ag::Mat probe = ag::Mat::Random(64, 16);
  auto loss = [&] { return ag::sum(ag::mul(fx.head.build_pyramid(t).mask_features, ag::constant(probe))); };
  for (const auto& p : fx.ps.params()) {
    if (p.name.rfind("mask.adapter", 0) != 0 && p.name.rfind("mask.pixel", 0) != 0) continue;
    const auto r = testing::grad_check(loss, p.var, 10, 3);
    CHECK_MESSAGE(r.max_rel_error <= 1e-3, p.name << " " << r.max_rel_error);
  }
  CHECK(testing::grad_check(loss, t.tokens, 10, 4).max_rel_error <= 1e-3);

  const auto f = fx.head.build_pyramid(t);
  auto mask_loss = [&] {
    const auto logits = fx.head.segment_sequence(fx.seg, {f, f}, Regime::QP);
    return ag::add(ag::sum(logits[0]), ag::scale(ag::sum(logits[1]), 0.5));
  };
  for (const auto& p : fx.ps.params()) {
    if (p.name.rfind("mask.decoder", 0) != 0 && p.name.rfind("mask.embed", 0) != 0 &&
        p.name.rfind("mask.query", 0) != 0)
      continue;
    if (p.name.find(".k.bias") != std::string::npos) continue;  // softmax shift invariance
    const auto r = testing::grad_check(mask_loss, p.var, 4, 5);
    CHECK_MESSAGE(r.max_rel_error <= 1e-3, p.name << " " << r.max_rel_error);
  }
}

TEST_CASE("mask logits are linear in the mask features") {
  Fixture fx;
  auto f1 = fx.head.build_pyramid(tokens(4, 16, 3));
  auto f2 = fx.head.build_pyramid(tokens(4, 16, 4));
  const ag::Var q(ag::Mat::Random(1, 16));
  auto mix = f1;
  mix.mask_features = ag::constant(2.0 * f1.mask_features.value() - 0.5 * f2.mask_features.value());
  const ag::Mat want = 2.0 * fx.head.mask_logits(q, f1).value() - 0.5 * fx.head.mask_logits(q, f2).value();
  CHECK((fx.head.mask_logits(q, mix).value() - want).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("regime structure") {
  Fixture fx;
  std::vector<FeaturePyramid> f;
  for (int i = 0; i < 5; ++i) f.push_back(fx.head.build_pyramid(tokens(4, 16, 10 + i)));

  SUBCASE("single frame: regimes agree") {
    CHECK(same(fx.head.segment_sequence(fx.seg, {f[0]}, Regime::QP)[0],
               fx.head.segment_sequence(fx.seg, {f[0]}, Regime::OTSA)[0]));
  }
  SUBCASE("OTSA permutation equivariance") {
    const auto base = fx.head.segment_sequence(fx.seg, f, Regime::OTSA);
    const std::vector<int> perm{3, 0, 4, 1, 2};
    std::vector<FeaturePyramid> shuffled;
    for (int i : perm) shuffled.push_back(f[i]);
    const auto out = fx.head.segment_sequence(fx.seg, shuffled, Regime::OTSA);
    for (int k = 0; k < 5; ++k) CHECK(same(out[k], base[perm[k]]));
  }
  SUBCASE("QP causality") {
    const auto base = fx.head.segment_sequence(fx.seg, f, Regime::QP);
    for (int t = 0; t < 4; ++t) {
      auto changed = f;
      for (int k = t + 1; k < 5; ++k) changed[k] = fx.head.build_pyramid(tokens(4, 16, 100 + k));
      const auto out = fx.head.segment_sequence(fx.seg, changed, Regime::QP);
      for (int k = 0; k <= t; ++k) CHECK(same(out[k], base[k]));
    }
    // Propagation matters: frame 1 differs between regimes.
    CHECK_FALSE(same(base[1], fx.head.segment_sequence(fx.seg, f, Regime::OTSA)[1]));
  }
  SUBCASE("OTSA on identical frames") {
    const auto out = fx.head.segment_sequence(fx.seg, {f[2], f[2]}, Regime::OTSA);
    CHECK(same(out[0], out[1]));
  }
  CHECK(fx.head.segment_sequence(fx.seg, {}, Regime::QP).empty());
}

TEST_CASE("decoder census has no self-attention") {
  Fixture fx;
  const auto c = parameter_census(fx.ps);
  CHECK(c.decoder_self_attention == 0);
  CHECK(c.by_module.at("mask") == c.total);
  for (const auto& p : fx.ps.params()) {
    if (p.name.rfind("mask.decoder.block", 0) != 0) continue;
    const bool known = p.name.find(".cross_attn.") != std::string::npos || p.name.find(".ffn.") != std::string::npos;
    CHECK_MESSAGE(known, p.name);
  }
  nn::ParamStore ps;
  CHECK_THROWS_AS(MaskHead::create(ps, {16, 16, 3, 2, true}, 8), ConfigError);
  CHECK(binarize(ag::Var(ag::Mat::Constant(2, 3, 0.0))).empty());
  CHECK(binarize(ag::Var(ag::Mat::Constant(2, 3, 1e-9))).area() == 6);
}
