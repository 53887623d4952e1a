#include "doctest.h"

#include "oisa/error.hpp"
#include "oisa/evaluation.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

using namespace oisa;
using namespace oisa::eval;
using data::MaskGrid;

namespace {

MaskGrid rect(int h, int w, int y0, int x0, int y1, int x1) {
  MaskGrid m(h, w);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.at(y, x) = 1;
  return m;
}

MaskGrid random_mask(int h, int w, std::mt19937_64& rng, double p) {
  std::bernoulli_distribution b(p);
  MaskGrid m(h, w);
  for (auto& c : m.cells) c = b(rng) ? 1 : 0;
  return m;
}

// Brute force: boundary = mask minus its 4-neighbour erosion, all-pairs distances.
double oracle_f(const MaskGrid& a, const MaskGrid& b, double tol) {
  auto pts = [](const MaskGrid& m) {
    std::vector<std::pair<int, int>> out;
    auto in = [&](int y, int x) { return y >= 0 && x >= 0 && y < m.height && x < m.width && m.at(y, x) == 1; };
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x) {
        const bool eroded = in(y, x) && in(y - 1, x) && in(y + 1, x) && in(y, x - 1) && in(y, x + 1);
        if (in(y, x) && !eroded) out.emplace_back(y, x);
      }
    return out;
  };
  const auto pa = pts(a), pb = pts(b);
  if (pa.empty() && pb.empty()) return 1;
  if (pa.empty() || pb.empty()) return 0;
  auto frac = [&](const auto& from, const auto& to) {
    int hit = 0;
    for (const auto& [y, x] : from) {
      double best = 1e18;
      for (const auto& [v, u] : to) best = std::min(best, std::hypot(double(y - v), double(x - u)));
      hit += best <= tol;
    }
    return double(hit) / double(from.size());
  };
  const double p = frac(pa, pb), r = frac(pb, pa);
  return p + r == 0 ? 0 : 2 * p * r / (p + r);
}

double oracle_j(const MaskGrid& a, const MaskGrid& b) {
  double i = 0, u = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      i += a.at(y, x) & b.at(y, x);
      u += a.at(y, x) | b.at(y, x);
    }
  return u == 0 ? 1 : i / u;
}

// Second METEOR implementation: alignment as a greedy pass over a word -> free
// reference positions index, chunks counted from sorted (cand, ref) pairs.
double oracle_meteor(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  if (cand.empty()) return 0;
  std::vector<std::pair<int, int>> pairs;
  std::vector<char> cand_done(cand.size(), 0);
  std::vector<char> ref_done(ref.size(), 0);
  for (int pass = 0; pass < 2; ++pass) {
    std::map<std::string, std::vector<int>> free;
    for (int r = static_cast<int>(ref.size()) - 1; r >= 0; --r)
      if (!ref_done[r]) free[pass ? porter_stem(ref[r]) : ref[r]].push_back(r);
    for (std::size_t c = 0; c < cand.size(); ++c) {
      if (cand_done[c]) continue;
      auto it = free.find(pass ? porter_stem(cand[c]) : cand[c]);
      if (it == free.end() || it->second.empty()) continue;
      const int r = it->second.back();
      it->second.pop_back();
      pairs.emplace_back(static_cast<int>(c), r);
      cand_done[c] = 1;
      ref_done[r] = 1;
    }
  }
  if (pairs.empty()) return 0;
  std::sort(pairs.begin(), pairs.end());
  int chunks = 1;
  for (std::size_t i = 1; i < pairs.size(); ++i)
    if (!(pairs[i].first == pairs[i - 1].first + 1 && pairs[i].second == pairs[i - 1].second + 1)) ++chunks;
  const double m = static_cast<double>(pairs.size());
  const double p = m / cand.size(), r = m / ref.size();
  const double fmean = 10 * p * r / (r + 9 * p);
  return fmean * (1 - 0.5 * std::pow(chunks / m, 3));
}

}  // namespace

TEST_CASE("region_j examples") {
  const auto a = rect(16, 16, 2, 2, 8, 8);
  CHECK(region_j(a, a) == 1.0);
  CHECK(region_j(a, rect(16, 16, 10, 10, 14, 14)) == 0.0);
  CHECK(region_j(rect(16, 16, 0, 0, 16, 8), rect(16, 16, 0, 0, 16, 16)) == doctest::Approx(128.0 / 256.0));
  CHECK(region_j(MaskGrid(4, 4), MaskGrid(4, 4)) == 1.0);
  CHECK_THROWS_AS(region_j(MaskGrid(4, 4), MaskGrid(4, 5)), DataError);
}

TEST_CASE("boundary_f examples") {
  const auto sq = rect(16, 16, 4, 4, 10, 10);
  CHECK(boundary_f(sq, sq, 1) == 1.0);
  CHECK(boundary_f(sq, rect(16, 16, 4, 5, 10, 11), 1) == 1.0);
  CHECK(boundary_f(sq, rect(16, 16, 5, 5, 11, 11), 1.5) == 1.0);
  CHECK(boundary_f(sq, rect(16, 16, 4, 7, 10, 13), 1) < 1.0);
  CHECK(boundary_f(MaskGrid(8, 8), MaskGrid(8, 8), 1) == 1.0);
  CHECK(boundary_f(MaskGrid(8, 8), rect(8, 8, 1, 1, 3, 3), 1) == 0.0);
  CHECK_THROWS_AS(boundary_f(MaskGrid(4, 4), MaskGrid(5, 4), 1), DataError);
  CHECK(default_tolerance(64, 64) == 1.0);
  CHECK(default_tolerance(480, 854) == doctest::Approx(0.008 * std::hypot(480.0, 854.0)));
}

TEST_CASE("metrics match brute-force oracles") {
  std::mt19937_64 rng(11);
  SUBCASE("every 3x3 pair against a fixed partner set") {
    for (int a = 0; a < 512; ++a)
      for (int b = 0; b < 512; b += 37) {
        MaskGrid ma(3, 3), mb(3, 3);
        for (int i = 0; i < 9; ++i) {
          ma.cells[i] = (a >> i) & 1;
          mb.cells[i] = (b >> i) & 1;
        }
        REQUIRE(std::abs(region_j(ma, mb) - oracle_j(ma, mb)) <= 1e-9);
        REQUIRE(std::abs(boundary_f(ma, mb, 1) - oracle_f(ma, mb, 1)) <= 1e-9);
      }
  }
  SUBCASE("random 16x16 pairs") {
    for (int t = 0; t < 200; ++t) {
      const double p = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
      const auto a = random_mask(16, 16, rng, p), b = random_mask(16, 16, rng, p);
      const double tol = t % 3 == 0 ? 1.0 : (t % 3 == 1 ? 1.5 : 2.3);
      REQUIRE(std::abs(region_j(a, b) - oracle_j(a, b)) <= 1e-9);
      REQUIRE(std::abs(boundary_f(a, b, tol) - oracle_f(a, b, tol)) <= 1e-9);
    }
  }
}

TEST_CASE("no-target rule and union scoring") {
  const std::vector<MaskGrid> empty(3, MaskGrid(8, 8));
  auto one = empty;
  one[1].at(2, 2) = 1;
  CHECK(evaluate_expression(empty, empty, true, 1).jf == 1.0);
  const auto s = evaluate_expression(one, empty, true, 1);
  CHECK(s.jf == 0.0);
  CHECK(s.j == 0.0);
  CHECK(s.f == 0.0);

  std::vector<MaskGrid> gt;
  for (int f = 0; f < 3; ++f) {
    auto g = rect(8, 8, 0, 0, 3, 3);
    for (int y = 5; y < 8; ++y)
      for (int x = 5; x < 8; ++x) g.at(y, x) = 1;
    gt.push_back(g);
  }
  const auto u = evaluate_expression(gt, gt, false, 1);
  CHECK(u.j == 1.0);
  CHECK(u.f == 1.0);
  CHECK(u.jf == 1.0);
  auto half = gt;
  half[0] = rect(8, 8, 0, 0, 3, 3);
  const auto h = evaluate_expression(half, gt, false, 1);
  CHECK(h.jf == doctest::Approx((h.j + h.f) / 2));
  CHECK_THROWS_AS(evaluate_expression({MaskGrid(8, 8)}, gt, false, 1), DataError);
}

TEST_CASE("frame-order symmetry") {
  std::mt19937_64 rng(5);
  std::vector<MaskGrid> pred, gt;
  for (int f = 0; f < 6; ++f) {
    pred.push_back(random_mask(10, 10, rng, 0.4));
    gt.push_back(random_mask(10, 10, rng, 0.4));
  }
  const auto base = evaluate_expression(pred, gt, false, 1);
  std::vector<int> perm{3, 5, 0, 1, 4, 2};
  std::vector<MaskGrid> p2, g2;
  for (int i : perm) {
    p2.push_back(pred[i]);
    g2.push_back(gt[i]);
  }
  const auto shuffled = evaluate_expression(p2, g2, false, 1);
  CHECK(shuffled.j == doctest::Approx(base.j).epsilon(1e-12));
  CHECK(shuffled.f == doctest::Approx(base.f).epsilon(1e-12));
}

TEST_CASE("porter stemmer reference outputs") {
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"caresses", "caress"}, {"ponies", "poni"}, {"ties", "ti"}, {"caress", "caress"}, {"cats", "cat"},
      {"feed", "feed"}, {"agreed", "agre"}, {"plastered", "plaster"}, {"bled", "bled"}, {"motoring", "motor"},
      {"sing", "sing"}, {"conflated", "conflat"}, {"troubled", "troubl"}, {"sized", "size"}, {"hopping", "hop"},
      {"tanned", "tan"}, {"falling", "fall"}, {"hissing", "hiss"}, {"fizzed", "fizz"}, {"failing", "fail"},
      {"filing", "file"}, {"happy", "happi"}, {"sky", "sky"}, {"relational", "relat"}, {"conditional", "condit"},
      {"rational", "ration"}, {"digitizer", "digit"}, {"conformabli", "conform"}, {"radicalli", "radic"},
      {"differentli", "differ"}, {"vietnamization", "vietnam"}, {"predication", "predic"}, {"operator", "oper"},
      {"feudalism", "feudal"}, {"decisiveness", "decis"}, {"hopefulness", "hope"}, {"callousness", "callous"},
      {"formaliti", "formal"}, {"sensitiviti", "sensit"}, {"sensibiliti", "sensibl"}, {"triplicate", "triplic"},
      {"formative", "form"}, {"formalize", "formal"}, {"electrical", "electr"}, {"hopeful", "hope"},
      {"goodness", "good"}, {"revival", "reviv"}, {"allowance", "allow"}, {"inference", "infer"},
      {"airliner", "airlin"}, {"gyroscopic", "gyroscop"}, {"adjustable", "adjust"}, {"defensible", "defens"},
      {"irritant", "irrit"}, {"replacement", "replac"}, {"adjustment", "adjust"}, {"dependent", "depend"},
      {"adoption", "adopt"}, {"communism", "commun"}, {"activate", "activ"}, {"angulariti", "angular"},
      {"homologous", "homolog"}, {"effective", "effect"}, {"bowdlerize", "bowdler"}, {"probate", "probat"},
      {"rate", "rate"}, {"cease", "ceas"}, {"controll", "control"}, {"roll", "roll"}, {"generalizations", "gener"},
      {"oscillators", "oscil"}, {"connecting", "connect"}, {"warning", "warn"}, {"pulsed", "puls"},
      {"intermittently", "intermitt"},
  };
  for (const auto& [w, s] : cases) CHECK_MESSAGE(porter_stem(w) == s, w);
  CHECK(porter_stem("a") == "a");
  CHECK(porter_stem("Dogs") == "dog");
}

TEST_CASE("meteor closed form and dual implementation") {
  const auto st = meteor("the dog is warning", "the dog is warning");
  REQUIRE(st);
  CHECK(st->matches == 4);
  CHECK(st->chunks == 1);
  CHECK(std::abs(st->score - (1 - 0.5 * std::pow(0.25, 3))) <= 1e-12);
  CHECK(*meteor_score("alpha beta", "gamma delta") == 0.0);
  CHECK_FALSE(meteor_score("anything", "").has_value());
  CHECK(*meteor_score("", "the dog") == 0.0);
  const auto stem = meteor("dogs barked", "dog barking");
  CHECK(stem->matches == 2);

  const std::vector<std::string> words = {"the",   "dog",    "dogs",   "is",    "warning", "warned", "its",
                                          "sound", "sounds", "pulsed", "pulse", "steady",  "a",      "red"};
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    auto sentence = [&] {
      std::vector<std::string> s;
      const int n = 1 + static_cast<int>(rng() % 8);
      for (int i = 0; i < n; ++i) s.push_back(words[rng() % words.size()]);
      return s;
    };
    const auto c = sentence(), r = sentence();
    std::string cs, rs;
    for (const auto& w : c) cs += (cs.empty() ? "" : " ") + w;
    for (const auto& w : r) rs += (rs.empty() ? "" : " ") + w;
    CHECK_MESSAGE(std::abs(*meteor_score(cs, rs) - oracle_meteor(c, r)) <= 1e-9, cs << " | " << rs);
  }
}

TEST_CASE("evaluate_dataset from prediction files") {
  data::Manifest m;
  data::VideoSample s;
  s.id = "s0";
  s.fps = 5;
  s.height = 8;
  s.width = 8;
  s.frames = {"a", "b"};
  data::ObjectTrack o;
  o.object_id = "o0";
  o.masks[0] = data::encode_rle(rect(8, 8, 1, 1, 4, 4));
  o.masks[1] = data::encode_rle(rect(8, 8, 2, 2, 5, 5));
  s.objects.push_back(o);
  data::Expression e1;
  e1.id = "e0";
  e1.form = data::ExpressionForm::I;
  e1.text = "the red circle";
  e1.target_ids = {"o0"};
  e1.explanation = "because its sound is steady";
  data::Expression e2 = e1;
  e2.id = "e1";
  e2.target_ids = {};
  e2.explanation.reset();
  data::Expression e3 = e2;
  e3.id = "e2";
  e3.form = data::ExpressionForm::III;
  s.expressions = {e1, e2, e3};
  m.samples.push_back(s);

  const auto dir = std::filesystem::temp_directory_path() / "oisa_eval_test";
  std::filesystem::remove_all(dir);
  write_prediction(dir, "s0", "e0", {s.union_mask({"o0"}, 0), s.union_mask({"o0"}, 1)}, "it is [SEG] .",
                   std::string("because its sound is steady"));
  write_prediction(dir, "s0", "e1", {MaskGrid(8, 8), MaskGrid(8, 8)}, "there is no such object .", std::nullopt);
  const auto rep = evaluate_dataset(m, dir);
  CHECK(rep.missing == 1);
  CHECK(rep.splits.at(data::ExpressionForm::I).jf == 1.0);
  CHECK(rep.splits.at(data::ExpressionForm::III).jf == 0.0);
  CHECK(rep.overall.jf == doctest::Approx(0.5));
  CHECK(rep.splits.at(data::ExpressionForm::I).meteor == doctest::Approx(1 - 0.5 * std::pow(1.0 / 5, 3)));
  CHECK(report_table(rep).find("All") != std::string::npos);
  CHECK(report_csv(rep).find("s0,e2,III,1") != std::string::npos);

  // Report keyed by ids: reversed manifest order gives the same rows.
  auto rev = m;
  std::reverse(rev.samples[0].expressions.begin(), rev.samples[0].expressions.end());
  CHECK(report_csv(evaluate_dataset(rev, dir)) == report_csv(rep));

  // All-empty predictions: every split scores its no-target fraction.
  write_prediction(dir, "s0", "e0", {MaskGrid(8, 8), MaskGrid(8, 8)}, "", std::nullopt);
  write_prediction(dir, "s0", "e2", {MaskGrid(8, 8), MaskGrid(8, 8)}, "", std::nullopt);
  const auto empty = evaluate_dataset(m, dir);
  CHECK(empty.splits.at(data::ExpressionForm::I).jf == doctest::Approx(0.5));
  CHECK(empty.splits.at(data::ExpressionForm::III).jf == 1.0);
  std::filesystem::remove_all(dir);
}
