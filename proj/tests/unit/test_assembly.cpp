#include "doctest.h"
#include "gradcheck.hpp"

#include "oisa/assembly.hpp"
#include "oisa/error.hpp"
#include "oisa/lm.hpp"

#include <random>

using namespace oisa;
using namespace oisa::assembly;

namespace {

std::string compact(const std::vector<Tag>& tags) {
  std::string s;
  for (Tag t : tags) {
    if (t == Tag::vision) s += 'v';
    if (t == Tag::audio) s += 'a';
  }
  return s;
}

TokenBlock block(int rows, int d, double fill, enc::Modality m = enc::Modality::vision) {
  TokenBlock b;
  ag::Mat v(rows, d);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = fill + 0.01 * static_cast<double>(i);
  b.tokens = Var(v, true);
  b.modality = m;
  b.grid_h = 1;
  b.grid_w = rows;
  return b;
}

struct Fixture {
  Vocabulary vocab;
  nn::ParamStore ps{3};
  lm::LanguageModel model = lm::LanguageModel::create(ps, {8, 1, 2, 128, 512, 10000.0});
  Fusion fusion = Fusion::create(ps, 8);
  enc::Encoders encoders = enc::Encoders::create(ps, [] {
    enc::EncoderConfig c;
    c.height = c.width = 16;
    c.d = 8;
    c.n_heads = 2;
    c.audio_proj_hidden = 8;
    return c;
  }());
  Embedder embed = model.embedder();
};

}  // namespace

TEST_CASE("AVI tag pattern examples") {
  CHECK(compact(layout_pattern({3, 3}, 4, Layout::AVI).tags) == "vvvaavvvaa");
  CHECK(compact(layout_pattern({3, 3}, 4, Layout::AVI_CONCAT).tags) == "vvvaavvvaaaaaa");
  CHECK(compact(layout_pattern({3, 3}, 4, Layout::CONCAT).tags) == "vvvvvvaaaa");
  CHECK(compact(layout_pattern({3, 3}, 4, Layout::WEIGHTED_SUM).tags) == "vvvvvv");
  CHECK(clip_lengths(7, 3) == std::vector<int>{2, 2, 3});
  CHECK(compact(layout_pattern({1, 1, 1}, 7, Layout::AVI).tags) == "vaavaavaaa");
  const auto p = layout_pattern({2, 2}, 4, Layout::AVI);
  CHECK(p.tags.front() == Tag::special);
  try {
    layout_pattern({2, 2, 2}, 2, Layout::AVI);
    FAIL("expected error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()) == "audio shorter than one token per frame");
  }
  CHECK_NOTHROW(layout_pattern({2, 2, 2}, 2, Layout::CONCAT));
}

TEST_CASE("AVI invariants over random shapes") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 16), lv = 1 + static_cast<int>(rng() % 20);
    const int la = n + static_cast<int>(rng() % 60);
    for (Layout layout : {Layout::AVI, Layout::AVI_CONCAT}) {
      const auto p = layout_pattern(std::vector<int>(n, lv), la, layout);
      int audio = 0;
      std::vector<int> first_v(n, -1), last_a(n, -1), first_a(n, -1), per_clip(n, 0);
      for (int i = 0; i < static_cast<int>(p.tags.size()); ++i) {
        const int f = p.frame_index[i];
        if (p.tags[i] == Tag::audio) ++audio;
        if (p.tags[i] == Tag::vision && first_v[f] < 0) first_v[f] = i;
        if (p.tags[i] == Tag::audio && f >= 0) {
          if (first_a[f] < 0) first_a[f] = i;
          last_a[f] = i;
          ++per_clip[f];
        }
      }
      CHECK(audio == (layout == Layout::AVI ? la : 2 * la));
      const int base = la / n;
      for (int i = 0; i < n; ++i) {
        CHECK(per_clip[i] >= base);
        CHECK(per_clip[i] <= base + 1);
        CHECK(first_a[i] > first_v[i]);
        if (i + 1 < n) CHECK(last_a[i] < first_v[i + 1]);
      }
    }
  }
}

TEST_CASE("interleave_av places the right rows") {
  Fixture fx;
  std::vector<TokenBlock> frames{block(3, 8, 1.0), block(3, 8, 2.0)};
  TokenBlock audio = block(5, 8, -1.0, enc::Modality::audio);
  const auto p = interleave_av(frames, audio, Layout::AVI_CONCAT, fx.fusion, fx.embed);
  REQUIRE(p.tokens.rows() == p.length());
  CHECK(p.length() == 2 + 6 + 5 + 5);
  CHECK(p.clip_len == 2);
  CHECK(p.audio_len == 5);
  // Second clip holds audio rows 2..4 (remainder goes to the last clip).
  const int clip2 = 1 + 3 + 2 + 1 + 3;
  CHECK(p.tokens.value().row(clip2) == audio.tokens.value().row(2));
  CHECK(p.tokens.value().row(p.length() - 1) == audio.tokens.value().row(4));
  CHECK(p.token_ids[0] == Vocabulary::kFrame);
  CHECK(layout_dump(p).substr(0, 20) == "0\tspecial\t0\n1\tvision");
}

TEST_CASE("weighted-sum and attention fusion") {
  Fixture fx;
  std::vector<TokenBlock> frames{block(3, 8, 1.0), block(2, 8, 2.0)};
  TokenBlock audio = block(2, 8, -1.0, enc::Modality::audio);
  const auto ws = interleave_av(frames, audio, Layout::WEIGHTED_SUM, fx.fusion, fx.embed);
  CHECK(ws.length() == 7);
  // Vision token j is mixed with audio row min(j, L_A - 1) at weight 0.5.
  const ag::Mat& a = audio.tokens.value();
  CHECK((ws.tokens.value().row(1) - (frames[0].tokens.value().row(0) + 0.5 * a.row(0))).norm() < 1e-12);
  CHECK((ws.tokens.value().row(6) - (frames[1].tokens.value().row(1) + 0.5 * a.row(1))).norm() < 1e-12);

  const auto at = interleave_av(frames, audio, Layout::ATTENTION, fx.fusion, fx.embed);
  CHECK(at.length() == 7);
  CHECK(compact(at.tags) == "vvvvv");
  auto loss = [&] {
    return ag::sum(ag::mul(interleave_av(frames, audio, Layout::ATTENTION, fx.fusion, fx.embed).tokens,
                           ag::constant(ag::Mat::Constant(7, 8, 0.3))));
  };
  for (const Var& p : {fx.fusion.query.weight, fx.fusion.key.weight, fx.fusion.value.weight})
    CHECK(testing::grad_check(loss, p, 6, 2).max_rel_error < 1e-4);
  CHECK(testing::grad_check(loss, audio.tokens, 6, 3).max_rel_error < 1e-4);
}

TEST_CASE("sparse frames pool the token grid") {
  TokenBlock b = block(16, 4, 0.0);
  b.grid_h = b.grid_w = 4;
  const auto s = sparsify(b, 2);
  CHECK(s.tokens.rows() == 4);
  const ag::Mat& v = b.tokens.value();
  CHECK((s.tokens.value().row(0) - (v.row(0) + v.row(1) + v.row(4) + v.row(5)) / 4).norm() < 1e-12);
  b.grid_h = 3;
  CHECK_THROWS_AS(sparsify(b, 2), ConfigError);
}

TEST_CASE("compose_expression tags by modality") {
  Fixture fx;
  synth::ExpressionMedia media;
  media.sound = synth::synth_speech_ids({1, 2});  // 4 windows
  media.speech = synth::synth_speech_ids({7});
  media.image = media::Image(16, 8);

  data::Expression e;
  e.id = "e0";
  e.form = data::ExpressionForm::I;
  e.text = "the red circle";
  auto seg = compose_expression(e, media, fx.encoders, fx.vocab, fx.embed);
  CHECK(seg.tags == std::vector<Tag>(3, Tag::text));

  e.form = data::ExpressionForm::III;
  e.text = "the object making this sound : <SOUND>";
  seg = compose_expression(e, media, fx.encoders, fx.vocab, fx.embed);
  REQUIRE(seg.length() == 6 + 4);
  CHECK(seg.tags[5] == Tag::text);
  CHECK(seg.tags[6] == Tag::sound_payload);
  CHECK(seg.token_ids[6] == -1);

  e.form = data::ExpressionForm::VIII;
  e.text.clear();
  seg = compose_expression(e, media, fx.encoders, fx.vocab, fx.embed);
  CHECK(seg.length() == 2 + 4 + 2);
  CHECK(std::count(seg.tags.begin(), seg.tags.end(), Tag::text) == 0);
  CHECK(seg.tags[0] == Tag::speech_payload);
  CHECK(seg.tags[2] == Tag::sound_payload);
  CHECK(seg.tags[7] == Tag::image_payload);

  e.form = data::ExpressionForm::III;
  e.text = "the object making this sound <SOUND>";
  synth::ExpressionMedia none;
  CHECK_THROWS_AS(compose_expression(e, none, fx.encoders, fx.vocab, fx.embed), DataError);
}

TEST_CASE("build_prompt order, determinism and limits") {
  Fixture fx;
  std::vector<TokenBlock> frames{block(3, 8, 1.0), block(3, 8, 2.0), block(3, 8, 3.0)};
  TokenBlock audio = block(6, 8, -1.0, enc::Modality::audio);
  data::Expression e;
  e.id = "e0";
  e.text = "the red circle";
  const auto seg = compose_expression(e, {}, fx.encoders, fx.vocab, fx.embed);
  const auto answer = lm::answer_ids(1, std::nullopt, fx.vocab);
  const PromptTemplate tmpl;
  auto build = [&](const std::vector<TokenBlock>& fr) {
    return build_prompt(interleave_av(fr, audio, Layout::AVI, fx.fusion, fx.embed), seg, tmpl, answer, 512,
                        fx.vocab, fx.embed);
  };
  const auto p = build(frames);
  CHECK(p.token_ids[0] == Vocabulary::kBos);
  CHECK(p.tags[0] == Tag::special);
  CHECK(p.answer_start == p.length() - static_cast<int>(answer.size()));
  CHECK(p.token_ids[p.answer_start - 1] == fx.vocab.id(":"));
  CHECK(build(frames).tokens.value() == p.tokens.value());

  // Swapping frames 0 and 2 changes only their vision rows.
  const auto q = build({frames[2], frames[1], frames[0]});
  for (int i = 0; i < p.length(); ++i) {
    const bool differs = p.tokens.value().row(i) != q.tokens.value().row(i);
    const bool swapped_vision = p.tags[i] == Tag::vision && p.frame_index[i] != 1;
    CHECK(differs == swapped_vision);
  }

  data::Expression empty;
  empty.id = "e1";
  const auto nothing = compose_expression(empty, {}, fx.encoders, fx.vocab, fx.embed);
  CHECK_THROWS_AS(build_prompt(interleave_av(frames, audio, Layout::AVI, fx.fusion, fx.embed), nothing, tmpl, answer,
                               512, fx.vocab, fx.embed),
                  DataError);
  try {
    build_prompt(interleave_av(frames, audio, Layout::AVI, fx.fusion, fx.embed), seg, tmpl, answer, 20, fx.vocab,
                 fx.embed);
    FAIL("expected overflow");
  } catch (const ConfigError& err) {
    CHECK(std::string(err.what()).find("exceeds context 20") != std::string::npos);
  }

  PromptTemplate swapped = tmpl;
  swapped.content_first = false;
  const auto r = build_prompt(interleave_av(frames, audio, Layout::AVI, fx.fusion, fx.embed), seg, swapped, answer,
                              512, fx.vocab, fx.embed);
  CHECK(r.length() == p.length());
  const auto first_vision = std::find(r.tags.begin(), r.tags.end(), Tag::vision) - r.tags.begin();
  const auto first_vision_p = std::find(p.tags.begin(), p.tags.end(), Tag::vision) - p.tags.begin();
  CHECK(first_vision > first_vision_p);
}
