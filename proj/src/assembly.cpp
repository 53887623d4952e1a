#include "oisa/assembly.hpp"

#include "oisa/error.hpp"

#include <cmath>
#include <sstream>

namespace oisa::assembly {

namespace {

enum class PieceKind { separator, vision, audio };

struct Piece {
  PieceKind kind;
  int frame;     // owning frame, -1 for the appended full audio
  int start;     // audio: first token
  int count;
};

std::vector<Piece> plan(const std::vector<int>& frame_tokens, int audio_len, Layout layout) {
  const int n = static_cast<int>(frame_tokens.size());
  if (n < 1) throw ConfigError("interleaving needs at least one frame");
  std::vector<Piece> out;
  auto frame = [&](int i) {
    out.push_back({PieceKind::separator, i, 0, 1});
    out.push_back({PieceKind::vision, i, 0, frame_tokens[i]});
  };
  switch (layout) {
    case Layout::AVI:
    case Layout::AVI_CONCAT: {
      if (audio_len < n) throw DataError("audio shorter than one token per frame");
      const auto clips = clip_lengths(audio_len, n);
      int pos = 0;
      for (int i = 0; i < n; ++i) {
        frame(i);
        out.push_back({PieceKind::audio, i, pos, clips[i]});
        pos += clips[i];
      }
      if (layout == Layout::AVI_CONCAT) out.push_back({PieceKind::audio, -1, 0, audio_len});
      break;
    }
    case Layout::CONCAT: {
      for (int i = 0; i < n; ++i) frame(i);
      if (audio_len >= n) {
        const auto clips = clip_lengths(audio_len, n);
        int pos = 0;
        for (int i = 0; i < n; ++i) {
          out.push_back({PieceKind::audio, i, pos, clips[i]});
          pos += clips[i];
        }
      } else if (audio_len > 0) {
        out.push_back({PieceKind::audio, -1, 0, audio_len});
      }
      break;
    }
    case Layout::WEIGHTED_SUM:
    case Layout::ATTENTION:
      for (int i = 0; i < n; ++i) frame(i);
      break;
  }
  return out;
}

Var scalar_times(const Var& scalar, const Var& x) {
  const Var row = ag::matmul(scalar, ag::constant(ag::Mat::Ones(1, x.cols())));
  return ag::mul_row(x, row);
}

}  // namespace

std::string to_string(Tag t) {
  switch (t) {
    case Tag::vision: return "vision";
    case Tag::audio: return "audio";
    case Tag::text: return "text";
    case Tag::image_payload: return "image_payload";
    case Tag::sound_payload: return "sound_payload";
    case Tag::speech_payload: return "speech_payload";
    case Tag::special: return "special";
  }
  return "";
}

std::string to_string(Layout l) {
  switch (l) {
    case Layout::AVI: return "AVI";
    case Layout::AVI_CONCAT: return "AVI_CONCAT";
    case Layout::CONCAT: return "CONCAT";
    case Layout::WEIGHTED_SUM: return "WEIGHTED_SUM";
    case Layout::ATTENTION: return "ATTENTION";
  }
  return "";
}

Layout parse_layout(const std::string& name) {
  for (Layout l : {Layout::AVI, Layout::AVI_CONCAT, Layout::CONCAT, Layout::WEIGHTED_SUM, Layout::ATTENTION})
    if (to_string(l) == name) return l;
  throw ConfigError("unknown fusion layout: " + name);
}

std::vector<int> clip_lengths(int audio_len, int n_frames) {
  if (n_frames < 1) throw ConfigError("clip split needs at least one frame");
  const int base = audio_len / n_frames, rem = audio_len % n_frames;
  std::vector<int> out(n_frames, base);
  for (int i = n_frames - rem; i < n_frames; ++i) ++out[i];
  return out;
}

TagPattern layout_pattern(const std::vector<int>& frame_tokens, int audio_len, Layout layout) {
  TagPattern p;
  for (const auto& piece : plan(frame_tokens, audio_len, layout)) {
    const Tag t = piece.kind == PieceKind::separator ? Tag::special
                  : piece.kind == PieceKind::vision  ? Tag::vision
                                                     : Tag::audio;
    for (int k = 0; k < piece.count; ++k) {
      p.tags.push_back(t);
      p.frame_index.push_back(piece.frame);
    }
  }
  return p;
}

Fusion Fusion::create(nn::ParamStore& ps, int d) {
  Fusion f;
  f.mix = ps.add("fusion.mix", ag::Mat::Constant(1, 1, 0.5));
  f.query = nn::Linear::create(ps, "fusion.query", d, d, false);
  f.key = nn::Linear::create(ps, "fusion.key", d, d, false);
  f.value = nn::Linear::create(ps, "fusion.value", d, d, false, 0.5);
  return f;
}

TokenBlock sparsify(const TokenBlock& block, int pool) {
  if (pool <= 1) return block;
  if (block.grid_h % pool != 0 || block.grid_w % pool != 0)
    throw ConfigError("token grid " + std::to_string(block.grid_h) + "x" + std::to_string(block.grid_w) +
                      " not divisible by sparse pool " + std::to_string(pool));
  TokenBlock out = block;
  out.tokens = ag::avg_pool(block.tokens, block.grid_h, block.grid_w, pool);
  out.grid_h = block.grid_h / pool;
  out.grid_w = block.grid_w / pool;
  return out;
}

AssembledPrompt interleave_av(const std::vector<TokenBlock>& frames, const TokenBlock& audio, Layout layout,
                              const Fusion& fusion, const Embedder& embed) {
  std::vector<int> counts;
  for (const auto& f : frames) counts.push_back(f.length());
  const int la = audio.length();
  const auto pieces = plan(counts, la, layout);

  AssembledPrompt out;
  out.layout = layout;
  out.n_frames = static_cast<int>(frames.size());
  out.audio_len = la;
  out.clip_len = out.n_frames > 0 ? la / out.n_frames : 0;

  const Var sep = embed({Vocabulary::kFrame});
  std::vector<Var> vision;
  for (const auto& f : frames) vision.push_back(f.tokens);

  // Fusion baselines fold audio into the vision tokens before layout.
  if ((layout == Layout::WEIGHTED_SUM || layout == Layout::ATTENTION) && la > 0) {
    const Var v_all = ag::concat_rows(vision);
    const auto tv = v_all.rows();
    Var fused;
    if (layout == Layout::WEIGHTED_SUM) {
      std::vector<Eigen::Index> rows(static_cast<std::size_t>(tv));
      for (Eigen::Index j = 0; j < tv; ++j) rows[j] = std::min<Eigen::Index>(j, la - 1);
      fused = ag::add(v_all, scalar_times(fusion.mix, ag::select_rows(audio.tokens, rows)));
    } else {
      // Vision tokens are keys; audio tokens supply queries and values. Each
      // vision token takes a softmax over the audio axis of the query-key scores.
      const Var scores = ag::scale(ag::matmul_nt(fusion.key(v_all), fusion.query(audio.tokens)),
                                   1.0 / std::sqrt(static_cast<double>(v_all.cols())));
      fused = ag::add(v_all, ag::matmul(ag::softmax_rows(scores), fusion.value(audio.tokens)));
    }
    Eigen::Index pos = 0;
    for (auto& v : vision) {
      const auto n = v.rows();
      v = ag::slice_rows(fused, pos, n);
      pos += n;
    }
  }

  std::vector<Var> parts;
  for (const auto& piece : pieces) {
    Tag t = Tag::audio;
    switch (piece.kind) {
      case PieceKind::separator:
        parts.push_back(sep);
        t = Tag::special;
        break;
      case PieceKind::vision:
        parts.push_back(vision[piece.frame]);
        t = Tag::vision;
        break;
      case PieceKind::audio:
        parts.push_back(ag::slice_rows(audio.tokens, piece.start, piece.count));
        break;
    }
    for (int k = 0; k < piece.count; ++k) {
      out.tags.push_back(t);
      out.frame_index.push_back(piece.frame);
      out.token_ids.push_back(piece.kind == PieceKind::separator ? Vocabulary::kFrame : -1);
    }
  }
  out.tokens = ag::concat_rows(parts);
  return out;
}

ExpressionSegment compose_expression(const data::Expression& expr, const synth::ExpressionMedia& media,
                                     const enc::Encoders& encoders, const Vocabulary& vocab, const Embedder& embed) {
  ExpressionSegment seg;
  std::vector<Var> parts;
  auto add_block = [&](const Var& tokens, Tag tag) {
    if (tokens.rows() == 0) return;
    parts.push_back(tokens);
    seg.tags.insert(seg.tags.end(), static_cast<std::size_t>(tokens.rows()), tag);
    seg.token_ids.insert(seg.token_ids.end(), static_cast<std::size_t>(tokens.rows()), -1);
  };
  auto sound = [&]() {
    if (!media.sound) throw DataError("composition error: expression " + expr.id + " lacks its sound payload");
    return encoders.encode_audio(*media.sound).tokens;
  };
  auto image = [&]() {
    if (!media.image) throw DataError("composition error: expression " + expr.id + " lacks its image payload");
    return encoders.encode_image_payload(*media.image).tokens;
  };

  const auto t = data::traits(expr.form);
  if (!expr.text.empty()) {
    std::vector<int> run;
    auto flush = [&] {
      if (run.empty()) return;
      parts.push_back(embed(run));
      seg.tags.insert(seg.tags.end(), run.size(), Tag::text);
      seg.token_ids.insert(seg.token_ids.end(), run.begin(), run.end());
      run.clear();
    };
    bool used_sound = false, used_image = false;
    for (const auto& w : split_words(expr.text)) {
      if (w == "<SOUND>") {
        flush();
        add_block(sound(), Tag::sound_payload);
        used_sound = true;
      } else if (w == "<IMAGE>") {
        flush();
        add_block(image(), Tag::image_payload);
        used_image = true;
      } else {
        run.push_back(vocab.id(w));
      }
    }
    flush();
    if (t.sound && !used_sound) add_block(sound(), Tag::sound_payload);
    if (t.image && !used_image) add_block(image(), Tag::image_payload);
  } else if (t.speech) {
    if (!media.speech) throw DataError("composition error: expression " + expr.id + " lacks its speech payload");
    add_block(encoders.encode_audio(*media.speech).tokens, Tag::speech_payload);
    if (t.sound) add_block(sound(), Tag::sound_payload);
    if (t.image) add_block(image(), Tag::image_payload);
  }
  if (!parts.empty()) seg.tokens = ag::concat_rows(parts);
  return seg;
}

AssembledPrompt build_prompt(const AssembledPrompt& content, const ExpressionSegment& expression,
                             const PromptTemplate& tmpl, const std::vector<int>& answer_ids, int context,
                             const Vocabulary& vocab, const Embedder& embed) {
  if (expression.length() == 0) throw DataError("expression has neither text nor speech");
  AssembledPrompt out;
  out.layout = content.layout;
  out.n_frames = content.n_frames;
  out.clip_len = content.clip_len;
  out.audio_len = content.audio_len;

  std::vector<Var> parts;
  auto text = [&](const std::vector<int>& ids, Tag tag) {
    if (ids.empty()) return;
    parts.push_back(embed(ids));
    out.tags.insert(out.tags.end(), ids.size(), tag);
    out.frame_index.insert(out.frame_index.end(), ids.size(), -1);
    out.token_ids.insert(out.token_ids.end(), ids.begin(), ids.end());
  };
  auto add_content = [&] {
    text(vocab.encode(tmpl.content_prefix), Tag::text);
    parts.push_back(content.tokens);
    out.tags.insert(out.tags.end(), content.tags.begin(), content.tags.end());
    out.frame_index.insert(out.frame_index.end(), content.frame_index.begin(), content.frame_index.end());
    out.token_ids.insert(out.token_ids.end(), content.token_ids.begin(), content.token_ids.end());
  };
  auto add_expression = [&] {
    text(vocab.encode(tmpl.expression_prefix), Tag::text);
    parts.push_back(expression.tokens);
    out.tags.insert(out.tags.end(), expression.tags.begin(), expression.tags.end());
    out.frame_index.insert(out.frame_index.end(), static_cast<std::size_t>(expression.length()), -1);
    out.token_ids.insert(out.token_ids.end(), expression.token_ids.begin(), expression.token_ids.end());
  };

  text({Vocabulary::kBos}, Tag::special);
  text(vocab.encode(tmpl.system), Tag::text);
  if (tmpl.content_first) {
    add_content();
    add_expression();
  } else {
    add_expression();
    add_content();
  }
  text(vocab.encode(tmpl.answer_prefix), Tag::text);
  out.answer_start = out.length();
  text(answer_ids, Tag::text);
  if (out.length() > context)
    throw ConfigError("prompt length " + std::to_string(out.length()) + " exceeds context " + std::to_string(context) +
                      " (content " + std::to_string(content.length()) + ", expression " +
                      std::to_string(expression.length()) + ", answer " + std::to_string(answer_ids.size()) + ")");
  out.tokens = ag::concat_rows(parts);
  return out;
}

std::string layout_dump(const AssembledPrompt& prompt) {
  std::ostringstream os;
  for (int i = 0; i < prompt.length(); ++i) {
    os << i << '\t' << to_string(prompt.tags[i]) << '\t';
    if (prompt.frame_index[i] < 0)
      os << '-';
    else
      os << prompt.frame_index[i];
    os << '\n';
  }
  return os.str();
}

}  // namespace oisa::assembly
