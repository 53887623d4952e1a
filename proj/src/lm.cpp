#include "oisa/lm.hpp"

#include "oisa/error.hpp"

#include <numeric>
#include <sstream>

namespace oisa::lm {

void LMConfig::validate() const {
  if (d <= 0 || n_layers <= 0 || n_heads <= 0 || vocab <= 0 || context <= 0)
    throw ConfigError("language model sizes must be positive");
  if (d % n_heads != 0 || (d / n_heads) % 2 != 0) throw ConfigError("head width must be even and divide d");
  if (vocab > 256) throw ConfigError("vocabulary above 256 ids cannot be spoken by the tone code");
}

void to_json(nlohmann::json& j, const LMConfig& c) {
  j = {{"d", c.d},           {"n_layers", c.n_layers}, {"n_heads", c.n_heads},
       {"vocab", c.vocab},   {"context", c.context},   {"rope_base", c.rope_base}};
}

void from_json(const nlohmann::json& j, LMConfig& c) {
  c.d = j.value("d", c.d);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.vocab = j.value("vocab", c.vocab);
  c.context = j.value("context", c.context);
  c.rope_base = j.value("rope_base", c.rope_base);
}

std::vector<int> answer_ids(std::size_t n, const std::optional<std::string>& explanation, const Vocabulary& vocab) {
  std::string text;
  if (n == 0) {
    text = "there is no such object .";
  } else if (n == 1) {
    text = "it is [SEG]";
    if (explanation) text += " " + *explanation;
    text += " .";
  } else {
    text = "they are [SEG]";
    for (std::size_t i = 1; i + 1 < n; ++i) text += " , [SEG]";
    text += " and [SEG] .";
  }
  auto ids = vocab.encode(text);
  ids.push_back(Vocabulary::kEos);
  return ids;
}

std::optional<std::string> extract_explanation(const std::string& answer) {
  const auto words = split_words(answer);
  std::string out;
  bool on = false;
  for (const auto& w : words) {
    if (w == "because") on = true;
    if (!on) continue;
    if (w == "." || w == "</s>") break;
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  if (out.empty()) return std::nullopt;
  return out;
}

LanguageModel LanguageModel::create(nn::ParamStore& ps, const LMConfig& cfg) {
  cfg.validate();
  LanguageModel m;
  m.cfg_ = cfg;
  m.table_ = ps.normal("lm.embed", cfg.vocab, cfg.d, 1.0);
  for (int l = 0; l < cfg.n_layers; ++l)
    m.blocks_.push_back(
        nn::TransformerBlock::create(ps, "lm.block" + std::to_string(l), cfg.d, cfg.n_heads, 4 * cfg.d, cfg.n_layers));
  m.norm_ = nn::LayerNorm::create(ps, "lm.norm", cfg.d);
  // Small head so the untrained model starts near the uniform distribution.
  m.out_ = nn::Linear::create(ps, "lm.head", cfg.d, cfg.vocab, true, 0.1);
  m.seg_proj_ = nn::Linear::create(ps, "seg_proj", cfg.d, cfg.d);
  return m;
}

Var LanguageModel::embed(const std::vector<int>& ids) const {
  for (int id : ids)
    if (id < 0 || id >= cfg_.vocab) throw ConfigError("token id " + std::to_string(id) + " outside vocabulary");
  return ag::gather_rows(table_, ids);
}

assembly::Embedder LanguageModel::embedder() const {
  return [this](const std::vector<int>& ids) { return embed(ids); };
}

Var LanguageModel::hidden(const Var& tokens) const {
  const int n = static_cast<int>(tokens.rows());
  if (n > cfg_.context)
    throw ConfigError("sequence length " + std::to_string(n) + " exceeds context " + std::to_string(cfg_.context));
  std::vector<int> pos(n);
  std::iota(pos.begin(), pos.end(), 0);
  Var x = tokens;
  for (const auto& b : blocks_) x = b(x, true, pos);
  return norm_(x);
}

Var LanguageModel::head(const Var& h) const { return out_(h); }

LMOutput LanguageModel::forward(const assembly::AssembledPrompt& prompt, bool score_answer) const {
  LMOutput out;
  out.hidden = hidden(prompt.tokens);
  out.logits = head(out.hidden);
  if (score_answer) {
    if (prompt.answer_start < 1) throw ConfigError("prompt has no answer region");
    const int n = prompt.length();
    std::vector<int> targets(n, -1);
    for (int p = prompt.answer_start - 1; p + 1 < n; ++p) {
      targets[p] = prompt.token_ids[p + 1];
      out.scored += targets[p] >= 0;
    }
    out.loss = ag::cross_entropy(out.logits, targets);
  }
  return out;
}

std::vector<SegQuery> LanguageModel::seg_queries(const assembly::AssembledPrompt& prompt, const Var& h) const {
  std::vector<SegQuery> out;
  const int start = std::max(prompt.answer_start, 0);
  for (int p = start; p < prompt.length(); ++p)
    if (prompt.token_ids[p] == Vocabulary::kSeg) out.push_back({seg_proj_(ag::slice_rows(h, p, 1)), p});
  return out;
}

Generation LanguageModel::generate(const assembly::AssembledPrompt& prompt, const Vocabulary& vocab,
                                   int max_new) const {
  ag::NoGradGuard no_grad;
  Generation g;
  assembly::AssembledPrompt seq = prompt;
  if (seq.answer_start < 0) seq.answer_start = seq.length();
  for (int step = 0;; ++step) {
    if (step >= max_new || seq.length() >= cfg_.context) {
      g.truncated = true;
      break;
    }
    const Var h = hidden(seq.tokens);
    const Var logits = head(ag::slice_rows(h, seq.length() - 1, 1));
    Eigen::Index best = 0;
    logits.value().row(0).maxCoeff(&best);
    const int id = static_cast<int>(best);
    if (id == Vocabulary::kEos) break;
    g.ids.push_back(id);
    const std::vector<Var> parts{seq.tokens, embed({id})};
    seq.tokens = ag::concat_rows(parts);
    seq.tags.push_back(assembly::Tag::text);
    seq.frame_index.push_back(-1);
    seq.token_ids.push_back(id);
  }
  g.text = vocab.decode(g.ids);
  g.explanation = extract_explanation(g.text);
  // Queries come from the [SEG] tokens' own input positions, as in training.
  const bool any_seg = std::find(g.ids.begin(), g.ids.end(), Vocabulary::kSeg) != g.ids.end();
  if (any_seg) g.seg_queries = seg_queries(seq, hidden(seq.tokens));
  return g;
}

std::string decode_trace(const Generation& g, const Vocabulary& vocab) {
  std::ostringstream os;
  for (std::size_t i = 0; i < g.ids.size(); ++i)
    os << i << '\t' << g.ids[i] << '\t' << vocab.word(g.ids[i]) << '\t' << (g.ids[i] == Vocabulary::kSeg ? 1 : 0)
       << '\n';
  return os.str();
}

}  // namespace oisa::lm
