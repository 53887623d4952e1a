#include "oisa/synth.hpp"

#include "oisa/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <set>

namespace oisa::synth {

namespace {

constexpr Rgb kBackground{0.08, 0.08, 0.10};
constexpr double kCarrierStepHz = 16.0;
// Carrier multiples of 16 Hz; disjoint from the speech tone set (16 + 8k).
constexpr int kCarrierMultiples[] = {20, 36, 52, 68, 84, 100, 116, 140};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

Rgb lerp(const Rgb& a, const Rgb& b, double w) {
  return {a.r + (b.r - a.r) * w, a.g + (b.g - a.g) * w, a.b + (b.b - a.b) * w};
}

// Static per-scene background texture so repeated frames stay identical.
std::vector<double> background_noise(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0xb6));
  std::vector<double> n(static_cast<std::size_t>(h) * w);
  for (auto& v : n) v = (static_cast<int>(rng() % 9) - 4) / 255.0;
  return n;
}

void paint(media::Image& img, const data::MaskGrid& mask, const Rgb& c) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (mask.at(y, x)) {
        img.at(y, x, 0) = to_byte(c.r);
        img.at(y, x, 1) = to_byte(c.g);
        img.at(y, x, 2) = to_byte(c.b);
      }
}

media::Image background(int h, int w, std::uint64_t seed) {
  media::Image img(h, w);
  const auto noise = background_noise(h, w, seed);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double n = noise[static_cast<std::size_t>(y) * w + x];
      img.at(y, x, 0) = to_byte(kBackground.r + n);
      img.at(y, x, 1) = to_byte(kBackground.g + n);
      img.at(y, x, 2) = to_byte(kBackground.b + n);
    }
  return img;
}

int frame_count(const SceneSpec& spec) { return static_cast<int>(std::lround(spec.duration * spec.fps)); }

std::size_t audio_samples(int frames, int fps) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(frames) * media::kSampleRate / fps));
}

const NamedColor& color_named(const std::string& name) {
  for (const auto& c : palette())
    if (c.name == name) return c;
  throw ConfigError("unknown color name: " + name);
}

std::string adjective(Envelope e) {
  switch (e) {
    case Envelope::steady: return "steady";
    case Envelope::pulsed: return "pulsed";
    case Envelope::chirp: return "rising";
    case Envelope::silent: return "silent";
  }
  return "";
}

bool is_sounding(const SpriteSpec& s) { return s.sound.envelope != Envelope::silent && !s.sound.active_intervals.empty(); }

double onset(const SpriteSpec& s) {
  double t = std::numeric_limits<double>::infinity();
  for (const auto& [a, b] : s.sound.active_intervals) t = std::min(t, a);
  return t;
}

std::vector<std::string> object_ids(const std::vector<int>& idx) {
  std::vector<std::string> ids;
  for (int i : idx) ids.push_back("o" + std::to_string(i));
  std::sort(ids.begin(), ids.end());
  return ids;
}

// One candidate referring expression. `text` may hold <SOUND>/<IMAGE> placeholders.
struct Candidate {
  std::string family;
  std::string text;
  std::vector<int> targets;
  std::optional<std::string> explanation;
  std::optional<SoundSignature> sound;
  std::optional<SpriteSpec> look;
};

SpriteSpec look_of(Shape shape, const std::string& color) {
  SpriteSpec s;
  s.shape = shape;
  s.color_name = color;
  s.colors = {{0.0, color_named(color).rgb}};
  return s;
}

std::vector<Candidate> text_candidates(const SceneSpec& spec) {
  std::vector<Candidate> out;
  const auto& sp = spec.sprites;
  const int n = static_cast<int>(sp.size());
  auto select = [&](auto pred) {
    std::vector<int> t;
    for (int i = 0; i < n; ++i)
      if (pred(sp[i])) t.push_back(i);
    return t;
  };
  for (const auto& c : palette())
    for (Shape s : {Shape::circle, Shape::square, Shape::triangle})
      out.push_back({"color-shape", "the " + c.name + " " + to_string(s),
                     select([&](const SpriteSpec& x) { return x.color_name == c.name && x.shape == s; }),
                     std::nullopt, std::nullopt, std::nullopt});
  for (Shape s : {Shape::circle, Shape::square, Shape::triangle})
    out.push_back({"shape", "the " + to_string(s), select([&](const SpriteSpec& x) { return x.shape == s; }),
                   std::nullopt, std::nullopt, std::nullopt});
  for (Envelope e : {Envelope::steady, Envelope::pulsed, Envelope::chirp}) {
    auto t = select([&](const SpriteSpec& x) { return is_sounding(x) && x.sound.envelope == e; });
    out.push_back({"envelope", "the object emitting a " + adjective(e) + " sound", t,
                   "because its sound is " + adjective(e), std::nullopt, std::nullopt});
  }
  out.push_back({"intermittent", "the one sounding intermittently",
                 select([](const SpriteSpec& x) { return is_sounding(x) && x.sound.envelope == Envelope::pulsed; }),
                 "because its sound is pulsed", std::nullopt, std::nullopt});
  out.push_back({"silent", "the object that makes no sound", select([](const SpriteSpec& x) { return !is_sounding(x); }),
                 "because it makes no sound", std::nullopt, std::nullopt});
  {
    double best = std::numeric_limits<double>::infinity();
    int who = -1, ties = 0;
    for (int i = 0; i < n; ++i) {
      if (!is_sounding(sp[i])) continue;
      const double t = onset(sp[i]);
      if (t < best - 1e-9) {
        best = t;
        who = i;
        ties = 1;
      } else if (std::abs(t - best) <= 1e-9) {
        ++ties;
      }
    }
    if (who >= 0 && ties == 1)
      out.push_back({"first", "the object that sounds first", {who}, "because it starts sounding first", std::nullopt,
                     std::nullopt});
  }
  for (const auto& c : palette())
    out.push_back({"all-color", "all " + c.name + " objects",
                   select([&](const SpriteSpec& x) { return x.color_name == c.name; }), std::nullopt, std::nullopt,
                   std::nullopt});
  return out;
}

std::vector<double> unused_carriers(const SceneSpec& spec) {
  std::vector<double> out;
  for (int m : kCarrierMultiples) {
    const double hz = m * kCarrierStepHz;
    bool used = false;
    for (const auto& s : spec.sprites) used |= std::abs(s.sound.carrier_hz - hz) < 1e-6;
    if (!used) out.push_back(hz);
  }
  return out;
}

SoundSignature payload_signature(const SoundSignature& sig, double seconds) {
  SoundSignature p = sig;
  p.active_intervals = {{0.0, seconds}};
  return p;
}

std::vector<Candidate> sound_candidates(const SceneSpec& spec, const ExpressionConfig& cfg) {
  std::vector<Candidate> out;
  const int n = static_cast<int>(spec.sprites.size());
  for (int i = 0; i < n; ++i) {
    const auto& s = spec.sprites[i];
    if (!is_sounding(s)) continue;
    const auto sig = payload_signature(s.sound, cfg.sound_payload_seconds);
    out.push_back({"sound", "the object making this sound <SOUND>", {i}, std::nullopt, sig, std::nullopt});
    for (const auto& c : palette()) {
      std::vector<int> t;
      if (s.color_name == c.name) t.push_back(i);
      out.push_back({"color-sound", "the " + c.name + " object making this sound <SOUND>", t, std::nullopt, sig,
                     std::nullopt});
    }
  }
  for (double hz : unused_carriers(spec))
    for (Envelope e : {Envelope::steady, Envelope::pulsed, Envelope::chirp}) {
      SoundSignature sig{hz, e, {{0.0, cfg.sound_payload_seconds}}};
      out.push_back({"sound", "the object making this sound <SOUND>", {}, std::nullopt, sig, std::nullopt});
    }
  return out;
}

std::vector<int> same_look(const SceneSpec& spec, Shape shape, const std::string& color) {
  std::vector<int> t;
  for (int i = 0; i < static_cast<int>(spec.sprites.size()); ++i)
    if (spec.sprites[i].shape == shape && spec.sprites[i].color_name == color) t.push_back(i);
  return t;
}

std::vector<Candidate> image_candidates(const SceneSpec& spec) {
  std::vector<Candidate> out;
  for (const auto& c : palette())
    for (Shape s : {Shape::circle, Shape::square, Shape::triangle})
      out.push_back({"look", "the object that looks like this <IMAGE>", same_look(spec, s, c.name), std::nullopt,
                     std::nullopt, look_of(s, c.name)});
  return out;
}

std::vector<Candidate> image_sound_candidates(const SceneSpec& spec, const ExpressionConfig& cfg) {
  std::vector<Candidate> out;
  const int n = static_cast<int>(spec.sprites.size());
  const std::string text = "the object that looks like this <IMAGE> and makes this sound <SOUND>";
  for (int x = 0; x < n; ++x)
    for (int y = 0; y < n; ++y) {
      const auto& sy = spec.sprites[y];
      if (!is_sounding(sy)) continue;
      const auto& sx = spec.sprites[x];
      std::vector<int> t;
      if (sx.shape == sy.shape && sx.color_name == sy.color_name) t.push_back(y);
      out.push_back({"look-sound", text, t, std::nullopt, payload_signature(sy.sound, cfg.sound_payload_seconds),
                     look_of(sx.shape, sx.color_name)});
    }
  const auto spare = unused_carriers(spec);
  if (!spare.empty())
    for (int x = 0; x < n; ++x)
      out.push_back({"look-sound", text, {}, std::nullopt,
                     SoundSignature{spare.front(), Envelope::steady, {{0.0, cfg.sound_payload_seconds}}},
                     look_of(spec.sprites[x].shape, spec.sprites[x].color_name)});
  return out;
}

enum class Role { single, multi, none };

bool fits(const Candidate& c, Role r) {
  switch (r) {
    case Role::single: return c.targets.size() == 1;
    case Role::multi: return c.targets.size() >= 2;
    case Role::none: return c.targets.empty();
  }
  return false;
}

// Picks a family uniformly among those offering a candidate for the role, then
// a candidate within it. Falls back to any candidate when the role is infeasible.
const Candidate& choose(const std::vector<Candidate>& pool, Role role, std::mt19937_64& rng) {
  std::map<std::string, std::vector<const Candidate*>> by_family;
  for (const auto& c : pool)
    if (fits(c, role)) by_family[c.family].push_back(&c);
  if (by_family.empty()) {
    if (pool.empty()) throw ConfigError("no expression candidates for scene");
    return pool[rng() % pool.size()];
  }
  auto it = by_family.begin();
  std::advance(it, rng() % by_family.size());
  return *it->second[rng() % it->second.size()];
}

bool shares_attribute(const SceneSpec& spec) {
  std::set<std::string> colors;
  for (const auto& s : spec.sprites)
    if (!colors.insert(s.color_name).second) return true;
  return false;
}

data::Expression make_expression(GeneratedSample& sample, const std::string& eid, data::ExpressionForm form,
                                 const Candidate& c, const ExpressionConfig& cfg, const Vocabulary& vocab,
                                 std::uint64_t seed) {
  const auto t = data::traits(form);
  data::Expression e;
  e.id = eid;
  e.form = form;
  e.target_ids = object_ids(c.targets);
  if (c.explanation && c.targets.size() == 1) e.explanation = c.explanation;
  ExpressionMedia media;
  const std::string& sid = sample.record.id;
  if (t.text) {
    e.text = c.text;
  } else {
    media.speech = synth_speech(strip_placeholders(c.text), vocab);
    e.speech = data::payload_path(sid, eid, "speech");
  }
  if (t.sound) {
    const auto n = static_cast<std::size_t>(std::llround(cfg.sound_payload_seconds * media::kSampleRate));
    media.sound = normalize_mix(render_signature(*c.sound, n));
    e.sound = data::payload_path(sid, eid, "sound");
  }
  if (t.image) {
    SpriteSpec look = *c.look;
    media.image = render_payload(look, cfg.payload_size, seed);
    e.image = data::payload_path(sid, eid, "image");
  }
  sample.media.payloads[eid] = std::move(media);
  return e;
}

void add_text_expression(GeneratedSample& sample, const std::string& text, const std::vector<int>& targets) {
  data::Expression e;
  e.id = "e" + std::to_string(sample.record.expressions.size());
  e.form = data::ExpressionForm::I;
  e.text = text;
  e.target_ids = object_ids(targets);
  sample.record.expressions.push_back(e);
  sample.media.payloads[e.id] = {};
}

}  // namespace

std::string to_string(Shape s) {
  switch (s) {
    case Shape::circle: return "circle";
    case Shape::square: return "square";
    case Shape::triangle: return "triangle";
  }
  return "";
}

std::string to_string(Envelope e) {
  switch (e) {
    case Envelope::steady: return "steady";
    case Envelope::pulsed: return "pulsed";
    case Envelope::chirp: return "chirp";
    case Envelope::silent: return "silent";
  }
  return "";
}

const std::vector<NamedColor>& palette() {
  static const std::vector<NamedColor> p = {
      {"red", {0.90, 0.15, 0.15}},    {"green", {0.15, 0.80, 0.20}}, {"blue", {0.20, 0.30, 0.95}},
      {"yellow", {0.95, 0.90, 0.15}}, {"purple", {0.65, 0.20, 0.85}}, {"cyan", {0.10, 0.85, 0.90}},
  };
  return p;
}

void check_spec(const SceneSpec& spec) {
  if (spec.height <= 0 || spec.width <= 0) throw ConfigError("canvas must be non-empty");
  if (spec.fps < data::kMinFps || spec.fps > data::kMaxFps)
    throw ConfigError("fps " + std::to_string(spec.fps) + " outside [3,15]");
  if (!(spec.duration > 0) || frame_count(spec) < 1) throw ConfigError("scene duration yields no frames");
  if (spec.sprites.empty()) throw ConfigError("scene needs at least one sprite");
  std::vector<double> carriers;
  for (std::size_t k = 0; k < spec.sprites.size(); ++k) {
    const auto& s = spec.sprites[k];
    const std::string who = "sprite " + std::to_string(k);
    if (!(s.radius > 0)) throw ConfigError(who + ": zero-area sprite");
    if (s.trajectory.empty()) throw ConfigError(who + ": empty trajectory");
    if (s.colors.empty()) throw ConfigError(who + ": no color keys");
    for (std::size_t i = 0; i < s.trajectory.size(); ++i) {
      const auto& w = s.trajectory[i];
      if (i > 0 && !(w.t > s.trajectory[i - 1].t)) throw ConfigError(who + ": waypoint times must increase");
      if (w.x - s.radius < 0 || w.x + s.radius > spec.width || w.y - s.radius < 0 || w.y + s.radius > spec.height)
        throw ConfigError(who + ": trajectory leaves the canvas");
    }
    for (const auto& [a, b] : s.sound.active_intervals)
      if (!(a >= 0 && b > a && b <= spec.duration + 1e-9))
        throw ConfigError(who + ": active interval outside [0, duration]");
    if (is_sounding(s)) {
      if (!(s.sound.carrier_hz > 0)) throw ConfigError(who + ": carrier must be positive");
      for (double c : carriers)
        if (std::abs(c - s.sound.carrier_hz) < 1e-6) throw ConfigError(who + ": carrier not unique");
      carriers.push_back(s.sound.carrier_hz);
    }
  }
}

Rgb color_at(const SpriteSpec& s, double t) {
  const auto& k = s.colors;
  if (t <= k.front().t) return k.front().color;
  if (t >= k.back().t) return k.back().color;
  for (std::size_t i = 1; i < k.size(); ++i)
    if (t <= k[i].t) return lerp(k[i - 1].color, k[i].color, (t - k[i - 1].t) / (k[i].t - k[i - 1].t));
  return k.back().color;
}

std::pair<double, double> position_at(const SpriteSpec& s, double t) {
  const auto& w = s.trajectory;
  if (t <= w.front().t) return {w.front().x, w.front().y};
  if (t >= w.back().t) return {w.back().x, w.back().y};
  for (std::size_t i = 1; i < w.size(); ++i)
    if (t <= w[i].t) {
      const double a = (t - w[i - 1].t) / (w[i].t - w[i - 1].t);
      return {w[i - 1].x + (w[i].x - w[i - 1].x) * a, w[i - 1].y + (w[i].y - w[i - 1].y) * a};
    }
  return {w.back().x, w.back().y};
}

bool sounding_at(const SpriteSpec& s, double t) {
  if (s.sound.envelope == Envelope::silent) return false;
  for (const auto& [a, b] : s.sound.active_intervals)
    if (t >= a && t < b) return true;
  return false;
}

data::MaskGrid rasterize(Shape shape, double cx, double cy, double r, int h, int w) {
  data::MaskGrid g(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double px = x + 0.5 - cx, py = y + 0.5 - cy;
      bool in = false;
      switch (shape) {
        case Shape::circle: in = px * px + py * py <= r * r; break;
        case Shape::square: in = std::abs(px) <= r && std::abs(py) <= r; break;
        case Shape::triangle: in = py <= r && py >= -r && std::abs(px) <= (py + r) / 2; break;
      }
      g.at(y, x) = in ? 1 : 0;
    }
  return g;
}

std::vector<double> render_signature(const SoundSignature& sig, std::size_t n, int sr) {
  std::vector<double> out(n, 0.0);
  if (sig.envelope == Envelope::silent) return out;
  const double two_pi = 2 * std::numbers::pi;
  for (const auto& [a, b] : sig.active_intervals) {
    const auto i0 = static_cast<std::size_t>(std::max(0.0, std::ceil(a * sr)));
    const auto i1 = std::min(n, static_cast<std::size_t>(std::max(0.0, std::ceil(b * sr))));
    for (std::size_t i = i0; i < i1; ++i) {
      const double t = static_cast<double>(i) / sr;
      const double u = t - a;
      double v = 0;
      switch (sig.envelope) {
        case Envelope::steady: v = std::sin(two_pi * sig.carrier_hz * t); break;
        case Envelope::pulsed:
          // 125 ms on, 125 ms off
          v = (static_cast<long>(std::floor(u * 8.0)) % 2 == 0) ? std::sin(two_pi * sig.carrier_hz * t) : 0.0;
          break;
        case Envelope::chirp: v = std::sin(two_pi * sig.carrier_hz * (u + 0.25 * u * u / (b - a))); break;
        case Envelope::silent: break;
      }
      out[i] += v;
    }
  }
  return out;
}

media::Waveform normalize_mix(const std::vector<double>& mix, int sr) {
  double peak = 0;
  for (double v : mix) peak = std::max(peak, std::abs(v));
  if (peak == 0) return media::quantize(mix, sr);
  std::vector<double> scaled(mix.size());
  for (std::size_t i = 0; i < mix.size(); ++i) scaled[i] = mix[i] * (kPeak / peak);
  return media::quantize(scaled, sr);
}

GeneratedSample generate_scene(const SceneSpec& spec, const std::string& sample_id) {
  check_spec(spec);
  const int n = frame_count(spec);
  GeneratedSample out;
  auto& rec = out.record;
  rec.id = sample_id;
  rec.fps = spec.fps;
  rec.height = spec.height;
  rec.width = spec.width;
  rec.audio = data::audio_path(sample_id);
  for (std::size_t k = 0; k < spec.sprites.size(); ++k) rec.objects.push_back({"o" + std::to_string(k), {}});

  const media::Image bg = background(spec.height, spec.width, spec.seed);
  for (int f = 0; f < n; ++f) {
    const double t = static_cast<double>(f) / spec.fps;
    media::Image img = bg;
    for (std::size_t k = 0; k < spec.sprites.size(); ++k) {
      const auto& s = spec.sprites[k];
      const auto [cx, cy] = position_at(s, t);
      const auto mask = rasterize(s.shape, cx, cy, s.radius, spec.height, spec.width);
      if (mask.empty())
        throw ConfigError("sprite " + std::to_string(k) + " has zero area at frame " + std::to_string(f));
      Rgb c = color_at(s, t);
      if (!sounding_at(s, t)) c = lerp(Rgb{}, c, kDimFactor);
      paint(img, mask, c);
      rec.objects[k].masks[f] = data::encode_rle(mask);
    }
    rec.frames.push_back(data::frame_path(sample_id, f));
    out.media.frames.push_back(std::move(img));
  }

  std::vector<double> mix(audio_samples(n, spec.fps), 0.0);
  for (const auto& s : spec.sprites) {
    const auto part = render_signature(s.sound, mix.size());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] += part[i];
  }
  out.media.audio = normalize_mix(mix);
  return out;
}

double speech_symbol_hz(int symbol, int sr) {
  return (16.0 + 8.0 * symbol) * sr / kSpeechWindow;
}

std::string strip_placeholders(const std::string& text) {
  std::string out;
  for (const auto& w : split_words(text)) {
    if (w == "<SOUND>" || w == "<IMAGE>") continue;
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

media::Waveform synth_speech_ids(const std::vector<int>& ids) {
  std::vector<double> sig;
  sig.reserve(ids.size() * 2 * kSpeechWindow);
  const double two_pi = 2 * std::numbers::pi;
  for (int id : ids) {
    if (id < 0 || id >= kSpeechSymbols * kSpeechSymbols)
      throw ConfigError("token id " + std::to_string(id) + " outside the speech code range");
    for (int sym : {id / kSpeechSymbols, id % kSpeechSymbols}) {
      const double hz = speech_symbol_hz(sym);
      for (int i = 0; i < kSpeechWindow; ++i)
        sig.push_back(0.8 * std::sin(two_pi * hz * i / media::kSampleRate));
    }
  }
  return media::quantize(sig);
}

media::Waveform synth_speech(const std::string& text, const Vocabulary& vocab) {
  return synth_speech_ids(vocab.encode(text));
}

media::Image render_payload(const SpriteSpec& sprite, int size, std::uint64_t seed) {
  media::Image img = background(size, size, seed);
  const auto mask = rasterize(sprite.shape, size / 2.0, size / 2.0, 0.3 * size, size, size);
  paint(img, mask, sprite.colors.front().color);
  return img;
}

void derive_expressions(GeneratedSample& sample, const SceneSpec& spec, int budget, const ExpressionConfig& cfg,
                        const Vocabulary& vocab) {
  using data::ExpressionForm;
  if (budget < 8) throw ConfigError("expression budget " + std::to_string(budget) + " cannot cover all 8 forms");
  std::mt19937_64 rng(mix_seed(spec.seed, 0xe5));

  std::vector<ExpressionForm> forms(std::begin(data::kAllForms), std::end(data::kAllForms));
  std::discrete_distribution<int> pick(cfg.form_weights.begin(), cfg.form_weights.end());
  while (static_cast<int>(forms.size()) < budget) forms.push_back(data::kAllForms[pick(rng)]);

  const int n_none = std::max(1, static_cast<int>(std::ceil(cfg.no_target_frac * budget - 1e-9)));
  const int n_multi = shares_attribute(spec)
                          ? std::max(1, static_cast<int>(std::ceil(cfg.multi_target_frac * budget - 1e-9)))
                          : 0;
  std::vector<Role> roles(forms.size(), Role::single);
  auto is_textual = [](ExpressionForm f) { return f == ExpressionForm::I || f == ExpressionForm::II; };
  {
    std::vector<std::size_t> textual;
    for (std::size_t i = 0; i < forms.size(); ++i)
      if (is_textual(forms[i])) textual.push_back(i);
    for (std::size_t i = forms.size(); i-- > 8 && static_cast<int>(textual.size()) < n_multi;) {
      if (is_textual(forms[i])) continue;
      forms[i] = (rng() % 2) ? ExpressionForm::I : ExpressionForm::II;
      textual.push_back(i);
    }
    std::shuffle(textual.begin(), textual.end(), rng);
    for (int k = 0; k < n_multi && k < static_cast<int>(textual.size()); ++k) roles[textual[k]] = Role::multi;
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < forms.size(); ++i)
      if (roles[i] == Role::single) rest.push_back(i);
    std::shuffle(rest.begin(), rest.end(), rng);
    for (int k = 0; k < n_none && k < static_cast<int>(rest.size()); ++k) roles[rest[k]] = Role::none;
  }

  const auto text_pool = text_candidates(spec);
  const auto sound_pool = sound_candidates(spec, cfg);
  const auto image_pool = image_candidates(spec);
  const auto both_pool = image_sound_candidates(spec, cfg);
  const std::size_t base = sample.record.expressions.size();
  for (std::size_t i = 0; i < forms.size(); ++i) {
    const auto t = data::traits(forms[i]);
    const auto& pool = t.sound && t.image ? both_pool : t.sound ? sound_pool : t.image ? image_pool : text_pool;
    const Candidate& c = choose(pool, roles[i], rng);
    const std::string eid = "e" + std::to_string(base + i);
    sample.record.expressions.push_back(make_expression(sample, eid, forms[i], c, cfg, vocab, mix_seed(spec.seed, i)));
  }
}

SceneSpec random_scene(std::uint64_t seed, const SceneConfig& cfg) {
  std::mt19937_64 rng(mix_seed(seed, 0x5c));
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  auto uint = [&](int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); };
  SceneSpec spec;
  spec.seed = seed;
  spec.height = cfg.height;
  spec.width = cfg.width;
  spec.fps = uint(cfg.min_fps, cfg.max_fps);
  spec.duration = std::max(1, static_cast<int>(std::lround(uni(cfg.min_duration, cfg.max_duration) * spec.fps))) /
                  static_cast<double>(spec.fps);
  const int n = uint(cfg.min_sprites, cfg.max_sprites);
  std::vector<int> carriers(std::begin(kCarrierMultiples), std::end(kCarrierMultiples));
  std::shuffle(carriers.begin(), carriers.end(), rng);
  const auto& pal = palette();
  for (int k = 0; k < n; ++k) {
    SpriteSpec s;
    s.shape = static_cast<Shape>(uint(0, 2));
    // The second sprite repeats the first one's color so multi-target
    // expressions are always available.
    s.color_name = (k == 1) ? spec.sprites[0].color_name : pal[uint(0, static_cast<int>(pal.size()) - 1)].name;
    s.colors = {{0.0, color_named(s.color_name).rgb}};
    s.radius = uni(cfg.min_radius, cfg.max_radius);
    const double r = s.radius;
    const int n_way = uint(2, 3);
    for (int w = 0; w < n_way; ++w)
      s.trajectory.push_back({spec.duration * w / (n_way - 1), uni(r, spec.width - r), uni(r, spec.height - r)});
    s.sound.carrier_hz = carriers[k % carriers.size()] * kCarrierStepHz;
    const double u = uni(0, 1);
    s.sound.envelope = u < 0.15 ? Envelope::silent : static_cast<Envelope>(uint(0, 2));
    if (s.sound.envelope != Envelope::silent) {
      const double d = spec.duration;
      if (uni(0, 1) < 0.3 && d >= 1.0) {
        const double a = uni(0, 0.2 * d), b = uni(0.3 * d, 0.45 * d);
        const double c = uni(0.55 * d, 0.7 * d), e = uni(0.8 * d, d);
        s.sound.active_intervals = {{a, b}, {c, e}};
      } else {
        const double a = uni(0, 0.5 * d);
        s.sound.active_intervals = {{a, uni(a + 0.3 * d, d)}};
      }
    }
    spec.sprites.push_back(std::move(s));
  }
  return spec;
}

GeneratedSample crossing_sample(std::uint64_t seed, const SceneConfig& cfg, const std::string& sample_id,
                                const Vocabulary&) {
  std::mt19937_64 rng(mix_seed(seed, 0xc7));
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  auto uint = [&](int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); };
  SceneSpec spec;
  spec.seed = seed;
  spec.height = cfg.height;
  spec.width = cfg.width;
  spec.fps = uint(cfg.min_fps, cfg.max_fps);
  const int frames = std::max(4, static_cast<int>(std::lround(uni(cfg.min_duration, cfg.max_duration) * spec.fps)));
  spec.duration = static_cast<double>(frames) / spec.fps;
  const double t_end = static_cast<double>(frames - 1) / spec.fps;

  const auto& pal = palette();
  const int ci = uint(0, static_cast<int>(pal.size()) - 1);
  const int cj = (ci + uint(1, static_cast<int>(pal.size()) - 1)) % static_cast<int>(pal.size());
  const Rgb c1 = pal[ci].rgb, c2 = pal[cj].rgb;
  const Shape shape = static_cast<Shape>(uint(0, 2));
  const double r = uni(cfg.min_radius, cfg.max_radius);
  const double y = cfg.height / 2.0 + uni(-0.1, 0.1) * cfg.height;
  const double left = r + 1, right = cfg.width - r - 1, mid = cfg.width / 2.0;
  const double p = uni(0.3, 0.4), q = uni(0.6, 0.7);
  const bool a_starts_right = uint(0, 1) == 1;
  const double a0 = a_starts_right ? right : left, a1 = a_starts_right ? left : right;
  const Envelope env = uint(0, 1) ? Envelope::pulsed : Envelope::steady;
  std::vector<int> carriers(std::begin(kCarrierMultiples), std::end(kCarrierMultiples));
  std::shuffle(carriers.begin(), carriers.end(), rng);

  SpriteSpec a, b;
  a.shape = b.shape = shape;
  a.radius = b.radius = r;
  a.color_name = pal[ci].name;
  b.color_name = pal[cj].name;
  const Rgb half = lerp(c1, c2, 0.5);
  a.colors = {{0, c1}, {q * t_end, half}, {t_end, c2}};
  b.colors = {{0, c2}, {q * t_end, half}, {t_end, c1}};
  a.trajectory = {{0, a0, y}, {p * t_end, mid, y}, {t_end, a1, y}};
  b.trajectory = {{0, a1, y}, {p * t_end, mid, y}, {t_end, a0, y}};
  a.sound = {carriers[0] * kCarrierStepHz, env, {{0.0, 0.2 * t_end + 1e-6}}};
  b.sound = {carriers[1] * kCarrierStepHz, env, {{0.8 * t_end, spec.duration}}};
  spec.sprites = {a, b};

  GeneratedSample out = generate_scene(spec, sample_id);
  add_text_expression(out, "the object that sounds first", {0});
  add_text_expression(out, "the object that sounds last", {1});
  return out;
}

GeneratedSample sync_sample(std::uint64_t seed, const SceneConfig& cfg, const std::string& sample_id,
                            const Vocabulary&) {
  std::mt19937_64 rng(mix_seed(seed, 0x5a));
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  auto uint = [&](int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); };
  SceneSpec spec;
  spec.seed = seed;
  spec.height = cfg.height;
  spec.width = cfg.width;
  spec.fps = uint(cfg.min_fps, cfg.max_fps);
  const int frames = std::max(4, static_cast<int>(std::lround(uni(cfg.min_duration, cfg.max_duration) * spec.fps)));
  spec.duration = static_cast<double>(frames) / spec.fps;
  const double d = spec.duration;

  const auto& pal = palette();
  const int ci = uint(0, static_cast<int>(pal.size()) - 1);
  const int cj = (ci + uint(1, static_cast<int>(pal.size()) - 1)) % static_cast<int>(pal.size());
  std::vector<int> carriers(std::begin(kCarrierMultiples), std::end(kCarrierMultiples));
  std::shuffle(carriers.begin(), carriers.end(), rng);
  const bool first_pulsed = uint(0, 1) == 1;

  // Overlapping activity: the earlier sounder starts in the first quarter,
  // the later one starts while it is still active and outlasts it.
  const double s1 = uni(0.0, 0.25 * d), s2 = uni(0.3 * d, 0.5 * d);
  const double e1 = uni(0.55 * d, 0.7 * d), e2 = uni(0.8 * d, d);
  std::vector<std::pair<double, double>> iv[2] = {{{s1, e1}}, {{s2, e2}}};
  if (uint(0, 1)) std::swap(iv[0], iv[1]);

  for (int k = 0; k < 2; ++k) {
    SpriteSpec s;
    s.shape = static_cast<Shape>(uint(0, 2));
    s.color_name = pal[k == 0 ? ci : cj].name;
    s.colors = {{0.0, pal[k == 0 ? ci : cj].rgb}};
    s.radius = uni(cfg.min_radius, cfg.max_radius);
    const double r = s.radius;
    // Left and right halves so the sprites never overlap.
    const double lo = k == 0 ? r : cfg.width / 2.0 + r, hi = k == 0 ? cfg.width / 2.0 - r : cfg.width - r;
    const double x0 = uni(lo, std::max(lo, hi));
    const double y0 = uni(r, cfg.height - r), y1 = uni(r, cfg.height - r);
    s.trajectory = {{0, x0, y0}, {d, x0, y1}};
    const bool pulsed = (k == 0) == first_pulsed;
    s.sound = {carriers[k] * kCarrierStepHz, pulsed ? Envelope::pulsed : Envelope::steady, iv[k]};
    spec.sprites.push_back(std::move(s));
  }
  const int pulsed_idx = first_pulsed ? 0 : 1;
  GeneratedSample out = generate_scene(spec, sample_id);
  add_text_expression(out, "the object emitting a pulsed sound", {pulsed_idx});
  add_text_expression(out, "the object emitting a steady sound", {1 - pulsed_idx});
  return out;
}

std::string to_string(DatasetConfig::Kind k) {
  switch (k) {
    case DatasetConfig::Kind::general: return "general";
    case DatasetConfig::Kind::crossing: return "crossing";
    case DatasetConfig::Kind::sync: return "sync";
  }
  return "general";
}

DatasetConfig::Kind parse_kind(const std::string& name) {
  for (auto k : {DatasetConfig::Kind::general, DatasetConfig::Kind::crossing, DatasetConfig::Kind::sync})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown dataset kind: " + name);
}

void to_json(nlohmann::json& j, const DatasetConfig& c) {
  const auto& s = c.scene;
  const auto& e = c.expressions;
  j = {{"num_samples", c.num_samples},
       {"seed", c.seed},
       {"expressions_per_sample", c.expressions_per_sample},
       {"kind", to_string(c.kind)},
       {"scene",
        {{"height", s.height},
         {"width", s.width},
         {"min_fps", s.min_fps},
         {"max_fps", s.max_fps},
         {"min_duration", s.min_duration},
         {"max_duration", s.max_duration},
         {"min_sprites", s.min_sprites},
         {"max_sprites", s.max_sprites},
         {"min_radius", s.min_radius},
         {"max_radius", s.max_radius}}},
       {"expressions",
        {{"no_target_frac", e.no_target_frac},
         {"multi_target_frac", e.multi_target_frac},
         {"form_weights", e.form_weights},
         {"payload_size", e.payload_size},
         {"sound_payload_seconds", e.sound_payload_seconds}}}};
}

void from_json(const nlohmann::json& j, DatasetConfig& c) {
  c.num_samples = j.value("num_samples", c.num_samples);
  c.seed = j.value("seed", c.seed);
  c.expressions_per_sample = j.value("expressions_per_sample", c.expressions_per_sample);
  if (j.contains("kind")) c.kind = parse_kind(j.at("kind").get<std::string>());
  if (j.contains("scene")) {
    const auto& s = j.at("scene");
    auto& o = c.scene;
    o.height = s.value("height", o.height);
    o.width = s.value("width", o.width);
    o.min_fps = s.value("min_fps", o.min_fps);
    o.max_fps = s.value("max_fps", o.max_fps);
    o.min_duration = s.value("min_duration", o.min_duration);
    o.max_duration = s.value("max_duration", o.max_duration);
    o.min_sprites = s.value("min_sprites", o.min_sprites);
    o.max_sprites = s.value("max_sprites", o.max_sprites);
    o.min_radius = s.value("min_radius", o.min_radius);
    o.max_radius = s.value("max_radius", o.max_radius);
  }
  if (j.contains("expressions")) {
    const auto& e = j.at("expressions");
    auto& o = c.expressions;
    o.no_target_frac = e.value("no_target_frac", o.no_target_frac);
    o.multi_target_frac = e.value("multi_target_frac", o.multi_target_frac);
    o.form_weights = e.value("form_weights", o.form_weights);
    o.payload_size = e.value("payload_size", o.payload_size);
    o.sound_payload_seconds = e.value("sound_payload_seconds", o.sound_payload_seconds);
  }
}

std::vector<GeneratedSample> generate_dataset(const DatasetConfig& cfg, const Vocabulary& vocab) {
  std::vector<GeneratedSample> out;
  for (int i = 0; i < cfg.num_samples; ++i) {
    const std::uint64_t s = mix_seed(cfg.seed, static_cast<std::uint64_t>(i));
    char name[16];
    std::snprintf(name, sizeof(name), "s%05d", i);
    switch (cfg.kind) {
      case DatasetConfig::Kind::general: {
        const SceneSpec spec = random_scene(s, cfg.scene);
        GeneratedSample g = generate_scene(spec, name);
        derive_expressions(g, spec, cfg.expressions_per_sample, cfg.expressions, vocab);
        out.push_back(std::move(g));
        break;
      }
      case DatasetConfig::Kind::crossing: out.push_back(crossing_sample(s, cfg.scene, name, vocab)); break;
      case DatasetConfig::Kind::sync: out.push_back(sync_sample(s, cfg.scene, name, vocab)); break;
    }
  }
  return out;
}

void write_dataset(const std::filesystem::path& root, const std::vector<GeneratedSample>& samples, data::Split split) {
  namespace fs = std::filesystem;
  data::Manifest m;
  m.split = split;
  for (const auto& g : samples) {
    const auto& rec = g.record;
    fs::create_directories(root / rec.id / "frames");
    for (std::size_t f = 0; f < rec.frames.size(); ++f) media::write_ppm(root / rec.frames[f], g.media.frames[f]);
    media::write_wav(root / rec.audio, g.media.audio);
    for (const auto& e : rec.expressions) {
      const auto it = g.media.payloads.find(e.id);
      if (it == g.media.payloads.end()) continue;
      if (e.speech || e.sound || e.image) fs::create_directories(root / rec.id / "payloads");
      if (e.speech) media::write_wav(root / *e.speech, *it->second.speech);
      if (e.sound) media::write_wav(root / *e.sound, *it->second.sound);
      if (e.image) media::write_ppm(root / *e.image, *it->second.image);
    }
    m.samples.push_back(rec);
  }
  data::write_manifest(root / "manifest.json", m);
}

SampleMedia load_media(const std::filesystem::path& root, const data::VideoSample& rec) {
  SampleMedia m;
  for (const auto& f : rec.frames) m.frames.push_back(media::read_ppm(root / f));
  m.audio = media::read_wav(root / rec.audio);
  for (const auto& e : rec.expressions) {
    ExpressionMedia em;
    if (e.speech) em.speech = media::read_wav(root / *e.speech);
    if (e.sound) em.sound = media::read_wav(root / *e.sound);
    if (e.image) em.image = media::read_ppm(root / *e.image);
    m.payloads[e.id] = std::move(em);
  }
  return m;
}

}  // namespace oisa::synth
