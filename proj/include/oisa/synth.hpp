#pragma once

#include "oisa/data_model.hpp"
#include "oisa/media.hpp"
#include "oisa/tokenizer.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace oisa::synth {

enum class Shape { circle, square, triangle };
enum class Envelope { steady, pulsed, chirp, silent };

std::string to_string(Shape s);
std::string to_string(Envelope e);

struct Rgb {
  double r = 0, g = 0, b = 0;  // [0, 1]
  bool operator==(const Rgb&) const = default;
};

struct NamedColor {
  std::string name;
  Rgb rgb;
};
const std::vector<NamedColor>& palette();

struct Waypoint {
  double t = 0;  // seconds
  double x = 0;  // sprite center, pixels
  double y = 0;
};

struct ColorKey {
  double t = 0;
  Rgb color;
};

struct SoundSignature {
  double carrier_hz = 0;
  Envelope envelope = Envelope::steady;
  std::vector<std::pair<double, double>> active_intervals;  // [start, end) seconds
};

struct SpriteSpec {
  Shape shape = Shape::circle;
  double radius = 8;              // half extent in pixels
  std::string color_name;         // palette name of the starting color
  std::vector<ColorKey> colors;   // piecewise-linear in t; one key = constant
  std::vector<Waypoint> trajectory;
  SoundSignature sound;
};

struct SceneSpec {
  int height = 64;
  int width = 64;
  double duration = 2.0;
  int fps = 5;
  std::vector<SpriteSpec> sprites;
  std::uint64_t seed = 0;
};

// Throws ConfigError naming the first broken invariant.
void check_spec(const SceneSpec& spec);

// Sprite state at time t.
Rgb color_at(const SpriteSpec& sprite, double t);
std::pair<double, double> position_at(const SpriteSpec& sprite, double t);
bool sounding_at(const SpriteSpec& sprite, double t);
// Exact rasterization: pixel (y, x) is covered when its center lies inside the shape.
data::MaskGrid rasterize(Shape shape, double cx, double cy, double radius, int height, int width);

// Raw (unnormalized) contribution of one signature over [0, n_samples).
std::vector<double> render_signature(const SoundSignature& sig, std::size_t n_samples,
                                     int sample_rate = media::kSampleRate);
// Peak-normalizes to 0.9 full scale (silence stays silence) and quantizes.
media::Waveform normalize_mix(const std::vector<double>& mix, int sample_rate = media::kSampleRate);

inline constexpr double kDimFactor = 0.5;
inline constexpr double kPeak = 0.9;

struct ExpressionMedia {
  std::optional<media::Waveform> speech;
  std::optional<media::Waveform> sound;
  std::optional<media::Image> image;
};

struct SampleMedia {
  std::vector<media::Image> frames;
  media::Waveform audio;
  std::map<std::string, ExpressionMedia> payloads;  // keyed by expression id
};

struct GeneratedSample {
  data::VideoSample record;
  SampleMedia media;
};

// Renders frames, mixed audio and per-object masks; expressions left empty.
// Object ids are "o<k>" in sprite order.
GeneratedSample generate_scene(const SceneSpec& spec, const std::string& sample_id);

struct ExpressionConfig {
  double no_target_frac = 0.1;
  double multi_target_frac = 0.1;
  // Relative weight of each form I..VIII when filling the budget beyond one per form.
  std::array<double, 8> form_weights{1, 1, 1, 1, 1, 1, 1, 1};
  int payload_size = 32;              // image payload side, pixels
  double sound_payload_seconds = 1.0;
};

// Emits `budget` expressions covering all eight forms, appends them to
// sample.record and their payloads to sample.media.
void derive_expressions(GeneratedSample& sample, const SceneSpec& spec, int budget, const ExpressionConfig& cfg,
                        const Vocabulary& vocab);

// Tone code: every token id becomes two base-16 symbols, each one symbol
// window of a pure tone at (16 + 8 k) * sample_rate / window Hz.
inline constexpr int kSpeechWindow = 1000;
inline constexpr int kSpeechSymbols = 16;
double speech_symbol_hz(int symbol, int sample_rate = media::kSampleRate);
media::Waveform synth_speech(const std::string& text, const Vocabulary& vocab);
// Drops the <SOUND>/<IMAGE> placeholders, which have no spoken form.
std::string strip_placeholders(const std::string& text);
media::Waveform synth_speech_ids(const std::vector<int>& ids);

// Image payload: the sprite at full intensity centered on the background.
media::Image render_payload(const SpriteSpec& sprite, int size, std::uint64_t seed);

// Random general-purpose scene.
struct SceneConfig {
  int height = 64;
  int width = 64;
  int min_fps = 3;
  int max_fps = 15;
  double min_duration = 2.0;
  double max_duration = 3.0;
  int min_sprites = 2;
  int max_sprites = 4;
  double min_radius = 6;
  double max_radius = 10;
};
SceneSpec random_scene(std::uint64_t seed, const SceneConfig& cfg);

// Two identical-shape sprites whose positions cross early and whose colors
// cross late, with frame 0 and the last frame equal up to identity swap.
// Expressions: "the object that sounds first" / "the object that sounds last".
GeneratedSample crossing_sample(std::uint64_t seed, const SceneConfig& cfg, const std::string& sample_id,
                                const Vocabulary& vocab);

// Two simultaneous sounders (one pulsed, one steady) with overlapping active
// intervals; the envelope names the target, so only audio/frame timing
// disambiguates.
GeneratedSample sync_sample(std::uint64_t seed, const SceneConfig& cfg, const std::string& sample_id,
                            const Vocabulary& vocab);

struct DatasetConfig {
  int num_samples = 10;
  std::uint64_t seed = 0;
  int expressions_per_sample = 8;
  SceneConfig scene;
  ExpressionConfig expressions;
  enum class Kind { general, crossing, sync } kind = Kind::general;
};

std::string to_string(DatasetConfig::Kind k);
DatasetConfig::Kind parse_kind(const std::string& name);
void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);

std::vector<GeneratedSample> generate_dataset(const DatasetConfig& cfg, const Vocabulary& vocab);

// Writes media under `root` and the manifest to root/manifest.json.
void write_dataset(const std::filesystem::path& root, const std::vector<GeneratedSample>& samples, data::Split split);
// Loads the media referenced by one sample record.
SampleMedia load_media(const std::filesystem::path& root, const data::VideoSample& record);

}  // namespace oisa::synth
