#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace oisa::data {

inline constexpr std::string_view kSchemaVersion = "oisa-manifest/1";
inline constexpr int kMinFps = 3;
inline constexpr int kMaxFps = 15;

// Dense binary grid, row-major.
struct MaskGrid {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> cells;

  MaskGrid() = default;
  MaskGrid(int h, int w) : height(h), width(w), cells(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return cells[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return cells[static_cast<std::size_t>(y) * width + x]; }
  std::size_t area() const;
  bool empty() const { return area() == 0; }
  bool operator==(const MaskGrid&) const = default;
};

// Canonical RLE over row-major pixels: alternating background/foreground run
// lengths, always starting with a (possibly zero) background run.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;

  bool operator==(const BinaryMask&) const = default;
};

BinaryMask encode_rle(const MaskGrid& grid);
// `context` names the owning sample in error messages.
MaskGrid decode_rle(const BinaryMask& mask, std::string_view context = {});
// Text form used by prediction dumps: "<h> <w>\n<c0> <c1> ...\n".
std::string rle_to_text(const BinaryMask& mask);
BinaryMask rle_from_text(std::string_view text);

enum class ExpressionForm { I = 1, II, III, IV, V, VI, VII, VIII };

struct FormTraits {
  bool text;
  bool speech;
  bool sound;
  bool image;
};

FormTraits traits(ExpressionForm form);
std::string to_string(ExpressionForm form);
ExpressionForm parse_form(std::string_view roman);
inline constexpr ExpressionForm kAllForms[] = {ExpressionForm::I,  ExpressionForm::II,  ExpressionForm::III,
                                               ExpressionForm::IV, ExpressionForm::V,   ExpressionForm::VI,
                                               ExpressionForm::VII, ExpressionForm::VIII};

struct Expression {
  std::string id;
  ExpressionForm form = ExpressionForm::I;
  std::string text;                   // empty for speech forms
  std::optional<std::string> speech;  // media references, relative to the dataset root
  std::optional<std::string> sound;
  std::optional<std::string> image;
  std::vector<std::string> target_ids;  // sorted, unique; empty = no target
  std::optional<std::string> explanation;

  bool no_target() const { return target_ids.empty(); }
};

struct ObjectTrack {
  std::string object_id;
  std::map<int, BinaryMask> masks;  // frame index -> mask; absent = off-screen
};

struct VideoSample {
  std::string id;
  int fps = 0;
  int height = 0;
  int width = 0;
  std::vector<std::string> frames;
  std::string audio;
  std::vector<ObjectTrack> objects;
  std::vector<Expression> expressions;

  const ObjectTrack* object(std::string_view id) const;
  // Per-frame union of the listed objects' masks (all-zero where absent).
  MaskGrid union_mask(const std::vector<std::string>& object_ids, int frame) const;
};

enum class Split { train, test };

struct Manifest {
  std::string schema_version{kSchemaVersion};
  Split split = Split::train;
  std::vector<VideoSample> samples;
};

struct Violation {
  std::string sample_id;
  std::string field;
  std::string rule;
  std::string detail;

  bool operator==(const Violation&) const = default;
};

// Checks every schema invariant. With a non-empty `media_root` the referenced
// frames and audio are opened as well; unreadable files become violations.
std::vector<Violation> validate_manifest(const Manifest& manifest, const std::filesystem::path& media_root = {});

std::string manifest_to_json(const Manifest& manifest);
Manifest manifest_from_json(std::string_view json);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

// Media layout helpers: <sample_id>/frames/%05d.ppm, <sample_id>/audio.wav.
std::string frame_path(std::string_view sample_id, int index);
std::string audio_path(std::string_view sample_id);
std::string payload_path(std::string_view sample_id, std::string_view expression_id, std::string_view kind);

}  // namespace oisa::data
