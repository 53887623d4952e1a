#include "oisa/data_model.hpp"

#include "oisa/error.hpp"
#include "oisa/media.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace oisa::data {

using nlohmann::json;

std::size_t MaskGrid::area() const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

BinaryMask encode_rle(const MaskGrid& grid) {
  BinaryMask m{grid.height, grid.width, {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (int y = 0; y < grid.height; ++y)
    for (int x = 0; x < grid.width; ++x) {
      const std::uint8_t v = grid.at(y, x);
      if (v > 1)
        throw DataError("non-binary mask value " + std::to_string(v) + " at (" + std::to_string(y) + ", " +
                        std::to_string(x) + ")");
      if (v != current) {
        m.counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  m.counts.push_back(run);
  return m;
}

MaskGrid decode_rle(const BinaryMask& mask, std::string_view context) {
  const std::uint64_t total = static_cast<std::uint64_t>(mask.height) * static_cast<std::uint64_t>(mask.width);
  std::uint64_t sum = 0;
  for (auto c : mask.counts) sum += c;
  if (sum != total || mask.height < 0 || mask.width < 0) {
    std::ostringstream msg;
    msg << "rle run-sum mismatch";
    if (!context.empty()) msg << " in " << context;
    msg << ": runs sum to " << sum << ", expected " << total;
    throw DataError(msg.str());
  }
  MaskGrid g(mask.height, mask.width);
  std::size_t at = 0;
  std::uint8_t v = 0;
  for (auto c : mask.counts) {
    std::fill_n(g.cells.begin() + static_cast<std::ptrdiff_t>(at), c, v);
    at += c;
    v ^= 1;
  }
  return g;
}

std::string rle_to_text(const BinaryMask& mask) {
  std::ostringstream out;
  out << mask.height << ' ' << mask.width << '\n';
  for (std::size_t i = 0; i < mask.counts.size(); ++i) out << (i ? " " : "") << mask.counts[i];
  out << '\n';
  return out.str();
}

BinaryMask rle_from_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  BinaryMask m;
  if (!(in >> m.height >> m.width)) throw DataError("malformed rle header");
  std::uint32_t c;
  while (in >> c) m.counts.push_back(c);
  if (m.counts.empty()) throw DataError("rle without runs");
  return m;
}

// ---------------------------------------------------------------------------

FormTraits traits(ExpressionForm form) {
  switch (form) {
    case ExpressionForm::I: return {true, false, false, false};
    case ExpressionForm::II: return {false, true, false, false};
    case ExpressionForm::III: return {true, false, true, false};
    case ExpressionForm::IV: return {false, true, true, false};
    case ExpressionForm::V: return {true, false, false, true};
    case ExpressionForm::VI: return {false, true, false, true};
    case ExpressionForm::VII: return {true, false, true, true};
    case ExpressionForm::VIII: return {false, true, true, true};
  }
  throw DataError("invalid expression form");
}

std::string to_string(ExpressionForm form) {
  static const char* names[] = {"I", "II", "III", "IV", "V", "VI", "VII", "VIII"};
  return names[static_cast<int>(form) - 1];
}

ExpressionForm parse_form(std::string_view roman) {
  for (auto f : kAllForms)
    if (to_string(f) == roman) return f;
  throw DataError("unknown expression form '" + std::string(roman) + "'");
}

const ObjectTrack* VideoSample::object(std::string_view oid) const {
  for (const auto& o : objects)
    if (o.object_id == oid) return &o;
  return nullptr;
}

MaskGrid VideoSample::union_mask(const std::vector<std::string>& object_ids, int frame) const {
  MaskGrid out(height, width);
  for (const auto& oid : object_ids) {
    const ObjectTrack* o = object(oid);
    if (!o) continue;
    auto it = o->masks.find(frame);
    if (it == o->masks.end()) continue;
    MaskGrid g = decode_rle(it->second, id);
    for (std::size_t i = 0; i < out.cells.size(); ++i) out.cells[i] |= g.cells[i];
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct Collector {
  std::vector<Violation>& out;
  void add(const std::string& sample, const std::string& field, const std::string& rule,
           const std::string& detail = {}) {
    out.push_back({sample, field, rule, detail});
  }
};

void check_sample_media(const VideoSample& s, const std::filesystem::path& root, Collector& c) {
  for (std::size_t i = 0; i < s.frames.size(); ++i) {
    const std::string field = "frames[" + std::to_string(i) + "]";
    try {
      media::Image img = media::read_ppm(root / s.frames[i]);
      if (img.height != s.height || img.width != s.width)
        c.add(s.id, field, "frame resolution mismatch",
              std::to_string(img.height) + "x" + std::to_string(img.width));
    } catch (const std::exception& e) {
      c.add(s.id, field, "unreadable media", e.what());
    }
  }
  try {
    media::Waveform w = media::read_wav(root / s.audio);
    if (s.fps > 0) {
      const double expected = static_cast<double>(s.frames.size()) * w.sample_rate / s.fps;
      if (std::abs(static_cast<double>(w.size()) - expected) > 1.0)
        c.add(s.id, "audio", "audio duration mismatch",
              std::to_string(w.size()) + " samples, expected " + std::to_string(expected));
    }
  } catch (const std::exception& e) {
    c.add(s.id, "audio", "unreadable media", e.what());
  }
  for (std::size_t e = 0; e < s.expressions.size(); ++e) {
    const auto& ex = s.expressions[e];
    const std::string base = "expressions[" + std::to_string(e) + "].";
    auto probe_audio = [&](const std::optional<std::string>& ref, const char* name) {
      if (!ref) return;
      try {
        media::read_wav(root / *ref);
      } catch (const std::exception& err) {
        c.add(s.id, base + name, "unreadable media", err.what());
      }
    };
    probe_audio(ex.speech, "speech");
    probe_audio(ex.sound, "sound");
    if (ex.image) {
      try {
        media::read_ppm(root / *ex.image);
      } catch (const std::exception& err) {
        c.add(s.id, base + "image", "unreadable media", err.what());
      }
    }
  }
}

}  // namespace

std::vector<Violation> validate_manifest(const Manifest& manifest, const std::filesystem::path& media_root) {
  std::vector<Violation> out;
  Collector c{out};
  if (manifest.schema_version != kSchemaVersion)
    c.add("", "schema_version", "unsupported schema version", manifest.schema_version);

  std::set<std::string> ids;
  for (const auto& s : manifest.samples) {
    if (!ids.insert(s.id).second) c.add(s.id, "id", "duplicate sample id");
    if (s.fps < kMinFps || s.fps > kMaxFps)
      c.add(s.id, "fps", "fps out of range [3,15]", std::to_string(s.fps));
    if (s.frames.empty()) c.add(s.id, "frames", "empty frames");

    std::set<std::string> object_ids;
    for (std::size_t o = 0; o < s.objects.size(); ++o) {
      const auto& obj = s.objects[o];
      const std::string base = "objects[" + std::to_string(o) + "]";
      if (!object_ids.insert(obj.object_id).second) c.add(s.id, base + ".object_id", "duplicate object id");
      for (const auto& [frame, mask] : obj.masks) {
        const std::string field = base + ".masks[" + std::to_string(frame) + "]";
        if (frame < 0 || frame >= static_cast<int>(s.frames.size()))
          c.add(s.id, field, "mask frame out of range");
        if (mask.height != s.height || mask.width != s.width)
          c.add(s.id, field, "mask resolution mismatch");
        std::uint64_t sum = 0;
        for (auto r : mask.counts) sum += r;
        if (sum != static_cast<std::uint64_t>(mask.height) * static_cast<std::uint64_t>(mask.width))
          c.add(s.id, field, "rle run-sum mismatch");
      }
    }

    std::set<std::string> expr_ids;
    for (std::size_t e = 0; e < s.expressions.size(); ++e) {
      const auto& ex = s.expressions[e];
      const std::string base = "expressions[" + std::to_string(e) + "]";
      if (!expr_ids.insert(ex.id).second) c.add(s.id, base + ".id", "duplicate expression id");
      const FormTraits t = traits(ex.form);
      const bool ok = (!ex.text.empty()) == t.text && ex.speech.has_value() == t.speech &&
                      ex.sound.has_value() == t.sound && ex.image.has_value() == t.image;
      if (!ok) c.add(s.id, base + ".form", "payload/form mismatch", to_string(ex.form));
      for (const auto& tid : ex.target_ids)
        if (!object_ids.count(tid)) c.add(s.id, base + ".target_ids", "unknown target id", tid);
      if (!std::is_sorted(ex.target_ids.begin(), ex.target_ids.end()) ||
          std::adjacent_find(ex.target_ids.begin(), ex.target_ids.end()) != ex.target_ids.end())
        c.add(s.id, base + ".target_ids", "target ids not a sorted set");
    }

    if (!media_root.empty()) check_sample_media(s, media_root, c);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

json opt(const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); }

std::optional<std::string> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

}  // namespace

std::string manifest_to_json(const Manifest& m) {
  json root;
  root["schema_version"] = m.schema_version;
  root["split"] = m.split == Split::train ? "train" : "test";
  json samples = json::array();
  for (const auto& s : m.samples) {
    json js;
    js["id"] = s.id;
    js["fps"] = s.fps;
    js["height"] = s.height;
    js["width"] = s.width;
    js["frames"] = s.frames;
    js["audio"] = s.audio;
    json objs = json::array();
    for (const auto& o : s.objects) {
      json jo;
      jo["object_id"] = o.object_id;
      json masks = json::array();
      for (const auto& [frame, mask] : o.masks)
        masks.push_back({{"frame", frame}, {"height", mask.height}, {"width", mask.width}, {"counts", mask.counts}});
      jo["masks"] = std::move(masks);
      objs.push_back(std::move(jo));
    }
    js["objects"] = std::move(objs);
    json exprs = json::array();
    for (const auto& e : s.expressions) {
      exprs.push_back({{"id", e.id},
                       {"form", to_string(e.form)},
                       {"text", e.text},
                       {"speech", opt(e.speech)},
                       {"sound", opt(e.sound)},
                       {"image", opt(e.image)},
                       {"target_ids", e.target_ids},
                       {"explanation", opt(e.explanation)}});
    }
    js["expressions"] = std::move(exprs);
    samples.push_back(std::move(js));
  }
  root["samples"] = std::move(samples);
  return root.dump(1);
}

Manifest manifest_from_json(std::string_view text) {
  try {
    json root = json::parse(text);
    Manifest m;
    m.schema_version = root.at("schema_version").get<std::string>();
    const auto split = root.at("split").get<std::string>();
    if (split != "train" && split != "test") throw DataError("unknown split '" + split + "'");
    m.split = split == "train" ? Split::train : Split::test;
    for (const auto& js : root.at("samples")) {
      VideoSample s;
      s.id = js.at("id").get<std::string>();
      s.fps = js.at("fps").get<int>();
      s.height = js.at("height").get<int>();
      s.width = js.at("width").get<int>();
      s.frames = js.at("frames").get<std::vector<std::string>>();
      s.audio = js.at("audio").get<std::string>();
      for (const auto& jo : js.at("objects")) {
        ObjectTrack o;
        o.object_id = jo.at("object_id").get<std::string>();
        for (const auto& jm : jo.at("masks"))
          o.masks[jm.at("frame").get<int>()] = BinaryMask{jm.at("height").get<int>(), jm.at("width").get<int>(),
                                                          jm.at("counts").get<std::vector<std::uint32_t>>()};
        s.objects.push_back(std::move(o));
      }
      for (const auto& je : js.at("expressions")) {
        Expression e;
        e.id = je.at("id").get<std::string>();
        e.form = parse_form(je.at("form").get<std::string>());
        e.text = je.at("text").get<std::string>();
        e.speech = opt_from(je, "speech");
        e.sound = opt_from(je, "sound");
        e.image = opt_from(je, "image");
        e.target_ids = je.at("target_ids").get<std::vector<std::string>>();
        e.explanation = opt_from(je, "explanation");
        s.expressions.push_back(std::move(e));
      }
      m.samples.push_back(std::move(s));
    }
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << manifest_to_json(manifest) << '\n';
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return manifest_from_json(buf.str());
}

std::string frame_path(std::string_view sample_id, int index) {
  char name[16];
  std::snprintf(name, sizeof(name), "%05d", index);
  return std::string(sample_id) + "/frames/" + name + ".ppm";
}

std::string audio_path(std::string_view sample_id) { return std::string(sample_id) + "/audio.wav"; }

std::string payload_path(std::string_view sample_id, std::string_view expression_id, std::string_view kind) {
  const bool image = kind == "image";
  return std::string(sample_id) + "/payloads/" + std::string(expression_id) + "_" + std::string(kind) +
         (image ? ".ppm" : ".wav");
}

}  // namespace oisa::data
