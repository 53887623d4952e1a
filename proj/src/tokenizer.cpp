#include "oisa/tokenizer.hpp"

#include "oisa/error.hpp"

#include <fstream>
#include <sstream>

namespace oisa {

namespace {

const std::vector<std::string>& standard_words() {
  static const std::vector<std::string> words = {
      "[PAD]", "<s>", "</s>", "[SEG]", "<SOUND>", "<IMAGE>", "<frame>", "<unk>",
      // punctuation and prompt scaffolding
      ".", ",", ":", "video", "query", "answer", "transcribe", "segment", "referred",
      // answer templates
      "it", "is", "they", "are", "and", "there", "no", "such", "object", "objects", "because", "its", "sound",
      // colors and shapes
      "red", "green", "blue", "yellow", "purple", "cyan", "white", "orange", "circle", "square", "triangle",
      // sound vocabulary
      "steady", "pulsed", "rising", "silent", "emitting", "a", "one", "sounding", "intermittently", "makes",
      "making", "this", "sounds", "first", "last", "starts", "stops", "all", "the", "that", "looks", "like", "of",
      "with", "sound.", "at", "end", "beginning", "loud", "quiet", "moving", "left", "right", "still",
      "high", "low", "pitched", "tone", "in", "which", "what", "has", "same", "as", "than", "other",
      // filler words for transcripts
      "dog", "bird", "car", "bell", "drum", "siren", "voice", "music", "rain", "wind", "door", "phone", "clock",
      "engine", "horn", "whistle", "near", "far", "big", "small", "fast", "slow", "here", "now", "then",
  };
  static const std::vector<std::string> with_tones = [] {
    auto w = words;
    for (int k = 0; k < 16; ++k) w.push_back("<t" + std::to_string(k) + ">");
    return w;
  }();
  return with_tones;
}

}  // namespace

Vocabulary::Vocabulary(int size) : Vocabulary(standard_words(), size) {}

Vocabulary::Vocabulary(std::vector<std::string> words, int size) : words_(std::move(words)), size_(size) {
  if (size_ < static_cast<int>(words_.size()))
    throw ConfigError("vocabulary size " + std::to_string(size_) + " smaller than word list (" +
                      std::to_string(words_.size()) + ")");
  index();
}

void Vocabulary::index() {
  ids_.clear();
  for (int i = 0; i < static_cast<int>(words_.size()); ++i) ids_.emplace(words_[i], i);
}

int Vocabulary::id(std::string_view w) const {
  auto it = ids_.find(std::string(w));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(int i) const {
  static const std::string unused = "<unused>";
  if (i < 0 || i >= static_cast<int>(words_.size())) return unused;
  return words_[i];
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

int Vocabulary::tone_id(int symbol) const { return id("<t" + std::to_string(symbol) + ">"); }

std::vector<int> Vocabulary::spell(const std::vector<int>& ids) const {
  std::vector<int> out;
  out.reserve(ids.size() * 2);
  for (int i : ids) {
    if (i < 0 || i >= 256) throw ConfigError("token id " + std::to_string(i) + " outside the tone code range");
    out.push_back(tone_id(i / 16));
    out.push_back(tone_id(i % 16));
  }
  return out;
}

std::string Vocabulary::decode(const std::vector<int>& ids, bool skip_special) const {
  std::string out;
  for (int i : ids) {
    if (skip_special && (i == kPad || i == kBos || i == kEos)) continue;
    if (!out.empty()) out.push_back(' ');
    out += word(i);
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  out << "# size\t" << size_ << '\n';
  for (int i = 0; i < static_cast<int>(words_.size()); ++i) out << i << '\t' << words_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read vocabulary " + path.string());
  std::string line;
  int size = 0;
  std::vector<std::string> words;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("malformed vocabulary line: " + line);
    if (line.rfind("# size", 0) == 0) {
      size = std::stoi(line.substr(tab + 1));
      continue;
    }
    const int id = std::stoi(line.substr(0, tab));
    if (id != static_cast<int>(words.size())) throw DataError("vocabulary ids must be dense and ordered");
    words.push_back(line.substr(tab + 1));
  }
  return Vocabulary(std::move(words), size);
}

}  // namespace oisa
