#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace oisa {

// Word-level vocabulary over the synthetic template language. Ids of the
// special tokens are fixed; the remaining slots up to `size()` are unused
// padding so the output layer width can be chosen independently.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSeg = 3;
  static constexpr int kSound = 4;
  static constexpr int kImage = 5;
  static constexpr int kFrame = 6;
  static constexpr int kUnk = 7;

  // Builds the standard vocabulary padded to `size` ids.
  explicit Vocabulary(int size = 160);

  int size() const { return size_; }
  int word_count() const { return static_cast<int>(words_.size()); }
  int id(std::string_view word) const;
  const std::string& word(int id) const;

  std::vector<int> encode(std::string_view text) const;
  // Written form of the speech tone code: two "<tK>" symbol tokens per id, high nibble first.
  std::vector<int> spell(const std::vector<int>& ids) const;
  int tone_id(int symbol) const;
  std::string decode(const std::vector<int>& ids, bool skip_special = false) const;

  // Tab-separated "id<TAB>token" lines.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  Vocabulary(std::vector<std::string> words, int size);
  void index();

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
  int size_;
};

std::vector<std::string> split_words(std::string_view text);

}  // namespace oisa
