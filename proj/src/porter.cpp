// Porter (1980) suffix-stripping stemmer, following the reference C release
// (including its "bli" and "logi" rules).
#include "oisa/evaluation.hpp"

#include <cctype>
#include <initializer_list>
#include <utility>

namespace oisa::eval {

namespace {

class Stemmer {
 public:
  explicit Stemmer(std::string w) : b_(std::move(w)), k_(static_cast<int>(b_.size()) - 1) {}

  std::string run() {
    if (k_ <= 1) return b_;
    step1ab();
    if (k_ > 0) {
      step1c();
      step2();
      step3();
      step4();
      step5();
    }
    return b_.substr(0, static_cast<std::size_t>(k_ + 1));
  }

 private:
  bool cons(int i) const {
    switch (b_[i]) {
      case 'a': case 'e': case 'i': case 'o': case 'u': return false;
      case 'y': return i == 0 ? true : !cons(i - 1);
      default: return true;
    }
  }

  // Number of VC sequences in b[0..j].
  int m() const {
    int n = 0, i = 0;
    while (true) {
      if (i > j_) return n;
      if (!cons(i)) break;
      ++i;
    }
    ++i;
    while (true) {
      while (true) {
        if (i > j_) return n;
        if (cons(i)) break;
        ++i;
      }
      ++i;
      ++n;
      while (true) {
        if (i > j_) return n;
        if (!cons(i)) break;
        ++i;
      }
      ++i;
    }
  }

  bool vowel_in_stem() const {
    for (int i = 0; i <= j_; ++i)
      if (!cons(i)) return true;
    return false;
  }

  bool double_c(int j) const { return j >= 1 && b_[j] == b_[j - 1] && cons(j); }

  bool cvc(int i) const {
    if (i < 2 || !cons(i) || cons(i - 1) || !cons(i - 2)) return false;
    const char c = b_[i];
    return c != 'w' && c != 'x' && c != 'y';
  }

  bool ends(const std::string& s) {
    const int len = static_cast<int>(s.size());
    if (len > k_ + 1) return false;
    if (b_.compare(static_cast<std::size_t>(k_ - len + 1), static_cast<std::size_t>(len), s) != 0) return false;
    j_ = k_ - len;
    return true;
  }

  void set_to(const std::string& s) {
    b_.replace(static_cast<std::size_t>(j_ + 1), static_cast<std::size_t>(k_ - j_), s);
    k_ = j_ + static_cast<int>(s.size());
    b_.resize(static_cast<std::size_t>(k_ + 1));
  }

  void r(const std::string& s) {
    if (m() > 0) set_to(s);
  }

  // First matching suffix of the table wins, whether or not its condition holds.
  void replace_first(std::initializer_list<std::pair<const char*, const char*>> table) {
    for (const auto& [from, to] : table)
      if (ends(from)) {
        r(to);
        return;
      }
  }

  void step1ab() {
    if (b_[k_] == 's') {
      if (ends("sses"))
        k_ -= 2;
      else if (ends("ies"))
        set_to("i");
      else if (b_[k_ - 1] != 's')
        --k_;
    }
    if (ends("eed")) {
      if (m() > 0) --k_;
    } else if ((ends("ed") || ends("ing")) && vowel_in_stem()) {
      k_ = j_;
      if (ends("at"))
        set_to("ate");
      else if (ends("bl"))
        set_to("ble");
      else if (ends("iz"))
        set_to("ize");
      else if (double_c(k_)) {
        --k_;
        const char c = b_[k_];
        if (c == 'l' || c == 's' || c == 'z') ++k_;
      } else if (j_ = k_, m() == 1 && cvc(k_)) {
        set_to("e");
      }
    }
    b_.resize(static_cast<std::size_t>(k_ + 1));
  }

  void step1c() {
    if (ends("y") && vowel_in_stem()) b_[k_] = 'i';
  }

  void step2() {
    replace_first({{"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"},   {"anci", "ance"},  {"izer", "ize"},
                   {"bli", "ble"},     {"alli", "al"},     {"entli", "ent"},   {"eli", "e"},      {"ousli", "ous"},
                   {"ization", "ize"}, {"ation", "ate"},   {"ator", "ate"},    {"alism", "al"},   {"iveness", "ive"},
                   {"fulness", "ful"}, {"ousness", "ous"}, {"aliti", "al"},    {"iviti", "ive"},  {"biliti", "ble"},
                   {"logi", "log"}});
  }

  void step3() {
    replace_first({{"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"}, {"ical", "ic"}, {"ful", ""},
                   {"ness", ""}});
  }

  void step4() {
    static const char* const suffixes[] = {"al",  "ance", "ence", "er",  "ic",  "able", "ible",
                                           "ant", "ement", "ment", "ent", "ion", "ou",   "ism",
                                           "ate", "iti",  "ous",  "ive", "ize"};
    for (const char* s : suffixes) {
      if (!ends(s)) continue;
      if (std::string(s) == "ion" && !(j_ >= 0 && (b_[j_] == 's' || b_[j_] == 't'))) continue;
      if (m() > 1) k_ = j_;
      return;
    }
  }

  void step5() {
    j_ = k_;
    if (b_[k_] == 'e') {
      const int a = m();
      if (a > 1 || (a == 1 && !cvc(k_ - 1))) --k_;
    }
    if (b_[k_] == 'l' && double_c(k_) && m() > 1) --k_;
  }

  std::string b_;
  int k_;
  int j_ = 0;
};

}  // namespace

std::string porter_stem(const std::string& word) {
  std::string w;
  for (char c : word) w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  for (char c : w)
    if (c < 'a' || c > 'z') return w;
  return Stemmer(w).run();
}

}  // namespace oisa::eval
