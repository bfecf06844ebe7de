#ifndef MTLAM_TEXT_HPP_
#define MTLAM_TEXT_HPP_

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace mtlam {

// Whitespace-and-punctuation tokenization shared by augmentation, the hashed
// encoder and the naive Bayes baseline. A token is either a maximal run of
// word characters (ASCII alphanumerics, '_', '\'' and any non-ASCII byte) or
// a single ASCII punctuation character.

inline bool is_word_byte(unsigned char c) {
  return c >= 0x80 || std::isalnum(c) || c == '_' || c == '\'';
}

inline bool is_space_byte(unsigned char c) { return std::isspace(c) != 0; }

/// Tokens plus the separators around them, so edits can be re-joined without
/// disturbing the untouched parts of the text. `separators[i]` precedes
/// `tokens[i]`; the last separator trails the final token.
struct SegmentedText {
  std::vector<std::string> tokens;
  std::vector<std::string> separators;

  std::string join() const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      out += separators[i];
      out += tokens[i];
    }
    out += separators.back();
    return out;
  }
};

inline SegmentedText segment(std::string_view text) {
  SegmentedText seg;
  std::string sep;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space_byte(c)) {
      sep.push_back(text[i++]);
      continue;
    }
    std::size_t j = i + 1;
    if (is_word_byte(c)) {
      while (j < text.size() && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
    }
    seg.separators.push_back(std::move(sep));
    sep.clear();
    seg.tokens.emplace_back(text.substr(i, j - i));
    i = j;
  }
  seg.separators.push_back(std::move(sep));
  return seg;
}

inline std::vector<std::string> tokenize(std::string_view text) {
  return segment(text).tokens;
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Lowercased tokens, used where case carries no signal.
inline std::vector<std::string> normalized_tokens(std::string_view text) {
  auto tokens = tokenize(text);
  for (auto& t : tokens) t = to_lower(t);
  return tokens;
}

}  // namespace mtlam

#endif  // MTLAM_TEXT_HPP_
