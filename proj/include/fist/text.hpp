#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

namespace fist::text {

constexpr bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
constexpr bool is_digit(char c) { return c >= '0' && c <= '9'; }
constexpr bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }
constexpr bool is_lower(char c) { return c >= 'a' && c <= 'z'; }
constexpr bool is_alpha(char c) { return is_upper(c) || is_lower(c); }
constexpr bool is_alnum(char c) { return is_alpha(c) || is_digit(c); }
/// ASCII punctuation only; bytes >= 0x80 are treated as word characters.
constexpr bool is_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (u >= 0x21 && u <= 0x2f) || (u >= 0x3a && u <= 0x40) || (u >= 0x5b && u <= 0x60) ||
         (u >= 0x7b && u <= 0x7e);
}
constexpr char to_lower(char c) { return is_upper(c) ? static_cast<char>(c - 'A' + 'a') : c; }
constexpr char to_upper(char c) { return is_lower(c) ? static_cast<char>(c - 'a' + 'A') : c; }

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = to_lower(c);
  return out;
}

inline std::string_view trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

inline bool blank(std::string_view s) { return trim(s).empty(); }

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i)
    if (to_lower(s[i]) != to_lower(prefix[i])) return false;
  return true;
}

inline bool equals_ci(std::string_view a, std::string_view b) {
  return a.size() == b.size() && starts_with_ci(a, b);
}

/// Splits on '\n'; a trailing '\r' on each line is dropped.
inline std::vector<std::string_view> lines(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t nl = s.find('\n', start);
    if (nl == std::string_view::npos) nl = s.size();
    std::string_view line = s.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back(line);
    if (nl == s.size()) break;
    start = nl + 1;
  }
  return out;
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j])) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

/// A token with its byte range in the source text.
struct Span {
  std::string text;
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Splits on whitespace and detaches ASCII punctuation as single-character
/// tokens. '.' and ',' stay inside a token when both neighbours are digits,
/// so "28.8" and "1,200" survive intact.
inline std::vector<Span> tokenize_spans(std::string_view s) {
  std::vector<Span> out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (is_space(s[i])) {
      ++i;
      continue;
    }
    if (is_punct(s[i])) {
      out.push_back({std::string(1, s[i]), i, i + 1});
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j])) {
      const char c = s[j];
      if (is_punct(c)) {
        const bool numeric_sep = (c == '.' || c == ',') && j > i && is_digit(s[j - 1]) &&
                                 j + 1 < s.size() && is_digit(s[j + 1]);
        if (!numeric_sep) break;
      }
      ++j;
    }
    out.push_back({std::string(s.substr(i, j - i)), i, j});
    i = j;
  }
  return out;
}

/// Canonical word tokenizer for BLEU, ROUGE-L and TER: lowercase, whitespace
/// split, punctuation detached.
inline std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> out;
  for (auto& span : tokenize_spans(s)) out.push_back(lower(span.text));
  return out;
}

/// Like `tokenize` but case preserved (word n-grams of chrF++).
inline std::vector<std::string> tokenize_cased(std::string_view s) {
  std::vector<std::string> out;
  for (auto& span : tokenize_spans(s)) out.push_back(std::move(span.text));
  return out;
}

/// Decodes UTF-8 into code points. Returns false on malformed input.
inline bool decode_utf8(std::string_view s, std::vector<char32_t>& out) {
  out.clear();
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    int len = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xe0) == 0xc0) {
      len = 2;
      cp = b0 & 0x1f;
    } else if ((b0 & 0xf0) == 0xe0) {
      len = 3;
      cp = b0 & 0x0f;
    } else if ((b0 & 0xf8) == 0xf0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (int k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xc0) != 0x80) return false;
      cp = (cp << 6) | (b & 0x3f);
    }
    static constexpr char32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < kMin[len] || cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) return false;
    out.push_back(cp);
    i += len;
  }
  return true;
}

inline bool valid_utf8(std::string_view s) {
  std::vector<char32_t> scratch;
  return decode_utf8(s, scratch);
}

/// Fixed-point rendering used by every export (4 decimals unless told otherwise).
inline std::string fixed(double v, int decimals = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace fist::text
