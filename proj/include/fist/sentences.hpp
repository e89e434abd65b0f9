#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "fist/text.hpp"

namespace fist {

/// Byte range [begin, end) of one sentence inside a larger text.
struct TextRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  friend bool operator==(const TextRange&, const TextRange&) = default;
};

namespace detail {

// Words that end in '.' without ending a sentence. Compared case-sensitively
// for quarters, case-insensitively for the rest.
inline constexpr std::array<std::string_view, 40> kAbbreviations = {
    "inc",  "corp", "co",   "ltd",  "llc", "plc",  "mr",   "mrs",  "ms",   "dr",
    "prof", "st",   "jr",   "sr",   "vs",  "e.g",  "i.e",  "u.s",  "u.k",  "no",
    "jan",  "feb",  "mar",  "apr",  "jun", "jul",  "aug",  "sep",  "sept", "oct",
    "nov",  "dec",  "approx", "est", "fig", "ave", "dept", "bros", "mt",   "cf"};

inline bool is_abbreviation(std::string_view word) {
  if (word.size() == 2 && word[0] == 'Q' && word[1] >= '1' && word[1] <= '4') return true;
  if (word.size() == 1 && text::is_upper(word[0])) return true;  // initials: "J. Smith"
  const std::string lw = text::lower(word);
  return std::find(kAbbreviations.begin(), kAbbreviations.end(), lw) != kAbbreviations.end();
}

inline bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }

}  // namespace detail

/// Splits text at '.', '!' or '?' when followed by whitespace and a capital
/// letter, or by the end of the text. Known abbreviations ("Inc.", "Q2.")
/// do not end sentences. Text without any terminal yields one range.
/// Ranges exclude surrounding whitespace; blank text yields no ranges.
inline std::vector<TextRange> split_sentences(std::string_view s) {
  std::vector<TextRange> out;
  std::size_t start = 0;
  auto push = [&](std::size_t b, std::size_t e) {
    while (b < e && text::is_space(s[b])) ++b;
    while (e > b && text::is_space(s[e - 1])) --e;
    if (e > b) out.push_back({b, e});
  };
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (c != '.' && c != '!' && c != '?') {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && (s[j] == '.' || s[j] == '!' || s[j] == '?')) ++j;
    while (j < s.size() && detail::is_closer(s[j])) ++j;

    bool boundary = false;
    std::size_t k = j;
    while (k < s.size() && text::is_space(s[k])) ++k;
    if (k == s.size()) {
      boundary = true;
    } else if (k > j) {
      std::size_t first = k;
      while (first < s.size() && (s[first] == '"' || s[first] == '\'' || s[first] == '(')) ++first;
      boundary = first < s.size() && (text::is_upper(s[first]) || text::is_digit(s[first]));
    }
    if (boundary && c == '.' && j == i + 1) {
      std::size_t w = i;
      while (w > start && !text::is_space(s[w - 1])) --w;
      std::string_view word = s.substr(w, i - w);
      while (!word.empty() && (word.front() == '(' || word.front() == '"')) word.remove_prefix(1);
      if (!word.empty() && detail::is_abbreviation(word)) boundary = false;
    }
    if (boundary) {
      push(start, j);
      start = j;
    }
    i = j;
  }
  push(start, s.size());
  return out;
}

inline std::vector<std::string> sentence_texts(std::string_view s) {
  std::vector<std::string> out;
  for (const auto& r : split_sentences(s)) out.emplace_back(s.substr(r.begin, r.end - r.begin));
  return out;
}

}  // namespace fist
