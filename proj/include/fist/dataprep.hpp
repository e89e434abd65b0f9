#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * Fine-tuning data preparation.
 *
 *   report text --parse_report--> sections + tables
 *   table --augment_table--> jittered variants (seeded, reproducible)
 *   (section, table, style) --make_prompt_completion--> training pair
 *   pairs --export_jsonl--> one JSON object per line
 *
 * Reports are plain text or markdown. Headings are markdown '#' lines or
 * ALL-CAPS lines; pipe- or tab-delimited blocks become tables.
 */

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fist/error.hpp"
#include "fist/io.hpp"
#include "fist/random.hpp"
#include "fist/text.hpp"

namespace fist::data {

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

enum class Unit { none, percent, currency };

/// A numeric cell plus what is needed to print it back the way it came in.
struct Number {
  double value = 0.0;
  Unit unit = Unit::none;
  std::string symbol;  // currency symbol/code when unit == currency
  std::string scale;   // "M", "bn", " million", ...
  int decimals = 0;
  bool grouped = false;  // thousands separators
  bool prefix_symbol = true;

  friend bool operator==(const Number&, const Number&) = default;
};

using Cell = std::variant<std::string, Number>;

struct TabularData {
  std::vector<std::string> schema;
  std::vector<std::vector<Cell>> rows;
  std::string caption;
  std::string source_report_id;

  friend bool operator==(const TabularData&, const TabularData&) = default;
};

inline bool is_number(const Cell& c) { return std::holds_alternative<Number>(c); }

inline void validate(const TabularData& t) {
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (t.rows[r].size() != t.schema.size())
      fail(ErrorCode::ValidationFailure, "row " + std::to_string(r) + " length differs from schema");
    for (const auto& c : t.rows[r])
      if (auto* n = std::get_if<Number>(&c); n && !std::isfinite(n->value))
        fail(ErrorCode::ValidationFailure, "non-finite numeric cell");
  }
}

namespace detail {

inline constexpr std::array<std::string_view, 4> kCurrencySymbols = {"$", "\xE2\x82\xAC", "\xC2\xA3", "\xC2\xA5"};
inline constexpr std::array<std::string_view, 5> kCurrencyCodes = {"USD", "EUR", "GBP", "JPY", "INR"};
inline constexpr std::array<std::string_view, 10> kScales = {" million", " billion", " thousand", "bn", "mn",
                                                             "M",        "B",        "K",         "m",  "k"};

}  // namespace detail

/// Parses "$1,234.5M", "-3.2%", "(12)", "EUR 40", "7 bn" into a Number;
/// anything else stays text.
inline Cell parse_cell(std::string_view raw) {
  std::string_view s = text::trim(raw);
  const std::string original(s);
  if (s.empty()) return original;
  Number n;
  bool negative = false;
  if (s.size() > 2 && s.front() == '(' && s.back() == ')') {
    negative = true;
    s = text::trim(s.substr(1, s.size() - 2));
  }
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
    negative = s.front() == '-';
    s.remove_prefix(1);
  }
  for (auto sym : detail::kCurrencySymbols)
    if (s.substr(0, sym.size()) == sym) {
      n.unit = Unit::currency;
      n.symbol = std::string(sym);
      s.remove_prefix(sym.size());
      break;
    }
  if (n.unit == Unit::none)
    for (auto code : detail::kCurrencyCodes)
      if (s.substr(0, code.size()) == code && s.size() > code.size() && s[code.size()] == ' ') {
        n.unit = Unit::currency;
        n.symbol = std::string(code) + " ";
        s.remove_prefix(code.size() + 1);
        break;
      }
  if (!s.empty() && s.back() == '%') {
    if (n.unit != Unit::none) return original;
    n.unit = Unit::percent;
    s.remove_suffix(1);
  }
  if (n.unit != Unit::percent)
    for (auto sc : detail::kScales)
      if (s.size() > sc.size() && s.substr(s.size() - sc.size()) == sc) {
        n.scale = std::string(sc);
        s.remove_suffix(sc.size());
        while (!s.empty() && s.back() == ' ' && n.scale.front() != ' ') {
          n.scale.insert(n.scale.begin(), ' ');
          s.remove_suffix(1);
        }
        break;
      }
  if (n.unit == Unit::none && n.scale.empty())
    for (auto code : detail::kCurrencyCodes)
      if (s.size() > code.size() + 1 && s.substr(s.size() - code.size()) == code && s[s.size() - code.size() - 1] == ' ') {
        n.unit = Unit::currency;
        n.symbol = " " + std::string(code);
        n.prefix_symbol = false;
        s.remove_suffix(code.size() + 1);
        break;
      }
  s = text::trim(s);
  if (s.empty() || !text::is_digit(s.front()) || !text::is_digit(s.back())) return original;
  std::string digits;
  bool seen_dot = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (text::is_digit(c)) {
      digits += c;
      if (seen_dot) ++n.decimals;
    } else if (c == ',' && !seen_dot) {
      // Grouping must be followed by exactly three digits.
      if (i == 0 || i + 3 >= s.size() + 1) return original;
      for (std::size_t k = 1; k <= 3; ++k)
        if (!text::is_digit(s[i + k])) return original;
      if (i + 4 < s.size() && text::is_digit(s[i + 4])) return original;
      n.grouped = true;
    } else if (c == '.' && !seen_dot) {
      seen_dot = true;
      digits += c;
    } else {
      return original;
    }
  }
  n.value = std::stod(digits) * (negative ? -1.0 : 1.0);
  return n;
}

inline std::string format_number(const Number& n) {
  const double mag = std::abs(n.value);
  std::string body = text::fixed(mag, n.decimals);
  if (n.grouped) {
    const auto dot = body.find('.');
    std::string ip = body.substr(0, dot);
    const std::string fp = dot == std::string::npos ? "" : body.substr(dot);
    std::string g;
    for (std::size_t i = 0; i < ip.size(); ++i) {
      if (i > 0 && (ip.size() - i) % 3 == 0) g += ',';
      g += ip[i];
    }
    body = g + fp;
  }
  std::string out = n.value < 0 ? "-" : "";
  if (n.unit == Unit::currency && n.prefix_symbol) out += n.symbol;
  out += body;
  out += n.scale;
  if (n.unit == Unit::currency && !n.prefix_symbol) out += n.symbol;
  if (n.unit == Unit::percent) out += '%';
  return out;
}

inline std::string format_cell(const Cell& c) {
  if (auto* s = std::get_if<std::string>(&c)) return *s;
  return format_number(std::get<Number>(c));
}

/// Column-aligned pipe table (padding by byte length).
inline std::string to_pipe_table(const TabularData& t) {
  std::vector<std::size_t> width(t.schema.size(), 3);
  for (std::size_t c = 0; c < t.schema.size(); ++c) width[c] = std::max(width[c], t.schema[c].size());
  std::vector<std::vector<std::string>> cells;
  for (const auto& row : t.rows) {
    std::vector<std::string> r;
    for (std::size_t c = 0; c < row.size(); ++c) {
      r.push_back(format_cell(row[c]));
      if (c < width.size()) width[c] = std::max(width[c], r.back().size());
    }
    cells.push_back(std::move(r));
  }
  auto line = [&](const std::vector<std::string>& vals) {
    std::string s = "|";
    for (std::size_t c = 0; c < width.size(); ++c) {
      const std::string v = c < vals.size() ? vals[c] : "";
      s += ' ' + v + std::string(width[c] - std::min(width[c], v.size()), ' ') + " |";
    }
    return s + '\n';
  };
  std::string out;
  if (!t.caption.empty()) out += t.caption + '\n';
  out += line(t.schema);
  std::string sep = "|";
  for (auto w : width) sep += std::string(w + 2, '-') + "|";
  out += sep + '\n';
  for (const auto& r : cells) out += line(r);
  return out;
}

// ---------------------------------------------------------------------------
// Report parsing
// ---------------------------------------------------------------------------

struct Section {
  std::string name;
  std::string body;

  friend bool operator==(const Section&, const Section&) = default;
};

struct ParsedReport {
  std::vector<Section> sections;
  std::vector<TabularData> tables;
  std::vector<std::size_t> table_sections;  // owning section per table
  /// Set to NoSections when the text had no heading at all; the whole text
  /// is then one untitled section.
  std::optional<ErrorCode> diagnostic;
};

namespace detail {

inline std::optional<std::string> heading_of(std::string_view line) {
  const std::string_view t = text::trim(line);
  if (t.empty()) return std::nullopt;
  if (t.front() == '#') {
    std::size_t k = 0;
    while (k < t.size() && t[k] == '#') ++k;
    if (k > 6 || (k < t.size() && t[k] != ' ')) return std::nullopt;
    std::string_view name = text::trim(t.substr(k));
    while (!name.empty() && name.back() == '#') name.remove_suffix(1);
    return std::string(text::trim(name));
  }
  if (t.size() < 3 || t.size() > 80) return std::nullopt;
  if (t.find('|') != std::string_view::npos || t.find('\t') != std::string_view::npos) return std::nullopt;
  std::size_t upper = 0, letters = 0, other = 0;
  for (char c : t) {
    if (text::is_lower(c)) return std::nullopt;
    if (text::is_upper(c)) {
      ++upper;
      ++letters;
    } else if (c == '%' || c == '$' || c == '.' || static_cast<unsigned char>(c) >= 0x80) {
      return std::nullopt;
    } else if (!text::is_space(c)) {
      ++other;
    }
  }
  if (upper < 3 || letters * 10 < (letters + other) * 6) return std::nullopt;
  return std::string(t);
}

inline bool is_table_row(std::string_view line) {
  const std::string_view t = text::trim(line);
  if (t.empty()) return false;
  if (line.find('\t') != std::string_view::npos) return true;
  return std::count(t.begin(), t.end(), '|') >= 2 || (t.front() == '|' && t.size() > 1);
}

inline std::vector<std::string> split_row(std::string_view line) {
  std::vector<std::string> cells;
  std::string_view t = text::trim(line);
  if (t.find('|') != std::string_view::npos) {
    if (!t.empty() && t.front() == '|') t.remove_prefix(1);
    if (!t.empty() && t.back() == '|') t.remove_suffix(1);
    std::size_t start = 0;
    for (std::size_t i = 0; i <= t.size(); ++i)
      if (i == t.size() || t[i] == '|') {
        cells.emplace_back(text::trim(t.substr(start, i - start)));
        start = i + 1;
      }
  } else {
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i)
      if (i == line.size() || line[i] == '\t') {
        cells.emplace_back(text::trim(line.substr(start, i - start)));
        start = i + 1;
      }
  }
  return cells;
}

inline bool is_separator_row(const std::vector<std::string>& cells) {
  if (cells.empty()) return false;
  for (const auto& c : cells) {
    if (c.empty()) return false;
    for (char ch : c)
      if (ch != '-' && ch != ':' && ch != '=' && ch != '+') return false;
  }
  return true;
}

inline bool is_caption(std::string_view line) {
  const std::string_view t = text::trim(line);
  return !t.empty() && (text::starts_with_ci(t, "table") || text::starts_with_ci(t, "exhibit") || t.back() == ':');
}

inline TabularData build_table(const std::vector<std::string_view>& rows, std::string caption, const std::string& report_id) {
  TabularData t;
  t.caption = std::move(caption);
  t.source_report_id = report_id;
  bool have_schema = false;
  for (auto row : rows) {
    auto cells = split_row(row);
    if (is_separator_row(cells)) continue;
    if (!have_schema) {
      t.schema = std::move(cells);
      have_schema = true;
      continue;
    }
    std::vector<Cell> parsed;
    for (const auto& c : cells) parsed.push_back(parse_cell(c));
    t.rows.push_back(std::move(parsed));
  }
  std::size_t width = t.schema.size();
  for (const auto& r : t.rows) width = std::max(width, r.size());
  t.schema.resize(width);
  for (auto& r : t.rows) r.resize(width, Cell{std::string()});
  return t;
}

}  // namespace detail

/// Splits a report into sections and tables. Table blocks (and a caption
/// line such as "Table 1: ..." right above one) are lifted out of the
/// section body; all other non-heading lines stay in the body.
inline ParsedReport parse_report(std::string_view report, const std::string& report_id = "report") {
  ParsedReport out;
  const auto ls = text::lines(report);
  std::vector<std::string> body;
  std::string name;
  bool any_heading = false;
  bool open = false;

  auto close_section = [&]() {
    std::size_t b = 0, e = body.size();
    while (b < e && text::blank(body[b])) ++b;
    while (e > b && text::blank(body[e - 1])) --e;
    std::string joined;
    for (std::size_t i = b; i < e; ++i) {
      if (i > b) joined += '\n';
      joined += body[i];
    }
    if (open || !joined.empty()) out.sections.push_back({name, joined});
    body.clear();
  };

  for (std::size_t i = 0; i < ls.size();) {
    if (auto h = detail::heading_of(ls[i])) {
      close_section();
      name = *h;
      open = true;
      any_heading = true;
      ++i;
      continue;
    }
    if (detail::is_table_row(ls[i])) {
      std::vector<std::string_view> block;
      while (i < ls.size() && detail::is_table_row(ls[i])) block.push_back(ls[i++]);
      std::string caption;
      std::size_t last = body.size();
      while (last > 0 && text::blank(body[last - 1])) --last;
      if (last > 0 && detail::is_caption(body[last - 1])) {
        caption = std::string(text::trim(body[last - 1]));
        body.erase(body.begin() + static_cast<std::ptrdiff_t>(last - 1));
      }
      out.tables.push_back(detail::build_table(block, std::move(caption), report_id));
      out.table_sections.push_back(out.sections.size());
      continue;
    }
    body.emplace_back(ls[i]);
    ++i;
  }
  close_section();
  if (!any_heading) {
    out.diagnostic = ErrorCode::NoSections;
    if (out.sections.empty()) out.sections.push_back({"", ""});
    for (auto& ts : out.table_sections) ts = 0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

inline constexpr double kDefaultJitter = 0.05;

/// Lowercase word -> replacement candidates.
using SynonymMap = std::map<std::string, std::vector<std::string>>;

/// "word = syn1, syn2" per line; '#' comments.
inline SynonymMap parse_synonyms(std::string_view contents) {
  SynonymMap m;
  for (auto line : text::lines(contents)) {
    if (auto h = line.find('#'); h != std::string_view::npos) line = line.substr(0, h);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) continue;
    const std::string key = text::lower(text::trim(line.substr(0, eq)));
    std::vector<std::string> syns;
    std::string_view rest = line.substr(eq + 1);
    std::size_t start = 0;
    for (std::size_t i = 0; i <= rest.size(); ++i)
      if (i == rest.size() || rest[i] == ',') {
        auto w = text::trim(rest.substr(start, i - start));
        if (!w.empty()) syns.emplace_back(w);
        start = i + 1;
      }
    if (!key.empty() && !syns.empty()) m[key] = std::move(syns);
  }
  return m;
}

inline const SynonymMap& default_column_synonyms() {
  static const SynonymMap m = parse_synonyms(R"(revenue = sales, turnover
revenues = sales, turnover
profit = earnings, net income
region = geography, market
segment = business group, division
bookings = orders, new business
growth = change, increase
quarter = period
)");
  return m;
}

inline const SynonymMap& default_text_synonyms() {
  static const SynonymMap m = parse_synonyms(R"(rose = increased, grew
fell = declined, decreased
strong = robust, solid
weak = soft, subdued
significant = notable, substantial
growth = expansion
)");
  return m;
}

/// Jitters every numeric cell by an independent factor uniform in
/// [1 - jitter, 1 + jitter]; optionally renames columns from `synonyms`.
/// Text cells, schema length, row count and units never change.
inline TabularData augment_table(const TabularData& table, std::uint64_t seed, double jitter_pct = kDefaultJitter,
                                 const SynonymMap* synonyms = nullptr) {
  if (!(jitter_pct > 0.0 && jitter_pct <= 0.5))
    fail(ErrorCode::InvalidJitter, "jitter must lie in (0, 0.5], got " + text::fixed(jitter_pct, 6));
  validate(table);
  TabularData out = table;
  SplitMix64 rng(seed);
  SplitMix64 cells = rng.split();
  SplitMix64 names = rng.split();
  for (auto& row : out.rows)
    for (auto& c : row)
      if (auto* n = std::get_if<Number>(&c)) n->value *= cells.uniform(1.0 - jitter_pct, 1.0 + jitter_pct);
  if (synonyms) {
    for (auto& col : out.schema) {
      auto it = synonyms->find(text::lower(col));
      if (it == synonyms->end()) continue;
      const std::uint64_t pick = names.below(it->second.size() + 1);
      if (pick > 0) col = it->second[pick - 1];
    }
  }
  return out;
}

/// Deterministic word-level rewrite used in place of LLM paraphrasing when
/// no live model is available.
inline std::string synonym_rewrite(std::string_view input, std::uint64_t seed,
                                   const SynonymMap& synonyms = default_text_synonyms()) {
  SplitMix64 rng(seed);
  std::string out;
  std::size_t i = 0;
  while (i < input.size()) {
    if (!text::is_alpha(input[i])) {
      out += input[i++];
      continue;
    }
    std::size_t j = i;
    while (j < input.size() && text::is_alpha(input[j])) ++j;
    std::string word(input.substr(i, j - i));
    auto it = synonyms.find(text::lower(word));
    if (it != synonyms.end()) {
      const std::uint64_t pick = rng.below(it->second.size() + 1);
      if (pick > 0) {
        std::string rep = it->second[pick - 1];
        if (text::is_upper(word.front())) rep.front() = text::to_upper(rep.front());
        word = rep;
      }
    }
    out += word;
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prompt-completion pairs
// ---------------------------------------------------------------------------

enum class SectionKind {
  introduction,
  growth_outlook,
  service_group_performance,
  industry_performance,
  performance_highlights,
  financial_review,
  new_bookings,
  revenues_by_geography,
  revenues_by_industry,
  cash_to_shareholders,
  business_outlook,
  other
};

inline constexpr std::array<SectionKind, 12> kAllSections = {
    SectionKind::introduction,          SectionKind::growth_outlook,       SectionKind::service_group_performance,
    SectionKind::industry_performance,  SectionKind::performance_highlights, SectionKind::financial_review,
    SectionKind::new_bookings,          SectionKind::revenues_by_geography, SectionKind::revenues_by_industry,
    SectionKind::cash_to_shareholders,  SectionKind::business_outlook,     SectionKind::other};

constexpr std::string_view to_string(SectionKind k) {
  switch (k) {
    case SectionKind::introduction: return "introduction";
    case SectionKind::growth_outlook: return "growth_outlook";
    case SectionKind::service_group_performance: return "service_group_performance";
    case SectionKind::industry_performance: return "industry_performance";
    case SectionKind::performance_highlights: return "performance_highlights";
    case SectionKind::financial_review: return "financial_review";
    case SectionKind::new_bookings: return "new_bookings";
    case SectionKind::revenues_by_geography: return "revenues_by_geography";
    case SectionKind::revenues_by_industry: return "revenues_by_industry";
    case SectionKind::cash_to_shareholders: return "cash_to_shareholders";
    case SectionKind::business_outlook: return "business_outlook";
    case SectionKind::other: return "other";
  }
  return "other";
}

/// Display title used in prompts and validation tables.
constexpr std::string_view title_of(SectionKind k) {
  switch (k) {
    case SectionKind::introduction: return "Introduction";
    case SectionKind::growth_outlook: return "Growth Outlook";
    case SectionKind::service_group_performance: return "Service Group Performance";
    case SectionKind::industry_performance: return "Industry Performance";
    case SectionKind::performance_highlights: return "Performance Highlights";
    case SectionKind::financial_review: return "Financial Review";
    case SectionKind::new_bookings: return "New Bookings";
    case SectionKind::revenues_by_geography: return "Revenues by Geographic Market";
    case SectionKind::revenues_by_industry: return "Revenues by Industry Group";
    case SectionKind::cash_to_shareholders: return "Returning Cash to Shareholders";
    case SectionKind::business_outlook: return "Business Outlook";
    case SectionKind::other: return "Other";
  }
  return "Other";
}

inline SectionKind section_from_string(std::string_view s) {
  for (auto k : kAllSections)
    if (to_string(k) == s) return k;
  fail(ErrorCode::ValidationFailure, "unknown section '" + std::string(s) + "'");
}

namespace detail {

inline std::vector<std::string> name_stems(std::string_view name) {
  static const std::array<std::string_view, 6> stop = {"by", "to", "the", "of", "and", "in"};
  std::vector<std::string> out;
  for (auto& w : text::tokenize(name)) {
    if (!text::is_alnum(w.front())) continue;
    if (std::find(stop.begin(), stop.end(), w) != stop.end()) continue;
    out.push_back(w.substr(0, 5));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline double dice(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& x : a)
    if (std::binary_search(b.begin(), b.end(), x)) ++common;
  return 2.0 * static_cast<double>(common) / static_cast<double>(a.size() + b.size());
}

}  // namespace detail

/// Fuzzy match of a heading against the known section titles (5-letter
/// stems, Dice coefficient >= 0.6); unmatched headings map to `other`.
inline SectionKind infer_section(std::string_view name) {
  static const std::vector<std::pair<SectionKind, std::vector<std::string_view>>> aliases = {
      {SectionKind::introduction, {"Introduction", "Intro", "Overview"}},
      {SectionKind::growth_outlook, {"Growth Outlook"}},
      {SectionKind::service_group_performance, {"Service Group Performance", "Services Performance"}},
      {SectionKind::industry_performance, {"Industry Performance"}},
      {SectionKind::performance_highlights, {"Performance Highlights", "Highlights"}},
      {SectionKind::financial_review, {"Financial Review", "Financial Results"}},
      {SectionKind::new_bookings, {"New Bookings", "Bookings"}},
      {SectionKind::revenues_by_geography, {"Revenues by Geographic Market", "Revenues by Geography", "Geographic Markets"}},
      {SectionKind::revenues_by_industry, {"Revenues by Industry Group", "Revenues by Industry"}},
      {SectionKind::cash_to_shareholders, {"Returning Cash to Shareholders", "Cash to Shareholders", "Shareholder Returns"}},
      {SectionKind::business_outlook, {"Business Outlook", "Outlook"}},
  };
  const auto stems = detail::name_stems(name);
  SectionKind best = SectionKind::other;
  double best_score = 0.0;
  for (const auto& [kind, names] : aliases)
    for (auto alias : names) {
      const double s = detail::dice(stems, detail::name_stems(alias));
      if (s > best_score) {
        best_score = s;
        best = kind;
      }
    }
  return best_score >= 0.6 ? best : SectionKind::other;
}

struct StyleAttrs {
  std::string tone = "formal";
  std::string assertiveness = "measured";
  std::string persona = "senior financial analyst";

  friend bool operator==(const StyleAttrs&, const StyleAttrs&) = default;
};

enum class Stage { stage1, stage2_curated };

constexpr std::string_view to_string(Stage s) { return s == Stage::stage1 ? "stage1" : "stage2_curated"; }

inline Stage stage_from_string(std::string_view s) {
  if (s == "stage1") return Stage::stage1;
  if (s == "stage2_curated") return Stage::stage2_curated;
  fail(ErrorCode::ValidationFailure, "unknown stage '" + std::string(s) + "'");
}

struct Provenance {
  std::string source_report_id;
  std::uint64_t augmentation_seed = 0;
  Stage stage = Stage::stage1;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct PromptCompletion {
  std::string prompt;
  std::string completion;
  SectionKind section = SectionKind::other;
  StyleAttrs style;
  Provenance provenance;

  friend bool operator==(const PromptCompletion&, const PromptCompletion&) = default;
};

/// Per-section instruction templates with {persona}, {tone},
/// {assertiveness}, {section} and {table} placeholders.
class TemplateSet {
 public:
  static const TemplateSet& defaults() {
    static const TemplateSet t = [] {
      TemplateSet s;
      for (auto k : kAllSections) s.templates_[k] = default_template(k);
      return s;
    }();
    return t;
  }

  /// Defaults overridden by `<dir>/templates/<section>.txt` where present.
  static TemplateSet from_config_dir(const std::filesystem::path& dir) {
    TemplateSet s = defaults();
    for (auto k : kAllSections) {
      const auto p = dir / "templates" / (std::string(to_string(k)) + ".txt");
      if (std::filesystem::exists(p)) s.templates_[k] = io::read_file(p);
    }
    return s;
  }

  const std::string& get(SectionKind k) const { return templates_.at(k); }
  void set(SectionKind k, std::string tmpl) { templates_[k] = std::move(tmpl); }

  std::string render(SectionKind k, std::string_view section_title, const StyleAttrs& style,
                     std::string_view table) const {
    const std::string& tmpl = get(k);
    std::string out;
    for (std::size_t i = 0; i < tmpl.size();) {
      if (tmpl[i] == '{') {
        const auto close = tmpl.find('}', i);
        if (close != std::string::npos) {
          const std::string_view key(tmpl.data() + i + 1, close - i - 1);
          std::optional<std::string_view> val;
          if (key == "persona") val = style.persona;
          else if (key == "tone") val = style.tone;
          else if (key == "assertiveness") val = style.assertiveness;
          else if (key == "section") val = section_title;
          else if (key == "table") val = table;
          if (val) {
            out += *val;
            i = close + 1;
            continue;
          }
        }
      }
      out += tmpl[i++];
    }
    return out;
  }

 private:
  static std::string default_template(SectionKind k) {
    std::string focus;
    switch (k) {
      case SectionKind::introduction: focus = "Open with the headline results for the period."; break;
      case SectionKind::growth_outlook: focus = "Describe expected growth and its drivers."; break;
      case SectionKind::service_group_performance: focus = "Compare performance across service groups."; break;
      case SectionKind::industry_performance: focus = "Compare performance across industries."; break;
      case SectionKind::performance_highlights: focus = "Summarise the key performance highlights."; break;
      case SectionKind::financial_review: focus = "Review revenue, margin and earnings figures."; break;
      case SectionKind::new_bookings: focus = "Report new bookings and their mix."; break;
      case SectionKind::revenues_by_geography: focus = "Report revenues by geographic market."; break;
      case SectionKind::revenues_by_industry: focus = "Report revenues by industry group."; break;
      case SectionKind::cash_to_shareholders: focus = "Report dividends and share repurchases."; break;
      case SectionKind::business_outlook: focus = "State the outlook for the coming period."; break;
      case SectionKind::other: focus = "Summarise the data."; break;
    }
    return "You are a {persona}.\nWrite the {section} section of a financial report.\nTone: {tone}. "
           "Assertiveness: {assertiveness}.\n" +
           focus + "\nData:\n{table}";
  }

  std::map<SectionKind, std::string> templates_;
};

inline PromptCompletion make_prompt_completion(const Section& section, const TabularData& table,
                                               const StyleAttrs& style = {},
                                               const TemplateSet& templates = TemplateSet::defaults(),
                                               Provenance provenance = {}) {
  if (text::blank(section.body)) fail(ErrorCode::EmptySection, "section '" + section.name + "' has no body");
  PromptCompletion pc;
  pc.section = infer_section(section.name);
  const std::string title = section.name.empty() ? std::string(title_of(pc.section)) : section.name;
  pc.prompt = templates.render(pc.section, title, style, to_pipe_table(table));
  pc.completion = section.body;
  pc.style = style;
  if (provenance.source_report_id.empty()) provenance.source_report_id = table.source_report_id;
  pc.provenance = std::move(provenance);
  return pc;
}

// ---------------------------------------------------------------------------
// JSONL
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const PromptCompletion& pc) {
  return {{"prompt", pc.prompt},
          {"completion", pc.completion},
          {"meta",
           {{"section", to_string(pc.section)},
            {"style", {{"tone", pc.style.tone}, {"assertiveness", pc.style.assertiveness}, {"persona", pc.style.persona}}},
            {"provenance",
             {{"source_report_id", pc.provenance.source_report_id},
              {"augmentation_seed", pc.provenance.augmentation_seed},
              {"stage", to_string(pc.provenance.stage)}}}}}};
}

inline PromptCompletion pair_from_json(const nlohmann::json& j) {
  PromptCompletion pc;
  pc.prompt = j.at("prompt").get<std::string>();
  pc.completion = j.at("completion").get<std::string>();
  if (pc.prompt.empty() || pc.completion.empty()) fail(ErrorCode::ValidationFailure, "prompt and completion must be non-empty");
  const auto& meta = j.at("meta");
  pc.section = section_from_string(meta.at("section").get<std::string>());
  const auto& st = meta.at("style");
  pc.style = {st.at("tone").get<std::string>(), st.at("assertiveness").get<std::string>(),
              st.at("persona").get<std::string>()};
  const auto& pv = meta.at("provenance");
  pc.provenance.source_report_id = pv.at("source_report_id").get<std::string>();
  pc.provenance.augmentation_seed = pv.at("augmentation_seed").get<std::uint64_t>();
  pc.provenance.stage = stage_from_string(pv.at("stage").get<std::string>());
  return pc;
}

inline std::string serialize_jsonl(const std::vector<PromptCompletion>& dataset) {
  std::string out;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& pc = dataset[i];
    for (const std::string* s : {&pc.prompt, &pc.completion, &pc.style.tone, &pc.style.assertiveness,
                                 &pc.style.persona, &pc.provenance.source_report_id})
      if (!text::valid_utf8(*s)) fail(ErrorCode::SerializationFailure, "record " + std::to_string(i) + " is not valid UTF-8");
    out += to_json(pc).dump();
    out += '\n';
  }
  return out;
}

/// Writes one JSON object per line (LF endings) and returns the line count.
/// Nothing is written when the dataset is empty or a record fails to
/// serialize.
inline std::size_t export_jsonl(const std::vector<PromptCompletion>& dataset, const std::filesystem::path& path) {
  if (dataset.empty()) fail(ErrorCode::EmptyDataset, "refusing to write an empty dataset");
  io::write_atomic(path, serialize_jsonl(dataset));
  return dataset.size();
}

/// Parses JSONL text; failures name the 1-based line.
inline std::vector<PromptCompletion> parse_jsonl(std::string_view contents) {
  std::vector<PromptCompletion> out;
  const auto ls = text::lines(contents);
  for (std::size_t i = 0; i < ls.size(); ++i) {
    if (ls[i].empty() && i + 1 == ls.size()) break;
    try {
      out.push_back(pair_from_json(nlohmann::json::parse(ls[i])));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ValidationFailure, "line " + std::to_string(i + 1) + ": " + e.what());
    } catch (const Error& e) {
      fail(ErrorCode::ValidationFailure, "line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  if (out.empty()) fail(ErrorCode::ValidationFailure, "dataset has no records");
  return out;
}

inline std::vector<PromptCompletion> import_jsonl(const std::filesystem::path& path) {
  return parse_jsonl(io::read_file(path));
}

// ---------------------------------------------------------------------------
// Batch driver
// ---------------------------------------------------------------------------

using CompletionRewriter = std::function<std::string(std::string_view completion, std::uint64_t seed)>;

struct DatasetOptions {
  std::size_t variants = 1;
  std::uint64_t seed = 0;
  double jitter = kDefaultJitter;
  StyleAttrs style;
  const TemplateSet* templates = nullptr;
  const SynonymMap* column_synonyms = nullptr;
  Stage stage = Stage::stage1;
  /// Applied to completions of variants after the first.
  CompletionRewriter rewriter;
  bool parallel = true;
};

struct ReportInput {
  std::string id;
  std::string text;
};

/// Every non-empty section of every report, times `variants` augmented
/// copies of its table: R reports * s sections * a variants pairs. Output
/// order follows input order regardless of `parallel`.
inline std::vector<PromptCompletion> build_dataset(const std::vector<ReportInput>& reports,
                                                   const DatasetOptions& opts = {}) {
  if (opts.variants == 0) fail(ErrorCode::InvalidRequest, "variants must be >= 1");
  const TemplateSet& templates = opts.templates ? *opts.templates : TemplateSet::defaults();
  auto one = [&](const ReportInput& rep) {
    std::vector<PromptCompletion> out;
    const ParsedReport parsed = parse_report(rep.text, rep.id);
    const SplitMix64 base = SplitMix64(opts.seed).fork(fnv1a64(rep.id));
    for (std::size_t s = 0; s < parsed.sections.size(); ++s) {
      const Section& sec = parsed.sections[s];
      if (text::blank(sec.body)) continue;
      TabularData table;
      table.source_report_id = rep.id;
      bool found = false;
      for (std::size_t t = 0; t < parsed.tables.size(); ++t)
        if (parsed.table_sections[t] == s) {
          table = parsed.tables[t];
          found = true;
          break;
        }
      if (!found && !parsed.tables.empty()) table = parsed.tables.front();
      for (std::size_t v = 0; v < opts.variants; ++v) {
        const std::uint64_t seed = base.fork(hash_combine(s, v)).state();
        const TabularData aug =
            table.rows.empty() ? table : augment_table(table, seed, opts.jitter, opts.column_synonyms);
        Section variant = sec;
        if (v > 0 && opts.rewriter) variant.body = opts.rewriter(sec.body, seed);
        out.push_back(make_prompt_completion(variant, aug, opts.style, templates, {rep.id, seed, opts.stage}));
      }
    }
    return out;
  };
  std::vector<std::vector<PromptCompletion>> parts(reports.size());
  if (opts.parallel && reports.size() > 1) {
    std::vector<std::future<std::vector<PromptCompletion>>> futs;
    for (const auto& r : reports) futs.push_back(std::async(std::launch::async, one, std::cref(r)));
    for (std::size_t i = 0; i < futs.size(); ++i) parts[i] = futs[i].get();
  } else {
    for (std::size_t i = 0; i < reports.size(); ++i) parts[i] = one(reports[i]);
  }
  std::vector<PromptCompletion> all;
  for (auto& p : parts) all.insert(all.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  return all;
}

}  // namespace fist::data
