#pragma once

// SPDX-License-Identifier: Apache-2.0

// Sentence-level scoring of generated responses, low-certainty flagging,
// rule-assisted response categorization and scatter exports.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fist/dataprep.hpp"
#include "fist/error.hpp"
#include "fist/gateway.hpp"
#include "fist/io.hpp"
#include "fist/kg.hpp"
#include "fist/metrics.hpp"
#include "fist/sentences.hpp"
#include "fist/text.hpp"

namespace fist::monitor {

struct SentenceSpan {
  std::size_t start_token = 0;
  std::size_t end_token = 0;  // exclusive
  std::string text;
  std::size_t sentence_index = 0;

  friend bool operator==(const SentenceSpan&, const SentenceSpan&) = default;
};

enum class Flag { none, low_certainty };

constexpr std::string_view to_string(Flag f) { return f == Flag::none ? "none" : "low_certainty"; }

inline Flag flag_from_string(std::string_view s) {
  if (s == "none") return Flag::none;
  if (s == "low_certainty") return Flag::low_certainty;
  fail(ErrorCode::ValidationFailure, "unknown flag '" + std::string(s) + "'");
}

struct ScoredSentence {
  SentenceSpan span;
  double asls = 0.0;
  double cross_entropy = 0.0;
  double perplexity = 1.0;
  std::size_t entity_count = 0;
  std::size_t relation_count = 0;
  Flag flag = Flag::none;

  std::size_t token_count() const { return span.end_token - span.start_token; }
  double ce_per_token() const { return cross_entropy / static_cast<double>(std::max<std::size_t>(1, token_count())); }

  friend bool operator==(const ScoredSentence&, const ScoredSentence&) = default;
};

enum class Category { correct, hallucination, incomplete, unlabeled };
enum class LabelSource { human, rule, none };

constexpr std::string_view to_string(Category c) {
  switch (c) {
    case Category::correct: return "correct";
    case Category::hallucination: return "hallucination";
    case Category::incomplete: return "incomplete";
    case Category::unlabeled: return "unlabeled";
  }
  return "unlabeled";
}

constexpr std::string_view to_string(LabelSource s) {
  switch (s) {
    case LabelSource::human: return "human";
    case LabelSource::rule: return "rule";
    case LabelSource::none: return "none";
  }
  return "none";
}

inline Category category_from_string(std::string_view s) {
  for (auto c : {Category::correct, Category::hallucination, Category::incomplete, Category::unlabeled})
    if (to_string(c) == s) return c;
  fail(ErrorCode::ValidationFailure, "unknown category '" + std::string(s) + "'");
}

inline LabelSource label_source_from_string(std::string_view s) {
  for (auto c : {LabelSource::human, LabelSource::rule, LabelSource::none})
    if (to_string(c) == s) return c;
  fail(ErrorCode::ValidationFailure, "unknown label source '" + std::string(s) + "'");
}

struct EvalRecord {
  std::string record_id;
  std::string query;
  std::string context;
  std::string response;
  std::vector<TokenLogProb> tokens;
  MetricBundle metrics;
  std::vector<ScoredSentence> sentences;
  Category category = Category::unlabeled;
  LabelSource label_source = LabelSource::none;
  std::string model_id;
};

// ---------------------------------------------------------------------------
// Segmentation and scoring
// ---------------------------------------------------------------------------

/// Maps sentence boundaries of the concatenated text onto tokens. A token
/// belongs to the sentence containing its first non-space byte; tokens that
/// are all whitespace stay with the preceding sentence.
inline std::vector<SentenceSpan> segment_sentences(std::string_view text, std::span<const TokenLogProb> tokens) {
  std::vector<SentenceSpan> out;
  if (tokens.empty()) return out;
  const auto ranges = split_sentences(text);
  std::vector<std::size_t> owner(tokens.size(), 0);
  std::size_t offset = 0;
  std::size_t current = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& t = tokens[i].token;
    std::size_t k = 0;
    while (k < t.size() && text::is_space(t[k])) ++k;
    if (k < t.size()) {
      const std::size_t anchor = offset + k;
      while (current + 1 < ranges.size() && ranges[current + 1].begin <= anchor) ++current;
    }
    owner[i] = current;
    offset += t.size();
  }
  std::size_t start = 0;
  for (std::size_t i = 1; i <= tokens.size(); ++i) {
    if (i < tokens.size() && owner[i] == owner[start]) continue;
    SentenceSpan s;
    s.start_token = start;
    s.end_token = i;
    s.sentence_index = out.size();
    std::string joined;
    for (std::size_t j = start; j < i; ++j) joined += tokens[j].token;
    s.text = std::string(text::trim(joined));
    out.push_back(std::move(s));
    start = i;
  }
  return out;
}

inline std::vector<SentenceSpan> segment_sentences(const gateway::GenerationResponse& r) {
  return segment_sentences(r.text, r.tokens);
}

inline std::vector<ScoredSentence> score_sentences(std::string_view text, std::span<const TokenLogProb> tokens,
                                                   const kg::Lexicon& lex = kg::Lexicon::defaults()) {
  if (tokens.empty()) fail(ErrorCode::EmptyResponse, "response has no tokens");
  std::vector<ScoredSentence> out;
  for (auto& span : segment_sentences(text, tokens)) {
    ScoredSentence s;
    const auto slice = tokens.subspan(span.start_token, span.end_token - span.start_token);
    s.asls = asls(slice);
    s.cross_entropy = cross_entropy(slice);
    s.perplexity = perplexity(slice);
    const auto info = kg::analyze_sentence(span.text, span.sentence_index, lex);
    s.entity_count = info.entities.size();
    s.relation_count = info.relations.size();
    s.span = std::move(span);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<ScoredSentence> score_sentences(const EvalRecord& r,
                                                   const kg::Lexicon& lex = kg::Lexicon::defaults()) {
  return score_sentences(r.response, r.tokens, lex);
}

// ---------------------------------------------------------------------------
// Flagging
// ---------------------------------------------------------------------------

struct Thresholds {
  double asls_floor = 0.0;
  double ce_per_token_ceiling = std::numeric_limits<double>::infinity();
};

/// Linear-interpolation quantile of unsorted values.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) fail(ErrorCode::EmptySequence, "quantile of nothing");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline constexpr double kFloorQuantile = 0.25;
inline constexpr double kCeilingQuantile = 0.75;

/// Run-relative defaults: 25th percentile of sentence ASLS and 75th
/// percentile of per-token CE. No sentences gives vacuous thresholds.
inline Thresholds adaptive_thresholds(std::span<const ScoredSentence> sentences) {
  if (sentences.empty()) return {};
  std::vector<double> a, c;
  for (const auto& s : sentences) {
    a.push_back(s.asls);
    c.push_back(s.ce_per_token());
  }
  Thresholds t{quantile(a, kFloorQuantile), quantile(c, kCeilingQuantile)};
  if (t.ce_per_token_ceiling <= 0.0) t.ce_per_token_ceiling = std::numeric_limits<double>::denorm_min();
  return t;
}

inline Thresholds adaptive_thresholds(std::span<const EvalRecord> records) {
  std::vector<ScoredSentence> all;
  for (const auto& r : records) all.insert(all.end(), r.sentences.begin(), r.sentences.end());
  return adaptive_thresholds(all);
}

inline void check_thresholds(double asls_floor, double ce_per_token_ceiling) {
  if (!(asls_floor >= 0.0)) fail(ErrorCode::InvalidThreshold, "asls_floor must be >= 0");
  if (!(ce_per_token_ceiling > 0.0)) fail(ErrorCode::InvalidThreshold, "ce_per_token_ceiling must be > 0");
}

inline bool low_certainty(const ScoredSentence& s, double asls_floor, double ce_per_token_ceiling) {
  return s.asls < asls_floor || s.ce_per_token() > ce_per_token_ceiling;
}

/// A floor of 0 or a ceiling of +inf disables that half of the predicate.
inline std::vector<ScoredSentence> flag_low_certainty(std::vector<ScoredSentence> sentences, double asls_floor,
                                                      double ce_per_token_ceiling) {
  check_thresholds(asls_floor, ce_per_token_ceiling);
  for (auto& s : sentences)
    s.flag = low_certainty(s, asls_floor, ce_per_token_ceiling) ? Flag::low_certainty : Flag::none;
  return sentences;
}

inline std::vector<ScoredSentence> flag_low_certainty(std::vector<ScoredSentence> sentences, const Thresholds& t) {
  return flag_low_certainty(std::move(sentences), t.asls_floor, t.ce_per_token_ceiling);
}

inline void flag_records(std::vector<EvalRecord>& records, const Thresholds& t) {
  for (auto& r : records) r.sentences = flag_low_certainty(std::move(r.sentences), t);
}

inline std::size_t flag_count(std::span<const EvalRecord> records) {
  std::size_t n = 0;
  for (const auto& r : records)
    for (const auto& s : r.sentences) n += s.flag == Flag::low_certainty;
  return n;
}

// ---------------------------------------------------------------------------
// Categorization
// ---------------------------------------------------------------------------

/// Reference fact; `value` is normalized (scale applied) and `unit` is
/// "percent", an ISO currency code, or empty.
struct Fact {
  std::string subject;
  std::string predicate;
  double value = 0.0;
  std::string unit;

  friend bool operator==(const Fact&, const Fact&) = default;
};

struct Claim {
  std::string subject;
  std::string predicate;
  double value = 0.0;
  std::string unit;
  bool target = false;  // a goal or plan, not an outcome
  std::size_t sentence_index = 0;
};

namespace detail {

inline double scale_factor(std::string_view scale) {
  const std::string s = text::lower(text::trim(scale));
  if (s.empty()) return 1.0;
  if (s == "thousand" || s == "k") return 1e3;
  if (s == "million" || s == "m" || s == "mn") return 1e6;
  if (s == "billion" || s == "bn" || s == "b") return 1e9;
  if (s == "trillion") return 1e12;
  return 1.0;
}

inline std::string canonical_currency(std::string_view sym) {
  const std::string s(text::trim(sym));
  if (s == "$") return "USD";
  if (s == "\xE2\x82\xAC") return "EUR";
  if (s == "\xC2\xA3") return "GBP";
  if (s == "\xC2\xA5") return "JPY";
  return s;
}

inline std::pair<double, std::string> normalize(const data::Number& n) {
  std::string unit;
  if (n.unit == data::Unit::percent) unit = "percent";
  if (n.unit == data::Unit::currency) unit = canonical_currency(n.symbol);
  return {n.value * scale_factor(n.scale), unit};
}

struct NumberMention {
  std::size_t begin = 0, end = 0;
  double value = 0.0;
  std::string unit;
};

/// Numeric mentions with optional currency, scale and percent markers.
/// Bare years and quarter labels are not mentions.
inline std::vector<NumberMention> scan_numbers(std::string_view s) {
  static const std::regex re(
      R"(((?:USD|EUR|GBP|JPY|INR) )?(\$|\xE2\x82\xAC|\xC2\xA3|\xC2\xA5)?(\d[\d,]*(?:\.\d+)?)((?: ?(?:million|billion|thousand|trillion|bn|mn))|[MBK](?![A-Za-z]))?( ?%| percent| per cent)?( (?:USD|EUR|GBP|JPY|INR|dollars|euros))?)");
  std::vector<NumberMention> out;
  const std::string str(s);
  for (auto it = std::sregex_iterator(str.begin(), str.end(), re); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    const auto b = static_cast<std::size_t>(m.position(0));
    if (b > 0 && (text::is_alnum(str[b - 1]) || str[b - 1] == '.')) continue;
    const auto e = b + static_cast<std::size_t>(m.length(0));
    if (e < str.size() && text::is_alpha(str[e])) continue;
    std::string digits = m[3].str();
    while (!digits.empty() && digits.back() == ',') digits.pop_back();
    digits.erase(std::remove(digits.begin(), digits.end(), ','), digits.end());
    NumberMention n;
    n.begin = b;
    n.end = b + static_cast<std::size_t>(m.position(3) - m.position(0)) + m[3].str().size();
    try {
      n.value = std::stod(digits);
    } catch (...) {
      continue;
    }
    if (m[5].matched) n.unit = "percent";
    if (m[1].matched) n.unit = std::string(text::trim(m[1].str()));
    if (m[2].matched) n.unit = canonical_currency(m[2].str());
    if (m[6].matched) {
      const std::string suffix(text::trim(m[6].str()));
      n.unit = suffix == "dollars" ? "USD" : suffix == "euros" ? "EUR" : suffix;
    }
    if (m[4].matched) n.value *= scale_factor(m[4].str());
    n.end = e;
    if (n.unit.empty() && !m[4].matched && digits.size() == 4 && digits.find('.') == std::string::npos) {
      const int y = std::stoi(digits);
      if (y >= 1900 && y <= 2100) continue;
    }
    out.push_back(n);
  }
  return out;
}

inline bool has_word(std::string_view text_lower, std::span<const std::string_view> words) {
  for (const auto& t : text::tokenize(text_lower))
    if (std::find(words.begin(), words.end(), t) != words.end()) return true;
  return false;
}

inline constexpr std::array<std::string_view, 10> kTargetCues = {
    "target", "targeted", "targets", "planned", "plan", "goal", "guidance", "expected", "forecast", "budgeted"};
inline constexpr std::array<std::string_view, 6> kMetCues = {"met", "achieved", "hit", "reached", "matched", "attained"};
inline constexpr std::array<std::string_view, 4> kShortCues = {"missed", "undershot", "trailed", "lagged"};
inline constexpr std::array<std::string_view, 5> kBeatCues = {"exceeded", "beat", "surpassed", "topped", "outpaced"};

inline std::vector<std::string_view> split_clauses(std::string_view s) {
  static const std::array<std::string_view, 6> seps = {", while ", ", whereas ", "; ", " but ", ", and ", ", although "};
  std::vector<std::string_view> out;
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < s.size()) {
    bool cut = false;
    for (auto sep : seps)
      if (s.substr(i, sep.size()) == sep) {
        out.push_back(s.substr(start, i - start));
        i += sep.size();
        start = i;
        cut = true;
        break;
      }
    if (!cut) ++i;
  }
  out.push_back(s.substr(start));
  return out;
}

inline std::vector<std::string> stems(std::string_view phrase) {
  std::vector<std::string> out;
  for (auto& w : text::tokenize(phrase))
    if (text::is_alnum(w.front())) out.push_back(w.substr(0, 5));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline bool subset(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

}  // namespace detail

/// Claims in `response`. The subject of a clause is its first organization or
/// location (else the previous clause's subject); the predicate is the metric
/// term nearest the value. "met/achieved T" asserts T, "missed T by D"
/// asserts T - D, "exceeded T by D" asserts T + D.
inline std::vector<Claim> extract_claims(std::string_view response, const kg::Lexicon& lex = kg::Lexicon::defaults()) {
  using namespace detail;
  std::vector<Claim> out;
  std::string last_subject;
  const auto sentences = sentence_texts(response);
  for (std::size_t si = 0; si < sentences.size(); ++si) {
    for (auto clause : split_clauses(sentences[si])) {
      const auto ents = kg::extract_entities(clause, si, lex);
      for (const auto& e : ents)
        if (e.kind == kg::EntityKind::organization || e.kind == kg::EntityKind::location) {
          last_subject = e.surface;
          break;
        }
      const auto nums = scan_numbers(clause);
      // A term between the previous value and this one wins; otherwise the
      // nearest term on either side.
      auto predicate_near = [&](const NumberMention& n, std::size_t lead_begin) {
        std::string best;
        std::size_t best_d = std::numeric_limits<std::size_t>::max();
        for (const auto& e : ents) {
          if (e.kind != kg::EntityKind::metric_term || e.char_span.begin < lead_begin || e.char_span.end > n.begin)
            continue;
          if (n.begin - e.char_span.end < best_d) {
            best_d = n.begin - e.char_span.end;
            best = text::lower(e.surface);
          }
        }
        if (!best.empty()) return best;
        for (const auto& e : ents) {
          if (e.kind != kg::EntityKind::metric_term) continue;
          const std::size_t d = e.char_span.end <= n.begin ? n.begin - e.char_span.end : e.char_span.begin >= n.end ? e.char_span.begin - n.end : 0;
          if (d < best_d) {
            best_d = d;
            best = text::lower(e.surface);
          }
        }
        return best;
      };
      std::size_t prev_end = 0;
      for (std::size_t k = 0; k < nums.size(); ++k) {
        const auto& n = nums[k];
        const std::string lead = text::lower(clause.substr(prev_end, n.begin - prev_end));
        const std::string predicate = predicate_near(n, prev_end);
        prev_end = n.end;
        Claim c{last_subject, predicate, n.value, n.unit, has_word(lead, kTargetCues), si};
        const bool met = has_word(lead, kMetCues), shortfall = has_word(lead, kShortCues), beat = has_word(lead, kBeatCues);
        std::optional<NumberMention> by;
        if (k + 1 < nums.size()) {
          const auto gap = text::tokenize(text::lower(clause.substr(n.end, nums[k + 1].begin - n.end)));
          if (!gap.empty() && gap.back() == "by") by = nums[k + 1];
        }
        if (met || shortfall || beat) {
          // The compared value T is itself a target; the outcome is derived.
          if (c.target) out.push_back(c);
          Claim actual = c;
          actual.target = false;
          bool known = true;
          if (shortfall || beat) {
            if (by && (by->unit.empty() || by->unit == n.unit))
              actual.value = shortfall ? n.value - by->value : n.value + by->value;
            else
              known = false;
          }
          if (known) out.push_back(actual);
          if (by) {
            prev_end = by->end;
            ++k;
          }
          continue;
        }
        out.push_back(c);
      }
    }
  }
  return out;
}

struct CategorizeOptions {
  double relative_tolerance = 0.005;
  /// Fraction of reference facts a response has to support.
  double min_coverage = 0.5;
};

inline bool unit_compatible(const std::string& a, const std::string& b) {
  if (a.empty() || b.empty()) return a != "percent" && b != "percent";
  return a == b;
}

inline bool subject_matches(const std::string& claim, const std::string& fact) {
  if (claim.empty() || fact.empty()) return true;
  const auto a = detail::stems(claim), b = detail::stems(fact);
  return detail::subset(a, b) || detail::subset(b, a);
}

inline bool predicate_matches(const std::string& claim, const std::string& fact) {
  if (claim.empty() || fact.empty()) return true;
  const auto a = detail::stems(claim), b = detail::stems(fact);
  return detail::subset(a, b) || detail::subset(b, a);
}

inline bool is_target_fact(const Fact& f) {
  return detail::has_word(text::lower(f.predicate), detail::kTargetCues);
}

enum class Verdict { supported, contradicted, unrelated };

inline Verdict check_claim(const Claim& c, std::span<const Fact> facts, const CategorizeOptions& opt = {}) {
  bool related = false;
  for (const auto& f : facts) {
    if (is_target_fact(f) != c.target) continue;
    if (!subject_matches(c.subject, f.subject) || !predicate_matches(c.predicate, f.predicate)) continue;
    if (!unit_compatible(c.unit, f.unit)) continue;
    related = true;
    const double tol = opt.relative_tolerance * std::max(std::abs(f.value), 1e-12);
    if (std::abs(c.value - f.value) <= tol) return Verdict::supported;
  }
  return related ? Verdict::contradicted : Verdict::unrelated;
}

/// Rule-assisted category; a human label on the record always wins.
inline Category categorize(const EvalRecord& record, std::span<const Fact> facts, const CategorizeOptions& opt = {},
                           const kg::Lexicon& lex = kg::Lexicon::defaults()) {
  if (facts.empty()) fail(ErrorCode::NoReferenceFacts, "categorize needs at least one reference fact");
  if (record.label_source == LabelSource::human && record.category != Category::unlabeled) return record.category;
  if (text::blank(record.response)) return Category::incomplete;
  const auto claims = extract_claims(record.response, lex);
  if (claims.empty()) return Category::incomplete;
  for (const auto& c : claims)
    if (check_claim(c, facts, opt) == Verdict::contradicted) return Category::hallucination;
  std::size_t covered = 0;
  for (const auto& f : facts) {
    const Fact one[] = {f};
    for (const auto& c : claims)
      if (check_claim(c, one, opt) == Verdict::supported) {
        ++covered;
        break;
      }
  }
  if (static_cast<double>(covered) < opt.min_coverage * static_cast<double>(facts.size())) return Category::incomplete;
  return Category::correct;
}

/// {"subject","predicate","value","unit"}; value may also be a string such
/// as "$1.2M" whose markers then supply the unit.
inline Fact fact_from_json(const nlohmann::json& j) {
  Fact f;
  f.subject = j.at("subject").get<std::string>();
  f.predicate = j.at("predicate").get<std::string>();
  const std::string unit = j.value("unit", "");
  const auto& v = j.at("value");
  if (v.is_string()) {
    const auto cell = data::parse_cell(v.get<std::string>());
    const auto* n = std::get_if<data::Number>(&cell);
    if (!n) fail(ErrorCode::ValidationFailure, "fact value '" + v.get<std::string>() + "' is not numeric");
    std::tie(f.value, f.unit) = detail::normalize(*n);
  } else {
    f.value = v.get<double>();
  }
  for (const auto& w : text::split_whitespace(unit)) {
    if (w == "%" || text::lower(w) == "percent") f.unit = "percent";
    else if (detail::scale_factor(w) != 1.0) f.value *= detail::scale_factor(w);
    else f.unit = detail::canonical_currency(w);
  }
  return f;
}

inline nlohmann::json to_json(const Fact& f) {
  return {{"subject", f.subject}, {"predicate", f.predicate}, {"value", f.value}, {"unit", f.unit}};
}

inline std::vector<Fact> facts_from_json(const nlohmann::json& j) {
  std::vector<Fact> out;
  for (const auto& x : j) out.push_back(fact_from_json(x));
  return out;
}

inline std::vector<Fact> load_facts(const std::filesystem::path& path) {
  try {
    return facts_from_json(nlohmann::json::parse(io::read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ValidationFailure, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Evaluation records
// ---------------------------------------------------------------------------

/// Scores a response into an unlabeled EvalRecord (sentences unflagged).
inline EvalRecord make_record(std::string record_id, std::string query, std::string context,
                              const gateway::GenerationResponse& resp, std::string_view reference = {},
                              const kg::Lexicon& lex = kg::Lexicon::defaults()) {
  EvalRecord r;
  r.record_id = std::move(record_id);
  r.query = std::move(query);
  r.context = std::move(context);
  r.response = resp.text;
  r.tokens = resp.tokens;
  r.model_id = resp.model_id;
  if (!r.tokens.empty()) {
    r.metrics = score_bundle(r.tokens, r.response, reference);
    r.sentences = score_sentences(r, lex);
  }
  return r;
}

inline nlohmann::json to_json(const TokenLogProb& t) {
  nlohmann::json alts = nlohmann::json::array();
  for (const auto& a : t.alternatives) alts.push_back({{"token", a.token}, {"logprob", a.logprob}});
  return {{"token", t.token}, {"logprob", t.chosen_logprob}, {"top_logprobs", alts}};
}

inline TokenLogProb token_from_json(const nlohmann::json& j) {
  TokenLogProb t;
  t.token = j.at("token").get<std::string>();
  t.chosen_logprob = j.at("logprob").get<double>();
  for (const auto& a : j.at("top_logprobs")) t.alternatives.push_back({a.at("token"), a.at("logprob").get<double>()});
  return t;
}

inline nlohmann::json to_json(const ScoredSentence& s) {
  return {{"start_token", s.span.start_token}, {"end_token", s.span.end_token}, {"text", s.span.text},
          {"sentence_index", s.span.sentence_index}, {"asls", s.asls}, {"cross_entropy", s.cross_entropy},
          {"perplexity", s.perplexity}, {"entity_count", s.entity_count}, {"relation_count", s.relation_count},
          {"flag", to_string(s.flag)}};
}

inline ScoredSentence sentence_from_json(const nlohmann::json& j) {
  ScoredSentence s;
  s.span = {j.at("start_token"), j.at("end_token"), j.at("text"), j.at("sentence_index")};
  s.asls = j.at("asls");
  s.cross_entropy = j.at("cross_entropy");
  s.perplexity = j.at("perplexity");
  s.entity_count = j.at("entity_count");
  s.relation_count = j.at("relation_count");
  s.flag = flag_from_string(j.at("flag").get<std::string>());
  return s;
}

inline nlohmann::json to_json(const MetricBundle& m) {
  return {{"perplexity", m.perplexity}, {"asls", m.asls}, {"cross_entropy", m.cross_entropy}, {"bleu", m.bleu},
          {"rouge_l", m.rouge_l},       {"chrf_pp", m.chrf_pp}, {"ter", m.ter}};
}

inline MetricBundle bundle_from_json(const nlohmann::json& j) {
  return {j.at("perplexity"), j.at("asls"), j.at("cross_entropy"), j.at("bleu"),
          j.at("rouge_l"),    j.at("chrf_pp"), j.at("ter")};
}

inline nlohmann::json to_json(const EvalRecord& r) {
  nlohmann::json toks = nlohmann::json::array(), sents = nlohmann::json::array();
  for (const auto& t : r.tokens) toks.push_back(to_json(t));
  for (const auto& s : r.sentences) sents.push_back(to_json(s));
  return {{"record_id", r.record_id}, {"query", r.query},      {"context", r.context},
          {"response", r.response},   {"model_id", r.model_id}, {"tokens", toks},
          {"metrics", to_json(r.metrics)}, {"sentences", sents}, {"category", to_string(r.category)},
          {"label_source", to_string(r.label_source)}};
}

inline EvalRecord record_from_json(const nlohmann::json& j) {
  EvalRecord r;
  r.record_id = j.at("record_id");
  r.query = j.at("query");
  r.context = j.at("context");
  r.response = j.at("response");
  r.model_id = j.value("model_id", "");
  for (const auto& t : j.at("tokens")) r.tokens.push_back(token_from_json(t));
  r.metrics = bundle_from_json(j.at("metrics"));
  for (const auto& s : j.at("sentences")) r.sentences.push_back(sentence_from_json(s));
  r.category = category_from_string(j.at("category").get<std::string>());
  r.label_source = label_source_from_string(j.at("label_source").get<std::string>());
  return r;
}

// ---------------------------------------------------------------------------
// Scatter export
// ---------------------------------------------------------------------------

enum class ScatterMetric { ce, asls };

inline ScatterMetric scatter_metric_from_string(std::string_view s) {
  if (s == "ce") return ScatterMetric::ce;
  if (s == "asls") return ScatterMetric::asls;
  fail(ErrorCode::InvalidRequest, "metric must be 'ce' or 'asls'");
}

struct ScatterRun {
  std::string run_label;
  std::span<const EvalRecord> records;
};

struct ScatterRow {
  std::string run_label;
  std::string record_id;
  std::size_t sentence_index = 0;
  double value = 0.0;
  Flag flag = Flag::none;
};

inline std::vector<ScatterRow> scatter_rows(std::span<const ScatterRun> runs, ScatterMetric metric) {
  std::vector<ScatterRow> rows;
  for (const auto& run : runs)
    for (const auto& r : run.records)
      for (const auto& s : r.sentences)
        rows.push_back({run.run_label, r.record_id, s.span.sentence_index,
                        metric == ScatterMetric::ce ? s.cross_entropy : s.asls, s.flag});
  return rows;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

inline std::vector<std::string> csv_split(std::string_view line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

inline std::string svg_escape(std::string_view s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else if (c == '"') o += "&quot;";
    else o += c;
  }
  return o;
}

}  // namespace detail

inline constexpr std::string_view kScatterHeader = "run_label,record_id,sentence_index,value,flag";

inline std::string scatter_csv(std::span<const ScatterRow> rows) {
  std::string out(kScatterHeader);
  out += '\n';
  for (const auto& r : rows)
    out += detail::csv_field(r.run_label) + "," + detail::csv_field(r.record_id) + "," +
           std::to_string(r.sentence_index) + "," + text::fixed(r.value, 4) + "," + std::string(to_string(r.flag)) + "\n";
  return out;
}

inline std::vector<ScatterRow> parse_scatter_csv(std::string_view csv) {
  std::vector<ScatterRow> rows;
  const auto ls = text::lines(csv);
  if (ls.empty() || ls[0] != kScatterHeader) fail(ErrorCode::ValidationFailure, "unexpected scatter header");
  for (std::size_t i = 1; i < ls.size(); ++i) {
    if (ls[i].empty()) continue;
    const auto f = detail::csv_split(ls[i]);
    if (f.size() != 5) fail(ErrorCode::ValidationFailure, "line " + std::to_string(i + 1) + ": expected 5 fields");
    rows.push_back({f[0], f[1], std::stoul(f[2]), std::stod(f[3]), flag_from_string(f[4])});
  }
  return rows;
}

/// Scatter of value against sentence order, one colour per run; flagged
/// points get a dark outline.
inline std::string scatter_svg(std::span<const ScatterRow> rows, ScatterMetric metric) {
  static const std::array<std::string_view, 6> colours = {"#d62728", "#ff7f0e", "#2ca02c", "#1f77b4", "#9467bd", "#8c564b"};
  const double W = 720, H = 420, L = 60, R = 150, T = 20, B = 40;
  std::vector<std::string> labels;
  for (const auto& r : rows)
    if (std::find(labels.begin(), labels.end(), r.run_label) == labels.end()) labels.push_back(r.run_label);
  double vmax = 0;
  std::size_t n_max = 1;
  std::map<std::string, std::size_t> counts;
  for (const auto& r : rows) {
    vmax = std::max(vmax, r.value);
    n_max = std::max(n_max, ++counts[r.run_label]);
  }
  if (vmax <= 0) vmax = 1;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + text::fixed(W, 0) + "\" height=\"" +
                    text::fixed(H, 0) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<line x1=\"" + text::fixed(L, 0) + "\" y1=\"" + text::fixed(H - B, 0) + "\" x2=\"" + text::fixed(W - R, 0) +
         "\" y2=\"" + text::fixed(H - B, 0) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + text::fixed(L, 0) + "\" y1=\"" + text::fixed(T, 0) + "\" x2=\"" + text::fixed(L, 0) +
         "\" y2=\"" + text::fixed(H - B, 0) + "\" stroke=\"black\"/>\n";
  svg += "<text x=\"" + text::fixed(L, 0) + "\" y=\"" + text::fixed(H - 10, 0) + "\" font-size=\"12\">sentence</text>\n";
  svg += "<text x=\"5\" y=\"" + text::fixed(T + 10, 0) + "\" font-size=\"12\">" +
         std::string(metric == ScatterMetric::ce ? "CE" : "ASLS") + " (max " + text::fixed(vmax, 2) + ")</text>\n";
  std::map<std::string, std::size_t> seen;
  for (const auto& r : rows) {
    const std::size_t li = static_cast<std::size_t>(std::find(labels.begin(), labels.end(), r.run_label) - labels.begin());
    const double x = L + (W - L - R) * static_cast<double>(seen[r.run_label]++) / static_cast<double>(n_max);
    const double y = (H - B) - (H - B - T) * r.value / vmax;
    svg += "<circle cx=\"" + text::fixed(x, 1) + "\" cy=\"" + text::fixed(y, 1) + "\" r=\"3\" fill=\"" +
           std::string(colours[li % colours.size()]) + "\"" +
           (r.flag == Flag::low_certainty ? " stroke=\"black\" stroke-width=\"1.5\"" : "") + "/>\n";
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double y = T + 20.0 * static_cast<double>(i);
    svg += "<circle cx=\"" + text::fixed(W - R + 15, 0) + "\" cy=\"" + text::fixed(y + 5, 0) + "\" r=\"4\" fill=\"" +
           std::string(colours[i % colours.size()]) + "\"/><text x=\"" + text::fixed(W - R + 25, 0) + "\" y=\"" +
           text::fixed(y + 9, 0) + "\" font-size=\"12\">" + detail::svg_escape(labels[i]) + "</text>\n";
  }
  return svg + "</svg>\n";
}

/// Writes the CSV (and optionally an SVG) atomically; returns the row count.
inline std::size_t export_scatter(std::span<const ScatterRun> runs, ScatterMetric metric,
                                  const std::filesystem::path& path,
                                  const std::optional<std::filesystem::path>& svg_path = std::nullopt) {
  std::size_t records = 0;
  for (const auto& r : runs) records += r.records.size();
  if (records == 0) fail(ErrorCode::InvalidRequest, "scatter export needs at least one record");
  const auto rows = scatter_rows(runs, metric);
  io::write_atomic(path, scatter_csv(rows));
  if (svg_path) io::write_atomic(*svg_path, scatter_svg(rows, metric));
  return rows.size();
}

inline std::size_t export_scatter(std::span<const EvalRecord> records, ScatterMetric metric,
                                  const std::filesystem::path& path, const std::string& run_label = "run",
                                  const std::optional<std::filesystem::path>& svg_path = std::nullopt) {
  const ScatterRun run{run_label, records};
  return export_scatter(std::span<const ScatterRun>(&run, 1), metric, path, svg_path);
}

/// Mean value per run label, in first-seen order.
inline std::vector<std::pair<std::string, double>> run_means(std::span<const ScatterRow> rows) {
  std::vector<std::pair<std::string, double>> out;
  std::vector<std::size_t> n;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](auto& p) { return p.first == r.run_label; });
    if (it == out.end()) {
      out.emplace_back(r.run_label, 0.0);
      n.push_back(0);
      it = out.end() - 1;
    }
    it->second += r.value;
    ++n[static_cast<std::size_t>(it - out.begin())];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].second /= static_cast<double>(n[i]);
  return out;
}

}  // namespace fist::monitor
