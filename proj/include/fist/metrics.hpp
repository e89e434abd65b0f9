#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * Text-quality metrics.
 *
 * Token-logprob metrics work on the per-token top-k alternatives a provider
 * returns alongside each generated token:
 *
 *   perplexity    exp(-(1/t) * sum_i chosen_i)
 *   asls          -(1/t) * sum_i sum_j alt_{i,j}
 *   cross_entropy sum_i -max_j alt_{i,j}
 *
 * All logprobs are natural logs. Reference-based metrics (BLEU, ROUGE-L,
 * TER, chrF++) compare a candidate text against reference text. Every
 * function here is pure.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fist/error.hpp"
#include "fist/text.hpp"

namespace fist {

struct Alternative {
  std::string token;
  double logprob = 0.0;

  friend bool operator==(const Alternative&, const Alternative&) = default;
};

/// One generated token: the chosen fragment, its logprob, and the top-k
/// (k <= 5) candidates the generator considered at this position.
struct TokenLogProb {
  std::string token;
  double chosen_logprob = 0.0;
  std::vector<Alternative> alternatives;

  friend bool operator==(const TokenLogProb&, const TokenLogProb&) = default;
};

inline constexpr std::size_t kMaxAlternatives = 5;
inline constexpr double kLogprobTolerance = 1e-9;

/// Throws InvalidLogprob unless the token satisfies the type invariants.
/// With `require_argmax` the chosen token, when listed, must be the top
/// alternative; otherwise it only has to agree with its own listing.
inline void validate_token(const TokenLogProb& t, bool require_argmax = true) {
  auto bad = [](double lp) { return !std::isfinite(lp) || lp > 0.0; };
  if (bad(t.chosen_logprob))
    fail(ErrorCode::InvalidLogprob, "chosen logprob must be finite and <= 0 (token '" + t.token + "')");
  if (t.alternatives.empty() || t.alternatives.size() > kMaxAlternatives)
    fail(ErrorCode::InvalidLogprob, "token '" + t.token + "' needs 1-5 alternatives");
  for (std::size_t j = 0; j < t.alternatives.size(); ++j) {
    if (bad(t.alternatives[j].logprob))
      fail(ErrorCode::InvalidLogprob, "alternative logprob must be finite and <= 0");
    if (j > 0 && t.alternatives[j].logprob > t.alternatives[j - 1].logprob)
      fail(ErrorCode::InvalidLogprob, "alternatives must be sorted by descending logprob");
  }
  for (const auto& alt : t.alternatives) {
    if (alt.token != t.token) continue;
    const double expected = require_argmax ? t.alternatives.front().logprob : alt.logprob;
    if (std::abs(expected - t.chosen_logprob) > kLogprobTolerance)
      fail(ErrorCode::InvalidLogprob, "chosen logprob disagrees with alternatives for '" + t.token + "'");
    break;
  }
}

namespace detail {

inline void require_tokens(std::span<const TokenLogProb> tokens) {
  if (tokens.empty()) fail(ErrorCode::EmptySequence, "token sequence is empty");
}

inline void require_logprob(double lp) {
  if (!std::isfinite(lp) || lp > 0.0) fail(ErrorCode::InvalidLogprob, "logprob must be finite and <= 0");
}

inline double max_alternative(const TokenLogProb& t) {
  if (t.alternatives.empty()) return t.chosen_logprob;
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& a : t.alternatives) m = std::max(m, a.logprob);
  return m;
}

}  // namespace detail

inline double perplexity(std::span<const TokenLogProb> tokens) {
  detail::require_tokens(tokens);
  double sum = 0.0;
  for (const auto& t : tokens) {
    detail::require_logprob(t.chosen_logprob);
    sum += t.chosen_logprob;
  }
  return std::exp(-sum / static_cast<double>(tokens.size()));
}

/// Averaged sequential log-loss. Sums over however many alternatives each
/// token carries; see `min_alternatives` for recording the effective k.
inline double asls(std::span<const TokenLogProb> tokens) {
  detail::require_tokens(tokens);
  double sum = 0.0;
  for (const auto& t : tokens) {
    if (t.alternatives.empty())
      fail(ErrorCode::InvalidLogprob, "token '" + t.token + "' has no alternatives");
    for (const auto& a : t.alternatives) {
      detail::require_logprob(a.logprob);
      sum += a.logprob;
    }
  }
  return -sum / static_cast<double>(tokens.size());
}

inline double cross_entropy(std::span<const TokenLogProb> tokens) {
  detail::require_tokens(tokens);
  double sum = 0.0;
  for (const auto& t : tokens) {
    const double m = detail::max_alternative(t);
    detail::require_logprob(m);
    sum -= m;
  }
  return sum;
}

/// Smallest alternative count in the sequence (0 for an empty sequence).
inline std::size_t min_alternatives(std::span<const TokenLogProb> tokens) {
  if (tokens.empty()) return 0;
  std::size_t k = kMaxAlternatives;
  for (const auto& t : tokens) k = std::min(k, t.alternatives.size());
  return k;
}

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

using Tokens = std::vector<std::string>;

namespace detail {

/// n-gram -> count, keyed by the joined token string.
inline std::unordered_map<std::string, std::size_t> ngram_counts(const Tokens& toks, std::size_t n) {
  std::unordered_map<std::string, std::size_t> out;
  if (toks.size() < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key;
    for (std::size_t k = 0; k < n; ++k) {
      key += toks[i + k];
      key += '\x1f';
    }
    ++out[key];
  }
  return out;
}

}  // namespace detail

/// Sufficient statistics for BLEU; add them up across segments for corpus BLEU.
struct BleuStats {
  std::vector<std::size_t> matches;
  std::vector<std::size_t> totals;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;

  BleuStats& operator+=(const BleuStats& other) {
    for (std::size_t n = 0; n < matches.size() && n < other.matches.size(); ++n) {
      matches[n] += other.matches[n];
      totals[n] += other.totals[n];
    }
    candidate_length += other.candidate_length;
    reference_length += other.reference_length;
    return *this;
  }
};

inline BleuStats bleu_stats(const Tokens& candidate, const std::vector<Tokens>& references,
                            std::size_t max_ngram = 4) {
  if (max_ngram == 0) fail(ErrorCode::InvalidRequest, "max_ngram must be >= 1");
  if (references.empty()) fail(ErrorCode::EmptyReferences, "no references supplied");
  BleuStats st;
  st.matches.assign(max_ngram, 0);
  st.totals.assign(max_ngram, 0);
  st.candidate_length = candidate.size();

  // Closest reference length; ties go to the shorter reference.
  std::size_t best = references.front().size();
  for (const auto& ref : references) {
    const auto d = [&](std::size_t len) {
      return len > candidate.size() ? len - candidate.size() : candidate.size() - len;
    };
    if (d(ref.size()) < d(best) || (d(ref.size()) == d(best) && ref.size() < best)) best = ref.size();
  }
  st.reference_length = best;

  for (std::size_t n = 1; n <= max_ngram; ++n) {
    const auto cand = detail::ngram_counts(candidate, n);
    std::unordered_map<std::string, std::size_t> max_ref;
    for (const auto& ref : references)
      for (const auto& [gram, c] : detail::ngram_counts(ref, n)) max_ref[gram] = std::max(max_ref[gram], c);
    for (const auto& [gram, c] : cand) {
      st.totals[n - 1] += c;
      if (auto it = max_ref.find(gram); it != max_ref.end()) st.matches[n - 1] += std::min(c, it->second);
    }
  }
  return st;
}

/// BLEU in [0, 100]. Orders n >= 2 with zero matches use add-one smoothing,
/// (0 + 1) / (total + 1); a zero unigram match count yields 0.
inline double bleu_from_stats(const BleuStats& st) {
  if (st.candidate_length == 0) return 0.0;
  if (st.matches.empty() || st.matches[0] == 0) return 0.0;
  double log_sum = 0.0;
  const std::size_t orders = st.matches.size();
  for (std::size_t n = 0; n < orders; ++n) {
    double p;
    if (n == 0)
      p = static_cast<double>(st.matches[0]) / static_cast<double>(st.totals[0]);
    else if (st.matches[n] == 0)
      p = 1.0 / (static_cast<double>(st.totals[n]) + 1.0);
    else
      p = static_cast<double>(st.matches[n]) / static_cast<double>(st.totals[n]);
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(st.candidate_length);
  const double r = static_cast<double>(st.reference_length);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(orders));
}

inline double bleu(std::string_view candidate, const std::vector<std::string>& references,
                   std::size_t max_ngram = 4) {
  const Tokens cand = text::tokenize(candidate);
  if (cand.empty()) fail(ErrorCode::EmptyCandidate, "candidate has no tokens");
  if (references.empty()) fail(ErrorCode::EmptyReferences, "no references supplied");
  std::vector<Tokens> refs;
  refs.reserve(references.size());
  for (const auto& r : references) refs.push_back(text::tokenize(r));
  return bleu_from_stats(bleu_stats(cand, refs, max_ngram));
}

/// Corpus BLEU over (candidate, references) segments.
inline double corpus_bleu(const std::vector<std::pair<std::string, std::vector<std::string>>>& segments,
                          std::size_t max_ngram = 4) {
  if (segments.empty()) fail(ErrorCode::EmptyCandidate, "no segments");
  BleuStats total;
  total.matches.assign(max_ngram, 0);
  total.totals.assign(max_ngram, 0);
  for (const auto& [cand, refs] : segments) {
    std::vector<Tokens> rt;
    for (const auto& r : refs) rt.push_back(text::tokenize(r));
    total += bleu_stats(text::tokenize(cand), rt, max_ngram);
  }
  return bleu_from_stats(total);
}

// ---------------------------------------------------------------------------
// ROUGE-L
// ---------------------------------------------------------------------------

inline constexpr double kRougeBeta = 1.2;

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double rouge_l(std::string_view candidate, std::string_view reference, double beta = kRougeBeta) {
  const Tokens c = text::tokenize(candidate);
  const Tokens r = text::tokenize(reference);
  if (c.empty()) fail(ErrorCode::EmptyCandidate, "candidate has no tokens");
  if (r.empty()) fail(ErrorCode::EmptyReference, "reference has no tokens");
  const double lcs = static_cast<double>(lcs_length(c, r));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(c.size());
  const double rec = lcs / static_cast<double>(r.size());
  const double b2 = beta * beta;
  return (1.0 + b2) * p * rec / (rec + b2 * p);
}

// ---------------------------------------------------------------------------
// TER
// ---------------------------------------------------------------------------

inline constexpr std::size_t kTerMaxShifts = 50;
inline constexpr std::size_t kTerMaxShiftSize = 10;

struct TerResult {
  std::size_t edits = 0;   // word edits + shifts
  std::size_t shifts = 0;
  std::size_t reference_length = 0;
  bool shift_cap_hit = false;

  double score() const { return 100.0 * static_cast<double>(edits) / static_cast<double>(reference_length); }
};

namespace detail {

/// Levenshtein distance over words plus, for each hypothesis position j, the
/// number of reference words consumed before hyp[j] on one optimal path
/// (`ref_cursor[j]`, with ref_cursor[hyp.size()] == ref.size()).
inline std::size_t word_edit_distance(const Tokens& hyp, const Tokens& ref, std::vector<std::size_t>* ref_cursor) {
  const std::size_t n = hyp.size(), m = ref.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = at(i - 1, j - 1) + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      at(i, j) = std::min({sub, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  if (ref_cursor) {
    ref_cursor->assign(n + 1, 0);
    (*ref_cursor)[n] = m;
    std::size_t i = n, j = m;
    while (i > 0) {
      if (j > 0 && at(i, j) == at(i - 1, j - 1) + (hyp[i - 1] == ref[j - 1] ? 0 : 1)) {
        (*ref_cursor)[i - 1] = j - 1;
        --i;
        --j;
      } else if (at(i, j) == at(i - 1, j) + 1) {
        (*ref_cursor)[i - 1] = j;
        --i;
      } else {
        --j;
      }
    }
  }
  return at(n, m);
}

inline Tokens apply_shift(const Tokens& h, std::size_t start, std::size_t len, std::size_t dest) {
  Tokens rest;
  rest.reserve(h.size());
  rest.insert(rest.end(), h.begin(), h.begin() + static_cast<std::ptrdiff_t>(start));
  rest.insert(rest.end(), h.begin() + static_cast<std::ptrdiff_t>(start + len), h.end());
  rest.insert(rest.begin() + static_cast<std::ptrdiff_t>(dest), h.begin() + static_cast<std::ptrdiff_t>(start),
              h.begin() + static_cast<std::ptrdiff_t>(start + len));
  return rest;
}

}  // namespace detail

/// TER with greedy best-first block shifts. A shift is taken only when it
/// lowers the word edit distance by at least 2, so each accepted shift
/// lowers the total. Shifted blocks must match a reference span and are
/// moved next to where that span sits in the current alignment. Hitting
/// `max_shifts` falls back to the shift-free edit distance.
inline TerResult ter_tokens(const Tokens& hyp, const Tokens& ref, std::size_t max_shifts = kTerMaxShifts) {
  if (ref.empty()) fail(ErrorCode::EmptyReference, "reference has no tokens");
  TerResult res;
  res.reference_length = ref.size();
  const std::size_t plain = detail::word_edit_distance(hyp, ref, nullptr);

  Tokens cur = hyp;
  std::size_t cur_ed = plain;
  std::size_t shifts = 0;
  for (;;) {
    if (cur_ed < 2) break;
    std::vector<std::size_t> cursor;
    detail::word_edit_distance(cur, ref, &cursor);
    const std::size_t n = cur.size();

    std::size_t best_ed = cur_ed;
    Tokens best_seq;
    for (std::size_t len = std::min(kTerMaxShiftSize, n); len >= 1; --len) {
      for (std::size_t i = 0; i + len <= n; ++i) {
        for (std::size_t k = 0; k + len <= ref.size(); ++k) {
          if (!std::equal(cur.begin() + static_cast<std::ptrdiff_t>(i),
                          cur.begin() + static_cast<std::ptrdiff_t>(i + len),
                          ref.begin() + static_cast<std::ptrdiff_t>(k)))
            continue;
          // Insertion point in `cur`: first position whose cursor reaches k.
          std::size_t at = 0;
          while (at < n && cursor[at] < k) ++at;
          if (at > i && at < i + len) continue;
          const std::size_t dest = at > i ? at - len : at;
          if (dest == i) continue;
          Tokens cand = detail::apply_shift(cur, i, len, dest);
          const std::size_t ed = detail::word_edit_distance(cand, ref, nullptr);
          if (ed < best_ed) {
            best_ed = ed;
            best_seq = std::move(cand);
          }
        }
      }
    }
    if (best_seq.empty() || cur_ed - best_ed < 2) break;
    if (shifts == max_shifts) {
      res.shift_cap_hit = true;
      break;
    }
    cur = std::move(best_seq);
    cur_ed = best_ed;
    ++shifts;
  }

  if (res.shift_cap_hit) {
    res.edits = plain;
    res.shifts = 0;
  } else {
    res.edits = cur_ed + shifts;
    res.shifts = shifts;
  }
  return res;
}

/// TER as a percentage of reference length; exceeds 100 when the candidate
/// needs more edits than the reference has words.
inline double ter(std::string_view candidate, std::string_view reference) {
  const Tokens r = text::tokenize(reference);
  if (r.empty()) fail(ErrorCode::EmptyReference, "reference has no tokens");
  return ter_tokens(text::tokenize(candidate), r).score();
}

// ---------------------------------------------------------------------------
// chrF++
// ---------------------------------------------------------------------------

inline constexpr std::size_t kChrfCharOrder = 6;
inline constexpr std::size_t kChrfWordOrder = 2;
inline constexpr double kChrfBeta = 2.0;

namespace detail {

inline std::u32string chrf_chars(std::string_view s) {
  std::vector<char32_t> cps;
  if (!text::decode_utf8(s, cps)) {
    // Malformed input: fall back to raw bytes.
    cps.assign(s.begin(), s.end());
  }
  std::u32string out;
  for (char32_t c : cps)
    if (!(c < 0x80 && text::is_space(static_cast<char>(c)))) out.push_back(c);
  return out;
}

inline std::map<std::u32string, std::size_t> char_ngrams(const std::u32string& s, std::size_t n) {
  std::map<std::u32string, std::size_t> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[s.substr(i, n)];
  return out;
}

struct OrderStats {
  std::size_t hyp = 0, ref = 0, match = 0;
};

template <typename Map>
OrderStats compare_counts(const Map& h, const Map& r) {
  OrderStats st;
  for (const auto& [g, c] : h) {
    st.hyp += c;
    if (auto it = r.find(g); it != r.end()) st.match += std::min(c, it->second);
  }
  for (const auto& [g, c] : r) st.ref += c;
  return st;
}

}  // namespace detail

/// chrF++ in [0, 100]: the mean, over character orders 1..6 and word orders
/// 1..2 where both sides have n-grams, of the per-order F-beta (beta = 2).
/// Characters are Unicode code points with whitespace removed.
inline double chrf_pp(std::string_view candidate, std::string_view reference) {
  const std::u32string hc = detail::chrf_chars(candidate);
  const std::u32string rc = detail::chrf_chars(reference);
  if (hc.empty()) fail(ErrorCode::EmptyCandidate, "candidate is blank");
  if (rc.empty()) fail(ErrorCode::EmptyReference, "reference is blank");

  std::vector<detail::OrderStats> orders;
  for (std::size_t n = 1; n <= kChrfCharOrder; ++n)
    orders.push_back(detail::compare_counts(detail::char_ngrams(hc, n), detail::char_ngrams(rc, n)));
  const Tokens hw = text::tokenize_cased(candidate);
  const Tokens rw = text::tokenize_cased(reference);
  for (std::size_t n = 1; n <= kChrfWordOrder; ++n)
    orders.push_back(detail::compare_counts(detail::ngram_counts(hw, n), detail::ngram_counts(rw, n)));

  const double b2 = kChrfBeta * kChrfBeta;
  double total = 0.0;
  std::size_t effective = 0;
  for (const auto& o : orders) {
    if (o.hyp == 0 || o.ref == 0) continue;
    ++effective;
    const double p = static_cast<double>(o.match) / static_cast<double>(o.hyp);
    const double r = static_cast<double>(o.match) / static_cast<double>(o.ref);
    if (p + r > 0.0) total += (1.0 + b2) * p * r / (b2 * p + r);
  }
  if (effective == 0) return 0.0;
  return 100.0 * total / static_cast<double>(effective);
}

// ---------------------------------------------------------------------------

struct MetricBundle {
  double perplexity = 1.0;
  double asls = 0.0;
  double cross_entropy = 0.0;
  double bleu = 0.0;
  double rouge_l = 0.0;
  double chrf_pp = 0.0;
  double ter = 0.0;

  friend bool operator==(const MetricBundle&, const MetricBundle&) = default;
};

/// Full bundle for a response against one reference text. Reference-based
/// fields stay 0 when either side is blank.
inline MetricBundle score_bundle(std::span<const TokenLogProb> tokens, std::string_view response,
                                 std::string_view reference) {
  MetricBundle b;
  b.perplexity = perplexity(tokens);
  b.asls = asls(tokens);
  b.cross_entropy = cross_entropy(tokens);
  const bool comparable = !text::tokenize(response).empty() && !text::tokenize(reference).empty();
  if (comparable) {
    b.bleu = bleu(response, {std::string(reference)});
    b.rouge_l = rouge_l(response, reference);
    b.chrf_pp = chrf_pp(response, reference);
    b.ter = ter(response, reference);
  }
  return b;
}

}  // namespace fist
