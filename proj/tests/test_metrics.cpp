// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <thread>

#include "fist/metrics.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace fist;
using fist::test_util::random_sequence;
using fist::test_util::token_from_probs;

namespace {

std::vector<TokenLogProb> chosen_only(std::vector<double> logprobs) {
  std::vector<TokenLogProb> out;
  for (double lp : logprobs) out.push_back({" t", lp, {{" t", lp}}});
  return out;
}

std::string random_words(SplitMix64& rng, std::size_t max_len) {
  static const char* vocab[] = {"revenue", "rose", "fell", "profit", "the", "q2", "by", "percent", "acl", "margin"};
  const std::size_t len = 1 + rng.below(max_len);
  std::string s;
  for (std::size_t i = 0; i < len; ++i) {
    if (i) s += ' ';
    s += vocab[rng.below(10)];
  }
  return s;
}

}  // namespace

TEST(Perplexity, CertainTokensGiveOne) { EXPECT_DOUBLE_EQ(perplexity(chosen_only({0, 0, 0})), 1.0); }

TEST(Perplexity, ExpMeanIdentity) {
  EXPECT_NEAR(perplexity(chosen_only({-std::log(2.0), -std::log(2.0)})), 2.0, 1e-12);
}

TEST(Perplexity, MatchesArithmeticOracle) {
  SplitMix64 rng(7);
  std::vector<double> lps;
  for (int i = 0; i < 20; ++i) lps.push_back(rng.uniform(-3.0, 0.0));
  double acc = 0;
  for (double lp : lps) acc += -lp;
  EXPECT_NEAR(perplexity(chosen_only(lps)), std::exp(acc / 20.0), 1e-12);
}

TEST(Perplexity, Errors) {
  std::vector<TokenLogProb> empty;
  try {
    perplexity(empty);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySequence);
  }
  try {
    perplexity(chosen_only({-0.1, 0.2}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidLogprob);
  }
}

TEST(Asls, UniformOverFive) {
  std::vector<TokenLogProb> toks(4, token_from_probs({0.2, 0.2, 0.2, 0.2, 0.2}));
  EXPECT_NEAR(asls(toks), 5 * std::log(5.0), 1e-12);
  EXPECT_NEAR(asls(toks), 8.0472, 1e-4);
}

TEST(Asls, PeakedExceedsUniform) {
  std::vector<TokenLogProb> peaked(3, token_from_probs({0.96, 0.01, 0.01, 0.01, 0.01}));
  std::vector<TokenLogProb> uniform(3, token_from_probs({0.2, 0.2, 0.2, 0.2, 0.2}));
  EXPECT_NEAR(asls(peaked), 18.4615, 1e-4);
  EXPECT_GT(asls(peaked), asls(uniform));
}

TEST(Asls, MatchesOracleOnRandomDistributions) {
  SplitMix64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto seq = random_sequence(rng, 1 + rng.below(30));
    double oracle = 0;
    for (const auto& t : seq)
      for (const auto& a : t.alternatives) oracle += -a.logprob;
    oracle /= static_cast<double>(seq.size());
    EXPECT_NEAR(asls(seq), oracle, 1e-12);
  }
}

TEST(Asls, FewerAlternativesSumsWhatIsThere) {
  std::vector<TokenLogProb> toks{token_from_probs({0.5, 0.25}), token_from_probs({0.9, 0.05, 0.05})};
  const double expected = -(std::log(0.5) + std::log(0.25) + std::log(0.9) + 2 * std::log(0.05)) / 2.0;
  EXPECT_NEAR(asls(toks), expected, 1e-12);
  EXPECT_EQ(min_alternatives(toks), 2u);
}

TEST(Asls, RejectsTokenWithoutAlternatives) {
  std::vector<TokenLogProb> toks{{" a", -0.1, {}}};
  EXPECT_THROW(asls(toks), Error);
}

TEST(CrossEntropy, Closed) {
  EXPECT_DOUBLE_EQ(cross_entropy(chosen_only({0.0})), 0.0);
  EXPECT_NEAR(cross_entropy(chosen_only({-0.5, -1.5})), 2.0, 1e-15);
  std::vector<TokenLogProb> empty;
  EXPECT_THROW(cross_entropy(empty), Error);
}

TEST(CrossEntropy, MatchesOracle) {
  SplitMix64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    auto seq = random_sequence(rng, 1 + rng.below(30));
    double oracle = 0;
    for (const auto& t : seq) {
      double m = -1e300;
      for (const auto& a : t.alternatives) m = std::max(m, a.logprob);
      oracle -= m;
    }
    EXPECT_NEAR(cross_entropy(seq), oracle, 1e-12);
  }
}

TEST(TokenValidation, Invariants) {
  EXPECT_NO_THROW(validate_token(token_from_probs({0.5, 0.3})));
  TokenLogProb unsorted{" a", std::log(0.3), {{" b", std::log(0.3)}, {" a", std::log(0.5)}}};
  EXPECT_THROW(validate_token(unsorted), Error);
  TokenLogProb positive{" a", 0.1, {{" a", 0.1}}};
  EXPECT_THROW(validate_token(positive), Error);
  TokenLogProb not_argmax{" b", std::log(0.2), {{" a", std::log(0.6)}, {" b", std::log(0.2)}}};
  EXPECT_THROW(validate_token(not_argmax), Error);
  EXPECT_NO_THROW(validate_token(not_argmax, /*require_argmax=*/false));
  TokenLogProb too_many = token_from_probs({0.1, 0.1, 0.1, 0.1, 0.1, 0.1});
  EXPECT_THROW(validate_token(too_many), Error);
}

// --- BLEU ---------------------------------------------------------------

TEST(Bleu, Identity) { EXPECT_NEAR(bleu("revenues rose four percent", {"revenues rose four percent"}), 100.0, 1e-12); }

TEST(Bleu, NoUnigramOverlapIsZero) { EXPECT_EQ(bleu("alpha beta", {"gamma delta epsilon"}), 0.0); }

TEST(Bleu, HandWorkedShortCandidate) {
  // 3/3 unigrams, 2/2 bigrams, 1/1 trigram, no 4-grams (smoothed to 1/1);
  // brevity penalty exp(1 - 6/3).
  EXPECT_NEAR(bleu("the cat sat", {"the cat sat on the mat"}), 100.0 * std::exp(-1.0), 1e-12);
  EXPECT_NEAR(bleu("the cat sat", {"the cat sat on the mat"}), 36.787944117144235, 1e-9);
}

TEST(Bleu, ClosestReferenceLength) {
  // Reference lengths 2 and 5 against a 4-word candidate: 5 is closer.
  const double v = bleu("a b c d", {"a b", "a b c d e"});
  const double oracle = oracle::bleu({"a", "b", "c", "d"}, {{"a", "b"}, {"a", "b", "c", "d", "e"}});
  EXPECT_NEAR(v, oracle, 1e-12);
}

TEST(Bleu, Errors) {
  EXPECT_THROW(bleu("", {"x"}), Error);
  EXPECT_THROW(bleu("x", {}), Error);
}

TEST(Bleu, MatchesOracle) {
  SplitMix64 rng(17);
  for (int i = 0; i < 60; ++i) {
    const std::string c = random_words(rng, 8);
    const std::string r1 = random_words(rng, 8), r2 = random_words(rng, 8);
    EXPECT_NEAR(bleu(c, {r1, r2}), oracle::bleu(text::tokenize(c), {text::tokenize(r1), text::tokenize(r2)}), 1e-9)
        << c << " | " << r1 << " | " << r2;
  }
}

TEST(Bleu, CorpusPoolsStatistics) {
  const double v = corpus_bleu({{"the cat sat", {"the cat sat"}}, {"a dog ran", {"a dog ran"}}});
  EXPECT_NEAR(v, 100.0, 1e-12);
}

// --- ROUGE-L --------------------------------------------------------------

TEST(RougeL, IdentityAndDisjoint) {
  EXPECT_DOUBLE_EQ(rouge_l("profits rose", "profits rose"), 1.0);
  EXPECT_DOUBLE_EQ(rouge_l("profits rose", "margins fell"), 0.0);
}

TEST(RougeL, HandWorkedPair) {
  // LCS = "profits rose in" (3); P = 3/5, R = 3/6, beta = 1.2.
  const double p = 0.6, r = 0.5, b2 = 1.44;
  EXPECT_NEAR(rouge_l("profits rose sharply in Q2", "profits rose in the second quarter"),
              (1 + b2) * p * r / (r + b2 * p), 1e-12);
  EXPECT_NEAR(rouge_l("profits rose sharply in Q2", "profits rose in the second quarter"), 0.5366568915, 1e-9);
}

TEST(RougeL, Errors) {
  EXPECT_THROW(rouge_l("", "x"), Error);
  EXPECT_THROW(rouge_l("x", "  "), Error);
}

// --- TER --------------------------------------------------------------------

TEST(Ter, IdentityIsZero) { EXPECT_DOUBLE_EQ(ter("revenues rose four percent", "revenues rose four percent"), 0.0); }

TEST(Ter, OneSubstitution) {
  EXPECT_EQ(oracle::edit_distance_search({"revenues", "rose", "four", "percent"}, {"revenues", "fell", "four", "percent"}),
            1u);
  EXPECT_DOUBLE_EQ(ter("revenues rose four percent", "revenues fell four percent"), 25.0);
}

TEST(Ter, LongCandidateExceedsHundred) {
  const double v = ter("yes the ottoman empire captured constantinople in 1453 marking the end of the byzantine empire",
                       "ottoman capture");
  EXPECT_GT(v, 100.0);
}

TEST(Ter, ShiftReducesScore) {
  // Moving the block "in q2" to the end repairs the hypothesis with one shift.
  auto r = ter_tokens(text::tokenize("in q2 acl profits rose"), text::tokenize("acl profits rose in q2"));
  EXPECT_EQ(r.shifts, 1u);
  EXPECT_EQ(r.edits, 1u);
  EXPECT_DOUBLE_EQ(r.score(), 20.0);
}

TEST(Ter, ShiftCapFallsBackToPlainDistance) {
  auto capped = ter_tokens(text::tokenize("in q2 acl profits rose"), text::tokenize("acl profits rose in q2"), 0);
  EXPECT_TRUE(capped.shift_cap_hit);
  EXPECT_EQ(capped.edits, detail::word_edit_distance(text::tokenize("in q2 acl profits rose"),
                                                     text::tokenize("acl profits rose in q2"), nullptr));
}

TEST(Ter, EmptyReference) { EXPECT_THROW(ter("x", ""), Error); }

TEST(Ter, NeverAbovePlainEditRate) {
  SplitMix64 rng(19);
  for (int i = 0; i < 100; ++i) {
    const auto h = text::tokenize(random_words(rng, 8));
    const auto r = text::tokenize(random_words(rng, 8));
    const auto res = ter_tokens(h, r);
    EXPECT_LE(res.edits, oracle::edit_distance_search(h, r));
  }
}

// --- chrF++ -----------------------------------------------------------------

TEST(ChrF, IdentityAndDisjoint) {
  EXPECT_NEAR(chrf_pp("Revenues rose 4%", "Revenues rose 4%"), 100.0, 1e-12);
  EXPECT_DOUBLE_EQ(chrf_pp("abc", "xyz"), 0.0);
}

TEST(ChrF, SmallPairMatchesOracle) {
  const std::string h = "profits rose", r = "profit rises";
  const double expected =
      oracle::chrf_pp(U"profitsrose", U"profitrises", text::tokenize_cased(h), text::tokenize_cased(r));
  EXPECT_NEAR(chrf_pp(h, r), expected, 1e-9);
  EXPECT_GT(chrf_pp(h, r), 0.0);
  EXPECT_LT(chrf_pp(h, r), 100.0);
}

TEST(ChrF, Errors) {
  EXPECT_THROW(chrf_pp(" ", "a"), Error);
  EXPECT_THROW(chrf_pp("a", ""), Error);
}

// --- properties ---------------------------------------------------------------

TEST(Properties, MaximumOnIdentity) {
  SplitMix64 rng(23);
  for (int i = 0; i < 50; ++i) {
    const std::string x = random_words(rng, 12);
    EXPECT_NEAR(bleu(x, {x}), 100.0, 1e-9);
    EXPECT_NEAR(rouge_l(x, x), 1.0, 1e-12);
    EXPECT_NEAR(chrf_pp(x, x), 100.0, 1e-9);
    EXPECT_DOUBLE_EQ(ter(x, x), 0.0);
  }
}

TEST(Properties, PureAcrossThreads) {
  SplitMix64 rng(29);
  const auto seq = random_sequence(rng, 40);
  const std::string c = "ACL missed the planned target of 30% by 1.2% by the close of Q2.";
  const std::string r = "The company ACL had targeted 30% profits but it finished Q2 at 28.8% profits.";
  const MetricBundle expected = score_bundle(seq, c, r);
  std::vector<std::thread> pool;
  std::vector<MetricBundle> got(8);
  for (int i = 0; i < 8; ++i) pool.emplace_back([&, i] { got[i] = score_bundle(seq, c, r); });
  for (auto& t : pool) t.join();
  for (const auto& g : got) EXPECT_EQ(std::memcmp(&g, &expected, sizeof g), 0);
}

TEST(Properties, AslsPermutationInvariant) {
  SplitMix64 rng(31);
  auto seq = random_sequence(rng, 12);
  const double a = asls(seq);
  std::reverse(seq.begin(), seq.end());
  EXPECT_NEAR(asls(seq), a, 1e-12);
}
