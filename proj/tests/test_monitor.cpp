// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <numeric>

#include "fist/monitor.hpp"
#include "test_helpers.hpp"

using namespace fist;
using namespace fist::monitor;
using test_util::token_from_probs;

namespace {

/// Word-level tokens (leading space after the first) of `text`, each with
/// the given distribution.
std::vector<TokenLogProb> tokens_for(std::string_view text, const std::vector<double>& probs) {
  std::vector<TokenLogProb> out;
  bool first = true;
  for (auto& w : text::split_whitespace(text)) {
    auto t = token_from_probs(probs, (first ? "" : " ") + w);
    out.push_back(t);
    first = false;
  }
  return out;
}

EvalRecord record_of(std::string text, std::vector<TokenLogProb> tokens) {
  EvalRecord r;
  r.record_id = "r";
  r.response = std::move(text);
  r.tokens = std::move(tokens);
  r.sentences = score_sentences(r);
  return r;
}

const std::vector<double> kUniform(5, 0.2);
const std::vector<double> kPeaked = {0.96, 0.01, 0.01, 0.01, 0.01};

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::IoFailure;
}

}  // namespace

TEST(Segment, TwoSentences) {
  const std::string text = "A rose. B fell.";
  const auto spans = segment_sentences(text, tokens_for(text, kPeaked));
  ASSERT_EQ(spans.size(), 2u);
  EXPECT_EQ(spans[0].text, "A rose.");
  EXPECT_EQ(spans[1].text, "B fell.");
  EXPECT_EQ(spans[0].end_token, spans[1].start_token);
}

TEST(Segment, AbbreviationGuard) {
  const std::string text = "Acme Inc. reported strong results.";
  EXPECT_EQ(segment_sentences(text, tokens_for(text, kPeaked)).size(), 1u);
  const std::string none = "no terminal punctuation here";
  EXPECT_EQ(segment_sentences(none, tokens_for(none, kPeaked)).size(), 1u);
}

TEST(Segment, DetachedPunctuationAndWhitespaceTokens) {
  std::vector<TokenLogProb> toks;
  for (const char* t : {"Revenue", " rose", ".", " ", " Margin", " fell", "."}) toks.push_back(token_from_probs(kPeaked, t));
  std::string text;
  for (auto& t : toks) text += t.token;
  const auto spans = segment_sentences(text, toks);
  ASSERT_EQ(spans.size(), 2u);
  EXPECT_EQ(spans[0].end_token, 4u);  // the blank token stays with sentence 0
  EXPECT_EQ(spans[1].text, "Margin fell.");
}

// Generator oracle: documents assembled from known sentences.
TEST(Segment, GeneratedDocumentsMatchKnownBoundaries) {
  const std::vector<std::string> subjects = {"Acme", "Revenue", "The margin", "Globex Inc. revenue", "Bookings in Q2."};
  const std::vector<std::string> verbs = {"rose", "fell sharply", "was flat", "grew 3.5%", "reached $1.2M"};
  SplitMix64 rng(30);
  for (int doc = 0; doc < 30; ++doc) {
    std::vector<std::string> truth;
    const auto n = 1 + rng.below(6);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string s = subjects[rng.below(4)] + " " + verbs[rng.below(verbs.size())] + (rng.below(3) ? "." : "!");
      truth.push_back(s);
    }
    std::string text;
    for (auto& s : truth) text += (text.empty() ? "" : " ") + s;
    const auto toks = tokens_for(text, kPeaked);
    const auto spans = segment_sentences(text, toks);
    ASSERT_EQ(spans.size(), truth.size()) << text;
    std::size_t covered = 0;
    for (std::size_t i = 0; i < spans.size(); ++i) {
      EXPECT_EQ(spans[i].text, truth[i]);
      EXPECT_EQ(spans[i].start_token, covered);
      EXPECT_LT(spans[i].start_token, spans[i].end_token);
      EXPECT_EQ(spans[i].sentence_index, i);
      covered = spans[i].end_token;
    }
    EXPECT_EQ(covered, toks.size());
  }
}

TEST(Score, SingleSentenceEqualsWholeResponse) {
  const std::string text = "Acme revenue rose to $5M in Q2.";
  SplitMix64 rng(4);
  auto toks = tokens_for(text, kPeaked);
  for (auto& t : toks) t = token_from_probs(test_util::random_distribution(rng), t.token);
  const auto rec = record_of(text, toks);
  ASSERT_EQ(rec.sentences.size(), 1u);
  EXPECT_DOUBLE_EQ(rec.sentences[0].asls, asls(toks));
  EXPECT_DOUBLE_EQ(rec.sentences[0].cross_entropy, cross_entropy(toks));
  EXPECT_DOUBLE_EQ(rec.sentences[0].perplexity, perplexity(toks));
  EXPECT_GE(rec.sentences[0].entity_count, 3u);
}

TEST(Score, UniformSentenceHasLowerAsls) {
  const std::string a = "Revenue rose strongly.", b = "Margins fell.";
  auto toks = tokens_for(a, kUniform);
  auto tb = tokens_for(b, kPeaked);
  tb[0].token = " " + tb[0].token;
  tb[0].alternatives[0].token = tb[0].token;
  toks.insert(toks.end(), tb.begin(), tb.end());
  const auto rec = record_of(a + " " + b, toks);
  ASSERT_EQ(rec.sentences.size(), 2u);
  EXPECT_LT(rec.sentences[0].asls, rec.sentences[1].asls);
  EXPECT_NEAR(rec.sentences[0].asls, 5 * std::log(5.0), 1e-9);
}

TEST(Score, MatchesIndependentRecomputation) {
  SplitMix64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::string text;
    std::vector<TokenLogProb> toks;
    std::vector<std::pair<std::size_t, std::size_t>> bounds;
    const auto n = 1 + rng.below(5);
    for (std::uint64_t s = 0; s < n; ++s) {
      const auto b = toks.size();
      const auto words = 1 + rng.below(6);
      for (std::uint64_t w = 0; w < words; ++w) {
        std::string word = (toks.empty() ? "" : " ") + std::string(w == 0 ? "Word" : "word") + std::to_string(w);
        if (w + 1 == words) word += ".";
        toks.push_back(token_from_probs(test_util::random_distribution(rng), word));
        text += word;
      }
      bounds.emplace_back(b, toks.size());
    }
    const auto rec = record_of(text, toks);
    ASSERT_EQ(rec.sentences.size(), bounds.size()) << text;
    double ce_sum = 0;
    for (std::size_t i = 0; i < bounds.size(); ++i) {
      const auto [b, e] = bounds[i];
      double chosen = 0, alts = 0, ce = 0;
      for (std::size_t k = b; k < e; ++k) {
        chosen += toks[k].chosen_logprob;
        for (auto& a : toks[k].alternatives) alts += a.logprob;
        ce -= toks[k].alternatives.front().logprob;
      }
      const double t = static_cast<double>(e - b);
      EXPECT_EQ(rec.sentences[i].span.start_token, b);
      EXPECT_NEAR(rec.sentences[i].asls, -alts / t, 1e-9);
      EXPECT_NEAR(rec.sentences[i].cross_entropy, ce, 1e-9);
      EXPECT_NEAR(rec.sentences[i].perplexity, std::exp(-chosen / t), 1e-9);
      ce_sum += rec.sentences[i].cross_entropy;
    }
    EXPECT_NEAR(ce_sum, cross_entropy(toks), 1e-9);
  }
}

TEST(Score, EmptyResponseRaises) {
  EvalRecord r;
  EXPECT_EQ(code_of([&] { score_sentences(r); }), ErrorCode::EmptyResponse);
}

TEST(Flag, PeakedWithGenerousThresholdsGivesNone) {
  const std::string text = "A rose. B fell. C grew.";
  const auto rec = record_of(text, tokens_for(text, kPeaked));
  for (const auto& s : flag_low_certainty(rec.sentences, 1.0, 10.0)) EXPECT_EQ(s.flag, Flag::none);
}

TEST(Flag, ExactlyTheUniformSentenceAtDefaults) {
  const std::vector<std::string> sents = {"Revenue rose strongly.", "Margins fell slightly.", "Cash grew.",
                                          "Bookings were flat."};
  std::vector<TokenLogProb> toks;
  std::string text;
  const std::vector<std::vector<double>> dists = {
      {0.90, 0.04, 0.03, 0.02, 0.01}, kUniform, {0.95, 0.02, 0.01, 0.01, 0.01}, {0.85, 0.05, 0.04, 0.03, 0.03}};
  for (std::size_t i = 0; i < sents.size(); ++i) {
    const std::string s = (i ? " " : "") + sents[i];
    auto t = tokens_for(s, dists[i]);
    if (i) {
      t[0].token = " " + t[0].token;
      t[0].alternatives[0].token = t[0].token;
    }
    toks.insert(toks.end(), t.begin(), t.end());
    text += s;
  }
  const auto rec = record_of(text, toks);
  ASSERT_EQ(rec.sentences.size(), 4u);
  const auto flagged = flag_low_certainty(rec.sentences, adaptive_thresholds(rec.sentences));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(flagged[i].flag == Flag::low_certainty, i == 1) << i;
}

TEST(Flag, VacuousThresholdsAndValidation) {
  SplitMix64 rng(3);
  std::string text;
  std::vector<TokenLogProb> toks;
  for (int i = 0; i < 20; ++i) {
    const std::string w = (toks.empty() ? "" : " ") + std::string("Word") + (i % 3 == 2 ? "." : "");
    text += w;
    toks.push_back(token_from_probs(test_util::random_distribution(rng), w));
  }
  const auto rec = record_of(text, toks);
  for (const auto& s : flag_low_certainty(rec.sentences, 0.0, std::numeric_limits<double>::infinity()))
    EXPECT_EQ(s.flag, Flag::none);
  EXPECT_EQ(code_of([&] { flag_low_certainty(rec.sentences, -1.0, 1.0); }), ErrorCode::InvalidThreshold);
  EXPECT_EQ(code_of([&] { flag_low_certainty(rec.sentences, 1.0, 0.0); }), ErrorCode::InvalidThreshold);
  EXPECT_EQ(code_of([&] { flag_low_certainty(rec.sentences, std::nan(""), 1.0); }), ErrorCode::InvalidThreshold);
}

TEST(Flag, RaisingFloorNeverUnflags) {
  SplitMix64 rng(12);
  std::string text;
  std::vector<TokenLogProb> toks;
  for (int i = 0; i < 60; ++i) {
    const std::string w = (toks.empty() ? "" : " ") + std::string("Word") + (rng.below(4) == 0 ? "." : "");
    text += w;
    toks.push_back(token_from_probs(test_util::random_distribution(rng), w));
  }
  const auto rec = record_of(text, toks);
  for (int k = 0; k < 100; ++k) {
    const double f1 = rng.uniform(0, 20), f2 = f1 + rng.uniform(0, 5), c = rng.uniform(0.1, 3);
    const auto a = flag_low_certainty(rec.sentences, f1, c);
    const auto b = flag_low_certainty(rec.sentences, f2, c);
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].flag == Flag::low_certainty) {
        EXPECT_EQ(b[i].flag, Flag::low_certainty);
      }
  }
}

TEST(Quantile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.75), 3.25);
  EXPECT_DOUBLE_EQ(quantile({7}, 0.25), 7);
}

TEST(Categorize, WorkedExample) {
  const std::vector<Fact> facts = {{"ACL", "profit", 28.8, "percent"}};
  EvalRecord r1, r2;
  r1.response = "ACL met its target of 30% profit.";
  r2.response = "ACL missed the planned target of 30% by 1.2%.";
  EXPECT_EQ(categorize(r1, facts), Category::hallucination);
  EXPECT_EQ(categorize(r2, facts), Category::correct);
  EvalRecord empty;
  EXPECT_EQ(categorize(empty, facts), Category::incomplete);
  EXPECT_EQ(code_of([&] { categorize(r1, {}); }), ErrorCode::NoReferenceFacts);
}

TEST(Categorize, HumanLabelWins) {
  const std::vector<Fact> facts = {{"ACL", "profit", 28.8, "percent"}};
  EvalRecord r;
  r.response = "ACL met its target of 30% profit.";
  r.category = Category::correct;
  r.label_source = LabelSource::human;
  EXPECT_EQ(categorize(r, facts), Category::correct);
  r.label_source = LabelSource::rule;
  EXPECT_EQ(categorize(r, facts), Category::hallucination);
}

TEST(Categorize, ComparisonCuesAndTolerance) {
  const std::vector<Fact> facts = {{"Acme", "revenue", 1.2345e9, "USD"}, {"Acme", "operating margin", 15.1, "percent"}};
  auto cat = [&](const char* s) {
    EvalRecord r;
    r.response = s;
    return categorize(r, facts);
  };
  EXPECT_EQ(cat("Acme reported revenue of $1,234.5M. Operating margin was 15.1%."), Category::correct);
  EXPECT_EQ(cat("Acme reported revenue of $1,236M."), Category::correct);  // within 0.5%
  EXPECT_EQ(cat("Acme reported revenue of $1,300M."), Category::hallucination);
  EXPECT_EQ(cat("Acme exceeded its 14% margin target by 1.1%."), Category::correct);
  EXPECT_EQ(cat("Acme beat its 14% margin target by 2%."), Category::hallucination);
  EXPECT_EQ(cat("Acme had a good quarter."), Category::incomplete);
  EXPECT_EQ(cat("Globex revenue was $3M."), Category::incomplete);  // unrelated claims only
  EXPECT_EQ(cat("Acme reported revenue of $1,234.5M."), Category::correct);  // half the facts
}

TEST(Categorize, ListSentencePairsEachValueWithItsOwnTerm) {
  const std::vector<Fact> facts = {{"Acme", "revenue", 4.9e9, "USD"},
                                   {"Acme", "net income", 7.5e8, "USD"},
                                   {"Acme", "operating margin", 12.5, "percent"}};
  EvalRecord r;
  r.response = "Acme reported revenue of $4,900M, net income of $750M and operating margin of 12.5%.";
  EXPECT_EQ(categorize(r, facts), Category::correct);
  const auto claims = extract_claims(r.response);
  ASSERT_EQ(claims.size(), 3u);
  EXPECT_EQ(claims[0].predicate, "revenue");
  EXPECT_EQ(claims[1].predicate, "net income");
  EXPECT_EQ(claims[2].predicate, "operating margin");
  r.response = "Acme reported revenue of $4,900M, net income of $790M and operating margin of 12.5%.";
  EXPECT_EQ(categorize(r, facts), Category::hallucination);
}

TEST(Categorize, InvariantToFactOrder) {
  std::vector<Fact> facts = {{"Acme", "revenue", 1.2345e9, "USD"},
                             {"Acme", "operating margin", 15.1, "percent"},
                             {"Globex Corp", "revenue", 800, "USD"},
                             {"Globex Corp", "operating margin", 9.4, "percent"}};
  gateway::MockProvider mock;
  gateway::GenerationRequest req;
  req.prompt = "| Company | Revenue | Operating margin |\n|---|---|---|\n| Acme | $1,234.5M | 15.1% |\n| Globex Corp | USD 800 | 9.4% |\n";
  SplitMix64 rng(2);
  for (int i = 0; i < 30; ++i) {
    req.model_id = i % 2 ? "mock:stage1" : "mock:untrained";
    req.max_tokens = 100 + i;
    const auto rec = make_record("q", "", req.prompt, mock.complete(req));
    const auto expected = categorize(rec, facts);
    for (int k = 0; k < 5; ++k) {
      auto shuffled = facts;
      for (std::size_t j = shuffled.size() - 1; j > 0; --j) std::swap(shuffled[j], shuffled[rng.below(j + 1)]);
      EXPECT_EQ(categorize(rec, shuffled), expected);
    }
  }
}

TEST(Categorize, MockHallucinationsAreCaught) {
  const std::vector<Fact> facts = {{"Acme", "revenue", 1.2345e9, "USD"}, {"Acme", "operating margin", 15.1, "percent"}};
  gateway::MockProvider mock;
  gateway::GenerationRequest req;
  req.prompt = "| Company | Revenue | Operating margin |\n|---|---|---|\n| Acme | $1,234.5M | 15.1% |\n";
  int hall = 0, correct = 0;
  for (int i = 0; i < 40; ++i) {
    req.model_id = "mock:untrained";
    req.max_tokens = 200 + i;
    const auto resp = mock.complete(req);
    const auto rec = make_record("q", "", req.prompt, resp);
    const auto c = categorize(rec, facts);
    const bool exact = resp.text.find("$1,234.5M") != std::string::npos && resp.text.find("15.1%") != std::string::npos;
    EXPECT_EQ(c == Category::correct, exact) << resp.text;
    hall += c == Category::hallucination;
    correct += c == Category::correct;
  }
  EXPECT_GT(hall, 0);
  EXPECT_GT(correct, 0);
}

TEST(Facts, JsonForms) {
  const auto facts = facts_from_json(nlohmann::json::parse(R"([
    {"subject":"ACL","predicate":"profit","value":28.8,"unit":"%"},
    {"subject":"Acme","predicate":"revenue","value":"$1,234.5M"},
    {"subject":"Acme","predicate":"bookings","value":2.1,"unit":"USD bn"}
  ])"));
  ASSERT_EQ(facts.size(), 3u);
  EXPECT_EQ(facts[0].unit, "percent");
  EXPECT_DOUBLE_EQ(facts[1].value, 1.2345e9);
  EXPECT_EQ(facts[1].unit, "USD");
  EXPECT_DOUBLE_EQ(facts[2].value, 2.1e9);
  EXPECT_EQ(facts[2].unit, "USD");
}

TEST(Records, JsonRoundTrip) {
  gateway::MockProvider mock;
  gateway::GenerationRequest req;
  req.prompt = "| Company | Revenue |\n|---|---|\n| Acme | $5M |\n";
  req.model_id = "mock:stage1";
  auto rec = make_record("id-1", "What was revenue?", req.prompt, mock.complete(req), "Acme revenue was $5M.");
  rec.sentences = flag_low_certainty(rec.sentences, adaptive_thresholds(rec.sentences));
  rec.category = Category::correct;
  rec.label_source = LabelSource::rule;
  const auto back = record_from_json(nlohmann::json::parse(to_json(rec).dump()));
  EXPECT_EQ(to_json(back), to_json(rec));
  EXPECT_GT(rec.metrics.bleu, 0.0);
}

TEST(Scatter, RowsCsvRoundTripAndSvg) {
  test_util::TempDir dir;
  const std::string text = "A rose. B fell. C grew.";
  SplitMix64 rng(1);
  auto toks = tokens_for(text, kPeaked);
  for (auto& t : toks) t = token_from_probs(test_util::random_distribution(rng), t.token);
  auto rec = record_of(text, toks);
  rec.record_id = "rec,1";
  const std::vector<EvalRecord> recs = {rec};
  EXPECT_EQ(export_scatter(recs, ScatterMetric::ce, dir / "ce.csv", "base", dir / "ce.svg"), 3u);
  const auto rows = parse_scatter_csv(io::read_file(dir / "ce.csv"));
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(rows[i].record_id, "rec,1");
    EXPECT_EQ(rows[i].run_label, "base");
    EXPECT_EQ(rows[i].sentence_index, i);
    EXPECT_EQ(text::fixed(rows[i].value, 4), text::fixed(rec.sentences[i].cross_entropy, 4));
  }
  const auto svg = io::read_file(dir / "ce.svg");
  EXPECT_EQ(std::count(svg.begin(), svg.end(), '\n') > 3, true);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_EQ(code_of([&] { export_scatter(std::vector<EvalRecord>{}, ScatterMetric::ce, dir / "x.csv"); }),
            ErrorCode::InvalidRequest);
  io::write_atomic(dir / "plain", "x");
  EXPECT_EQ(code_of([&] { export_scatter(recs, ScatterMetric::ce, dir / "plain" / "x.csv"); }), ErrorCode::IoFailure);
}

TEST(Scatter, MockRunsHaveDecreasingMeanCe) {
  test_util::TempDir dir;
  gateway::MockProvider mock;
  std::vector<std::vector<EvalRecord>> runs(3);
  const gateway::Persona personas[] = {gateway::Persona::untrained, gateway::Persona::stage1, gateway::Persona::stage2};
  for (int p = 0; p < 3; ++p)
    for (int i = 0; i < 10; ++i) {
      gateway::GenerationRequest req;
      req.prompt = "| Company | Revenue |\n|---|---|\n| Firm" + std::to_string(i) + " | $" + std::to_string(10 + i) + "M |\n";
      req.model_id = gateway::mock_model_id(personas[p]);
      runs[p].push_back(make_record("q" + std::to_string(i), "", req.prompt, mock.complete(req)));
    }
  const std::vector<ScatterRun> sr = {{"untrained", runs[0]}, {"stage1", runs[1]}, {"stage2", runs[2]}};
  export_scatter(sr, ScatterMetric::ce, dir / "ce.csv");
  const auto means = run_means(parse_scatter_csv(io::read_file(dir / "ce.csv")));
  ASSERT_EQ(means.size(), 3u);
  EXPECT_GT(means[0].second, means[1].second);
  EXPECT_GT(means[1].second, means[2].second);
}
