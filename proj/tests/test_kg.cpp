// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>

#include "fist/kg.hpp"
#include "fist/random.hpp"
#include "fist/sentences.hpp"
#include "test_helpers.hpp"

using namespace fist;
using namespace fist::kg;

namespace {

const std::string kAcl = "The company ACL had targeted 30% profits but it finished Q2 at 28.8% profits.";

std::vector<std::pair<std::string, EntityKind>> inventory(const std::vector<Entity>& es) {
  std::vector<std::pair<std::string, EntityKind>> out;
  for (const auto& e : es) out.emplace_back(e.surface, e.kind);
  return out;
}

struct Planted {
  std::string sentence;
  std::vector<std::pair<std::string, EntityKind>> entities;
  std::size_t relations = 0;
};

/// Sentences assembled from slots whose entity kinds are known up front.
Planted plant(SplitMix64& rng) {
  static const char* orgs[] = {"Acme", "Helix Partners", "NorthBridge Capital", "ACL", "Orion"};
  static const char* metrics[] = {"revenues", "profits", "bookings", "operating margin", "earnings"};
  static const char* quarters[] = {"Q1", "Q2", "Q3", "Q4"};
  static const char* cues[] = {"rose to", "fell to", "reported", "grew to", "declined to"};
  Planted p;
  const std::string org = orgs[rng.below(5)];
  const std::string metric = metrics[rng.below(5)];
  const std::string q = quarters[rng.below(4)];
  const std::string year = std::to_string(2015 + rng.below(10));
  const std::string cue = cues[rng.below(5)];
  const bool money = rng.below(2) == 0;
  const std::string value = money ? "$" + std::to_string(1 + rng.below(900)) + "." + std::to_string(rng.below(10)) + " million"
                                  : std::to_string(1 + rng.below(60)) + "." + std::to_string(rng.below(10)) + "%";
  switch (rng.below(3)) {
    case 0:
      p.sentence = "In " + q + " " + year + ", " + org + " " + metric + " " + cue + " " + value + ".";
      p.entities = {{q, EntityKind::quarter}, {year, EntityKind::date}, {org, EntityKind::organization},
                    {metric, EntityKind::metric_term}, {value, money ? EntityKind::money : EntityKind::percent}};
      break;
    case 1:
      p.sentence = org + " " + metric + " " + cue + " " + value + " in " + q + ".";
      p.entities = {{org, EntityKind::organization}, {metric, EntityKind::metric_term},
                    {value, money ? EntityKind::money : EntityKind::percent}, {q, EntityKind::quarter}};
      break;
    default:
      p.sentence = "During March 2024 " + org + " " + cue + " " + value + " of " + metric + " in Europe.";
      p.entities = {{"March 2024", EntityKind::date}, {org, EntityKind::organization},
                    {value, money ? EntityKind::money : EntityKind::percent}, {metric, EntityKind::metric_term},
                    {"Europe", EntityKind::location}};
      break;
  }
  p.relations = 1;
  return p;
}

}  // namespace

TEST(Sentences, Basic) {
  EXPECT_EQ(sentence_texts("A rose. B fell.").size(), 2u);
  EXPECT_EQ(sentence_texts("Acme Inc. reported revenues of $5 million.").size(), 1u);
  EXPECT_EQ(sentence_texts("no terminal punctuation here").size(), 1u);
  EXPECT_TRUE(sentence_texts("   ").empty());
  const auto parts = sentence_texts("Profits rose 28.8% in June. Revenues fell! Did margins hold? Yes.");
  ASSERT_EQ(parts.size(), 4u);
  EXPECT_EQ(parts[0], "Profits rose 28.8% in June.");
  EXPECT_EQ(parts[3], "Yes.");
}

TEST(Sentences, QuarterAbbreviationGuard) {
  EXPECT_EQ(sentence_texts("Profits peaked in Q2. Revenues fell.").size(), 1u);
}

TEST(Sentences, LowercaseContinuationDoesNotSplit) {
  EXPECT_EQ(sentence_texts("Revenue was approx. flat. Margins rose.").size(), 2u);
  EXPECT_EQ(sentence_texts("growth was 3.5 vs. 2.1 last year.").size(), 1u);
}

TEST(Entities, EmptySentence) { EXPECT_TRUE(extract_entities("").empty()); }

TEST(Entities, AclContextSentence) {
  const auto es = extract_entities(kAcl);
  const std::vector<std::pair<std::string, EntityKind>> expected = {
      {"ACL", EntityKind::organization}, {"30%", EntityKind::percent},     {"profits", EntityKind::metric_term},
      {"Q2", EntityKind::quarter},       {"28.8%", EntityKind::percent},   {"profits", EntityKind::metric_term}};
  EXPECT_EQ(inventory(es), expected);
  for (const auto& e : es) {
    EXPECT_LT(e.char_span.begin, e.char_span.end);
    EXPECT_LE(e.char_span.end, kAcl.size());
    EXPECT_EQ(kAcl.substr(e.char_span.begin, e.char_span.end - e.char_span.begin), e.surface);
  }
}

TEST(Entities, Patterns) {
  const auto es = extract_entities("Orion Holdings paid USD 12 million in dividends on March 31, 2024 in North America.");
  const std::vector<std::pair<std::string, EntityKind>> expected = {{"Orion Holdings", EntityKind::organization},
                                                                    {"USD 12 million", EntityKind::money},
                                                                    {"dividends", EntityKind::metric_term},
                                                                    {"March 31, 2024", EntityKind::date},
                                                                    {"North America", EntityKind::location}};
  EXPECT_EQ(inventory(es), expected);
  EXPECT_EQ(inventory(extract_entities("Margins were 4 percent and €3.5 bn.")),
            (std::vector<std::pair<std::string, EntityKind>>{{"Margins", EntityKind::metric_term},
                                                             {"4 percent", EntityKind::percent},
                                                             {"€3.5 bn", EntityKind::money}}));
}

TEST(Entities, PlantedInventory) {
  SplitMix64 rng(101);
  for (int i = 0; i < 25; ++i) {
    const Planted p = plant(rng);
    EXPECT_EQ(inventory(extract_entities(p.sentence)), p.entities) << p.sentence;
  }
}

TEST(Entities, DeterministicAndIdempotent) {
  EXPECT_EQ(extract_entities(kAcl), extract_entities(kAcl));
  const auto es = extract_entities(kAcl);
  EXPECT_EQ(extract_relations(kAcl, es), extract_relations(kAcl, es));
}

TEST(Relations, NeedTwoEntities) {
  EXPECT_TRUE(extract_relations("", {}).empty());
  const auto one = extract_entities("Revenues rose sharply.");
  ASSERT_EQ(one.size(), 1u);
  EXPECT_TRUE(extract_relations("Revenues rose sharply.", one).empty());
}

TEST(Relations, AclGolden) {
  const auto es = extract_entities(kAcl);
  const auto rs = extract_relations(kAcl, es);
  ASSERT_EQ(rs.size(), 2u);
  EXPECT_EQ(es[rs[0].subject].surface, "ACL");
  EXPECT_EQ(rs[0].label, "targeted");
  EXPECT_EQ(es[rs[0].object].surface, "30%");
  EXPECT_EQ(es[rs[1].subject].surface, "ACL");
  EXPECT_EQ(rs[1].label, "finished at");
  EXPECT_EQ(es[rs[1].object].surface, "Q2");
}

TEST(Relations, TemplateYieldsExactlyOne) {
  SplitMix64 rng(103);
  for (int i = 0; i < 25; ++i) {
    const Planted p = plant(rng);
    const auto es = extract_entities(p.sentence);
    const auto rs = extract_relations(p.sentence, es);
    EXPECT_EQ(rs.size(), p.relations) << p.sentence;
    for (const auto& r : rs) {
      EXPECT_NE(r.subject, r.object);
      EXPECT_LT(r.subject, es.size());
      EXPECT_LT(r.object, es.size());
    }
  }
}

TEST(Relations, ConfigurableCues) {
  test_util::TempDir dir;
  {
    std::ofstream(dir / "relations.txt") << "# extra cues\nbeat = exceeded\n\n";
  }
  const Lexicon lex = Lexicon::from_config_dir(dir.path());
  const std::string s = "Orion beat 12% margins.";
  EXPECT_TRUE(extract_relations(s, extract_entities(s)).empty());
  const auto rs = extract_relations(s, extract_entities(s, 0, lex), lex);
  ASSERT_EQ(rs.size(), 1u);
  EXPECT_EQ(rs[0].label, "exceeded");
}

TEST(Kdps, Arithmetic) {
  std::vector<std::pair<std::size_t, std::size_t>> none{{0, 0}};
  EXPECT_DOUBLE_EQ(kdps(none), 0.0);
  std::vector<std::pair<std::size_t, std::size_t>> two{{4, 2}, {2, 0}};
  EXPECT_DOUBLE_EQ(kdps(two), 4.0);
  std::vector<std::pair<std::size_t, std::size_t>> empty;
  EXPECT_THROW(kdps(empty), Error);
}

TEST(Kdps, ConcatenationIsWeightedMean) {
  SplitMix64 rng(107);
  std::vector<SentenceKnowledge> a, b;
  for (int i = 0; i < 7; ++i) a.push_back(analyze_sentence(plant(rng).sentence, i));
  for (int i = 0; i < 3; ++i) b.push_back(analyze_sentence(plant(rng).sentence, i));
  std::vector<SentenceKnowledge> ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  EXPECT_NEAR(kdps(ab), (7 * kdps(a) + 3 * kdps(b)) / 10.0, 1e-12);
}

TEST(ScaledKdps, MaxScaling) {
  const std::vector<double> v{6.0, 8.0};
  EXPECT_EQ(scaled_kdps(v), (std::vector<double>{0.75, 1.0}));
  const std::vector<double> single{5.0};
  EXPECT_EQ(scaled_kdps(single), std::vector<double>{1.0});
  const std::vector<double> zeros{0.0, 0.0};
  try {
    scaled_kdps(zeros);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AllZero);
  }
}

TEST(ScaledKdps, PreservesOrderAndPeaksAtOne) {
  SplitMix64 rng(109);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> v(1 + rng.below(10));
    for (auto& x : v) x = rng.uniform(0.01, 10.0);
    const auto s = scaled_kdps(v);
    EXPECT_EQ(*std::max_element(s.begin(), s.end()), 1.0);
    for (std::size_t i = 0; i < v.size(); ++i)
      for (std::size_t j = 0; j < v.size(); ++j) EXPECT_EQ(v[i] < v[j], s[i] < s[j]);
    EXPECT_EQ(std::max_element(v.begin(), v.end()) - v.begin(), std::max_element(s.begin(), s.end()) - s.begin());
  }
}

TEST(Graph, EmptyDocument) { EXPECT_TRUE(build_kg(std::vector<std::string>{}).empty()); }

TEST(Graph, AclGraph) {
  const std::vector<std::string> doc{kAcl};
  const auto g = build_kg(doc);
  EXPECT_GE(g.nodes().size(), 4u);
  EXPECT_EQ(g.nodes().size(), 5u);  // the two "profits" mentions share a node
  EXPECT_GE(g.edges().size(), 2u);
  const Node* acl = g.find("acl", EntityKind::organization);
  ASSERT_NE(acl, nullptr);
  EXPECT_EQ(g.edges()[0].src, acl->id);
  EXPECT_EQ(g.edges()[1].label, "finished at");
}

TEST(Graph, ConcatenationUnionsNodes) {
  SplitMix64 rng(113);
  std::vector<std::string> d1, d2;
  for (int i = 0; i < 6; ++i) d1.push_back(plant(rng).sentence);
  for (int i = 0; i < 6; ++i) d2.push_back(plant(rng).sentence);
  std::vector<std::string> both = d1;
  both.insert(both.end(), d2.begin(), d2.end());
  auto keys = [](const KnowledgeGraph& g) {
    std::set<std::pair<std::string, EntityKind>> out;
    for (const auto& n : g.nodes()) out.emplace(text::lower(n.surface), n.kind);
    return out;
  };
  auto expected = keys(build_kg(d1));
  for (const auto& k : keys(build_kg(d2))) expected.insert(k);
  EXPECT_EQ(keys(build_kg(both)), expected);
  EXPECT_EQ(build_kg(both).nodes().size(), expected.size());
}

TEST(Graph, EdgeEndpointsExist) {
  SplitMix64 rng(127);
  std::vector<std::string> doc;
  for (int i = 0; i < 20; ++i) doc.push_back(plant(rng).sentence);
  const auto g = build_kg(doc);
  std::set<std::string> ids;
  for (const auto& n : g.nodes()) ids.insert(n.id);
  for (const auto& e : g.edges()) {
    EXPECT_TRUE(ids.count(e.src));
    EXPECT_TRUE(ids.count(e.dst));
  }
}

TEST(Graph, JsonFieldNames) {
  const std::vector<std::string> doc{kAcl};
  const auto j = build_kg(doc).to_json();
  EXPECT_EQ(j["nodes"][0]["id"], "n0");
  EXPECT_EQ(j["nodes"][0]["surface"], "ACL");
  EXPECT_EQ(j["nodes"][0]["kind"], "organization");
  EXPECT_EQ(j["edges"][0]["src"], "n0");
  EXPECT_EQ(j["edges"][0]["dst"], "n1");
  EXPECT_EQ(j["edges"][0]["label"], "targeted");
  EXPECT_EQ(j["edges"][0]["sentence"], 0);
  EXPECT_EQ(KnowledgeGraph::from_json(j), build_kg(doc));
}

TEST(Graph, RejectsDanglingEdge) {
  auto j = nlohmann::json::parse(R"({"nodes":[{"id":"n0","surface":"ACL","kind":"organization"}],
      "edges":[{"src":"n0","dst":"n9","label":"rose","sentence":0}]})");
  EXPECT_THROW(KnowledgeGraph::from_json(j), Error);
}

TEST(Entities, GluedScaleSuffix) {
  const auto es = kg::extract_entities("Acme reported revenue of $1,234.5M and EUR 3bn.");
  std::vector<std::string> money;
  for (const auto& e : es)
    if (e.kind == kg::EntityKind::money) money.push_back(e.surface);
  EXPECT_EQ(money, (std::vector<std::string>{"$1,234.5M", "EUR 3bn"}));
}
