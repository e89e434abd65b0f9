#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * Rule-based financial entity/relation extraction and knowledge graphs.
 *
 * Entities come from deterministic patterns (currency amounts, percentages,
 * quarters, dates, lexicon terms, gazetteer locations, capitalised runs).
 * Relations link the nearest entity on each side of a verb cue from the
 * relation lexicon. Knowledge density per sentence (KDPS) averages
 * entities + relations over sentences.
 */

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fist/error.hpp"
#include "fist/io.hpp"
#include "fist/sentences.hpp"
#include "fist/text.hpp"

namespace fist::kg {

enum class EntityKind { organization, money, percent, date, quarter, metric_term, location, other };

constexpr std::string_view to_string(EntityKind k) {
  switch (k) {
    case EntityKind::organization: return "organization";
    case EntityKind::money: return "money";
    case EntityKind::percent: return "percent";
    case EntityKind::date: return "date";
    case EntityKind::quarter: return "quarter";
    case EntityKind::metric_term: return "metric-term";
    case EntityKind::location: return "location";
    case EntityKind::other: return "other";
  }
  return "other";
}

inline EntityKind kind_from_string(std::string_view s) {
  for (auto k : {EntityKind::organization, EntityKind::money, EntityKind::percent, EntityKind::date,
                 EntityKind::quarter, EntityKind::metric_term, EntityKind::location, EntityKind::other})
    if (to_string(k) == s) return k;
  fail(ErrorCode::SerializationFailure, "unknown entity kind '" + std::string(s) + "'");
}

struct Entity {
  std::string surface;
  EntityKind kind = EntityKind::other;
  std::size_t sentence_index = 0;
  TextRange char_span;     // byte offsets within the sentence
  std::size_t first_token = 0;  // token range within the sentence
  std::size_t last_token = 0;   // exclusive

  friend bool operator==(const Entity&, const Entity&) = default;
};

/// Subject/object index into the entity list of the same sentence.
struct Relation {
  std::size_t subject = 0;
  std::size_t object = 0;
  std::string label;
  std::size_t sentence_index = 0;

  friend bool operator==(const Relation&, const Relation&) = default;
};

struct Cue {
  std::vector<std::string> words;  // lowercase
  std::string label;
};

/// Word lists driving extraction. `Lexicon::defaults()` is built once and
/// shared read-only; custom instances can extend it from config files.
struct Lexicon {
  std::vector<Cue> cues;
  std::vector<std::vector<std::string>> metric_terms;  // lowercase word sequences
  std::vector<std::vector<std::string>> locations;     // lowercase word sequences
  std::set<std::string> org_stopwords;                 // lowercase
  std::set<std::string> pronouns;                      // lowercase

  static const Lexicon& defaults();

  /// Parses "one entry per line" files: '#' starts a comment; an optional
  /// "= label" suffix sets the relation label (cue files only).
  static std::vector<std::pair<std::string, std::string>> parse_entries(std::string_view contents) {
    std::vector<std::pair<std::string, std::string>> out;
    for (auto line : text::lines(contents)) {
      if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = text::trim(line);
      if (line.empty()) continue;
      std::string_view key = line, label = line;
      if (auto eq = line.find('='); eq != std::string_view::npos) {
        key = text::trim(line.substr(0, eq));
        label = text::trim(line.substr(eq + 1));
      }
      if (!key.empty()) out.emplace_back(std::string(key), std::string(label.empty() ? key : label));
    }
    return out;
  }

  void add_cue(std::string_view surface, std::string_view label) {
    Cue c;
    c.words = text::split_whitespace(text::lower(surface));
    c.label = std::string(label);
    if (c.words.empty()) return;
    cues.erase(std::remove_if(cues.begin(), cues.end(), [&](const Cue& x) { return x.words == c.words; }), cues.end());
    cues.push_back(std::move(c));
  }

  void add_metric_term(std::string_view surface) {
    auto w = text::split_whitespace(text::lower(surface));
    if (!w.empty() && std::find(metric_terms.begin(), metric_terms.end(), w) == metric_terms.end())
      metric_terms.push_back(std::move(w));
  }

  void load_cues(const std::filesystem::path& path) {
    for (const auto& [k, v] : parse_entries(io::read_file(path))) add_cue(k, v);
  }

  void load_metric_terms(const std::filesystem::path& path) {
    for (const auto& [k, v] : parse_entries(io::read_file(path))) add_metric_term(k);
  }

  /// Defaults plus `relations.txt` / `metric_terms.txt` from a config
  /// directory when present.
  static Lexicon from_config_dir(const std::filesystem::path& dir) {
    Lexicon lex = defaults();
    if (std::filesystem::exists(dir / "relations.txt")) lex.load_cues(dir / "relations.txt");
    if (std::filesystem::exists(dir / "metric_terms.txt")) lex.load_metric_terms(dir / "metric_terms.txt");
    return lex;
  }
};

inline constexpr std::string_view kDefaultRelationCues = R"(# verb cues linking two entities
targeted
finished = finished at
rose
risen
fell
fallen
resulted in
increased
decreased
reported
missed
met
grew
declined
)";

inline constexpr std::string_view kDefaultMetricTerms = R"(profit
profits
revenue
revenues
bookings
new bookings
earnings
earnings per share
eps
ebitda
operating margin
margin
margins
net income
income
sales
cash flow
free cash flow
dividend
dividends
operating income
gross margin
share repurchases
)";

inline const Lexicon& Lexicon::defaults() {
  static const Lexicon lex = [] {
    Lexicon l;
    for (const auto& [k, v] : parse_entries(kDefaultRelationCues)) l.add_cue(k, v);
    for (const auto& [k, v] : parse_entries(kDefaultMetricTerms)) l.add_metric_term(k);
    for (std::string_view loc :
         {"north america", "south america", "latin america", "europe", "asia", "asia pacific", "africa",
          "middle east", "united states", "united kingdom", "canada", "japan", "china", "india", "germany",
          "france", "growth markets", "emea", "apac", "istanbul", "constantinople"})
      l.locations.push_back(text::split_whitespace(loc));
    for (std::string_view w :
         {"the", "a", "an", "in", "on", "at", "for", "of", "and", "but", "or", "our", "we", "it", "its",
          "this", "that", "these", "those", "yes", "no", "as", "by", "with", "from", "to", "during", "while",
          "overall", "however", "additionally", "management", "company", "total", "net", "growth", "performance",
          "group", "there", "they", "their", "he", "she", "his", "her", "after", "before", "since", "despite",
          "compared", "meanwhile", "also", "both", "each", "all", "full", "year", "quarter", "fiscal", "outlook",
          "introduction", "highlights", "review", "returning", "business", "service", "industry", "financial",
          "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"})
      l.org_stopwords.insert(std::string(w));
    for (std::string_view p : {"it", "its", "they", "their", "it's"}) l.pronouns.insert(std::string(p));
    return l;
  }();
  return lex;
}

namespace detail {

inline const std::vector<std::string>& months() {
  static const std::vector<std::string> m = {"january", "february", "march",     "april",   "may",      "june",
                                             "july",    "august",   "september", "october", "november", "december"};
  return m;
}

inline bool is_month(std::string_view w) {
  const std::string lw = text::lower(w);
  for (const auto& m : months())
    if (lw == m || (lw.size() >= 3 && lw.size() <= 4 && m.compare(0, lw.size(), lw) == 0 && lw != "ma")) return true;
  return false;
}

inline bool is_number(std::string_view w) {
  if (w.empty() || !text::is_digit(w.front()) || !text::is_digit(w.back())) return false;
  for (char c : w)
    if (!text::is_digit(c) && c != '.' && c != ',') return false;
  return true;
}

inline bool is_year(std::string_view w) {
  if (w.size() != 4) return false;
  for (char c : w)
    if (!text::is_digit(c)) return false;
  const int y = std::stoi(std::string(w));
  return y >= 1900 && y <= 2100;
}

inline bool is_scale(std::string_view w) {
  const std::string lw = text::lower(w);
  return lw == "million" || lw == "billion" || lw == "thousand" || lw == "trillion" || lw == "m" || lw == "bn" ||
         lw == "mn" || lw == "b" || lw == "k";
}

/// "1,234.5M", "3bn": a number with the scale glued on.
inline bool is_scaled_number(std::string_view w) {
  for (std::string_view sc : {"bn", "mn", "M", "B", "K", "m", "k"})
    if (w.size() > sc.size() && w.substr(w.size() - sc.size()) == sc && is_number(w.substr(0, w.size() - sc.size())))
      return true;
  return false;
}

inline bool is_currency_code(std::string_view w) {
  return w == "USD" || w == "EUR" || w == "GBP" || w == "JPY" || w == "INR" || w == "CHF" || w == "CAD" ||
         w == "AUD";
}

inline bool is_currency_word(std::string_view w) {
  const std::string lw = text::lower(w);
  return lw == "dollars" || lw == "euros" || lw == "pounds" || lw == "yen";
}

/// Multi-byte currency glyph prefix length ("€5" -> 3), 0 when absent.
inline std::size_t utf8_currency_prefix(std::string_view w) {
  for (std::string_view sym : {"\xE2\x82\xAC", "\xC2\xA3", "\xC2\xA5", "\xE2\x82\xB9"})
    if (w.substr(0, sym.size()) == sym) return sym.size();
  return 0;
}

inline bool is_quarter(std::string_view w) {
  return w.size() == 2 && (w[0] == 'Q' || w[0] == 'q') && w[1] >= '1' && w[1] <= '4';
}

inline bool is_capitalized(std::string_view w) {
  if (w.empty() || !text::is_upper(w.front())) return false;
  for (char c : w)
    if (!text::is_alnum(c) && c != '&' && static_cast<unsigned char>(c) < 0x80) return false;
  return true;
}

inline bool words_match(const std::vector<text::Span>& toks, std::size_t i, const std::vector<std::string>& words) {
  if (i + words.size() > toks.size()) return false;
  for (std::size_t k = 0; k < words.size(); ++k)
    if (text::lower(toks[i + k].text) != words[k]) return false;
  return true;
}

/// Longest lexicon entry starting at token i; 0 when none matches.
inline std::size_t longest_match(const std::vector<text::Span>& toks, std::size_t i,
                                 const std::vector<std::vector<std::string>>& entries) {
  std::size_t best = 0;
  for (const auto& e : entries)
    if (e.size() > best && words_match(toks, i, e)) best = e.size();
  return best;
}

}  // namespace detail

/// Entities of one sentence, in token order. Deterministic; empty input
/// yields an empty list.
inline std::vector<Entity> extract_entities(std::string_view sentence, std::size_t sentence_index = 0,
                                            const Lexicon& lex = Lexicon::defaults()) {
  using namespace detail;
  const auto toks = text::tokenize_spans(sentence);
  const std::size_t n = toks.size();
  std::vector<Entity> out;
  auto emit = [&](std::size_t a, std::size_t b, EntityKind kind) {
    Entity e;
    e.char_span = {toks[a].begin, toks[b - 1].end};
    e.surface = std::string(sentence.substr(e.char_span.begin, e.char_span.end - e.char_span.begin));
    e.kind = kind;
    e.sentence_index = sentence_index;
    e.first_token = a;
    e.last_token = b;
    out.push_back(std::move(e));
  };
  auto tok = [&](std::size_t k) -> std::string_view { return k < n ? std::string_view(toks[k].text) : ""; };
  auto lw = [&](std::size_t k) { return text::lower(tok(k)); };

  std::size_t i = 0;
  while (i < n) {
    const std::string_view w = tok(i);
    // Money: "$ 5.1 million", "USD 30", "€5", "30 dollars", "30 EUR".
    if ((w == "$" || is_currency_code(w)) && (is_number(tok(i + 1)) || is_scaled_number(tok(i + 1)))) {
      std::size_t e = i + 2;
      if (is_number(tok(i + 1)) && is_scale(tok(e))) ++e;
      emit(i, e, EntityKind::money);
      i = e;
      continue;
    }
    if (const std::size_t p = utf8_currency_prefix(w);
        p > 0 && (is_number(w.substr(p)) || is_scaled_number(w.substr(p)))) {
      std::size_t e = i + 1;
      if (is_number(w.substr(p)) && is_scale(tok(e))) ++e;
      emit(i, e, EntityKind::money);
      i = e;
      continue;
    }
    if (is_number(w)) {
      // Percent: "28.8 %", "30 percent", "3 per cent".
      if (tok(i + 1) == "%") {
        emit(i, i + 2, EntityKind::percent);
        i += 2;
        continue;
      }
      if (lw(i + 1) == "percent") {
        emit(i, i + 2, EntityKind::percent);
        i += 2;
        continue;
      }
      if (lw(i + 1) == "per" && lw(i + 2) == "cent") {
        emit(i, i + 3, EntityKind::percent);
        i += 3;
        continue;
      }
      std::size_t e = i + 1;
      if (is_scale(tok(e))) ++e;
      if (is_currency_word(tok(e)) || is_currency_code(tok(e))) {
        emit(i, e + 1, EntityKind::money);
        i = e + 1;
        continue;
      }
      if (is_year(w)) {
        emit(i, i + 1, EntityKind::date);
        ++i;
        continue;
      }
      ++i;
      continue;
    }
    // Quarter: Q1-Q4.
    if (is_quarter(w)) {
      emit(i, i + 1, EntityKind::quarter);
      ++i;
      continue;
    }
    // Date: "March 2024", "March 31, 2024", "Mar. 31 2024".
    if (is_month(w)) {
      std::size_t e = i + 1;
      if (tok(e) == ".") ++e;
      bool dated = false;
      if (is_number(tok(e)) && tok(e).size() <= 2) {
        ++e;
        dated = true;
        if (tok(e) == ",") ++e;
      }
      if (is_year(tok(e))) {
        ++e;
        dated = true;
      } else if (dated && tok(e - 1) == ",") {
        --e;
      }
      if (dated) {
        emit(i, e, EntityKind::date);
        i = e;
        continue;
      }
    }
    if (const std::size_t m = longest_match(toks, i, lex.metric_terms); m > 0) {
      emit(i, i + m, EntityKind::metric_term);
      i += m;
      continue;
    }
    if (const std::size_t m = longest_match(toks, i, lex.locations); m > 0 && is_capitalized(w)) {
      emit(i, i + m, EntityKind::location);
      i += m;
      continue;
    }
    if (is_capitalized(w)) {
      std::size_t e = i;
      while (e < n) {
        if (is_capitalized(tok(e)) && !is_month(tok(e)) && !is_quarter(tok(e)) &&
            longest_match(toks, e, lex.metric_terms) == 0 && (e == i || longest_match(toks, e, lex.locations) == 0)) {
          ++e;
        } else if ((lw(e) == "of" || tok(e) == "&") && e > i && is_capitalized(tok(e + 1))) {
          e += 1;
        } else {
          break;
        }
      }
      std::size_t b = i;
      while (b < e && lex.org_stopwords.count(lw(b))) ++b;
      while (e > b && (lw(e - 1) == "of" || tok(e - 1) == "&")) --e;
      if (b < e) emit(b, e, EntityKind::organization);
      i = std::max(e, i + 1);
      continue;
    }
    ++i;
  }
  return out;
}

/// Relations of one sentence. For each cue occurrence the subject is the
/// nearest entity to its left, except that a pronoun sitting between that
/// entity and the cue resolves to the latest organization before the
/// pronoun. The object is the nearest entity to the right.
inline std::vector<Relation> extract_relations(std::string_view sentence, std::span<const Entity> entities,
                                               const Lexicon& lex = Lexicon::defaults()) {
  std::vector<Relation> out;
  if (entities.size() < 2) return out;
  const auto toks = text::tokenize_spans(sentence);
  const std::size_t sentence_index = entities.front().sentence_index;

  auto covered = [&](std::size_t t) {
    for (const auto& e : entities)
      if (t >= e.first_token && t < e.last_token) return true;
    return false;
  };

  for (std::size_t c = 0; c < toks.size(); ++c) {
    const Cue* cue = nullptr;
    for (const auto& candidate : lex.cues)
      if (detail::words_match(toks, c, candidate.words) && (!cue || candidate.words.size() > cue->words.size()))
        cue = &candidate;
    if (!cue || covered(c)) continue;
    const std::size_t cue_end = c + cue->words.size();

    std::optional<std::size_t> left, right;
    for (std::size_t k = 0; k < entities.size(); ++k) {
      if (entities[k].last_token <= c && (!left || entities[k].last_token > entities[*left].last_token)) left = k;
      if (entities[k].first_token >= cue_end && (!right || entities[k].first_token < entities[*right].first_token))
        right = k;
    }
    if (!left || !right) continue;

    std::size_t subject = *left;
    for (std::size_t p = entities[*left].last_token; p < c; ++p) {
      if (!lex.pronouns.count(text::lower(toks[p].text))) continue;
      std::optional<std::size_t> org;
      for (std::size_t k = 0; k < entities.size(); ++k)
        if (entities[k].kind == EntityKind::organization && entities[k].last_token <= p &&
            (!org || entities[k].last_token > entities[*org].last_token))
          org = k;
      if (org) subject = *org;
      break;
    }
    if (subject == *right) continue;
    out.push_back({subject, *right, cue->label, sentence_index});
    c = cue_end - 1;
  }
  return out;
}

/// Entities and relations of one sentence.
struct SentenceKnowledge {
  std::string text;
  std::vector<Entity> entities;
  std::vector<Relation> relations;
};

inline SentenceKnowledge analyze_sentence(std::string_view sentence, std::size_t index,
                                          const Lexicon& lex = Lexicon::defaults()) {
  SentenceKnowledge k;
  k.text = std::string(sentence);
  k.entities = extract_entities(sentence, index, lex);
  k.relations = extract_relations(sentence, k.entities, lex);
  return k;
}

/// Mean over sentences of (entity count + relation count).
inline double kdps(std::span<const std::pair<std::size_t, std::size_t>> counts) {
  if (counts.empty()) fail(ErrorCode::EmptyDocument, "kdps needs at least one sentence");
  double sum = 0.0;
  for (const auto& [e, r] : counts) sum += static_cast<double>(e + r);
  return sum / static_cast<double>(counts.size());
}

inline double kdps(std::span<const SentenceKnowledge> sentences) {
  std::vector<std::pair<std::size_t, std::size_t>> counts;
  counts.reserve(sentences.size());
  for (const auto& s : sentences) counts.emplace_back(s.entities.size(), s.relations.size());
  return kdps(counts);
}

/// Divides every value by the maximum of the comparison set.
inline std::vector<double> scaled_kdps(std::span<const double> values) {
  if (values.empty()) fail(ErrorCode::EmptyDocument, "no values to scale");
  const double mx = *std::max_element(values.begin(), values.end());
  if (!(mx > 0.0)) fail(ErrorCode::AllZero, "maximum KDPS is not positive");
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(v / mx);
  return out;
}

// ---------------------------------------------------------------------------
// Knowledge graph
// ---------------------------------------------------------------------------

struct Node {
  std::string id;
  std::string surface;
  EntityKind kind = EntityKind::other;

  friend bool operator==(const Node&, const Node&) = default;
};

struct Edge {
  std::string src;
  std::string dst;
  std::string label;
  std::size_t sentence = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Nodes are unique by case-folded surface + kind, in first-seen order.
class KnowledgeGraph {
 public:
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }

  /// Returns the id of the node for (surface, kind), creating it if needed.
  const std::string& intern(std::string_view surface, EntityKind kind) {
    const auto key = dedup_key(surface, kind);
    if (auto it = index_.find(key); it != index_.end()) return nodes_[it->second].id;
    index_.emplace(key, nodes_.size());
    nodes_.push_back({"n" + std::to_string(nodes_.size()), std::string(surface), kind});
    return nodes_.back().id;
  }

  const Node* find(std::string_view surface, EntityKind kind) const {
    auto it = index_.find(dedup_key(surface, kind));
    return it == index_.end() ? nullptr : &nodes_[it->second];
  }

  void add_sentence(const SentenceKnowledge& s) {
    std::vector<std::string> ids;
    ids.reserve(s.entities.size());
    for (const auto& e : s.entities) ids.push_back(intern(e.surface, e.kind));
    for (const auto& r : s.relations)
      edges_.push_back({ids.at(r.subject), ids.at(r.object), r.label, r.sentence_index});
  }

  bool empty() const { return nodes_.empty() && edges_.empty(); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["nodes"] = nlohmann::json::array();
    j["edges"] = nlohmann::json::array();
    for (const auto& n : nodes_) j["nodes"].push_back({{"id", n.id}, {"surface", n.surface}, {"kind", to_string(n.kind)}});
    for (const auto& e : edges_)
      j["edges"].push_back({{"src", e.src}, {"dst", e.dst}, {"label", e.label}, {"sentence", e.sentence}});
    return j;
  }

  static KnowledgeGraph from_json(const nlohmann::json& j) {
    KnowledgeGraph g;
    try {
      std::set<std::string> ids;
      for (const auto& n : j.at("nodes")) {
        Node node{n.at("id").get<std::string>(), n.at("surface").get<std::string>(),
                  kind_from_string(n.at("kind").get<std::string>())};
        if (!ids.insert(node.id).second) fail(ErrorCode::SerializationFailure, "duplicate node id " + node.id);
        g.index_.emplace(dedup_key(node.surface, node.kind), g.nodes_.size());
        g.nodes_.push_back(std::move(node));
      }
      for (const auto& e : j.at("edges")) {
        Edge edge{e.at("src").get<std::string>(), e.at("dst").get<std::string>(), e.at("label").get<std::string>(),
                  e.at("sentence").get<std::size_t>()};
        if (!ids.count(edge.src) || !ids.count(edge.dst))
          fail(ErrorCode::SerializationFailure, "edge endpoint missing from nodes");
        g.edges_.push_back(std::move(edge));
      }
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorCode::SerializationFailure, ex.what());
    }
    return g;
  }

  friend bool operator==(const KnowledgeGraph& a, const KnowledgeGraph& b) {
    return a.nodes_ == b.nodes_ && a.edges_ == b.edges_;
  }

 private:
  static std::string dedup_key(std::string_view surface, EntityKind kind) {
    return text::lower(surface) + '\x1f' + std::string(to_string(kind));
  }

  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::map<std::string, std::size_t> index_;
};

/// Graph over a segmented document (one string per sentence).
inline KnowledgeGraph build_kg(std::span<const std::string> sentences, const Lexicon& lex = Lexicon::defaults()) {
  KnowledgeGraph g;
  for (std::size_t i = 0; i < sentences.size(); ++i) g.add_sentence(analyze_sentence(sentences[i], i, lex));
  return g;
}

/// Graph from sentences whose entities were annotated elsewhere.
inline KnowledgeGraph build_kg(std::span<const SentenceKnowledge> annotated) {
  KnowledgeGraph g;
  for (const auto& s : annotated) g.add_sentence(s);
  return g;
}

/// Per-sentence analysis of free text (segments it first).
inline std::vector<SentenceKnowledge> analyze_text(std::string_view body, const Lexicon& lex = Lexicon::defaults()) {
  std::vector<SentenceKnowledge> out;
  const auto sents = sentence_texts(body);
  for (std::size_t i = 0; i < sents.size(); ++i) out.push_back(analyze_sentence(sents[i], i, lex));
  return out;
}

}  // namespace fist::kg
