#pragma once

// SPDX-License-Identifier: Apache-2.0

// Seeded generators for the evaluation battery and sectioned sample
// reports shipped under data/. Also used by tests for larger fixtures.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fist/dataprep.hpp"
#include "fist/io.hpp"
#include "fist/monitor.hpp"
#include "fist/random.hpp"

namespace fist::synth {

struct BatteryItem {
  std::string id;
  std::string query;
  std::string context;    // pipe table
  std::string reference;  // reference answer
  std::vector<monitor::Fact> facts;
};

inline constexpr std::array<std::string_view, 16> kCompanies = {
    "Acme",    "Globex",  "Initech", "Umbrella", "Hooli",    "Vandelay", "Stark",   "Wayne",
    "Wonka",   "Soylent", "Cyberdyne", "Tyrell", "Massive Dynamic", "Gringotts", "Oscorp", "Nakatomi"};

namespace detail {

struct MetricSpec {
  std::string_view column;
  bool percent;
};

inline constexpr std::array<MetricSpec, 5> kMetrics = {{{"Revenue", false},
                                                        {"Operating margin", true},
                                                        {"Net income", false},
                                                        {"New bookings", false},
                                                        {"Free cash flow", false}}};

inline data::Number money(SplitMix64& rng, double lo, double hi) {
  data::Number n;
  n.value = std::round(rng.uniform(lo, hi) * 10.0) / 10.0;
  n.unit = data::Unit::currency;
  n.symbol = "$";
  n.scale = "M";
  n.decimals = 1;
  n.grouped = true;
  return n;
}

inline data::Number pct(SplitMix64& rng, double lo, double hi) {
  data::Number n;
  n.value = std::round(rng.uniform(lo, hi) * 10.0) / 10.0;
  n.unit = data::Unit::percent;
  n.decimals = 1;
  return n;
}

inline std::string join_and(const std::vector<std::string>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i > 0) s += i + 1 == xs.size() ? " and " : ", ";
    s += xs[i];
  }
  return s;
}

}  // namespace detail

/// `n` questions, each about one company and 2-3 of its metrics. The context
/// table carries the queried row plus up to two peer rows.
inline std::vector<BatteryItem> make_battery(std::size_t n, std::uint64_t seed = 40) {
  using namespace detail;
  SplitMix64 rng(seed);
  std::vector<BatteryItem> out;
  for (std::size_t q = 0; q < n; ++q) {
    BatteryItem item;
    char id[32];
    std::snprintf(id, sizeof id, "q%03zu", q + 1);
    item.id = id;
    const std::string company(kCompanies[rng.below(kCompanies.size())]);
    std::vector<std::size_t> metrics = {0, 1, 2, 3, 4};
    for (std::size_t i = metrics.size() - 1; i > 0; --i) std::swap(metrics[i], metrics[rng.below(i + 1)]);
    metrics.resize(2 + rng.below(2));
    std::sort(metrics.begin(), metrics.end());
    const int quarter = 1 + static_cast<int>(rng.below(4));
    const int year = 2019 + static_cast<int>(rng.below(6));

    data::TabularData t;
    t.schema.push_back("Company");
    for (auto m : metrics) t.schema.emplace_back(kMetrics[m].column);
    std::vector<std::string> rows = {company};
    for (std::uint64_t p = rng.below(3); p > 0; --p) {
      const std::string peer(kCompanies[rng.below(kCompanies.size())]);
      if (std::find(rows.begin(), rows.end(), peer) == rows.end()) rows.push_back(peer);
    }
    std::vector<std::string> parts, names;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::vector<data::Cell> cells = {rows[r]};
      for (auto m : metrics) {
        const data::Number v = kMetrics[m].percent ? pct(rng, 2.0, 35.0) : money(rng, 50.0, 9000.0);
        cells.emplace_back(v);
        if (r == 0) {
          const std::string pred = text::lower(kMetrics[m].column);
          auto [value, unit] = monitor::detail::normalize(v);
          item.facts.push_back({company, pred, value, unit});
          parts.push_back(pred + " of " + data::format_number(v));
          names.push_back(pred);
        }
      }
      t.rows.push_back(std::move(cells));
    }
    item.query = "What were " + company + "'s " + join_and(names) + " in Q" + std::to_string(quarter) + " " +
                 std::to_string(year) + "?";
    item.context = data::to_pipe_table(t);
    item.reference = company + " reported " + join_and(parts) + ".";
    out.push_back(std::move(item));
  }
  return out;
}

inline std::string query_prompt(const BatteryItem& item) {
  return "Answer the question using only the data below.\nQuestion: " + item.query + "\nData:\n" + item.context;
}

inline nlohmann::json to_json(const BatteryItem& b) {
  nlohmann::json facts = nlohmann::json::array();
  for (const auto& f : b.facts) facts.push_back(monitor::to_json(f));
  return {{"id", b.id}, {"query", b.query}, {"context", b.context}, {"reference", b.reference}, {"facts", facts}};
}

inline nlohmann::json battery_to_json(const std::vector<BatteryItem>& items) {
  nlohmann::json qs = nlohmann::json::array();
  for (const auto& b : items) qs.push_back(to_json(b));
  return {{"questions", qs}};
}

inline std::vector<BatteryItem> battery_from_json(const nlohmann::json& j) {
  std::vector<BatteryItem> out;
  try {
    for (const auto& q : j.at("questions")) {
      BatteryItem b;
      b.id = q.at("id");
      b.query = q.at("query");
      b.context = q.value("context", "");
      b.reference = q.value("reference", "");
      b.facts = monitor::facts_from_json(q.at("facts"));
      if (b.facts.empty()) fail(ErrorCode::ValidationFailure, "question " + b.id + " has no reference facts");
      out.push_back(std::move(b));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ValidationFailure, std::string("battery: ") + e.what());
  }
  return out;
}

inline std::vector<BatteryItem> load_battery(const std::filesystem::path& path) {
  try {
    return battery_from_json(nlohmann::json::parse(io::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::ValidationFailure, path.string() + ": " + e.what());
  }
}

/// Markdown report with every standard section, each carrying prose and a
/// captioned table.
inline std::string make_report(const std::string& company, std::uint64_t seed) {
  using namespace detail;
  SplitMix64 rng(seed);
  struct Layout {
    data::SectionKind kind;
    std::vector<std::string_view> rows;
    std::vector<MetricSpec> cols;
  };
  const std::vector<std::string_view> geo = {"North America", "Europe", "Asia Pacific", "Latin America"};
  const std::vector<std::string_view> ind = {"Financial Services", "Health", "Products", "Resources"};
  const std::vector<std::string_view> grp = {"Consulting", "Operations", "Technology"};
  const std::vector<std::string_view> tot = {company};
  const std::vector<Layout> layouts = {
      {data::SectionKind::introduction, tot, {{"Revenue", false}, {"Operating margin", true}}},
      {data::SectionKind::growth_outlook, grp, {{"Revenue", false}, {"Growth", true}}},
      {data::SectionKind::service_group_performance, grp, {{"Revenue", false}, {"Operating margin", true}}},
      {data::SectionKind::industry_performance, ind, {{"Revenue", false}, {"Growth", true}}},
      {data::SectionKind::performance_highlights, tot, {{"Net income", false}, {"Free cash flow", false}}},
      {data::SectionKind::financial_review, tot, {{"Revenue", false}, {"Operating margin", true}, {"Net income", false}}},
      {data::SectionKind::new_bookings, grp, {{"New bookings", false}, {"Growth", true}}},
      {data::SectionKind::revenues_by_geography, geo, {{"Revenue", false}, {"Growth", true}}},
      {data::SectionKind::revenues_by_industry, ind, {{"Revenue", false}, {"Growth", true}}},
      {data::SectionKind::cash_to_shareholders, tot, {{"Dividends", false}, {"Share repurchases", false}}},
      {data::SectionKind::business_outlook, tot, {{"Revenue", false}, {"Growth", true}}},
  };
  static const std::array<std::string_view, 4> colour = {
      "Demand remained healthy across the portfolio.", "Pricing discipline supported results.",
      "Investment in capabilities continued.", "Execution was consistent with plans."};
  std::string md;
  int table_no = 1;
  for (const auto& l : layouts) {
    md += "# " + std::string(data::title_of(l.kind)) + "\n";
    data::TabularData t;
    t.schema.push_back(l.rows.size() == 1 ? "Company" : "Segment");
    for (const auto& c : l.cols) t.schema.emplace_back(c.column);
    std::string prose;
    for (auto row : l.rows) {
      std::vector<data::Cell> cells = {std::string(row)};
      std::vector<std::string> parts;
      for (const auto& c : l.cols) {
        const data::Number v = c.percent ? pct(rng, 1.0, 30.0) : money(rng, 20.0, 6000.0);
        cells.emplace_back(v);
        parts.push_back(text::lower(c.column) + " of " + data::format_number(v));
      }
      t.rows.push_back(std::move(cells));
      prose += std::string(row) + " reported " + join_and(parts) + ". ";
    }
    prose += std::string(colour[rng.below(colour.size())]);
    md += prose + "\n\nTable " + std::to_string(table_no++) + ": " + std::string(data::title_of(l.kind)) + "\n";
    md += data::to_pipe_table(t) + "\n";
  }
  return md;
}

}  // namespace fist::synth
