#pragma once

// SPDX-License-Identifier: Apache-2.0

// Two-stage fine-tuning run as an event-sourced state machine.
//
//   prepared -> stage1_submitted -> stage1_ready -> evaluated -> curation_open
//            -> curated -> stage2_submitted -> stage2_ready -> validated
//
// A polling state moves to failed when the provider reports a failed job.
//
// runs/<run_id>/events.jsonl is authoritative and snapshot.json is a cache
// rewritten after every event. A transition first writes its artifacts and
// performs its provider call, then appends its event; the append is the
// commit point. After a crash before the append, re-running the transition
// reuses artifacts whose contents hash the same and resubmits under the same
// idempotency key, so the provider sees one job per stage.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fist/dataprep.hpp"
#include "fist/error.hpp"
#include "fist/gateway.hpp"
#include "fist/io.hpp"
#include "fist/metrics.hpp"
#include "fist/monitor.hpp"
#include "fist/random.hpp"
#include "fist/synth.hpp"

namespace fist::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// States and labels
// ---------------------------------------------------------------------------

enum class RunState {
  prepared,
  stage1_submitted,
  stage1_ready,
  evaluated,
  curation_open,
  curated,
  stage2_submitted,
  stage2_ready,
  validated,
  failed
};

inline constexpr std::array<RunState, 10> kAllStates = {
    RunState::prepared,      RunState::stage1_submitted, RunState::stage1_ready,     RunState::evaluated,
    RunState::curation_open, RunState::curated,          RunState::stage2_submitted, RunState::stage2_ready,
    RunState::validated,     RunState::failed};

constexpr std::string_view to_string(RunState s) {
  switch (s) {
    case RunState::prepared: return "prepared";
    case RunState::stage1_submitted: return "stage1_submitted";
    case RunState::stage1_ready: return "stage1_ready";
    case RunState::evaluated: return "evaluated";
    case RunState::curation_open: return "curation_open";
    case RunState::curated: return "curated";
    case RunState::stage2_submitted: return "stage2_submitted";
    case RunState::stage2_ready: return "stage2_ready";
    case RunState::validated: return "validated";
    case RunState::failed: return "failed";
  }
  return "failed";
}

inline RunState state_from_string(std::string_view s) {
  for (auto st : kAllStates)
    if (to_string(st) == s) return st;
  fail(ErrorCode::ValidationFailure, "unknown run state '" + std::string(s) + "'");
}

/// The declared edges; nothing else is ever written to a run.
constexpr bool edge_allowed(RunState from, RunState to) {
  switch (from) {
    case RunState::prepared: return to == RunState::stage1_submitted;
    case RunState::stage1_submitted: return to == RunState::stage1_ready || to == RunState::failed;
    case RunState::stage1_ready: return to == RunState::evaluated;
    case RunState::evaluated: return to == RunState::curation_open;
    case RunState::curation_open: return to == RunState::curated;
    case RunState::curated: return to == RunState::stage2_submitted;
    case RunState::stage2_submitted: return to == RunState::stage2_ready || to == RunState::failed;
    case RunState::stage2_ready: return to == RunState::validated;
    case RunState::validated:
    case RunState::failed: return false;
  }
  return false;
}

enum class HumanLabel { unreviewed, hallucination, creative, correct };

constexpr std::string_view to_string(HumanLabel l) {
  switch (l) {
    case HumanLabel::unreviewed: return "unreviewed";
    case HumanLabel::hallucination: return "hallucination";
    case HumanLabel::creative: return "creative";
    case HumanLabel::correct: return "correct";
  }
  return "unreviewed";
}

inline HumanLabel label_from_string(std::string_view s) {
  for (auto l : {HumanLabel::unreviewed, HumanLabel::hallucination, HumanLabel::creative, HumanLabel::correct})
    if (to_string(l) == s) return l;
  fail(ErrorCode::ValidationFailure, "unknown human label '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

struct EvalSummary {
  int correct = 0;
  int hallucination = 0;
  int incomplete = 0;

  int total() const { return correct + hallucination + incomplete; }
  friend bool operator==(const EvalSummary&, const EvalSummary&) = default;
};

inline json to_json(const EvalSummary& s) {
  return {{"correct", s.correct}, {"hallucination", s.hallucination}, {"incomplete", s.incomplete}};
}

inline EvalSummary summary_from_json(const json& j) {
  return {j.at("correct").get<int>(), j.at("hallucination").get<int>(), j.at("incomplete").get<int>()};
}

inline EvalSummary summarize(std::span<const monitor::EvalRecord> records) {
  EvalSummary s;
  for (const auto& r : records) {
    if (r.category == monitor::Category::correct) ++s.correct;
    else if (r.category == monitor::Category::hallucination) ++s.hallucination;
    else ++s.incomplete;
  }
  return s;
}

/// Infinity is not representable in JSON; an absent ceiling is null.
inline json to_json(const monitor::Thresholds& t) {
  json j = {{"asls_floor", t.asls_floor}, {"ce_per_token_ceiling", nullptr}};
  if (std::isfinite(t.ce_per_token_ceiling)) j["ce_per_token_ceiling"] = t.ce_per_token_ceiling;
  return j;
}

inline monitor::Thresholds thresholds_from_json(const json& j) {
  monitor::Thresholds t;
  t.asls_floor = j.at("asls_floor").get<double>();
  if (!j.at("ce_per_token_ceiling").is_null()) t.ce_per_token_ceiling = j.at("ce_per_token_ceiling").get<double>();
  return t;
}

struct ReviewItem {
  std::string item_id;
  std::string run_id;
  std::string record_id;
  std::size_t sentence_index = 0;
  std::string text;        // the flagged sentence
  std::string completion;  // full candidate completion, for context
  std::string section;
  double asls = 0.0;
  double ce = 0.0;
  double ce_per_token = 0.0;
  std::size_t entity_count = 0;
  std::size_t relation_count = 0;
  monitor::Flag machine_flag = monitor::Flag::none;
  HumanLabel human_label = HumanLabel::unreviewed;
  std::optional<std::string> edited_completion;
  std::uint64_t revision = 0;
  std::uint64_t label_seq = 0;  // event sequence of the latest label

  friend bool operator==(const ReviewItem&, const ReviewItem&) = default;
};

inline json to_json(const ReviewItem& it) {
  return {{"item_id", it.item_id},
          {"run_id", it.run_id},
          {"record_id", it.record_id},
          {"sentence_index", it.sentence_index},
          {"text", it.text},
          {"completion", it.completion},
          {"section", it.section},
          {"asls", it.asls},
          {"ce", it.ce},
          {"ce_per_token", it.ce_per_token},
          {"entity_count", it.entity_count},
          {"relation_count", it.relation_count},
          {"machine_flag", monitor::to_string(it.machine_flag)},
          {"human_label", to_string(it.human_label)},
          {"edited_completion", it.edited_completion ? json(*it.edited_completion) : json(nullptr)},
          {"revision", it.revision},
          {"label_seq", it.label_seq}};
}

inline ReviewItem item_from_json(const json& j) {
  ReviewItem it;
  it.item_id = j.at("item_id");
  it.run_id = j.at("run_id");
  it.record_id = j.at("record_id");
  it.sentence_index = j.at("sentence_index");
  it.text = j.at("text");
  it.completion = j.at("completion");
  it.section = j.at("section");
  it.asls = j.at("asls");
  it.ce = j.at("ce");
  it.ce_per_token = j.at("ce_per_token");
  it.entity_count = j.at("entity_count");
  it.relation_count = j.at("relation_count");
  it.machine_flag = monitor::flag_from_string(j.at("machine_flag").get<std::string>());
  it.human_label = label_from_string(j.at("human_label").get<std::string>());
  if (!j.at("edited_completion").is_null()) it.edited_completion = j.at("edited_completion").get<std::string>();
  it.revision = j.at("revision");
  it.label_seq = j.value("label_seq", std::uint64_t{0});
  return it;
}

/// One reviewer decision. `revision`, when given, must equal the item's
/// current revision or the whole batch is rejected with StaleRevision.
struct LabelUpdate {
  std::string item_id;
  HumanLabel human_label = HumanLabel::unreviewed;
  std::optional<std::string> edited_completion;
  std::optional<std::uint64_t> revision;
};

inline LabelUpdate label_update_from_json(const json& j) {
  try {
    LabelUpdate u;
    u.item_id = j.at("item_id").get<std::string>();
    u.human_label = label_from_string(j.at("human_label").get<std::string>());
    if (j.contains("edited_completion") && !j.at("edited_completion").is_null())
      u.edited_completion = j.at("edited_completion").get<std::string>();
    if (j.contains("revision") && !j.at("revision").is_null()) u.revision = j.at("revision").get<std::uint64_t>();
    return u;
  } catch (const json::exception& e) {
    fail(ErrorCode::ValidationFailure, std::string("label: ") + e.what());
  }
}

struct ValidationRow {
  std::string section;  // display title
  double perplexity_untrained = 1.0;
  double perplexity_stage2 = 1.0;
  std::size_t samples = 0;  // sections averaged into this row

  friend bool operator==(const ValidationRow&, const ValidationRow&) = default;
};

inline json to_json(const ValidationRow& r) {
  return {{"section", r.section},
          {"perplexity_untrained", r.perplexity_untrained},
          {"perplexity_stage2", r.perplexity_stage2},
          {"samples", r.samples}};
}

inline ValidationRow validation_row_from_json(const json& j) {
  return {j.at("section"), j.at("perplexity_untrained"), j.at("perplexity_stage2"), j.at("samples")};
}

/// Markdown table with columns Section | Untrained P | Two-step FT P.
inline std::string validation_table_markdown(std::span<const ValidationRow> rows) {
  std::string md = "| Section | Untrained P | Two-step FT P |\n| --- | --- | --- |\n";
  for (const auto& r : rows)
    md += "| " + r.section + " | " + text::fixed(r.perplexity_untrained, 2) + " | " + text::fixed(r.perplexity_stage2, 2) +
          " |\n";
  return md;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct GenerationParams {
  int max_tokens = 256;
  double temperature = 0.0;
  double top_p = 1.0;
  int logprob_alternatives = 5;
};

struct PipelineConfig {
  std::string base_model = "mock:untrained";
  /// Stage 2 continues from the stage-1 model; false restarts from base.
  bool stage2_from_stage1 = true;
  std::string battery;  // path to the question battery
  std::vector<std::string> validation_reports;
  /// Absolute flag thresholds; unset means run-relative quantiles.
  std::optional<double> asls_floor;
  std::optional<double> ce_per_token_ceiling;
  GenerationParams generation;
  double min_coverage = 0.5;
  double relative_tolerance = 0.005;

  json to_json() const {
    return {{"base_model", base_model},
            {"stage2_from_stage1", stage2_from_stage1},
            {"battery", battery},
            {"validation_reports", validation_reports},
            {"asls_floor", asls_floor ? json(*asls_floor) : json(nullptr)},
            {"ce_per_token_ceiling", ce_per_token_ceiling ? json(*ce_per_token_ceiling) : json(nullptr)},
            {"generation",
             {{"max_tokens", generation.max_tokens},
              {"temperature", generation.temperature},
              {"top_p", generation.top_p},
              {"logprob_alternatives", generation.logprob_alternatives}}},
            {"min_coverage", min_coverage},
            {"relative_tolerance", relative_tolerance}};
  }

  static PipelineConfig from_json(const json& j) {
    try {
      PipelineConfig c;
      c.base_model = j.value("base_model", c.base_model);
      c.stage2_from_stage1 = j.value("stage2_from_stage1", c.stage2_from_stage1);
      c.battery = j.value("battery", c.battery);
      c.validation_reports = j.value("validation_reports", c.validation_reports);
      if (j.contains("asls_floor") && !j["asls_floor"].is_null()) c.asls_floor = j["asls_floor"].get<double>();
      if (j.contains("ce_per_token_ceiling") && !j["ce_per_token_ceiling"].is_null())
        c.ce_per_token_ceiling = j["ce_per_token_ceiling"].get<double>();
      if (j.contains("generation")) {
        const auto& g = j["generation"];
        c.generation.max_tokens = g.value("max_tokens", c.generation.max_tokens);
        c.generation.temperature = g.value("temperature", c.generation.temperature);
        c.generation.top_p = g.value("top_p", c.generation.top_p);
        c.generation.logprob_alternatives = g.value("logprob_alternatives", c.generation.logprob_alternatives);
      }
      c.min_coverage = j.value("min_coverage", c.min_coverage);
      c.relative_tolerance = j.value("relative_tolerance", c.relative_tolerance);
      monitor::check_thresholds(c.asls_floor.value_or(0.0),
                                c.ce_per_token_ceiling.value_or(std::numeric_limits<double>::infinity()));
      return c;
    } catch (const json::exception& e) {
      fail(ErrorCode::ValidationFailure, std::string("pipeline config: ") + e.what());
    }
  }

  /// Relative paths resolve against the config file's directory.
  static PipelineConfig load(const fs::path& path) {
    json j;
    try {
      j = json::parse(io::read_file(path));
    } catch (const json::parse_error& e) {
      fail(ErrorCode::ValidationFailure, path.string() + ": " + e.what());
    }
    PipelineConfig c = from_json(j);
    const fs::path base = path.parent_path();
    auto resolve = [&](std::string& p) {
      if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
    };
    resolve(c.battery);
    for (auto& r : c.validation_reports) resolve(r);
    return c;
  }

  monitor::CategorizeOptions categorize_options() const { return {relative_tolerance, min_coverage}; }
};

// ---------------------------------------------------------------------------
// Evaluation helpers
// ---------------------------------------------------------------------------

/// Runs f(0..n-1) on up to `workers` threads; rethrows the first failure.
template <class F>
void parallel_for(std::size_t n, std::size_t workers, F&& f) {
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, n));
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        f(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!err) err = std::current_exception();
        next.store(n);
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

inline gateway::GenerationRequest make_request(const std::string& model, std::string prompt, const GenerationParams& g) {
  gateway::GenerationRequest r;
  r.prompt = std::move(prompt);
  r.model_id = model;
  r.max_tokens = g.max_tokens;
  r.temperature = g.temperature;
  r.top_p = g.top_p;
  r.logprob_alternatives = g.logprob_alternatives;
  return r;
}

/// Asks every battery question and labels each answer by rule; sentences
/// are scored but not flagged.
inline std::vector<monitor::EvalRecord> run_battery(gateway::Gateway& gw, const std::string& model,
                                                     std::span<const synth::BatteryItem> battery,
                                                     const GenerationParams& g = {},
                                                     const monitor::CategorizeOptions& opt = {}) {
  std::vector<monitor::EvalRecord> out(battery.size());
  parallel_for(battery.size(), static_cast<std::size_t>(gw.config().max_in_flight), [&](std::size_t i) {
    const auto& q = battery[i];
    const auto resp = gw.complete(make_request(model, synth::query_prompt(q), g));
    auto rec = monitor::make_record(q.id, q.query, q.context, resp, q.reference);
    rec.category = monitor::categorize(rec, q.facts, opt);
    rec.label_source = monitor::LabelSource::rule;
    out[i] = std::move(rec);
  });
  return out;
}

struct SectionPrompt {
  std::string section;  // display title used for grouping
  data::SectionKind kind = data::SectionKind::other;
  std::string prompt;
};

/// One prompt per non-blank section, built from the section's own table
/// without augmentation.
inline std::vector<SectionPrompt> section_prompts(std::span<const data::ReportInput> reports) {
  std::vector<SectionPrompt> out;
  for (const auto& rep : reports) {
    const auto parsed = data::parse_report(rep.text, rep.id);
    for (std::size_t s = 0; s < parsed.sections.size(); ++s) {
      const auto& sec = parsed.sections[s];
      if (text::blank(sec.body)) continue;
      data::TabularData table;
      table.source_report_id = rep.id;
      for (std::size_t t = 0; t < parsed.tables.size(); ++t)
        if (parsed.table_sections[t] == s) {
          table = parsed.tables[t];
          break;
        }
      const auto pc = data::make_prompt_completion(sec, table);
      const std::string title = pc.section == data::SectionKind::other && !sec.name.empty()
                                    ? sec.name
                                    : std::string(data::title_of(pc.section));
      out.push_back({title, pc.section, pc.prompt});
    }
  }
  return out;
}

/// Mean perplexity per section for both models, rows in canonical section
/// order and then by title for unrecognized sections.
inline std::vector<ValidationRow> compare_sections(gateway::Gateway& gw, const std::string& untrained,
                                                   const std::string& stage2,
                                                   std::span<const data::ReportInput> reports,
                                                   const GenerationParams& g = {}) {
  const auto prompts = section_prompts(reports);
  std::vector<double> pu(prompts.size()), p2(prompts.size());
  parallel_for(prompts.size(), static_cast<std::size_t>(gw.config().max_in_flight), [&](std::size_t i) {
    pu[i] = fist::perplexity(gw.complete(make_request(untrained, prompts[i].prompt, g)).tokens);
    p2[i] = fist::perplexity(gw.complete(make_request(stage2, prompts[i].prompt, g)).tokens);
  });
  struct Acc {
    std::size_t order;
    ValidationRow row;
  };
  std::map<std::string, Acc> acc;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    auto& a = acc[prompts[i].section];
    if (a.row.samples == 0) {
      a.order = static_cast<std::size_t>(prompts[i].kind);
      a.row = {prompts[i].section, 0.0, 0.0, 0};
    }
    a.row.perplexity_untrained += pu[i];
    a.row.perplexity_stage2 += p2[i];
    ++a.row.samples;
  }
  std::vector<Acc> sorted;
  for (auto& [_, a] : acc) {
    a.row.perplexity_untrained /= static_cast<double>(a.row.samples);
    a.row.perplexity_stage2 /= static_cast<double>(a.row.samples);
    sorted.push_back(a);
  }
  std::stable_sort(sorted.begin(), sorted.end(), [](const Acc& a, const Acc& b) { return a.order < b.order; });
  std::vector<ValidationRow> rows;
  for (auto& a : sorted) rows.push_back(a.row);
  return rows;
}

struct Stage2Build {
  std::vector<data::PromptCompletion> dataset;
  std::size_t excluded = 0;  // had a hallucination label and no edit
  std::size_t repaired = 0;  // had a hallucination label and an edit
  std::size_t blank = 0;     // candidate produced no text
};

/// Candidate i answers stage-1 prompt i. An edit always replaces the
/// generated completion; without one, any hallucination label drops it.
inline Stage2Build build_stage2_dataset(std::span<const data::PromptCompletion> stage1,
                                        std::span<const monitor::EvalRecord> candidates,
                                        std::span<const ReviewItem> items) {
  if (stage1.size() != candidates.size())
    fail(ErrorCode::ValidationFailure, "candidate count does not match the stage-1 dataset");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < candidates.size(); ++i) index[candidates[i].record_id] = i;
  std::vector<bool> hallucinated(candidates.size(), false);
  std::vector<const ReviewItem*> edit(candidates.size(), nullptr);
  for (const auto& it : items) {
    const auto f = index.find(it.record_id);
    if (f == index.end()) fail(ErrorCode::UnknownItem, "review item refers to unknown record " + it.record_id);
    if (it.human_label == HumanLabel::hallucination) hallucinated[f->second] = true;
    // Latest edit wins; within one batch, the later item.
    if (it.edited_completion && (!edit[f->second] || edit[f->second]->label_seq <= it.label_seq)) edit[f->second] = &it;
  }
  Stage2Build out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    data::PromptCompletion pc = stage1[i];
    pc.provenance.stage = data::Stage::stage2_curated;
    if (edit[i]) {
      pc.completion = *edit[i]->edited_completion;
      if (hallucinated[i]) ++out.repaired;
    } else if (hallucinated[i]) {
      ++out.excluded;
      continue;
    } else if (text::blank(candidates[i].response)) {
      ++out.blank;
      continue;
    } else {
      pc.completion = candidates[i].response;
    }
    out.dataset.push_back(std::move(pc));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run state
// ---------------------------------------------------------------------------

struct PipelineRun {
  std::string run_id;
  RunState state = RunState::prepared;
  std::optional<std::string> stage1_job, stage1_model, stage2_job, stage2_model;
  std::map<std::string, std::string> dataset_paths;  // relative to the run directory
  std::map<std::string, std::string> exports;        // relative to the run directory
  std::vector<std::string> validation_reports;       // copies under inputs/
  std::string dataset_hash;
  json config = json::object();
  std::optional<EvalSummary> eval_summary;  // stage-1 model on the battery
  std::optional<EvalSummary> base_eval_summary;
  std::optional<EvalSummary> stage2_eval_summary;
  std::optional<monitor::Thresholds> thresholds;           // battery flags
  std::optional<monitor::Thresholds> curation_thresholds;  // candidate flags
  std::vector<ReviewItem> items;
  std::size_t stage1_size = 0;
  std::size_t stage2_size = 0;
  std::size_t excluded = 0;
  std::size_t repaired = 0;
  std::vector<ValidationRow> validation;
  std::string failure;
  std::string created_at;
  std::string updated_at;
  std::uint64_t last_seq = 0;

  std::size_t remaining_unreviewed() const {
    return static_cast<std::size_t>(std::count_if(
        items.begin(), items.end(), [](const ReviewItem& i) { return i.human_label == HumanLabel::unreviewed; }));
  }
};

inline json to_json(const PipelineRun& r, bool with_items = true) {
  auto opt_str = [](const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); };
  auto opt_sum = [](const std::optional<EvalSummary>& s) { return s ? to_json(*s) : json(nullptr); };
  auto opt_thr = [](const std::optional<monitor::Thresholds>& t) { return t ? to_json(*t) : json(nullptr); };
  json rows = json::array();
  for (const auto& v : r.validation) rows.push_back(to_json(v));
  json j = {{"run_id", r.run_id},
            {"state", to_string(r.state)},
            {"stage1_job", opt_str(r.stage1_job)},
            {"stage1_model", opt_str(r.stage1_model)},
            {"stage2_job", opt_str(r.stage2_job)},
            {"stage2_model", opt_str(r.stage2_model)},
            {"dataset_paths", r.dataset_paths},
            {"exports", r.exports},
            {"validation_reports", r.validation_reports},
            {"dataset_hash", r.dataset_hash},
            {"config", r.config},
            {"eval_summary", opt_sum(r.eval_summary)},
            {"base_eval_summary", opt_sum(r.base_eval_summary)},
            {"stage2_eval_summary", opt_sum(r.stage2_eval_summary)},
            {"thresholds", opt_thr(r.thresholds)},
            {"curation_thresholds", opt_thr(r.curation_thresholds)},
            {"review", {{"total", r.items.size()}, {"remaining", r.remaining_unreviewed()}}},
            {"stage1_size", r.stage1_size},
            {"stage2_size", r.stage2_size},
            {"excluded", r.excluded},
            {"repaired", r.repaired},
            {"validation", rows},
            {"failure", r.failure},
            {"created_at", r.created_at},
            {"updated_at", r.updated_at},
            {"last_seq", r.last_seq}};
  if (with_items) {
    json items = json::array();
    for (const auto& it : r.items) items.push_back(to_json(it));
    j["items"] = std::move(items);
  }
  return j;
}

struct Event {
  std::uint64_t seq = 0;
  std::string type;
  std::string at;  // UTC, ISO 8601 with milliseconds
  json data = json::object();
};

inline json to_json(const Event& e) { return {{"seq", e.seq}, {"type", e.type}, {"at", e.at}, {"data", e.data}}; }

inline Event event_from_json(const json& j) {
  return {j.at("seq").get<std::uint64_t>(), j.at("type").get<std::string>(), j.at("at").get<std::string>(),
          j.at("data")};
}

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

namespace detail {

inline RunState event_target(std::string_view type) {
  if (type == "stage1_submitted") return RunState::stage1_submitted;
  if (type == "stage1_ready") return RunState::stage1_ready;
  if (type == "evaluated") return RunState::evaluated;
  if (type == "curation_opened") return RunState::curation_open;
  if (type == "curated") return RunState::curated;
  if (type == "stage2_submitted") return RunState::stage2_submitted;
  if (type == "stage2_ready") return RunState::stage2_ready;
  if (type == "validated") return RunState::validated;
  if (type == "failed") return RunState::failed;
  fail(ErrorCode::ValidationFailure, "unknown event type '" + std::string(type) + "'");
}

}  // namespace detail

/// Folds one event into the run. Every field of PipelineRun is derived here
/// and nowhere else, which is what makes replay exact.
inline void apply_event(PipelineRun& run, const Event& ev) {
  const json& d = ev.data;
  if (ev.seq != run.last_seq + 1)
    fail(ErrorCode::ValidationFailure, "event " + std::to_string(ev.seq) + " out of sequence");
  if (ev.type == "run_started") {
    if (ev.seq != 1) fail(ErrorCode::ValidationFailure, "run_started must be the first event");
    run.run_id = d.at("run_id");
    run.state = RunState::prepared;
    run.dataset_hash = d.at("dataset_hash");
    run.config = d.at("config");
    run.dataset_paths = d.at("dataset_paths").get<std::map<std::string, std::string>>();
    run.validation_reports = d.at("validation_reports").get<std::vector<std::string>>();
    run.stage1_size = d.at("stage1_size");
    run.created_at = ev.at;
  } else if (ev.type == "labels_applied") {
    if (run.state != RunState::curation_open) fail(ErrorCode::ValidationFailure, "labels outside curation_open");
    for (const auto& u : d.at("updates")) {
      const std::string id = u.at("item_id");
      auto it = std::find_if(run.items.begin(), run.items.end(), [&](const ReviewItem& i) { return i.item_id == id; });
      if (it == run.items.end()) fail(ErrorCode::ValidationFailure, "label for unknown item " + id);
      it->human_label = label_from_string(u.at("human_label").get<std::string>());
      if (!u.at("edited_completion").is_null()) it->edited_completion = u.at("edited_completion").get<std::string>();
      it->revision = u.at("revision");
      it->label_seq = ev.seq;
    }
  } else {
    if (run.last_seq == 0) fail(ErrorCode::ValidationFailure, "event log does not start with run_started");
    const RunState to = detail::event_target(ev.type);
    if (!edge_allowed(run.state, to))
      fail(ErrorCode::ValidationFailure, "event '" + ev.type + "' not allowed from " + std::string(to_string(run.state)));
    run.state = to;
    if (ev.type == "stage1_submitted") {
      run.stage1_job = d.at("job_id");
    } else if (ev.type == "stage1_ready") {
      run.stage1_model = d.at("model");
    } else if (ev.type == "evaluated") {
      run.eval_summary = summary_from_json(d.at("summary"));
      run.base_eval_summary = summary_from_json(d.at("base_summary"));
      run.thresholds = thresholds_from_json(d.at("thresholds"));
      for (auto& [k, v] : d.at("exports").items()) run.exports[k] = v;
    } else if (ev.type == "curation_opened") {
      run.curation_thresholds = thresholds_from_json(d.at("thresholds"));
      for (const auto& i : d.at("items")) run.items.push_back(item_from_json(i));
      for (auto& [k, v] : d.at("exports").items()) run.exports[k] = v;
    } else if (ev.type == "stage2_submitted") {
      run.stage2_job = d.at("job_id");
      run.dataset_paths["stage2"] = d.at("dataset_path");
      run.stage2_size = d.at("size");
      run.excluded = d.at("excluded");
      run.repaired = d.at("repaired");
    } else if (ev.type == "stage2_ready") {
      run.stage2_model = d.at("model");
    } else if (ev.type == "validated") {
      run.validation.clear();
      for (const auto& r : d.at("table")) run.validation.push_back(validation_row_from_json(r));
      run.stage2_eval_summary = summary_from_json(d.at("stage2_summary"));
      for (auto& [k, v] : d.at("exports").items()) run.exports[k] = v;
    } else if (ev.type == "failed") {
      run.failure = d.at("reason");
    }
  }
  run.updated_at = ev.at;
  run.last_seq = ev.seq;
}

inline PipelineRun replay(std::span<const Event> events) {
  PipelineRun run;
  try {
    for (const auto& e : events) apply_event(run, e);
  } catch (const json::exception& e) {
    fail(ErrorCode::ValidationFailure, std::string("event log: ") + e.what());
  }
  return run;
}

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

/// Exclusive advisory lock on runs/<id>/lock. flock() conflicts between
/// separate open() calls, so this also serializes threads of one process.
class RunLock {
 public:
  explicit RunLock(const fs::path& path) {
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (fd_ < 0) fail(ErrorCode::LockFailure, "cannot open lock file " + path.string());
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      fail(ErrorCode::LockFailure, "cannot lock " + path.string());
    }
  }
  ~RunLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  int fd_ = -1;
};

struct StoreOptions {
  /// Called at named points ("<transition>:effect", "<transition>:event");
  /// throwing there simulates a crash.
  std::function<void(std::string_view)> crash_hook;
};

class RunStore {
 public:
  RunStore(fs::path root, std::shared_ptr<gateway::Gateway> gw, StoreOptions opt = {})
      : root_(std::move(root)), gw_(std::move(gw)), opt_(std::move(opt)) {
    if (!gw_) gw_ = std::make_shared<gateway::Gateway>();
  }

  const fs::path& root() const { return root_; }
  gateway::Gateway& gateway() { return *gw_; }

  fs::path run_dir(const std::string& run_id) const {
    const bool ok = !run_id.empty() && std::all_of(run_id.begin(), run_id.end(), [](char c) {
      return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-';
    });
    if (!ok) fail(ErrorCode::UnknownRun, "malformed run id '" + run_id + "'");
    return root_ / run_id;
  }

  bool exists(const std::string& run_id) const { return fs::exists(run_dir(run_id) / "events.jsonl"); }

  /// Persists a prepared run. The id hashes the dataset bytes and the
  /// config with input paths replaced by content hashes, so repeating the
  /// call returns the existing run.
  PipelineRun start_run(const fs::path& dataset, const PipelineConfig& cfg) {
    const std::string contents = io::read_file(dataset);
    const auto records = data::parse_jsonl(contents);
    if (records.empty()) fail(ErrorCode::ValidationFailure, dataset.string() + ": dataset has no records");
    gateway::dataset_stage(records, data::Stage::stage1);
    if (cfg.battery.empty()) fail(ErrorCode::ValidationFailure, "config names no question battery");
    const std::string battery = io::read_file(cfg.battery);
    synth::battery_from_json(parse_json(battery, cfg.battery));
    std::vector<std::string> reports;
    for (const auto& p : cfg.validation_reports) reports.push_back(io::read_file(p));

    json canonical = cfg.to_json();
    canonical["battery"] = hex64(fnv1a64(battery));
    canonical["validation_reports"] = json::array();
    for (const auto& r : reports) canonical["validation_reports"].push_back(hex64(fnv1a64(r)));
    const std::string dataset_hash = hex64(fnv1a64(contents));
    const std::string run_id = "run-" + hex64(hash_combine(fnv1a64(contents), fnv1a64(canonical.dump())));

    const fs::path dir = run_dir(run_id);
    fs::create_directories(dir);
    RunLock lock(dir / "lock");
    if (auto evs = read_events(dir); !evs.empty()) return replay(evs);

    write_artifact(dir / "datasets" / "stage1.jsonl", contents);
    write_artifact(dir / "inputs" / "battery.json", battery);
    json copies = json::array();
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const std::string rel = "inputs/reports/" + std::to_string(i + 1) + "-" +
                              fs::path(cfg.validation_reports[i]).filename().string();
      write_artifact(dir / rel, reports[i]);
      copies.push_back(rel);
    }
    hook("start:effect");
    PipelineRun run;
    commit(dir, run, "run_started",
           {{"run_id", run_id},
            {"dataset_hash", dataset_hash},
            {"config", cfg.to_json()},
            {"dataset_paths", {{"stage1", "datasets/stage1.jsonl"}, {"battery", "inputs/battery.json"}}},
            {"validation_reports", copies},
            {"stage1_size", records.size()}},
           "start");
    return run;
  }

  /// Replays the event log. A snapshot left stale by a crash is rewritten.
  PipelineRun load(const std::string& run_id) const {
    const fs::path dir = run_dir(run_id);
    auto evs = read_events(dir);
    if (evs.empty()) fail(ErrorCode::UnknownRun, "no run '" + run_id + "'");
    PipelineRun run = replay(evs);
    if (snapshot_seq(dir) != run.last_seq) {
      RunLock lock(dir / "lock");
      run = replay(read_events(dir));
      io::write_atomic(dir / "snapshot.json", to_json(run).dump(1) + "\n");
    }
    return run;
  }

  std::vector<Event> events(const std::string& run_id) const { return read_events(run_dir(run_id)); }

  std::vector<PipelineRun> list() const {
    std::vector<PipelineRun> out;
    std::error_code ec;
    if (!fs::is_directory(root_, ec)) return out;
    for (const auto& e : fs::directory_iterator(root_)) {
      if (!e.is_directory() || !fs::exists(e.path() / "events.jsonl")) continue;
      auto evs = read_events(e.path());
      if (!evs.empty()) out.push_back(replay(evs));
    }
    std::sort(out.begin(), out.end(), [](const PipelineRun& a, const PipelineRun& b) {
      return std::tie(a.created_at, a.run_id) < std::tie(b.created_at, b.run_id);
    });
    return out;
  }

  /// Performs the single transition enabled in the current state. Polling
  /// states stay put while the job is still running.
  PipelineRun advance(const std::string& run_id) {
    const fs::path dir = run_dir(run_id);
    if (!exists(run_id)) fail(ErrorCode::UnknownRun, "no run '" + run_id + "'");
    RunLock lock(dir / "lock");
    PipelineRun run = replay(read_events(dir));
    const PipelineConfig cfg = PipelineConfig::from_json(run.config);
    switch (run.state) {
      case RunState::prepared: {
        const auto job = gw_->submit_finetune(dir / run.dataset_paths.at("stage1"), cfg.base_model,
                                              data::Stage::stage1, run.run_id + ":stage1");
        hook("submit_stage1:effect");
        commit(dir, run, "stage1_submitted", {{"job_id", job}}, "submit_stage1");
        break;
      }
      case RunState::stage1_submitted: poll(dir, run, *run.stage1_job, "stage1_ready", "poll_stage1"); break;
      case RunState::stage1_ready: evaluate(dir, run, cfg); break;
      case RunState::evaluated: open_curation(dir, run, cfg); break;
      case RunState::curation_open: {
        if (const auto n = run.remaining_unreviewed(); n > 0)
          fail(ErrorCode::CurationIncomplete, std::to_string(n) + " review items are still unreviewed");
        commit(dir, run, "curated", json::object(), "curate");
        break;
      }
      case RunState::curated: submit_stage2(dir, run, cfg); break;
      case RunState::stage2_submitted: poll(dir, run, *run.stage2_job, "stage2_ready", "poll_stage2"); break;
      case RunState::stage2_ready: validate(dir, run, cfg); break;
      case RunState::validated:
      case RunState::failed:
        fail(ErrorCode::IllegalTransition, "run " + run.run_id + " is " + std::string(to_string(run.state)) +
                                               " and has no further transition");
    }
    return run;
  }

  /// Applies a batch atomically and returns how many items remain
  /// unreviewed. Reaching zero closes curation.
  std::size_t curation_apply(const std::string& run_id, const std::vector<LabelUpdate>& labels) {
    const fs::path dir = run_dir(run_id);
    if (!exists(run_id)) fail(ErrorCode::UnknownRun, "no run '" + run_id + "'");
    RunLock lock(dir / "lock");
    PipelineRun run = replay(read_events(dir));
    if (run.state != RunState::curation_open)
      fail(ErrorCode::IllegalState, "run " + run.run_id + " is " + std::string(to_string(run.state)) +
                                        ", labels need curation_open");
    std::map<std::string, std::uint64_t> revs;
    for (const auto& it : run.items) revs[it.item_id] = it.revision;
    json updates = json::array();
    for (const auto& u : labels) {
      const auto f = revs.find(u.item_id);
      if (f == revs.end()) fail(ErrorCode::UnknownItem, "no review item '" + u.item_id + "'");
      if (u.human_label == HumanLabel::unreviewed)
        fail(ErrorCode::ValidationFailure, "item " + u.item_id + ": a label cannot reset to unreviewed");
      if (u.revision && *u.revision != f->second)
        fail(ErrorCode::StaleRevision, "item " + u.item_id + " is at revision " + std::to_string(f->second) +
                                           ", update was based on " + std::to_string(*u.revision));
      if (u.edited_completion && (text::blank(*u.edited_completion) || !text::valid_utf8(*u.edited_completion)))
        fail(ErrorCode::ValidationFailure, "item " + u.item_id + ": edited completion must be non-blank UTF-8");
      ++f->second;
      updates.push_back({{"item_id", u.item_id},
                         {"human_label", to_string(u.human_label)},
                         {"edited_completion", u.edited_completion ? json(*u.edited_completion) : json(nullptr)},
                         {"revision", f->second}});
    }
    if (!updates.empty()) {
      hook("labels:effect");
      commit(dir, run, "labels_applied", {{"updates", updates}}, "labels");
    }
    const std::size_t remaining = run.remaining_unreviewed();
    if (remaining == 0) commit(dir, run, "curated", json::object(), "curate");
    return remaining;
  }

  /// Items in creation order, optionally only those with one label.
  std::vector<ReviewItem> review_items(const std::string& run_id, std::optional<HumanLabel> only = {}) const {
    const PipelineRun run = load(run_id);
    std::vector<ReviewItem> out;
    for (const auto& it : run.items)
      if (!only || it.human_label == *only) out.push_back(it);
    return out;
  }

  /// Section perplexity of the base and stage-2 models over `reports`.
  std::vector<ValidationRow> validate_reports(const std::string& run_id, std::span<const data::ReportInput> reports) {
    const PipelineRun run = load(run_id);
    if (!run.stage2_model) fail(ErrorCode::ModelMissing, "run " + run_id + " has no stage-2 model yet");
    const PipelineConfig cfg = PipelineConfig::from_json(run.config);
    return compare_sections(*gw_, cfg.base_model, *run.stage2_model, reports, cfg.generation);
  }

  /// Battery records stored by the run: "untrained", "stage1", "stage2",
  /// or "candidates".
  std::vector<monitor::EvalRecord> records(const std::string& run_id, const std::string& which) const {
    const PipelineRun run = load(run_id);
    const auto f = run.exports.find(which);
    if (f == run.exports.end()) return {};
    const json j = parse_json(io::read_file(run_dir(run_id) / f->second), f->second);
    std::vector<monitor::EvalRecord> out;
    for (const auto& r : j) out.push_back(monitor::record_from_json(r));
    return out;
  }

  /// Sentence scatter over every evaluated model of the run.
  std::vector<monitor::ScatterRow> scatter(const std::string& run_id, monitor::ScatterMetric metric) const {
    std::vector<std::pair<std::string, std::vector<monitor::EvalRecord>>> keep;
    for (const char* label : {"untrained", "stage1", "stage2"})
      if (auto recs = records(run_id, label); !recs.empty()) keep.emplace_back(label, std::move(recs));
    std::vector<monitor::ScatterRun> runs;
    for (const auto& [label, recs] : keep) runs.push_back({label, recs});
    return monitor::scatter_rows(runs, metric);
  }

 private:
  static json parse_json(const std::string& s, const std::string& what) {
    try {
      return json::parse(s);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::ValidationFailure, what + ": " + e.what());
    }
  }

  static std::uint64_t snapshot_seq(const fs::path& dir) {
    try {
      return json::parse(io::read_file(dir / "snapshot.json")).at("last_seq").get<std::uint64_t>();
    } catch (const std::exception&) {
      return 0;
    }
  }

  void hook(std::string_view point) const {
    if (opt_.crash_hook) opt_.crash_hook(point);
  }

  /// A trailing line without '\n' is a torn append and is ignored.
  static std::vector<Event> read_events(const fs::path& dir) {
    const fs::path p = dir / "events.jsonl";
    if (!fs::exists(p)) return {};
    const std::string s = io::read_file(p);
    std::vector<Event> out;
    std::size_t pos = 0, line = 0;
    while (pos < s.size()) {
      const auto nl = s.find('\n', pos);
      if (nl == std::string::npos) break;
      ++line;
      const std::string_view l(s.data() + pos, nl - pos);
      pos = nl + 1;
      if (text::blank(l)) continue;
      try {
        out.push_back(event_from_json(json::parse(l)));
      } catch (const json::exception& e) {
        fail(ErrorCode::ValidationFailure, p.string() + " line " + std::to_string(line) + ": " + e.what());
      }
    }
    return out;
  }

  /// Writes unless the file already holds exactly these bytes.
  static bool write_artifact(const fs::path& path, std::string_view contents) {
    if (fs::exists(path)) {
      const std::string old = io::read_file(path);
      if (old.size() == contents.size() && fnv1a64(old) == fnv1a64(contents)) return false;
    }
    io::write_atomic(path, contents);
    return true;
  }

  void commit(const fs::path& dir, PipelineRun& run, const std::string& type, json data, std::string_view point) {
    const fs::path log = dir / "events.jsonl";
    if (fs::exists(log)) {
      const std::string s = io::read_file(log);
      if (!s.empty() && s.back() != '\n') fs::resize_file(log, s.rfind('\n') == std::string::npos ? 0 : s.rfind('\n') + 1);
    }
    Event ev{run.last_seq + 1, type, utc_now(), std::move(data)};
    PipelineRun next = run;
    apply_event(next, ev);
    io::append_line(log, to_json(ev).dump());
    hook(std::string(point) + ":event");
    run = std::move(next);
    io::write_atomic(dir / "snapshot.json", to_json(run).dump(1) + "\n");
  }

  void poll(const fs::path& dir, PipelineRun& run, const std::string& job, const char* ready, const char* point) {
    const auto j = gw_->poll_finetune(job);
    if (j.state == gateway::JobState::succeeded) {
      if (j.fine_tuned_model.empty()) fail(ErrorCode::MalformedProviderReply, "job " + job + " has no model");
      hook(std::string(point) + ":effect");
      commit(dir, run, ready, {{"model", j.fine_tuned_model}}, point);
    } else if (j.state == gateway::JobState::failed) {
      commit(dir, run, "failed", {{"reason", "fine-tune job " + job + " failed"}}, point);
    }
  }

  static json records_json(std::span<const monitor::EvalRecord> recs) {
    json a = json::array();
    for (const auto& r : recs) a.push_back(monitor::to_json(r));
    return a;
  }

  monitor::Thresholds thresholds_for(const PipelineConfig& cfg, std::span<const monitor::EvalRecord> recs) const {
    monitor::Thresholds t = monitor::adaptive_thresholds(recs);
    if (cfg.asls_floor) t.asls_floor = *cfg.asls_floor;
    if (cfg.ce_per_token_ceiling) t.ce_per_token_ceiling = *cfg.ce_per_token_ceiling;
    return t;
  }

  void evaluate(const fs::path& dir, PipelineRun& run, const PipelineConfig& cfg) {
    const auto battery = synth::load_battery(dir / run.dataset_paths.at("battery"));
    auto base = run_battery(*gw_, cfg.base_model, battery, cfg.generation, cfg.categorize_options());
    auto tuned = run_battery(*gw_, *run.stage1_model, battery, cfg.generation, cfg.categorize_options());
    const auto t = thresholds_for(cfg, tuned);
    monitor::flag_records(base, t);
    monitor::flag_records(tuned, t);
    write_artifact(dir / "exports" / "eval_untrained.json", records_json(base).dump() + "\n");
    write_artifact(dir / "exports" / "eval_stage1.json", records_json(tuned).dump() + "\n");
    hook("evaluate:effect");
    commit(dir, run, "evaluated",
           {{"summary", to_json(summarize(tuned))},
            {"base_summary", to_json(summarize(base))},
            {"thresholds", to_json(t)},
            {"exports", {{"untrained", "exports/eval_untrained.json"}, {"stage1", "exports/eval_stage1.json"}}}},
           "evaluate");
  }

  /// Regenerates every stage-1 prompt with the stage-1 model and opens one
  /// review item per flagged sentence.
  void open_curation(const fs::path& dir, PipelineRun& run, const PipelineConfig& cfg) {
    const auto stage1 = data::import_jsonl(dir / run.dataset_paths.at("stage1"));
    std::vector<monitor::EvalRecord> cands(stage1.size());
    parallel_for(stage1.size(), static_cast<std::size_t>(gw_->config().max_in_flight), [&](std::size_t i) {
      char id[24];
      std::snprintf(id, sizeof id, "c%04zu", i);
      const auto resp = gw_->complete(make_request(*run.stage1_model, stage1[i].prompt, cfg.generation));
      cands[i] = monitor::make_record(id, stage1[i].prompt, "", resp, stage1[i].completion);
    });
    const auto t = thresholds_for(cfg, cands);
    monitor::flag_records(cands, t);
    json items = json::array();
    for (std::size_t i = 0; i < cands.size(); ++i)
      for (const auto& s : cands[i].sentences) {
        if (s.flag != monitor::Flag::low_certainty) continue;
        ReviewItem it;
        it.item_id = cands[i].record_id + "-s" + (s.span.sentence_index < 10 ? "0" : "") +
                     std::to_string(s.span.sentence_index);
        it.run_id = run.run_id;
        it.record_id = cands[i].record_id;
        it.sentence_index = s.span.sentence_index;
        it.text = s.span.text;
        it.completion = cands[i].response;
        it.section = std::string(data::to_string(stage1[i].section));
        it.asls = s.asls;
        it.ce = s.cross_entropy;
        it.ce_per_token = s.ce_per_token();
        it.entity_count = s.entity_count;
        it.relation_count = s.relation_count;
        it.machine_flag = s.flag;
        items.push_back(to_json(it));
      }
    write_artifact(dir / "exports" / "candidates.json", records_json(cands).dump() + "\n");
    hook("open_curation:effect");
    commit(dir, run, "curation_opened",
           {{"items", items}, {"thresholds", to_json(t)}, {"exports", {{"candidates", "exports/candidates.json"}}}},
           "open_curation");
  }

  void submit_stage2(const fs::path& dir, PipelineRun& run, const PipelineConfig& cfg) {
    const auto stage1 = data::import_jsonl(dir / run.dataset_paths.at("stage1"));
    std::vector<monitor::EvalRecord> cands;
    for (const auto& r : parse_json(io::read_file(dir / run.exports.at("candidates")), "candidates"))
      cands.push_back(monitor::record_from_json(r));
    const auto built = build_stage2_dataset(stage1, cands, run.items);
    if (built.dataset.empty()) fail(ErrorCode::EmptyDataset, "curation left no completions for stage 2");
    const std::string contents = data::serialize_jsonl(built.dataset);
    write_artifact(dir / "datasets" / "stage2.jsonl", contents);
    hook("submit_stage2:dataset");
    const std::string base = cfg.stage2_from_stage1 ? *run.stage1_model : cfg.base_model;
    const auto job =
        gw_->submit_finetune(dir / "datasets" / "stage2.jsonl", base, data::Stage::stage2_curated, run.run_id + ":stage2");
    hook("submit_stage2:effect");
    commit(dir, run, "stage2_submitted",
           {{"job_id", job},
            {"dataset_path", "datasets/stage2.jsonl"},
            {"dataset_hash", hex64(fnv1a64(contents))},
            {"size", built.dataset.size()},
            {"excluded", built.excluded},
            {"repaired", built.repaired}},
           "submit_stage2");
  }

  void validate(const fs::path& dir, PipelineRun& run, const PipelineConfig& cfg) {
    std::vector<data::ReportInput> reports;
    for (const auto& rel : run.validation_reports) reports.push_back({fs::path(rel).stem().string(), io::read_file(dir / rel)});
    const auto rows = compare_sections(*gw_, cfg.base_model, *run.stage2_model, reports, cfg.generation);
    const auto battery = synth::load_battery(dir / run.dataset_paths.at("battery"));
    auto tuned = run_battery(*gw_, *run.stage2_model, battery, cfg.generation, cfg.categorize_options());
    monitor::flag_records(tuned, *run.thresholds);
    json table = json::array();
    for (const auto& r : rows) table.push_back(to_json(r));
    write_artifact(dir / "exports" / "eval_stage2.json", records_json(tuned).dump() + "\n");
    write_artifact(dir / "exports" / "validation.json", table.dump(1) + "\n");
    write_artifact(dir / "exports" / "validation.md", validation_table_markdown(rows));
    hook("validate:effect");
    commit(dir, run, "validated",
           {{"table", table},
            {"stage2_summary", to_json(summarize(tuned))},
            {"exports",
             {{"stage2", "exports/eval_stage2.json"},
              {"validation", "exports/validation.json"},
              {"validation_table", "exports/validation.md"}}}},
           "validate");
  }

  fs::path root_;
  std::shared_ptr<gateway::Gateway> gw_;
  StoreOptions opt_;
};

}  // namespace fist::pipeline
