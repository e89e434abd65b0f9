#pragma once

// SPDX-License-Identifier: Apache-2.0

// `fist` command line. Every subcommand is a thin adapter over a library
// call and accepts --json for machine-readable output.
//
// Exit codes: 0 success, 1 domain error, 2 usage error.
//
// Environment:
//   FIST_CONFIG_DIR    config directory (gateway.json, pipeline.json, templates/)
//   FIST_RUNS_DIR      run store root
//   FIST_PROVIDER_KEY  provider API key (name configurable in gateway.json)
//   FIST_API_TOKEN     bearer token required by `serve`, if set

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fist/dataprep.hpp"
#include "fist/error.hpp"
#include "fist/gateway.hpp"
#include "fist/io.hpp"
#include "fist/monitor.hpp"
#include "fist/pipeline.hpp"
#include "fist/service.hpp"
#include "fist/synth.hpp"

namespace fist::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kOk = 0;
inline constexpr int kDomainError = 1;
inline constexpr int kUsageError = 2;

inline std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

namespace detail {

struct Context {
  std::ostream& out;
  std::ostream& err;
  bool json_out = false;
  std::string config_dir = env_or("FIST_CONFIG_DIR", "config");
  std::string runs_dir = env_or("FIST_RUNS_DIR", "runs");
  std::string gateway_file;

  std::shared_ptr<gateway::Gateway> gw;

  std::shared_ptr<gateway::Gateway> gateway() {
    if (gw) return gw;
    fs::path p = gateway_file.empty() ? fs::path(config_dir) / "gateway.json" : fs::path(gateway_file);
    gateway::GatewayConfig cfg;
    if (!gateway_file.empty() || fs::exists(p)) cfg = gateway::GatewayConfig::load(p);
    return gw = std::make_shared<gateway::Gateway>(cfg);
  }

  pipeline::RunStore store() { return pipeline::RunStore(runs_dir, gateway()); }

  data::TemplateSet templates() const {
    return fs::is_directory(fs::path(config_dir) / "templates") ? data::TemplateSet::from_config_dir(config_dir)
                                                              : data::TemplateSet::defaults();
  }

  fs::path pipeline_config_path(const std::string& given) const {
    return given.empty() ? fs::path(config_dir) / "pipeline.json" : fs::path(given);
  }

  /// Emits `j` with --json, otherwise the human-readable `text`.
  void emit(const json& j, const std::string& text) {
    if (json_out) out << j.dump(2) << "\n";
    else out << text << (text.empty() || text.back() == '\n' ? "" : "\n");
  }
};

inline std::string run_line(const pipeline::PipelineRun& r) {
  std::string s = r.run_id + "  " + std::string(pipeline::to_string(r.state));
  if (r.eval_summary)
    s += "  correct=" + std::to_string(r.eval_summary->correct) + " hallucination=" +
         std::to_string(r.eval_summary->hallucination) + " incomplete=" + std::to_string(r.eval_summary->incomplete);
  if (r.state == pipeline::RunState::curation_open)
    s += "  unreviewed=" + std::to_string(r.remaining_unreviewed()) + "/" + std::to_string(r.items.size());
  return s;
}

inline std::vector<data::ReportInput> read_reports(const std::vector<std::string>& paths) {
  std::vector<data::ReportInput> out;
  for (const auto& p : paths) out.push_back({fs::path(p).stem().string(), io::read_file(p)});
  return out;
}

inline json records_json(std::span<const monitor::EvalRecord> recs) {
  json a = json::array();
  for (const auto& r : recs) a.push_back(monitor::to_json(r));
  return a;
}

inline std::vector<monitor::EvalRecord> load_records(const fs::path& p) {
  json j;
  try {
    j = json::parse(io::read_file(p));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ValidationFailure, p.string() + ": " + e.what());
  }
  std::vector<monitor::EvalRecord> out;
  for (const auto& r : j) out.push_back(monitor::record_from_json(r));
  return out;
}

}  // namespace detail

/// Runs one command line; never throws.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  detail::Context ctx{out, err};
  CLI::App app{"fist: financial report fine-tuning, evaluation and curation toolkit", "fist"};
  app.require_subcommand(1);
  app.add_option("--config-dir", ctx.config_dir, "Config directory [env FIST_CONFIG_DIR]");
  app.add_option("--runs-dir", ctx.runs_dir, "Run store root [env FIST_RUNS_DIR]");
  app.add_option("--gateway", ctx.gateway_file, "Gateway config JSON (default <config-dir>/gateway.json)");
  auto json_flag = [&](CLI::App* sub) { sub->add_flag("--json", ctx.json_out, "Machine-readable output"); };

  std::function<void()> action;

  // prep -------------------------------------------------------------------
  struct {
    std::vector<std::string> in;
    std::string out;
    std::size_t variants = 1;
    std::uint64_t seed = 0;
    double jitter = data::kDefaultJitter;
    std::string synonyms;
  } prep;
  auto* c_prep = app.add_subcommand("prep", "Parse reports into a stage-1 prompt-completion JSONL dataset");
  c_prep->add_option("--in", prep.in, "Report files (markdown/plain text)")->required()->check(CLI::ExistingFile);
  c_prep->add_option("--out", prep.out, "Output JSONL")->required();
  c_prep->add_option("--variants", prep.variants, "Augmented variants per section")->check(CLI::PositiveNumber);
  c_prep->add_option("--seed", prep.seed, "Augmentation seed");
  c_prep->add_option("--jitter", prep.jitter, "Relative numeric jitter in (0, 0.5]");
  c_prep->add_option("--column-synonyms", prep.synonyms, "Column synonym file")->check(CLI::ExistingFile);
  json_flag(c_prep);
  c_prep->callback([&] {
    action = [&] {
      const auto reports = detail::read_reports(prep.in);
      const auto templates = ctx.templates();
      std::optional<data::SynonymMap> syn;
      if (!prep.synonyms.empty()) syn = data::parse_synonyms(io::read_file(prep.synonyms));
      data::DatasetOptions opt;
      opt.variants = prep.variants;
      opt.seed = prep.seed;
      opt.jitter = prep.jitter;
      opt.templates = &templates;
      opt.column_synonyms = syn ? &*syn : nullptr;
      const auto ds = data::build_dataset(reports, opt);
      const auto n = data::export_jsonl(ds, prep.out);
      json reps = json::array();
      for (const auto& r : reports) {
        const auto parsed = data::parse_report(r.text, r.id);
        reps.push_back({{"id", r.id},
                        {"sections", parsed.sections.size()},
                        {"tables", parsed.tables.size()},
                        {"diagnostic", parsed.diagnostic ? json(to_string(*parsed.diagnostic)) : json(nullptr)}});
      }
      ctx.emit({{"records", n}, {"out", prep.out}, {"reports", reps}},
               "wrote " + std::to_string(n) + " records to " + prep.out);
    };
  });

  // augment ----------------------------------------------------------------
  struct {
    std::string in;
    std::uint64_t seed = 0;
    double jitter = data::kDefaultJitter;
    std::size_t variants = 1;
  } aug;
  auto* c_aug = app.add_subcommand("augment", "Jitter the numeric cells of every table in a file");
  c_aug->add_option("--in", aug.in, "File containing pipe or tab-separated tables")->required()->check(CLI::ExistingFile);
  c_aug->add_option("--seed", aug.seed, "Seed");
  c_aug->add_option("--jitter", aug.jitter, "Relative jitter in (0, 0.5]");
  c_aug->add_option("--variants", aug.variants, "Copies per table")->check(CLI::PositiveNumber);
  json_flag(c_aug);
  c_aug->callback([&] {
    action = [&] {
      const auto parsed = data::parse_report(io::read_file(aug.in), fs::path(aug.in).stem().string());
      if (parsed.tables.empty()) fail(ErrorCode::ValidationFailure, aug.in + ": no tables found");
      json tables = json::array();
      std::string text;
      for (std::size_t t = 0; t < parsed.tables.size(); ++t)
        for (std::size_t v = 0; v < aug.variants; ++v) {
          const auto a = data::augment_table(parsed.tables[t], hash_combine(aug.seed, hash_combine(t, v)), aug.jitter);
          const auto pipe = data::to_pipe_table(a);
          tables.push_back({{"table", t}, {"variant", v}, {"pipe", pipe}});
          text += pipe + "\n";
        }
      ctx.emit({{"tables", tables}}, text);
    };
  });

  // finetune ---------------------------------------------------------------
  struct {
    int stage = 1;
    std::string dataset, base, key;
    bool wait = false;
  } ft;
  auto* c_ft = app.add_subcommand("finetune", "Submit a fine-tune job");
  c_ft->add_option("--stage", ft.stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  c_ft->add_option("--dataset", ft.dataset, "JSONL dataset")->required()->check(CLI::ExistingFile);
  c_ft->add_option("--base", ft.base, "Base model id")->required();
  c_ft->add_option("--key", ft.key, "Idempotency key");
  c_ft->add_flag("--wait", ft.wait, "Poll until the job finishes");
  json_flag(c_ft);
  c_ft->callback([&] {
    action = [&] {
      auto gw = ctx.gateway();
      const auto stage = ft.stage == 1 ? data::Stage::stage1 : data::Stage::stage2_curated;
      const auto job_id = gw->submit_finetune(ft.dataset, ft.base, stage, ft.key);
      gateway::FineTuneJob job{job_id, gateway::JobState::queued, {}};
      if (ft.wait) {
        for (int i = 0;; ++i) {
          job = gw->poll_finetune(job_id);
          if (job.state == gateway::JobState::succeeded || job.state == gateway::JobState::failed) break;
          std::this_thread::sleep_for(std::chrono::milliseconds(std::min(5000, 100 << std::min(i, 6))));
        }
        if (job.state == gateway::JobState::failed) fail(ErrorCode::ProviderUnavailable, "fine-tune job " + job_id + " failed");
      }
      ctx.emit({{"job_id", job_id},
                {"state", gateway::to_string(job.state)},
                {"fine_tuned_model", job.fine_tuned_model.empty() ? json(nullptr) : json(job.fine_tuned_model)}},
               job.fine_tuned_model.empty() ? job_id : job_id + " " + job.fine_tuned_model);
    };
  });

  // eval -------------------------------------------------------------------
  struct {
    std::string model, battery, out;
    std::optional<double> floor, ceiling;
  } ev;
  auto* c_ev = app.add_subcommand("eval", "Ask the question battery and categorize the answers");
  c_ev->add_option("--model", ev.model, "Model id")->required();
  c_ev->add_option("--battery", ev.battery, "Battery JSON (default: from pipeline.json)");
  c_ev->add_option("--out", ev.out, "Write scored records JSON here");
  c_ev->add_option("--asls-floor", ev.floor, "Absolute ASLS floor (default run-relative)");
  c_ev->add_option("--ce-ceiling", ev.ceiling, "Absolute per-token CE ceiling (default run-relative)");
  json_flag(c_ev);
  c_ev->callback([&] {
    action = [&] {
      std::string battery_path = ev.battery;
      pipeline::PipelineConfig pcfg;
      if (const auto p = ctx.pipeline_config_path(""); fs::exists(p)) pcfg = pipeline::PipelineConfig::load(p);
      if (battery_path.empty()) battery_path = pcfg.battery;
      if (battery_path.empty()) fail(ErrorCode::ValidationFailure, "no battery given and none configured");
      const auto battery = synth::load_battery(battery_path);
      auto recs = pipeline::run_battery(*ctx.gateway(), ev.model, battery, pcfg.generation, pcfg.categorize_options());
      auto t = monitor::adaptive_thresholds(recs);
      if (ev.floor) t.asls_floor = *ev.floor;
      if (ev.ceiling) t.ce_per_token_ceiling = *ev.ceiling;
      monitor::check_thresholds(t.asls_floor, t.ce_per_token_ceiling);
      monitor::flag_records(recs, t);
      if (!ev.out.empty()) io::write_atomic(ev.out, detail::records_json(recs).dump() + "\n");
      const auto s = pipeline::summarize(recs);
      ctx.emit({{"model", ev.model},
                {"questions", recs.size()},
                {"summary", pipeline::to_json(s)},
                {"thresholds", pipeline::to_json(t)},
                {"flagged_sentences", monitor::flag_count(recs)}},
               ev.model + ": correct=" + std::to_string(s.correct) + " hallucination=" + std::to_string(s.hallucination) +
                   " incomplete=" + std::to_string(s.incomplete) + " flagged_sentences=" +
                   std::to_string(monitor::flag_count(recs)));
    };
  });

  // monitor ----------------------------------------------------------------
  struct {
    std::string metric, out, svg, run;
    std::vector<std::string> records;
  } mon;
  auto* c_mon = app.add_subcommand("monitor", "Export the per-sentence certainty scatter as CSV");
  c_mon->add_option("--metric", mon.metric, "ce or asls")->required()->check(CLI::IsMember({"ce", "asls"}));
  c_mon->add_option("--records", mon.records, "label=records.json from `fist eval --out` (repeatable)");
  c_mon->add_option("--run", mon.run, "Use the evaluations stored in a run instead");
  c_mon->add_option("--out", mon.out, "CSV path (default stdout)");
  c_mon->add_option("--svg", mon.svg, "Also write an SVG scatter plot");
  json_flag(c_mon);
  c_mon->callback([&] {
    action = [&] {
      const auto metric = monitor::scatter_metric_from_string(mon.metric);
      std::vector<monitor::ScatterRow> rows;
      if (!mon.run.empty()) {
        rows = ctx.store().scatter(mon.run, metric);
      } else {
        if (mon.records.empty()) fail(ErrorCode::InvalidRequest, "give --records or --run");
        std::vector<std::pair<std::string, std::vector<monitor::EvalRecord>>> loaded;
        for (const auto& spec : mon.records) {
          const auto eq = spec.find('=');
          const std::string label = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
          loaded.emplace_back(label, detail::load_records(eq == std::string::npos ? spec : spec.substr(eq + 1)));
        }
        std::vector<monitor::ScatterRun> runs;
        for (const auto& [label, recs] : loaded) runs.push_back({label, recs});
        rows = monitor::scatter_rows(runs, metric);
      }
      if (rows.empty()) fail(ErrorCode::InvalidRequest, "no scored sentences to export");
      const std::string csv = monitor::scatter_csv(rows);
      if (!mon.out.empty()) io::write_atomic(mon.out, csv);
      if (!mon.svg.empty()) io::write_atomic(mon.svg, monitor::scatter_svg(rows, metric));
      json means = json::object();
      for (const auto& [label, m] : monitor::run_means(rows)) means[label] = m;
      if (ctx.json_out) ctx.emit({{"rows", rows.size()}, {"means", means}, {"out", mon.out.empty() ? json(nullptr) : json(mon.out)}}, "");
      else if (mon.out.empty()) out << csv;
      else ctx.emit({}, "wrote " + std::to_string(rows.size()) + " rows to " + mon.out);
    };
  });

  // validate ---------------------------------------------------------------
  struct {
    std::string run, untrained = "mock:untrained", stage2;
    std::vector<std::string> reports;
  } val;
  auto* c_val = app.add_subcommand("validate", "Sectional perplexity of the untrained and stage-2 models");
  c_val->add_option("--run", val.run, "Run whose stage-2 model to use");
  c_val->add_option("--stage2", val.stage2, "Stage-2 model id (without --run)");
  c_val->add_option("--untrained", val.untrained, "Untrained model id (without --run)");
  c_val->add_option("--report", val.reports, "Validation reports (default: the run's)")->check(CLI::ExistingFile);
  json_flag(c_val);
  c_val->callback([&] {
    action = [&] {
      std::vector<pipeline::ValidationRow> rows;
      if (!val.run.empty()) {
        auto store = ctx.store();
        if (val.reports.empty()) {
          const auto run = store.load(val.run);
          for (const auto& rel : run.validation_reports) val.reports.push_back((store.run_dir(val.run) / rel).string());
        }
        rows = store.validate_reports(val.run, detail::read_reports(val.reports));
      } else {
        if (val.stage2.empty()) fail(ErrorCode::ModelMissing, "give --run or --stage2");
        rows = pipeline::compare_sections(*ctx.gateway(), val.untrained, val.stage2, detail::read_reports(val.reports));
      }
      json j = json::array();
      for (const auto& r : rows) j.push_back(pipeline::to_json(r));
      ctx.emit({{"rows", j}}, pipeline::validation_table_markdown(rows));
    };
  });

  // serve ------------------------------------------------------------------
  struct {
    int port = service::kDefaultPort;
    std::string host = "127.0.0.1", ui;
  } srv;
  auto* c_srv = app.add_subcommand("serve", "Serve the review API (and UI assets) over HTTP");
  c_srv->add_option("--port", srv.port, "Port")->check(CLI::Range(1, 65535));
  c_srv->add_option("--host", srv.host, "Bind address");
  c_srv->add_option("--ui", srv.ui, "Directory of built UI assets to mount at /ui")->check(CLI::ExistingDirectory);
  json_flag(c_srv);
  c_srv->callback([&] {
    action = [&] {
      auto store = std::make_shared<pipeline::RunStore>(ctx.runs_dir, ctx.gateway());
      service::ApiOptions opt;
      if (const auto tok = env_or("FIST_API_TOKEN", ""); !tok.empty()) opt.bearer_token = tok;
      service::Api api(store, opt);
      static httplib::Server* active = nullptr;
      httplib::Server server;
      active = &server;
      auto stop = [](int) {
        if (active) active->stop();
      };
      std::signal(SIGINT, stop);
      std::signal(SIGTERM, stop);
      std::optional<fs::path> ui;
      if (!srv.ui.empty()) ui = fs::path(srv.ui);
      service::install(server, api, ui);
      if (!server.bind_to_port(srv.host, srv.port))
        fail(ErrorCode::IoFailure, "cannot listen on " + srv.host + ":" + std::to_string(srv.port));
      ctx.emit({{"listening", "http://" + srv.host + ":" + std::to_string(srv.port)}},
               "listening on http://" + srv.host + ":" + std::to_string(srv.port));
      out.flush();
      server.listen_after_bind();
      active = nullptr;
    };
  });

  // review-export ----------------------------------------------------------
  struct {
    std::string run, out, state = "all";
  } rx;
  auto* c_rx = app.add_subcommand("review-export", "Write a run's review items as JSON");
  c_rx->add_option("--run", rx.run, "Run id")->required();
  c_rx->add_option("--out", rx.out, "Output path (default stdout)");
  c_rx->add_option("--state", rx.state, "Only items with this human label, or all");
  json_flag(c_rx);
  c_rx->callback([&] {
    action = [&] {
      std::optional<pipeline::HumanLabel> only;
      if (rx.state != "all") only = pipeline::label_from_string(rx.state);
      json items = json::array();
      for (const auto& it : ctx.store().review_items(rx.run, only)) items.push_back(pipeline::to_json(it));
      const json doc = {{"run_id", rx.run}, {"items", items}};
      if (rx.out.empty()) {
        out << doc.dump(2) << "\n";
      } else {
        io::write_atomic(rx.out, doc.dump(2) + "\n");
        ctx.emit({{"items", items.size()}, {"out", rx.out}}, "wrote " + std::to_string(items.size()) + " items to " + rx.out);
      }
    };
  });

  // start / advance / label / status ------------------------------------
  struct {
    std::string dataset, config, run, until, item, label, edit, file;
    std::optional<std::uint64_t> revision;
  } rs;
  auto* c_start = app.add_subcommand("start", "Create (or find) the run for a stage-1 dataset");
  c_start->add_option("--dataset", rs.dataset, "Stage-1 JSONL")->required()->check(CLI::ExistingFile);
  c_start->add_option("--config", rs.config, "Pipeline config (default <config-dir>/pipeline.json)");
  json_flag(c_start);
  c_start->callback([&] {
    action = [&] {
      const auto run = ctx.store().start_run(rs.dataset, pipeline::PipelineConfig::load(ctx.pipeline_config_path(rs.config)));
      ctx.emit(pipeline::to_json(run, false), detail::run_line(run));
    };
  });

  auto* c_adv = app.add_subcommand("advance", "Perform the next transition of a run");
  c_adv->add_option("--run", rs.run, "Run id")->required();
  c_adv->add_option("--until", rs.until, "Keep advancing until this state or a blocking one");
  json_flag(c_adv);
  c_adv->callback([&] {
    action = [&] {
      auto store = ctx.store();
      auto run = store.advance(rs.run);
      if (!rs.until.empty()) {
        const auto target = pipeline::state_from_string(rs.until);
        while (run.state != target && run.state != pipeline::RunState::curation_open &&
               run.state != pipeline::RunState::validated && run.state != pipeline::RunState::failed) {
          const auto before = run.last_seq;
          run = store.advance(rs.run);
          if (run.last_seq == before) break;  // waiting on the provider
        }
      }
      ctx.emit(pipeline::to_json(run, false), detail::run_line(run));
    };
  });

  auto* c_lab = app.add_subcommand("label", "Record reviewer labels for a run in curation");
  c_lab->add_option("--run", rs.run, "Run id")->required();
  c_lab->add_option("--item", rs.item, "Review item id");
  c_lab->add_option("--label", rs.label, "hallucination, creative or correct");
  c_lab->add_option("--edit", rs.edit, "Repaired completion");
  c_lab->add_option("--revision", rs.revision, "Expected current revision");
  c_lab->add_option("--file", rs.file, "JSON list of labels instead")->check(CLI::ExistingFile);
  json_flag(c_lab);
  c_lab->callback([&] {
    action = [&] {
      std::vector<pipeline::LabelUpdate> updates;
      if (!rs.file.empty()) {
        json j;
        try {
          j = json::parse(io::read_file(rs.file));
        } catch (const json::parse_error& e) {
          fail(ErrorCode::ValidationFailure, rs.file + ": " + e.what());
        }
        if (j.is_object() && j.contains("labels")) j = j["labels"];
        if (!j.is_array()) fail(ErrorCode::ValidationFailure, rs.file + ": expected a list of labels");
        for (const auto& u : j) updates.push_back(pipeline::label_update_from_json(u));
      } else {
        if (rs.item.empty() || rs.label.empty()) fail(ErrorCode::InvalidRequest, "give --item and --label, or --file");
        pipeline::LabelUpdate u;
        u.item_id = rs.item;
        u.human_label = pipeline::label_from_string(rs.label);
        if (!rs.edit.empty()) u.edited_completion = rs.edit;
        u.revision = rs.revision;
        updates.push_back(std::move(u));
      }
      auto store = ctx.store();
      const auto remaining = store.curation_apply(rs.run, updates);
      const auto state = store.load(rs.run).state;
      ctx.emit({{"remaining", remaining}, {"state", pipeline::to_string(state)}},
               std::to_string(remaining) + " unreviewed, run " + std::string(pipeline::to_string(state)));
    };
  });

  auto* c_st = app.add_subcommand("status", "Show one run or list all runs");
  c_st->add_option("--run", rs.run, "Run id");
  json_flag(c_st);
  c_st->callback([&] {
    action = [&] {
      auto store = ctx.store();
      if (!rs.run.empty()) {
        const auto run = store.load(rs.run);
        ctx.emit(pipeline::to_json(run, false), detail::run_line(run));
        return;
      }
      json runs = json::array();
      std::string text;
      for (const auto& r : store.list()) {
        runs.push_back(pipeline::to_json(r, false));
        text += detail::run_line(r) + "\n";
      }
      ctx.emit({{"runs", runs}}, text.empty() ? "no runs" : text);
    };
  });

  // synth --------------------------------------------------------------------
  struct {
    std::string out_dir = "data";
    std::size_t questions = 40;
    std::uint64_t seed = 40;
  } sy;
  auto* c_sy = app.add_subcommand("synth", "Regenerate the sample battery and reports");
  c_sy->add_option("--out-dir", sy.out_dir, "Destination directory");
  c_sy->add_option("--questions", sy.questions, "Battery size")->check(CLI::PositiveNumber);
  c_sy->add_option("--seed", sy.seed, "Battery seed");
  json_flag(c_sy);
  c_sy->callback([&] {
    action = [&] {
      const fs::path d = sy.out_dir;
      std::vector<std::string> files;
      auto put = [&](const fs::path& rel, const std::string& body) {
        io::write_atomic(d / rel, body);
        files.push_back((d / rel).string());
      };
      put("battery.json", synth::battery_to_json(synth::make_battery(sy.questions, sy.seed)).dump(2) + "\n");
      put("reports/report1.md", synth::make_report("Acme", 101));
      put("reports/report2.md", synth::make_report("Globex", 102));
      const char* corpus[] = {"Initech", "Hooli", "Umbrella"};
      for (int i = 0; i < 3; ++i) put("corpus/" + text::lower(corpus[i]) + ".md", synth::make_report(corpus[i], 201 + i));
      ctx.emit({{"files", files}}, "wrote " + std::to_string(files.size()) + " files under " + d.string());
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsageError;
  }
  try {
    if (action) action();
    return kOk;
  } catch (const Error& e) {
    std::string msg = e.what();
    if (const auto prefix = std::string(to_string(e.code())) + ": "; msg.rfind(prefix, 0) == 0) msg.erase(0, prefix.size());
    if (ctx.json_out) out << json({{"error", {{"code", to_string(e.code())}, {"message", msg}}}}).dump(2) << "\n";
    err << "error: " << e.what() << "\n";
    return kDomainError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDomainError;
  }
}

}  // namespace fist::cli
