#pragma once

// SPDX-License-Identifier: Apache-2.0

// Text-generation providers returning per-token top-k logprobs.
//
// Gateway routes on model id: ids starting with "mock:" go to the offline
// MockProvider, everything else to an HTTP chat-completions endpoint.
// Every response passes check_response() before it is returned.

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "fist/dataprep.hpp"
#include "fist/error.hpp"
#include "fist/io.hpp"
#include "fist/metrics.hpp"
#include "fist/random.hpp"
#include "fist/text.hpp"

namespace fist::gateway {

inline constexpr std::string_view kMockPrefix = "mock:";

struct GenerationRequest {
  std::string prompt;
  int max_tokens = 256;
  double temperature = 0.0;
  double top_p = 1.0;
  int logprob_alternatives = 5;
  std::string model_id;
};

enum class FinishReason { stop, length, error };

constexpr std::string_view to_string(FinishReason f) {
  switch (f) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::error: return "error";
  }
  return "error";
}

inline FinishReason finish_from_string(std::string_view s) {
  if (s == "stop") return FinishReason::stop;
  if (s == "length") return FinishReason::length;
  return FinishReason::error;
}

struct GenerationResponse {
  std::string text;
  std::vector<TokenLogProb> tokens;
  std::string model_id;
  FinishReason finish_reason = FinishReason::stop;
};

inline void validate(const GenerationRequest& r) {
  auto bad = [](const std::string& m) { fail(ErrorCode::InvalidRequest, m); };
  if (r.prompt.empty()) bad("prompt is empty");
  if (r.max_tokens <= 0) bad("max_tokens must be > 0");
  if (!(r.temperature >= 0.0) || !std::isfinite(r.temperature)) bad("temperature must be >= 0");
  if (!(r.top_p > 0.0 && r.top_p <= 1.0)) bad("top_p must lie in (0, 1]");
  if (r.logprob_alternatives < 1 || r.logprob_alternatives > static_cast<int>(kMaxAlternatives))
    bad("logprob_alternatives must lie in [1, 5]");
  if (r.model_id.empty()) bad("model_id is empty");
}

/// Response firewall. Greedy decoding (temperature 0) must pick the top
/// alternative; sampled decoding only has to agree with its own entry.
inline void check_response(const GenerationResponse& r, const GenerationRequest& req) {
  if (r.finish_reason != FinishReason::error && r.tokens.empty())
    fail(ErrorCode::MalformedProviderReply, "reply has no tokens");
  std::string joined;
  for (const auto& t : r.tokens) {
    try {
      validate_token(t, req.temperature == 0.0);
    } catch (const Error& e) {
      fail(ErrorCode::MalformedProviderReply, e.what());
    }
    if (t.alternatives.size() > static_cast<std::size_t>(req.logprob_alternatives))
      fail(ErrorCode::MalformedProviderReply, "more alternatives than requested");
    joined += t.token;
  }
  if (joined != r.text) fail(ErrorCode::MalformedProviderReply, "token fragments do not concatenate to the text");
}

// ---------------------------------------------------------------------------
// Fine-tune jobs
// ---------------------------------------------------------------------------

enum class JobState { queued, running, succeeded, failed };

constexpr std::string_view to_string(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::succeeded: return "succeeded";
    case JobState::failed: return "failed";
  }
  return "failed";
}

struct FineTuneJob {
  std::string job_id;
  JobState state = JobState::queued;
  std::string fine_tuned_model;  // set once succeeded
};

class Provider {
 public:
  virtual ~Provider() = default;
  virtual GenerationResponse complete(const GenerationRequest& req) = 0;
  /// Same idempotency key => same job id. Without a key every call creates
  /// a new job.
  virtual std::string submit_finetune(const std::filesystem::path& dataset, const std::string& base_model,
                                      data::Stage stage, const std::string& idempotency_key = {}) = 0;
  virtual FineTuneJob poll_finetune(const std::string& job_id) = 0;
};

/// Validates a dataset file for submission and returns its stage tag.
inline data::Stage dataset_stage(const std::vector<data::PromptCompletion>& records, data::Stage requested) {
  for (const auto& r : records)
    if (r.provenance.stage != requested)
      fail(ErrorCode::ValidationFailure, "dataset stage tag '" + std::string(data::to_string(r.provenance.stage)) +
                                             "' does not match requested stage '" +
                                             std::string(data::to_string(requested)) + "'");
  return requested;
}

// ---------------------------------------------------------------------------
// Mock provider
// ---------------------------------------------------------------------------

enum class Persona { untrained, stage1, stage2 };

constexpr std::string_view to_string(Persona p) {
  switch (p) {
    case Persona::untrained: return "untrained";
    case Persona::stage1: return "stage1";
    case Persona::stage2: return "stage2";
  }
  return "untrained";
}

/// "mock:stage2:ft-..." -> stage2; any other mock id is untrained.
inline Persona persona_of(std::string_view model_id) {
  if (model_id.substr(0, kMockPrefix.size()) != kMockPrefix) fail(ErrorCode::InvalidRequest, "not a mock model id");
  std::string_view rest = model_id.substr(kMockPrefix.size());
  rest = rest.substr(0, rest.find(':'));
  if (rest == "stage1") return Persona::stage1;
  if (rest == "stage2") return Persona::stage2;
  return Persona::untrained;
}

inline std::string mock_model_id(Persona p) { return std::string(kMockPrefix) + std::string(to_string(p)); }

struct PersonaProfile {
  double top_lo, top_hi;   // range of the chosen token's probability
  double hallucination;    // chance a fact sentence carries a perturbed value
  double compound;         // chance two facts are joined into one sentence
};

constexpr PersonaProfile profile_of(Persona p) {
  switch (p) {
    case Persona::untrained: return {0.22, 0.30, 0.35, 0.0};
    case Persona::stage1: return {0.55, 0.75, 0.20, 0.0};
    case Persona::stage2: return {0.90, 0.98, 0.05, 0.5};
  }
  return {0.22, 0.30, 0.35, 0.0};
}

// Probabilities used for tokens of a hallucinated sentence, regardless of
// persona: low certainty is the signature the monitor looks for.
inline constexpr double kUncertainLo = 0.20;
inline constexpr double kUncertainHi = 0.28;

/// (subject, attribute, value) triple read from a table in the prompt.
struct PromptFact {
  std::string subject;
  std::string attribute;
  data::Number value;
};

/// Facts from every pipe/tab table in `prompt`: first column is the
/// subject, each numeric cell one fact keyed by its column name.
inline std::vector<PromptFact> prompt_facts(std::string_view prompt) {
  std::vector<PromptFact> out;
  const auto ls = text::lines(prompt);
  for (std::size_t i = 0; i < ls.size();) {
    if (!data::detail::is_table_row(ls[i])) {
      ++i;
      continue;
    }
    std::vector<std::string_view> block;
    while (i < ls.size() && data::detail::is_table_row(ls[i])) block.push_back(ls[i++]);
    const data::TabularData t = data::detail::build_table(block, "", "");
    for (const auto& row : t.rows) {
      if (row.empty() || data::is_number(row[0])) continue;
      const std::string subject = std::get<std::string>(row[0]);
      if (subject.empty()) continue;
      for (std::size_t c = 1; c < row.size(); ++c)
        if (auto* n = std::get_if<data::Number>(&row[c]); n && !t.schema[c].empty())
          out.push_back({subject, text::lower(t.schema[c]), *n});
    }
  }
  return out;
}

struct MockConfig {
  std::uint64_t seed = 0;
  /// Called before every operation with its name ("complete", "submit",
  /// "poll"); may throw to simulate provider faults.
  std::function<void(std::string_view)> fault_hook;
};

/// Offline provider whose output is a pure function of (seed, model id,
/// prompt, sampling parameters).
class MockProvider final : public Provider {
 public:
  explicit MockProvider(MockConfig cfg = {}) : cfg_(std::move(cfg)) {}

  GenerationResponse complete(const GenerationRequest& req) override {
    if (cfg_.fault_hook) cfg_.fault_hook("complete");
    validate(req);
    const Persona persona = persona_of(req.model_id);
    const PersonaProfile prof = profile_of(persona);
    std::uint64_t h = hash_combine(cfg_.seed, fnv1a64(req.model_id));
    h = hash_combine(h, fnv1a64(req.prompt));
    h = hash_combine(h, static_cast<std::uint64_t>(req.max_tokens));
    h = hash_combine(h, std::bit_cast<std::uint64_t>(req.temperature));
    h = hash_combine(h, std::bit_cast<std::uint64_t>(req.top_p));
    h = hash_combine(h, static_cast<std::uint64_t>(req.logprob_alternatives));
    SplitMix64 rng(h);

    const auto sentences = compose(prompt_facts(req.prompt), prof, rng);
    GenerationResponse resp;
    resp.model_id = req.model_id;
    for (const auto& s : sentences) {
      const double lo = s.uncertain ? kUncertainLo : prof.top_lo;
      const double hi = s.uncertain ? kUncertainHi : prof.top_hi;
      for (auto& frag : fragments(s.text, resp.tokens.empty())) {
        if (resp.tokens.size() == static_cast<std::size_t>(req.max_tokens)) {
          resp.finish_reason = FinishReason::length;
          break;
        }
        resp.tokens.push_back(make_token(std::move(frag), lo, hi, req.logprob_alternatives, rng));
        resp.text += resp.tokens.back().token;
      }
      if (resp.finish_reason == FinishReason::length) break;
    }
    return resp;
  }

  std::string submit_finetune(const std::filesystem::path& dataset, const std::string& base_model, data::Stage stage,
                              const std::string& idempotency_key = {}) override {
    if (cfg_.fault_hook) cfg_.fault_hook("submit");
    if (!std::filesystem::exists(dataset)) fail(ErrorCode::ValidationFailure, "dataset not found: " + dataset.string());
    const std::string contents = io::read_file(dataset);
    const auto records = data::parse_jsonl(contents);
    const Persona persona = dataset_stage(records, stage) == data::Stage::stage1 ? Persona::stage1 : Persona::stage2;
    std::uint64_t h = hash_combine(fnv1a64(contents), fnv1a64(base_model));
    if (idempotency_key.empty()) {
      static std::atomic<std::uint64_t> counter{0};
      h = hash_combine(h, hash_combine(std::random_device{}(), counter.fetch_add(1)));
      h = hash_combine(h, static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()));
    } else {
      h = hash_combine(h, fnv1a64(idempotency_key));
    }
    // Self-describing id so a later process can poll without shared state.
    return "mock-ft-" + std::string(to_string(persona)) + "-" + hex64(h);
  }

  FineTuneJob poll_finetune(const std::string& job_id) override {
    if (cfg_.fault_hook) cfg_.fault_hook("poll");
    const std::string_view prefix = "mock-ft-";
    if (job_id.rfind(prefix, 0) != 0) fail(ErrorCode::InvalidRequest, "unknown mock job '" + job_id + "'");
    const std::string rest = job_id.substr(prefix.size());
    const auto dash = rest.find('-');
    if (dash == std::string::npos) fail(ErrorCode::InvalidRequest, "malformed mock job '" + job_id + "'");
    return {job_id, JobState::succeeded, std::string(kMockPrefix) + rest.substr(0, dash) + ":ft-" + rest.substr(dash + 1)};
  }

 private:
  struct Sentence {
    std::string text;
    bool uncertain = false;
  };

  static std::string cap(std::string s) {
    if (!s.empty()) s.front() = text::to_upper(s.front());
    return s;
  }

  static std::string value_text(const data::Number& v, bool perturb, SplitMix64& rng) {
    if (!perturb) return data::format_number(v);
    data::Number p = v;
    const double delta = rng.uniform(0.08, 0.30);
    p.value *= rng.below(2) ? 1.0 + delta : 1.0 - delta;
    if (p.decimals == 0 && std::abs(p.value - v.value) < 1.0) p.value = v.value + 1.0;
    return data::format_number(p);
  }

  static std::vector<Sentence> compose(const std::vector<PromptFact>& facts, const PersonaProfile& prof,
                                       SplitMix64& rng) {
    static const std::array<std::string_view, 4> openers = {
        "Results for the period reflect the figures below.", "Performance was mixed across the business.",
        "The period showed steady execution.", "Overall results were in line with plans."};
    static const std::array<std::string_view, 3> closers = {
        "Management remains focused on disciplined execution.", "The outlook remains balanced.",
        "Further detail will follow in the next update."};
    std::vector<Sentence> out;
    out.push_back({std::string(openers[rng.below(openers.size())]), false});
    const std::size_t n = std::min<std::size_t>(facts.size(), 6);
    auto clause = [&](const PromptFact& f, bool perturb) {
      const std::string v = value_text(f.value, perturb, rng);
      switch (rng.below(3)) {
        case 0: return f.subject + " reported " + f.attribute + " of " + v;
        case 1: return f.subject + " " + f.attribute + " was " + v;
        default: return cap(f.attribute) + " for " + f.subject + " reached " + v;
      }
    };
    for (std::size_t i = 0; i < n; ++i) {
      const bool perturb = rng.uniform() < prof.hallucination;
      std::string s = cap(clause(facts[i], perturb));
      if (i + 1 < n && rng.uniform() < prof.compound) {
        const bool perturb2 = rng.uniform() < prof.hallucination;
        s += ", while " + clause(facts[i + 1], perturb2);
        out.push_back({s + ".", perturb || perturb2});
        ++i;
        continue;
      }
      out.push_back({s + ".", perturb});
    }
    if (facts.empty()) out.push_back({"No figures were provided for this request.", false});
    out.push_back({std::string(closers[rng.below(closers.size())]), false});
    return out;
  }

  /// Word-level fragments with a leading space; '.' and ',' at word end
  /// become their own fragments.
  static std::vector<std::string> fragments(std::string_view sentence, bool first) {
    std::vector<std::string> out;
    for (auto& w : text::split_whitespace(sentence)) {
      std::string word = w;
      std::string punct;
      if (word.size() > 1 && (word.back() == '.' || word.back() == ',')) {
        punct = word.substr(word.size() - 1);
        word.pop_back();
      }
      out.push_back((first && out.empty() ? "" : " ") + word);
      if (!punct.empty()) out.push_back(punct);
    }
    return out;
  }

  static TokenLogProb make_token(std::string frag, double lo, double hi, int k, SplitMix64& rng) {
    static const std::array<std::string_view, 12> distractors = {" the", " revenue", " growth", " margin",
                                                                  " strong", " quarter", " results", " and",
                                                                  " increased", ",", ".", " of"};
    const double top = rng.uniform(lo, hi);
    const double rest = (1.0 - top) * rng.uniform(0.85, 1.0);
    std::vector<double> w(static_cast<std::size_t>(k - 1));
    double sum = 0;
    for (auto& x : w) sum += (x = rng.uniform(0.5, 1.5));
    TokenLogProb t;
    t.token = std::move(frag);
    t.chosen_logprob = std::log(top);
    t.alternatives.push_back({t.token, t.chosen_logprob});
    std::vector<double> probs;
    for (auto x : w) probs.push_back(std::min(rest * x / sum, top * 0.98));
    std::sort(probs.begin(), probs.end(), std::greater<>());
    std::size_t d = rng.below(distractors.size());
    for (double p : probs) {
      while (distractors[d] == t.token) d = (d + 1) % distractors.size();
      t.alternatives.push_back({std::string(distractors[d]), std::log(p)});
      d = (d + 1) % distractors.size();
    }
    return t;
  }

  MockConfig cfg_;
};

// ---------------------------------------------------------------------------
// HTTP provider
// ---------------------------------------------------------------------------

struct HttpConfig {
  std::string base_url;  // "http://host:port"
  std::string completions_path = "/v1/chat/completions";
  std::string finetune_path = "/v1/fine_tuning/jobs";
  std::string auth_header = "Authorization";
  std::string auth_scheme = "Bearer";
  std::string api_key;
  std::chrono::milliseconds timeout{60000};
  int retry_budget = 3;
  std::chrono::milliseconds backoff_initial{500};
  /// Sent verbatim as "hyperparameters" in fine-tune requests (e.g. epochs).
  nlohmann::json hyperparameters = nlohmann::json::object();
};

/// Token bucket; rate <= 0 disables limiting.
class RateLimiter {
 public:
  RateLimiter(double rate_per_sec = 0.0, double burst = 1.0)
      : rate_(rate_per_sec), burst_(std::max(1.0, burst)), tokens_(burst_), last_(clock::now()) {}

  void acquire() {
    if (rate_ <= 0.0) return;
    for (;;) {
      std::chrono::duration<double> wait{};
      {
        std::lock_guard lock(mu_);
        const auto now = clock::now();
        tokens_ = std::min(burst_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
        last_ = now;
        if (tokens_ >= 1.0) {
          tokens_ -= 1.0;
          return;
        }
        wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
      }
      std::this_thread::sleep_for(wait);
    }
  }

 private:
  using clock = std::chrono::steady_clock;
  std::mutex mu_;
  double rate_, burst_, tokens_;
  clock::time_point last_;
};

class HttpProvider final : public Provider {
 public:
  explicit HttpProvider(HttpConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.base_url.empty()) fail(ErrorCode::ProviderUnavailable, "no provider base URL configured");
  }

  GenerationResponse complete(const GenerationRequest& req) override {
    validate(req);
    nlohmann::json body = {{"model", req.model_id},
                           {"messages", {{{"role", "user"}, {"content", req.prompt}}}},
                           {"max_tokens", req.max_tokens},
                           {"temperature", req.temperature},
                           {"top_p", req.top_p},
                           {"logprobs", true},
                           {"top_logprobs", req.logprob_alternatives}};
    const auto reply = send("POST", cfg_.completions_path, body.dump(), {});
    return parse_completion(reply, req.model_id);
  }

  std::string submit_finetune(const std::filesystem::path& dataset, const std::string& base_model, data::Stage stage,
                              const std::string& idempotency_key = {}) override {
    if (!std::filesystem::exists(dataset)) fail(ErrorCode::ValidationFailure, "dataset not found: " + dataset.string());
    const std::string contents = io::read_file(dataset);
    dataset_stage(data::parse_jsonl(contents), stage);
    nlohmann::json body = {{"model", base_model},
                           {"training_data", contents},
                           {"metadata", {{"stage", data::to_string(stage)}}}};
    if (!cfg_.hyperparameters.empty()) body["hyperparameters"] = cfg_.hyperparameters;
    httplib::Headers extra;
    if (!idempotency_key.empty()) extra.emplace("Idempotency-Key", idempotency_key);
    const auto reply = send("POST", cfg_.finetune_path, body.dump(), extra);
    try {
      return reply.at("id").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::MalformedProviderReply, std::string("fine-tune reply: ") + e.what());
    }
  }

  FineTuneJob poll_finetune(const std::string& job_id) override {
    const auto reply = send("GET", cfg_.finetune_path + "/" + job_id, "", {});
    try {
      FineTuneJob job{job_id, JobState::queued, {}};
      const std::string status = reply.at("status").get<std::string>();
      if (status == "succeeded") {
        job.state = JobState::succeeded;
        job.fine_tuned_model = reply.at("fine_tuned_model").get<std::string>();
      } else if (status == "running") {
        job.state = JobState::running;
      } else if (status == "failed" || status == "cancelled") {
        job.state = JobState::failed;
      }
      return job;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::MalformedProviderReply, std::string("job reply: ") + e.what());
    }
  }

  /// choices[0] with logprobs.content[] of {token, logprob, top_logprobs[]}.
  static GenerationResponse parse_completion(const nlohmann::json& j, const std::string& model_id) {
    GenerationResponse r;
    r.model_id = j.value("model", model_id);
    try {
      const auto& choice = j.at("choices").at(0);
      const auto& msg = choice.at("message");
      r.text = msg.at("content").is_null() ? "" : msg.at("content").get<std::string>();
      r.finish_reason = finish_from_string(choice.value("finish_reason", "stop"));
      if (!choice.contains("logprobs") || choice["logprobs"].is_null() || !choice["logprobs"].contains("content") ||
          choice["logprobs"]["content"].is_null())
        fail(ErrorCode::MalformedProviderReply, "reply is missing logprobs");
      for (const auto& item : choice["logprobs"]["content"]) {
        TokenLogProb t;
        t.token = item.at("token").get<std::string>();
        t.chosen_logprob = item.at("logprob").get<double>();
        for (const auto& alt : item.at("top_logprobs"))
          t.alternatives.push_back({alt.at("token").get<std::string>(), alt.at("logprob").get<double>()});
        std::stable_sort(t.alternatives.begin(), t.alternatives.end(),
                         [](const Alternative& a, const Alternative& b) { return a.logprob > b.logprob; });
        r.tokens.push_back(std::move(t));
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::MalformedProviderReply, std::string("completion reply: ") + e.what());
    }
    return r;
  }

 private:
  nlohmann::json send(const std::string& method, const std::string& path, const std::string& body,
                      const httplib::Headers& extra) {
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.retry_budget; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(cfg_.backoff_initial * (1 << (attempt - 1)));
      httplib::Client cli(cfg_.base_url);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);
      cli.set_connection_timeout(secs.count(), usecs.count());
      cli.set_read_timeout(secs.count(), usecs.count());
      cli.set_write_timeout(secs.count(), usecs.count());
      httplib::Headers headers = extra;
      if (!cfg_.api_key.empty())
        headers.emplace(cfg_.auth_header, cfg_.auth_scheme.empty() ? cfg_.api_key : cfg_.auth_scheme + " " + cfg_.api_key);
      const auto res = method == "GET" ? cli.Get(path, headers) : cli.Post(path, headers, body, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 401 || res->status == 403) fail(ErrorCode::AuthFailure, "provider rejected credentials");
      if (res->status == 429 || res->status >= 500) {
        last_error = "provider status " + std::to_string(res->status);
        continue;
      }
      if (res->status >= 400)
        fail(ErrorCode::InvalidRequest, "provider status " + std::to_string(res->status) + ": " + res->body);
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::MalformedProviderReply, std::string("reply is not JSON: ") + e.what());
      }
    }
    fail(ErrorCode::BudgetExhausted,
         "gave up after " + std::to_string(cfg_.retry_budget + 1) + " attempts (" + last_error + ")");
  }

  HttpConfig cfg_;
};

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

struct GatewayConfig {
  HttpConfig http;
  std::string api_key_env = "FIST_PROVIDER_KEY";
  MockConfig mock;
  int max_in_flight = 8;
  double rate_per_sec = 0.0;
  double burst = 8.0;

  /// Reads base_url, paths, auth names, timeout_ms, retry_budget,
  /// backoff_ms, hyperparameters, max_in_flight, rate_per_sec, burst,
  /// mock_seed. The API key itself only ever comes from the environment.
  static GatewayConfig from_json(const nlohmann::json& j) {
    GatewayConfig c;
    c.http.base_url = j.value("base_url", c.http.base_url);
    c.http.completions_path = j.value("completions_path", c.http.completions_path);
    c.http.finetune_path = j.value("finetune_path", c.http.finetune_path);
    c.http.auth_header = j.value("auth_header", c.http.auth_header);
    c.http.auth_scheme = j.value("auth_scheme", c.http.auth_scheme);
    c.http.timeout = std::chrono::milliseconds(j.value("timeout_ms", 60000));
    c.http.retry_budget = j.value("retry_budget", c.http.retry_budget);
    c.http.backoff_initial = std::chrono::milliseconds(j.value("backoff_ms", 500));
    if (j.contains("hyperparameters")) c.http.hyperparameters = j.at("hyperparameters");
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    c.rate_per_sec = j.value("rate_per_sec", c.rate_per_sec);
    c.burst = j.value("burst", c.burst);
    c.mock.seed = j.value("mock_seed", c.mock.seed);
    return c;
  }

  static GatewayConfig load(const std::filesystem::path& path) {
    try {
      return from_json(nlohmann::json::parse(io::read_file(path)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ValidationFailure, path.string() + ": " + e.what());
    }
  }
};

/// Shareable client. Concurrent calls are capped at max_in_flight and
/// paced by one token bucket.
class Gateway {
 public:
  explicit Gateway(GatewayConfig cfg = {})
      : cfg_(std::move(cfg)),
        mock_(std::make_shared<MockProvider>(cfg_.mock)),
        slots_(std::max(1, cfg_.max_in_flight)),
        limiter_(cfg_.rate_per_sec, cfg_.burst) {
    if (cfg_.http.api_key.empty())
      if (const char* k = std::getenv(cfg_.api_key_env.c_str())) cfg_.http.api_key = k;
  }

  /// Replaces the HTTP backend (tests, alternative transports).
  void set_remote(std::shared_ptr<Provider> p) { remote_ = std::move(p); }

  GenerationResponse complete(const GenerationRequest& req) {
    validate(req);
    limiter_.acquire();
    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};
    auto resp = provider_for_model(req.model_id).complete(req);
    check_response(resp, req);
    return resp;
  }

  std::string submit_finetune(const std::filesystem::path& dataset, const std::string& base_model, data::Stage stage,
                              const std::string& idempotency_key = {}) {
    return provider_for_model(base_model).submit_finetune(dataset, base_model, stage, idempotency_key);
  }

  FineTuneJob poll_finetune(const std::string& job_id) {
    if (job_id.rfind("mock-ft-", 0) == 0) return mock_->poll_finetune(job_id);
    return remote().poll_finetune(job_id);
  }

  const GatewayConfig& config() const { return cfg_; }

 private:
  Provider& provider_for_model(std::string_view model_id) {
    if (model_id.substr(0, kMockPrefix.size()) == kMockPrefix) return *mock_;
    return remote();
  }

  Provider& remote() {
    std::lock_guard lock(mu_);
    if (!remote_) remote_ = std::make_shared<HttpProvider>(cfg_.http);
    return *remote_;
  }

  GatewayConfig cfg_;
  std::shared_ptr<MockProvider> mock_;
  std::shared_ptr<Provider> remote_;
  std::mutex mu_;
  std::counting_semaphore<> slots_;
  RateLimiter limiter_;
};

}  // namespace fist::gateway
