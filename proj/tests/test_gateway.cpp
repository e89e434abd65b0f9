// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <atomic>
#include <future>

#include "fist/gateway.hpp"
#include "fist/kg.hpp"
#include "test_helpers.hpp"

using namespace fist;
using namespace fist::gateway;

namespace {

const char* kPrompt = R"(You are a senior financial analyst.
Write the Financial Review section of a financial report.
Data:
| Company | Revenue | Operating margin |
|---------|---------|------------------|
| Acme | $1,234.5M | 15.1% |
| Globex | $800.0M | 9.4% |
)";

GenerationRequest request(const std::string& model, const std::string& prompt = kPrompt) {
  GenerationRequest r;
  r.prompt = prompt;
  r.model_id = model;
  return r;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::IoFailure;
}

/// Loopback server on an ephemeral port.
class FixtureServer {
 public:
  explicit FixtureServer(std::function<void(httplib::Server&)> setup) {
    setup(srv_);
    port_ = srv_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { srv_.listen_after_bind(); });
    srv_.wait_until_ready();
  }
  ~FixtureServer() {
    srv_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server srv_;
  int port_ = 0;
  std::thread thread_;
};

nlohmann::json good_reply() {
  return nlohmann::json::parse(R"({
    "model": "remote-1",
    "choices": [{
      "message": {"role": "assistant", "content": "Hi there"},
      "finish_reason": "stop",
      "logprobs": {"content": [
        {"token": "Hi", "logprob": -0.1, "top_logprobs": [{"token": "Hi", "logprob": -0.1}, {"token": "Hello", "logprob": -2.5}]},
        {"token": " there", "logprob": -0.2, "top_logprobs": [{"token": " world", "logprob": -3.0}, {"token": " there", "logprob": -0.2}]}
      ]}
    }]
  })");
}

HttpConfig http_config(const std::string& url) {
  HttpConfig c;
  c.base_url = url;
  c.backoff_initial = std::chrono::milliseconds(1);
  c.timeout = std::chrono::milliseconds(2000);
  c.api_key = "secret";
  return c;
}

}  // namespace

TEST(Request, Validation) {
  auto r = request("mock:untrained");
  EXPECT_NO_THROW(validate(r));
  auto bad = r;
  bad.max_tokens = 0;
  EXPECT_EQ(code_of([&] { validate(bad); }), ErrorCode::InvalidRequest);
  bad = r;
  bad.top_p = 0.0;
  EXPECT_EQ(code_of([&] { validate(bad); }), ErrorCode::InvalidRequest);
  bad = r;
  bad.temperature = -0.1;
  EXPECT_EQ(code_of([&] { validate(bad); }), ErrorCode::InvalidRequest);
  bad = r;
  bad.logprob_alternatives = 6;
  EXPECT_EQ(code_of([&] { validate(bad); }), ErrorCode::InvalidRequest);
}

TEST(PromptFacts, ReadsTables) {
  const auto facts = prompt_facts(kPrompt);
  ASSERT_EQ(facts.size(), 4u);
  EXPECT_EQ(facts[0].subject, "Acme");
  EXPECT_EQ(facts[0].attribute, "revenue");
  EXPECT_DOUBLE_EQ(facts[0].value.value, 1234.5);
  EXPECT_EQ(facts[3].attribute, "operating margin");
}

TEST(Mock, DeterministicAcrossInstances) {
  MockProvider a, b;
  const auto r1 = a.complete(request("mock:stage1"));
  const auto r2 = b.complete(request("mock:stage1"));
  EXPECT_EQ(r1.text, r2.text);
  ASSERT_EQ(r1.tokens.size(), r2.tokens.size());
  for (std::size_t i = 0; i < r1.tokens.size(); ++i) {
    EXPECT_EQ(r1.tokens[i].token, r2.tokens[i].token);
    EXPECT_EQ(std::bit_cast<std::uint64_t>(r1.tokens[i].chosen_logprob),
              std::bit_cast<std::uint64_t>(r2.tokens[i].chosen_logprob));
  }
  auto other = request("mock:stage1");
  other.temperature = 0.5;
  EXPECT_NE(a.complete(other).text + std::to_string(a.complete(other).tokens[0].chosen_logprob),
            r1.text + std::to_string(r1.tokens[0].chosen_logprob));
  EXPECT_NE(MockProvider({.seed = 1}).complete(request("mock:stage1")).tokens[0].chosen_logprob,
            r1.tokens[0].chosen_logprob);
}

TEST(Mock, ResponsesPassFirewallAndMentionFacts) {
  Gateway gw;
  for (auto p : {Persona::untrained, Persona::stage1, Persona::stage2}) {
    const auto r = gw.complete(request(mock_model_id(p)));
    EXPECT_EQ(r.finish_reason, FinishReason::stop);
    EXPECT_EQ(r.model_id, mock_model_id(p));
    EXPECT_NE(r.text.find("Acme"), std::string::npos) << r.text;
    for (const auto& t : r.tokens) EXPECT_EQ(t.alternatives.size(), 5u);
  }
}

TEST(Mock, MaxTokensTruncates) {
  MockProvider m;
  auto req = request("mock:stage2");
  req.max_tokens = 7;
  req.logprob_alternatives = 3;
  const auto r = m.complete(req);
  EXPECT_EQ(r.finish_reason, FinishReason::length);
  EXPECT_EQ(r.tokens.size(), 7u);
  std::string joined;
  for (const auto& t : r.tokens) {
    joined += t.token;
    EXPECT_EQ(t.alternatives.size(), 3u);
  }
  EXPECT_EQ(joined, r.text);
  EXPECT_NO_THROW(check_response(r, req));
}

TEST(Mock, Stage2MeanAslsExceedsUntrained) {
  MockProvider m;
  double mean[2] = {0, 0};
  const Persona personas[2] = {Persona::untrained, Persona::stage2};
  for (int k = 0; k < 2; ++k) {
    for (int i = 0; i < 50; ++i) {
      std::string prompt = "Question " + std::to_string(i) + "\n| Company | Revenue |\n|---|---|\n| Firm" +
                           std::to_string(i) + " | $" + std::to_string(100 + i) + "M |\n";
      mean[k] += asls(m.complete(request(mock_model_id(personas[k]), prompt)).tokens);
    }
    mean[k] /= 50;
  }
  EXPECT_GT(mean[1], mean[0]);
}

TEST(Mock, FinetuneJobs) {
  test_util::TempDir dir;
  const char* report = "# Introduction\nAcme grew.\n| Region | Revenue |\n|---|---|\n| Asia | $3M |\n";
  auto ds = data::build_dataset({{"r", report}}, {.stage = data::Stage::stage2_curated});
  data::export_jsonl(ds, dir / "s2.jsonl");
  Gateway gw;
  const auto j1 = gw.submit_finetune(dir / "s2.jsonl", "mock:stage1:ft-abc", data::Stage::stage2_curated);
  const auto j2 = gw.submit_finetune(dir / "s2.jsonl", "mock:stage1:ft-abc", data::Stage::stage2_curated);
  EXPECT_NE(j1, j2);
  const auto p1 = gw.poll_finetune(j1);
  const auto p2 = gw.poll_finetune(j2);
  EXPECT_EQ(p1.state, JobState::succeeded);
  EXPECT_EQ(persona_of(p1.fine_tuned_model), Persona::stage2);
  EXPECT_EQ(persona_of(p2.fine_tuned_model), Persona::stage2);
  EXPECT_EQ(gw.submit_finetune(dir / "s2.jsonl", "mock:untrained", data::Stage::stage2_curated, "key-1"),
            gw.submit_finetune(dir / "s2.jsonl", "mock:untrained", data::Stage::stage2_curated, "key-1"));

  // Polling from a fresh gateway needs no shared state.
  EXPECT_EQ(Gateway().poll_finetune(j1).fine_tuned_model, p1.fine_tuned_model);

  EXPECT_EQ(code_of([&] { gw.submit_finetune(dir / "s2.jsonl", "mock:untrained", data::Stage::stage1); }),
            ErrorCode::ValidationFailure);

  std::string body = data::serialize_jsonl(ds);
  body += "not json\n";
  io::write_atomic(dir / "bad.jsonl", body);
  try {
    gw.submit_finetune(dir / "bad.jsonl", "mock:untrained", data::Stage::stage2_curated);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ValidationFailure);
    EXPECT_NE(std::string(e.what()).find("line " + std::to_string(ds.size() + 1)), std::string::npos) << e.what();
  }
}

TEST(Mock, FaultHookSurfacesProviderErrors) {
  GatewayConfig cfg;
  cfg.mock.fault_hook = [](std::string_view op) {
    if (op == "complete") fail(ErrorCode::ProviderUnavailable, "down");
  };
  Gateway gw(cfg);
  EXPECT_EQ(code_of([&] { gw.complete(request("mock:stage1")); }), ErrorCode::ProviderUnavailable);
}

namespace {

class FakeProvider final : public Provider {
 public:
  std::function<GenerationResponse(const GenerationRequest&)> fn;
  GenerationResponse complete(const GenerationRequest& r) override { return fn(r); }
  std::string submit_finetune(const std::filesystem::path&, const std::string&, data::Stage,
                              const std::string&) override {
    return "job";
  }
  FineTuneJob poll_finetune(const std::string& id) override { return {id, JobState::running, {}}; }
};

}  // namespace

TEST(Firewall, RejectsInvalidTokens) {
  auto fake = std::make_shared<FakeProvider>();
  Gateway gw;
  gw.set_remote(fake);
  auto resp = HttpProvider::parse_completion(good_reply(), "remote-1");
  fake->fn = [&](const GenerationRequest&) { return resp; };
  EXPECT_NO_THROW(gw.complete(request("remote-1")));

  resp.tokens[1].chosen_logprob = 0.5;
  EXPECT_EQ(code_of([&] { gw.complete(request("remote-1")); }), ErrorCode::MalformedProviderReply);

  resp = HttpProvider::parse_completion(good_reply(), "remote-1");
  resp.text = "Hi world";
  EXPECT_EQ(code_of([&] { gw.complete(request("remote-1")); }), ErrorCode::MalformedProviderReply);

  // Non-argmax choice passes only under sampling.
  resp = HttpProvider::parse_completion(good_reply(), "remote-1");
  resp.tokens[0].chosen_logprob = -2.5;
  resp.tokens[0].token = "Hello";
  resp.text = "Hello there";
  EXPECT_EQ(code_of([&] { gw.complete(request("remote-1")); }), ErrorCode::MalformedProviderReply);
  auto sampled = request("remote-1");
  sampled.temperature = 0.7;
  EXPECT_NO_THROW(gw.complete(sampled));
}

TEST(Gateway, ConcurrencyCap) {
  auto fake = std::make_shared<FakeProvider>();
  std::atomic<int> live{0}, peak{0};
  const auto canned = HttpProvider::parse_completion(good_reply(), "remote-1");
  fake->fn = [&](const GenerationRequest&) {
    const int now = ++live;
    int p = peak.load();
    while (now > p && !peak.compare_exchange_weak(p, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    --live;
    return canned;
  };
  GatewayConfig cfg;
  cfg.max_in_flight = 2;
  Gateway gw(cfg);
  gw.set_remote(fake);
  std::vector<std::future<GenerationResponse>> fs;
  for (int i = 0; i < 8; ++i) fs.push_back(std::async(std::launch::async, [&] { return gw.complete(request("remote-1")); }));
  for (auto& f : fs) f.get();
  EXPECT_LE(peak.load(), 2);
  EXPECT_GE(peak.load(), 1);
}

TEST(RateLimiter, PacesCalls) {
  RateLimiter rl(200.0, 1.0);
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 11; ++i) rl.acquire();
  const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_GE(ms, 45.0);
}

TEST(Http, ParsesChatCompletionWithLogprobs) {
  std::string seen_auth, seen_body;
  FixtureServer srv([&](httplib::Server& s) {
    s.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
      seen_auth = req.get_header_value("Authorization");
      seen_body = req.body;
      res.set_content(good_reply().dump(), "application/json");
    });
  });
  Gateway gw;
  gw.set_remote(std::make_shared<HttpProvider>(http_config(srv.url())));
  auto req = request("remote-1", "hello");
  req.logprob_alternatives = 2;
  const auto r = gw.complete(req);
  EXPECT_EQ(r.text, "Hi there");
  ASSERT_EQ(r.tokens.size(), 2u);
  EXPECT_EQ(r.tokens[1].alternatives.front().token, " there");
  EXPECT_EQ(seen_auth, "Bearer secret");
  const auto body = nlohmann::json::parse(seen_body);
  EXPECT_EQ(body["top_logprobs"], 2);
  EXPECT_EQ(body["logprobs"], true);
  EXPECT_EQ(body["messages"][0]["content"], "hello");
}

TEST(Http, MissingLogprobsIsMalformed) {
  FixtureServer srv([&](httplib::Server& s) {
    s.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
      auto j = good_reply();
      j["choices"][0].erase("logprobs");
      res.set_content(j.dump(), "application/json");
    });
  });
  HttpProvider p(http_config(srv.url()));
  EXPECT_EQ(code_of([&] { p.complete(request("remote-1")); }), ErrorCode::MalformedProviderReply);
}

TEST(Http, AuthFailureIsNotRetried) {
  std::atomic<int> calls{0};
  FixtureServer srv([&](httplib::Server& s) {
    s.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
      ++calls;
      res.status = 401;
    });
  });
  HttpProvider p(http_config(srv.url()));
  EXPECT_EQ(code_of([&] { p.complete(request("remote-1")); }), ErrorCode::AuthFailure);
  EXPECT_EQ(calls.load(), 1);
}

TEST(Http, TransientFailuresRetryThenExhaustBudget) {
  std::atomic<int> calls{0};
  std::atomic<int> fail_first{2};
  FixtureServer srv([&](httplib::Server& s) {
    s.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
      ++calls;
      if (fail_first-- > 0) {
        res.status = 503;
        return;
      }
      res.set_content(good_reply().dump(), "application/json");
    });
  });
  HttpProvider p(http_config(srv.url()));
  EXPECT_EQ(p.complete(request("remote-1")).text, "Hi there");
  EXPECT_EQ(calls.load(), 3);

  calls = 0;
  fail_first = 100;
  EXPECT_EQ(code_of([&] { p.complete(request("remote-1")); }), ErrorCode::BudgetExhausted);
  EXPECT_EQ(calls.load(), 4);
}

TEST(Http, UnreachableHostExhaustsBudget) {
  int port;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  auto cfg = http_config("http://127.0.0.1:" + std::to_string(port));
  cfg.retry_budget = 1;
  HttpProvider p(cfg);
  EXPECT_EQ(code_of([&] { p.complete(request("remote-1")); }), ErrorCode::BudgetExhausted);
}

TEST(Http, FinetuneSubmitAndPoll) {
  test_util::TempDir dir;
  data::export_jsonl(data::build_dataset({{"r", "# Intro\nText.\n"}}), dir / "d.jsonl");
  std::string key;
  FixtureServer srv([&](httplib::Server& s) {
    s.Post("/v1/fine_tuning/jobs", [&](const httplib::Request& req, httplib::Response& res) {
      key = req.get_header_value("Idempotency-Key");
      const auto body = nlohmann::json::parse(req.body);
      EXPECT_EQ(body["metadata"]["stage"], "stage1");
      EXPECT_EQ(body["hyperparameters"]["n_epochs"], 100);
      res.set_content(R"({"id":"job-7"})", "application/json");
    });
    s.Get("/v1/fine_tuning/jobs/job-7", [&](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"id":"job-7","status":"succeeded","fine_tuned_model":"ft-remote"})", "application/json");
    });
  });
  auto cfg = http_config(srv.url());
  cfg.hyperparameters = {{"n_epochs", 100}};
  HttpProvider p(cfg);
  EXPECT_EQ(p.submit_finetune(dir / "d.jsonl", "base", data::Stage::stage1, "k1"), "job-7");
  EXPECT_EQ(key, "k1");
  const auto job = p.poll_finetune("job-7");
  EXPECT_EQ(job.state, JobState::succeeded);
  EXPECT_EQ(job.fine_tuned_model, "ft-remote");
}

TEST(Gateway, NoBaseUrlMeansProviderUnavailable) {
  Gateway gw;
  EXPECT_EQ(code_of([&] { gw.complete(request("remote-1")); }), ErrorCode::ProviderUnavailable);
}

TEST(Gateway, ConfigFromJson) {
  const auto c = GatewayConfig::from_json(
      nlohmann::json::parse(R"({"base_url":"http://x:1","timeout_ms":1500,"retry_budget":5,"max_in_flight":3})"));
  EXPECT_EQ(c.http.base_url, "http://x:1");
  EXPECT_EQ(c.http.timeout.count(), 1500);
  EXPECT_EQ(c.http.retry_budget, 5);
  EXPECT_EQ(c.max_in_flight, 3);
  EXPECT_EQ(GatewayConfig{}.http.timeout.count(), 60000);
  EXPECT_EQ(GatewayConfig{}.http.retry_budget, 3);
}
