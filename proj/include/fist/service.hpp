#pragma once

// SPDX-License-Identifier: Apache-2.0

// HTTP API over a RunStore. Api::handle is transport-free so it can be
// exercised directly; serve() binds it to cpp-httplib.
//
//   GET  /health
//   GET  /runs
//   GET  /runs/{id}
//   GET  /runs/{id}/review-items?state=<label>|all
//   POST /runs/{id}/labels        [{item_id, human_label, edited_completion?, revision?}]
//   POST /runs/{id}/advance
//   GET  /runs/{id}/scatter?metric=ce|asls     (text/csv)
//
// Every route is also served under /v1.

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "fist/error.hpp"
#include "fist/monitor.hpp"
#include "fist/pipeline.hpp"
#include "fist/text.hpp"

namespace fist::service {

using nlohmann::json;

inline constexpr int kDefaultPort = 8642;

enum class ApiCode { bad_request, not_found, conflict, provider_unavailable, internal };

constexpr std::string_view to_string(ApiCode c) {
  switch (c) {
    case ApiCode::bad_request: return "bad_request";
    case ApiCode::not_found: return "not_found";
    case ApiCode::conflict: return "conflict";
    case ApiCode::provider_unavailable: return "provider_unavailable";
    case ApiCode::internal: return "internal";
  }
  return "internal";
}

constexpr int status_of(ApiCode c) {
  switch (c) {
    case ApiCode::bad_request: return 400;
    case ApiCode::not_found: return 404;
    case ApiCode::conflict: return 409;
    case ApiCode::provider_unavailable: return 503;
    case ApiCode::internal: return 500;
  }
  return 500;
}

constexpr ApiCode api_code_of(ErrorCode e) {
  switch (e) {
    case ErrorCode::UnknownRun:
    case ErrorCode::UnknownItem: return ApiCode::not_found;
    case ErrorCode::StaleRevision:
    case ErrorCode::IllegalTransition:
    case ErrorCode::IllegalState:
    case ErrorCode::CurationIncomplete:
    case ErrorCode::LockFailure: return ApiCode::conflict;
    case ErrorCode::ProviderUnavailable:
    case ErrorCode::AuthFailure:
    case ErrorCode::MalformedProviderReply:
    case ErrorCode::BudgetExhausted: return ApiCode::provider_unavailable;
    case ErrorCode::IoFailure:
    case ErrorCode::SerializationFailure: return ApiCode::internal;
    default: return ApiCode::bad_request;
  }
}

struct ApiError {
  ApiCode code = ApiCode::internal;
  std::string message;
  json detail = json::object();
  int status = 0;  // overrides status_of(code) when non-zero

  json to_json() const { return {{"error", {{"code", to_string(code)}, {"message", message}, {"detail", detail}}}}; }
};

struct Request {
  std::string method;  // "GET", "POST"
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
  std::string authorization;  // raw Authorization header
};

struct Response {
  int status = 200;
  std::string content_type = "application/json; charset=utf-8";
  std::string body;
};

struct ApiOptions {
  /// When set, every route but /health needs "Authorization: Bearer <token>".
  std::optional<std::string> bearer_token;
};

class Api {
 public:
  explicit Api(std::shared_ptr<pipeline::RunStore> store, ApiOptions opt = {})
      : store_(std::move(store)), opt_(std::move(opt)) {}

  Response handle(const Request& req) const {
    try {
      return route(req);
    } catch (const Error& e) {
      return error({api_code_of(e.code()), e.what(), {{"error_code", to_string(e.code())}}});
    } catch (const ApiError& e) {
      return error(e);
    } catch (const std::exception& e) {
      return error({ApiCode::internal, e.what(), json::object()});
    }
  }

 private:
  static Response ok(const json& j) { return {200, "application/json; charset=utf-8", j.dump()}; }

  static Response error(const ApiError& e) {
    return {e.status ? e.status : status_of(e.code), "application/json; charset=utf-8", e.to_json().dump()};
  }

  Response route(const Request& req) const {
    std::string path = req.path;
    if (path.rfind("/v1/", 0) == 0) path = path.substr(3);
    while (path.size() > 1 && path.back() == '/') path.pop_back();
    std::vector<std::string> seg;
    for (std::size_t i = 0; i < path.size();) {
      const auto j = std::min(path.find('/', i), path.size());
      if (j > i) seg.push_back(path.substr(i, j - i));
      i = j + 1;
    }

    if (seg.size() == 1 && seg[0] == "health" && req.method == "GET") return ok({{"status", "ok"}});
    authorize(req);
    if (seg.empty() || seg[0] != "runs") throw ApiError{ApiCode::not_found, "no route " + req.method + " " + req.path};
    if (seg.size() == 1 && req.method == "GET") {
      json runs = json::array();
      for (const auto& r : store_->list()) runs.push_back(pipeline::to_json(r, false));
      return ok({{"runs", runs}});
    }
    if (seg.size() < 2) throw ApiError{ApiCode::not_found, "no route " + req.method + " " + req.path};
    const std::string& id = seg[1];
    if (seg.size() == 2 && req.method == "GET") return ok(pipeline::to_json(store_->load(id), false));
    if (seg.size() == 3) {
      const std::string& what = seg[2];
      if (what == "review-items" && req.method == "GET") return review_items(id, req);
      if (what == "labels" && req.method == "POST") return labels(id, req);
      if (what == "advance" && req.method == "POST") return ok(pipeline::to_json(store_->advance(id), false));
      if (what == "scatter" && req.method == "GET") return scatter(id, req);
    }
    throw ApiError{ApiCode::not_found, "no route " + req.method + " " + req.path};
  }

  void authorize(const Request& req) const {
    if (!opt_.bearer_token) return;
    if (req.authorization != "Bearer " + *opt_.bearer_token)
      throw ApiError{ApiCode::bad_request, "missing or invalid bearer token", json::object(), 401};
  }

  static std::string param(const Request& req, const std::string& key, std::string fallback) {
    const auto f = req.query.find(key);
    return f == req.query.end() || f->second.empty() ? fallback : f->second;
  }

  Response review_items(const std::string& id, const Request& req) const {
    const std::string state = param(req, "state", "all");
    std::optional<pipeline::HumanLabel> only;
    if (state != "all") only = pipeline::label_from_string(state);
    const auto run = store_->load(id);
    json items = json::array();
    for (const auto& it : run.items)
      if (!only || it.human_label == *only) items.push_back(pipeline::to_json(it));
    return ok({{"run_id", run.run_id},
               {"state", pipeline::to_string(run.state)},
               {"remaining", run.remaining_unreviewed()},
               {"total", run.items.size()},
               {"items", items}});
  }

  Response labels(const std::string& id, const Request& req) const {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error& e) {
      throw ApiError{ApiCode::bad_request, std::string("body is not JSON: ") + e.what(), json::object()};
    }
    const json& list = body.is_object() && body.contains("labels") ? body["labels"] : body;
    if (!list.is_array()) throw ApiError{ApiCode::bad_request, "expected a list of labels", json::object()};
    std::vector<pipeline::LabelUpdate> updates;
    for (const auto& u : list) updates.push_back(pipeline::label_update_from_json(u));
    const auto remaining = store_->curation_apply(id, updates);
    return ok({{"remaining", remaining}, {"state", pipeline::to_string(store_->load(id).state)}});
  }

  Response scatter(const std::string& id, const Request& req) const {
    const auto metric = monitor::scatter_metric_from_string(param(req, "metric", "ce"));
    const auto rows = store_->scatter(id, metric);
    return {200, "text/csv; charset=utf-8", monitor::scatter_csv(rows)};
  }

  std::shared_ptr<pipeline::RunStore> store_;
  ApiOptions opt_;
};

/// Copies an httplib request into the transport-free form.
inline Request from_httplib(const httplib::Request& r) {
  Request out;
  out.method = r.method;
  out.path = r.path;
  for (const auto& [k, v] : r.params) out.query[k] = v;
  out.body = r.body;
  out.authorization = r.get_header_value("Authorization");
  return out;
}

/// Routes every request to `api` and serves `ui_dir` (if given) under /ui.
inline void install(httplib::Server& srv, const Api& api, const std::optional<std::filesystem::path>& ui_dir = {}) {
  if (ui_dir) {
    if (!srv.set_mount_point("/ui", ui_dir->string()))
      fail(ErrorCode::IoFailure, "cannot serve UI assets from " + ui_dir->string());
  }
  auto handler = [&api](const httplib::Request& req, httplib::Response& res) {
    const Response r = api.handle(from_httplib(req));
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  srv.Get(".*", handler);
  srv.Post(".*", handler);
}

/// Blocks until `srv.stop()` is called from another thread or a signal.
inline bool serve(httplib::Server& srv, const Api& api, const std::string& host = "127.0.0.1", int port = kDefaultPort,
                  const std::optional<std::filesystem::path>& ui_dir = {}) {
  install(srv, api, ui_dir);
  return srv.listen(host, port);
}

}  // namespace fist::service
