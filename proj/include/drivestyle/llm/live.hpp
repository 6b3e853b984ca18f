#pragma once

#include <chrono>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "drivestyle/fsutil.hpp"
#include "drivestyle/llm/embedding.hpp"
#include "drivestyle/llm/types.hpp"

namespace drivestyle::llm {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

inline Endpoint split_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw InvalidArgument("endpoint '" + url + "' has no scheme");
  const auto path = url.find('/', scheme + 3);
  Endpoint e;
  e.origin = url.substr(0, path);
  e.prefix = path == std::string::npos ? std::string() : url.substr(path);
  while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
  return e;
}

inline std::string redact(std::string text, const std::string& secret) {
  if (secret.empty()) return text;
  for (auto pos = text.find(secret); pos != std::string::npos; pos = text.find(secret, pos)) {
    text.replace(pos, secret.size(), "[REDACTED]");
  }
  return text;
}

inline nlohmann::json chat_request_body(const ModelConfig& cfg, const std::vector<ChatTurn>& turns) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& t : turns) messages.push_back({{"role", to_string(t.role)}, {"content", t.content}});
  return {{"model", cfg.model}, {"messages", messages}, {"temperature", cfg.temperature}};
}

// Chat-completions style HTTP backend. Transient failures (timeouts, 429,
// 5xx, connection errors) are retried with exponential backoff.
class LiveBackend final : public LanguageModel {
 public:
  explicit LiveBackend(ModelConfig cfg) : cfg_(std::move(cfg)), endpoint_(split_endpoint(cfg_.endpoint)) {
    cfg_.validate();
  }

  std::string chat(const std::vector<ChatTurn>& turns) override {
    check_turns(turns);
    const auto body = chat_request_body(cfg_, turns);
    const auto resp = post("chat", "/chat/completions", body);
    try {
      return resp.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw LlmError(ErrorCategory::kProtocol, std::string("unexpected chat response: ") + e.what(), last_ref());
    }
  }

  std::vector<double> embed(std::string_view text) override {
    if (text.empty()) throw InvalidArgument("cannot embed empty text");
    const nlohmann::json body = {{"model", cfg_.embedding_model}, {"input", std::string(text)}};
    const auto resp = post("embed", "/embeddings", body);
    std::vector<double> v;
    try {
      v = resp.at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw LlmError(ErrorCategory::kProtocol, std::string("unexpected embedding response: ") + e.what(), last_ref());
    }
    if (v.size() != cfg_.embedding_dim) {
      throw LlmError(ErrorCategory::kProtocol,
                     "embedding has " + std::to_string(v.size()) + " entries, expected " +
                         std::to_string(cfg_.embedding_dim),
                     last_ref());
    }
    try {
      normalize_unit(v);
    } catch (const InvalidArgument&) {
      throw LlmError(ErrorCategory::kProtocol, "zero embedding", last_ref());
    }
    return v;
  }

  std::size_t embedding_dim() const override { return cfg_.embedding_dim; }
  double default_fuzzy_threshold() const override { return 0.85; }
  BackendKind kind() const override { return BackendKind::kLive; }
  const ModelConfig& config() const { return cfg_; }

 private:
  std::string api_key() const {
    const char* k = std::getenv(cfg_.api_key_env.c_str());
    return k ? std::string(k) : std::string();
  }

  std::string last_ref() const {
    std::lock_guard lock(audit_mu_);
    if (cfg_.audit_path.empty()) return "#" + std::to_string(seq_);
    return cfg_.audit_path + "#" + std::to_string(seq_);
  }

  std::string audit(const std::string& kind, const std::string& path, const nlohmann::json& request, int status,
                    const std::string& response, const std::string& error, unsigned attempt, const std::string& key) {
    std::lock_guard lock(audit_mu_);
    ++seq_;
    const std::string ref = (cfg_.audit_path.empty() ? "" : cfg_.audit_path) + "#" + std::to_string(seq_);
    if (!cfg_.audit_path.empty()) {
      nlohmann::json line = {{"seq", seq_},
                             {"kind", kind},
                             {"url", endpoint_.origin + endpoint_.prefix + path},
                             {"attempt", attempt},
                             {"authorization", "Bearer [REDACTED]"},
                             {"request", redact(request.dump(), key)},
                             {"status", status},
                             {"response", redact(response, key)},
                             {"error", redact(error, key)}};
      append_line(cfg_.audit_path, line.dump());
    }
    return ref;
  }

  nlohmann::json post(const std::string& kind, const std::string& path, const nlohmann::json& body) {
    const std::string key = api_key();
    if (key.empty()) {
      const auto ref = audit(kind, path, body, 0, "", "missing API key", 0, key);
      throw LlmError(ErrorCategory::kAuth, "environment variable " + cfg_.api_key_env + " is not set", ref);
    }
    const auto secs = std::chrono::duration<double>(cfg_.timeout_s);
    for (unsigned attempt = 0;; ++attempt) {
      httplib::Client cli(endpoint_.origin);
      cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
      cli.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
      cli.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
      cli.set_bearer_token_auth(key);
      auto res = cli.Post(endpoint_.prefix + path, body.dump(), "application/json");

      std::optional<LlmError> err;
      if (!res) {
        const auto e = res.error();
        const auto cat = (e == httplib::Error::ConnectionTimeout || e == httplib::Error::Read)
                             ? ErrorCategory::kTimeout
                             : ErrorCategory::kNetwork;
        const auto ref = audit(kind, path, body, 0, "", httplib::to_string(e), attempt, key);
        err.emplace(cat, "request failed: " + httplib::to_string(e), ref);
      } else {
        const auto ref = audit(kind, path, body, res->status, res->body, "", attempt, key);
        const int st = res->status;
        if (st == 200) {
          try {
            return nlohmann::json::parse(res->body);
          } catch (const nlohmann::json::exception& e) {
            throw LlmError(ErrorCategory::kProtocol, std::string("response is not JSON: ") + e.what(), ref);
          }
        }
        ErrorCategory cat = ErrorCategory::kBadRequest;
        if (st == 401 || st == 403) cat = ErrorCategory::kAuth;
        else if (st == 408) cat = ErrorCategory::kTimeout;
        else if (st == 429) cat = ErrorCategory::kRateLimit;
        else if (st >= 500) cat = ErrorCategory::kServer;
        err.emplace(cat, "HTTP " + std::to_string(st), ref);
      }
      if (!err->transient() || attempt >= cfg_.max_retries) throw *err;
      std::this_thread::sleep_for(std::chrono::duration<double>(cfg_.backoff_s * static_cast<double>(1u << attempt)));
    }
  }

  ModelConfig cfg_;
  Endpoint endpoint_;
  mutable std::mutex audit_mu_;
  unsigned long seq_ = 0;
};

}  // namespace drivestyle::llm
