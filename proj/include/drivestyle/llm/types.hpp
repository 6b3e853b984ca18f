#pragma once

#include <cstdlib>
#include <string>
#include <string_view>
#include <vector>

#include "drivestyle/error.hpp"

namespace drivestyle::llm {

enum class Role { kSystem, kUser, kAssistant };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::kSystem: return "system";
    case Role::kUser: return "user";
    case Role::kAssistant: return "assistant";
  }
  return "user";
}

struct ChatTurn {
  Role role = Role::kUser;
  std::string content;
};

enum class BackendKind { kLive, kScripted };

struct ModelConfig {
  BackendKind backend = BackendKind::kScripted;
  std::string endpoint = "https://api.openai.com/v1";
  std::string model = "gpt-4o";
  std::string embedding_model = "text-embedding-3-small";
  std::size_t embedding_dim = 1536;
  double temperature = 0.3;
  std::string api_key_env = "OPENAI_API_KEY";
  double timeout_s = 60.0;
  unsigned max_retries = 3;
  double backoff_s = 0.5;
  std::string audit_path;  // empty: no audit file

  void validate() const {
    if (!(temperature >= 0.0 && temperature <= 2.0)) throw InvalidArgument("temperature must be in [0, 2]");
    if (!(timeout_s > 0.0)) throw InvalidArgument("timeout must be positive");
    if (!(backoff_s >= 0.0)) throw InvalidArgument("backoff must be non-negative");
    if (embedding_dim == 0) throw InvalidArgument("embedding dimension must be positive");
  }
};

enum class ErrorCategory { kTimeout, kAuth, kRateLimit, kServer, kNetwork, kBadRequest, kProtocol, kSchema };

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kTimeout: return "timeout";
    case ErrorCategory::kAuth: return "auth";
    case ErrorCategory::kRateLimit: return "rate_limit";
    case ErrorCategory::kServer: return "server";
    case ErrorCategory::kNetwork: return "network";
    case ErrorCategory::kBadRequest: return "bad_request";
    case ErrorCategory::kProtocol: return "protocol";
    case ErrorCategory::kSchema: return "schema";
  }
  return "protocol";
}

class LlmError : public Error {
 public:
  LlmError(ErrorCategory category, const std::string& message, std::string audit_ref = {})
      : Error(std::string(to_string(category)) + ": " + message + (audit_ref.empty() ? "" : " [audit " + audit_ref + "]")),
        category_(category),
        audit_ref_(std::move(audit_ref)) {}

  ErrorCategory category() const { return category_; }
  const std::string& audit_ref() const { return audit_ref_; }
  bool transient() const {
    return category_ == ErrorCategory::kTimeout || category_ == ErrorCategory::kRateLimit ||
           category_ == ErrorCategory::kServer || category_ == ErrorCategory::kNetwork;
  }

 private:
  ErrorCategory category_;
  std::string audit_ref_;
};

// Shareable chat + embedding handle.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  virtual std::string chat(const std::vector<ChatTurn>& turns) = 0;
  virtual std::vector<double> embed(std::string_view text) = 0;
  virtual std::size_t embedding_dim() const = 0;
  virtual double default_fuzzy_threshold() const = 0;
  virtual BackendKind kind() const = 0;
};

inline void check_turns(const std::vector<ChatTurn>& turns) {
  if (turns.empty()) throw InvalidArgument("chat: no turns");
  for (const auto& t : turns) {
    if (t.content.empty()) throw InvalidArgument("chat: empty turn content");
  }
}

inline const ChatTurn* last_user_turn(const std::vector<ChatTurn>& turns) {
  for (auto it = turns.rbegin(); it != turns.rend(); ++it) {
    if (it->role == Role::kUser) return &*it;
  }
  return nullptr;
}

}  // namespace drivestyle::llm
