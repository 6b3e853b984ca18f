#pragma once

#include <memory>

#include "drivestyle/llm/live.hpp"
#include "drivestyle/llm/scripted.hpp"

namespace drivestyle::llm {

inline std::unique_ptr<LanguageModel> make_backend(const ModelConfig& cfg, const std::filesystem::path& rules_path) {
  cfg.validate();
  if (cfg.backend == BackendKind::kLive) return std::make_unique<LiveBackend>(cfg);
  return std::make_unique<ScriptedBackend>(load_scripted_rules(rules_path));
}

}  // namespace drivestyle::llm
