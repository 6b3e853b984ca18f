#pragma once

#include <string>
#include <vector>

#include "drivestyle/rl/policy.hpp"
#include "drivestyle/statseval.hpp"

namespace drivestyle {

// Deterministic (mean-action) rollouts of `policy` on every event.
inline std::vector<env::EpisodeRollout> policy_rollouts(const rl::PolicyParams& policy,
                                                        const reward::RewardExpr& reward, const Dataset& events) {
  std::vector<env::EpisodeRollout> out;
  out.reserve(events.size());
  for (const auto& ev : events.events) out.push_back(rl::rollout(policy, reward, ev, rl::ActionMode::kMean));
  return out;
}

inline stats::StatsReport policy_report(const rl::PolicyParams& policy, const reward::RewardExpr& reward,
                                        const Dataset& events, const std::string& subject) {
  const auto ros = policy_rollouts(policy, reward, events);
  return stats::compute_report(ros, subject, events.fingerprint());
}

}  // namespace drivestyle
