#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <string>

#include "drivestyle/error.hpp"
#include "drivestyle/reward/ast.hpp"
#include "drivestyle/reward/evaluate.hpp"
#include "drivestyle/reward/features.hpp"
#include "drivestyle/trajdata.hpp"

namespace drivestyle::reward {

struct ValidationReport {
  std::set<Feature> feature_set;
  double min_value = std::numeric_limits<double>::infinity();
  double max_value = -std::numeric_limits<double>::infinity();
  bool finite = true;
  std::size_t samples = 0;
  // First frame producing a non-finite value, if any.
  std::optional<std::string> offending_event;
  std::optional<std::size_t> offending_frame;
};

// Features of the recorded transition frame i -> i+1, with the recorded ego
// acceleration (first difference of speed) as the action.
inline FeatureVector recorded_features(const CarFollowingEvent& ev, std::size_t i, double prev_accel) {
  const Frame& a = ev.frames[i];
  const Frame& b = ev.frames[i + 1];
  const double accel = (b.ego_v - a.ego_v) / ev.dt;
  return make_features(b.ego_v, accel, prev_accel, ev.dt, ev.gap_at(i + 1), b.lead_v);
}

// Screens a reward on every recorded transition of `probe`.
inline ValidationReport validate_reward(const RewardExpr& expr, const Dataset& probe) {
  if (probe.empty()) throw InvalidArgument("validate_reward: empty probe");
  ValidationReport rep;
  rep.feature_set = expr.features();
  for (const auto& ev : probe.events) {
    double prev_accel = 0.0;
    for (std::size_t i = 0; i + 1 < ev.frames.size(); ++i) {
      const FeatureVector f = recorded_features(ev, i, prev_accel);
      prev_accel = f.accel;
      const double r = evaluate(expr, f);
      ++rep.samples;
      if (!std::isfinite(r)) {
        rep.finite = false;
        rep.offending_event = ev.event_id;
        rep.offending_frame = i;
        return rep;
      }
      rep.min_value = std::min(rep.min_value, r);
      rep.max_value = std::max(rep.max_value, r);
    }
  }
  return rep;
}

}  // namespace drivestyle::reward
