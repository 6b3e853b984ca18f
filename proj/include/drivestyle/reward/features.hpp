#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string_view>

namespace drivestyle::reward {

enum class Feature { kSpeed, kAccel, kJerk, kGap, kRelSpeed, kThw, kTtc, kLeadSpeed, kCollided };

inline constexpr std::size_t kFeatureCount = 9;

inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "speed", "accel", "jerk", "gap", "rel_speed", "thw", "ttc", "lead_speed", "collided"};

inline constexpr std::string_view feature_name(Feature f) { return kFeatureNames[static_cast<std::size_t>(f)]; }

inline std::optional<Feature> feature_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kFeatureNames.size(); ++i) {
    if (kFeatureNames[i] == name) return static_cast<Feature>(i);
  }
  return std::nullopt;
}

// Cap applied to time headway and time-to-collision when they would be
// unbounded (stopped ego, opening gap).
inline constexpr double kTimeCap = 1e6;
inline constexpr double kGuardEpsilon = 1e-6;

// Per-step driving features a reward expression can read.
struct FeatureVector {
  double speed = 0.0;       // ego speed after the step [m/s]
  double accel = 0.0;       // applied acceleration [m/s^2]
  double jerk = 0.0;        // (accel - prev_accel) / dt [m/s^3]
  double gap = 0.0;         // bumper-to-bumper spacing [m]
  double rel_speed = 0.0;   // lead speed - ego speed [m/s]
  double thw = kTimeCap;    // time headway [s]
  double ttc = kTimeCap;    // time to collision [s]
  double lead_speed = 0.0;  // [m/s]
  double collided = 0.0;    // 1 when gap <= 0

  double get(Feature f) const {
    switch (f) {
      case Feature::kSpeed: return speed;
      case Feature::kAccel: return accel;
      case Feature::kJerk: return jerk;
      case Feature::kGap: return gap;
      case Feature::kRelSpeed: return rel_speed;
      case Feature::kThw: return thw;
      case Feature::kTtc: return ttc;
      case Feature::kLeadSpeed: return lead_speed;
      case Feature::kCollided: return collided;
    }
    return 0.0;
  }

  bool operator==(const FeatureVector&) const = default;
};

inline double guarded_thw(double gap, double speed) {
  if (speed < kGuardEpsilon) return kTimeCap;
  return std::min(std::max(gap, 0.0) / speed, kTimeCap);
}

inline double guarded_ttc(double gap, double rel_speed) {
  const double closing = -rel_speed;
  if (closing < kGuardEpsilon) return kTimeCap;
  return std::min(std::max(gap, 0.0) / closing, kTimeCap);
}

// Builds the feature vector of one transition. `speed`, `gap` and
// `lead_speed` describe the state after the step.
inline FeatureVector make_features(double speed, double accel, double prev_accel, double dt, double gap,
                                   double lead_speed) {
  FeatureVector f;
  f.speed = speed;
  f.accel = accel;
  f.jerk = (accel - prev_accel) / dt;
  f.gap = gap;
  f.rel_speed = lead_speed - speed;
  f.thw = guarded_thw(gap, speed);
  f.ttc = guarded_ttc(gap, f.rel_speed);
  f.lead_speed = lead_speed;
  f.collided = gap <= 0.0 ? 1.0 : 0.0;
  return f;
}

}  // namespace drivestyle::reward
