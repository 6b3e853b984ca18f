#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drivestyle/error.hpp"
#include "drivestyle/kinematics.hpp"
#include "drivestyle/trajdata.hpp"

namespace drivestyle::idm {

struct IdmParams {
  double v0 = 30.0;     // desired speed [m/s]
  double T = 1.5;       // desired time headway [s]
  double a_max = 1.0;   // maximum acceleration [m/s^2]
  double b = 1.5;       // comfortable deceleration [m/s^2]
  double s0 = 2.0;      // minimum standstill gap [m]
  double delta = 4.0;   // acceleration exponent

  bool valid() const { return v0 > 0 && T > 0 && a_max > 0 && b > 0 && s0 > 0 && delta > 0; }
  bool operator==(const IdmParams&) const = default;
};

inline void to_json(nlohmann::json& j, const IdmParams& p) {
  j = nlohmann::json{{"v0", p.v0}, {"T", p.T}, {"a_max", p.a_max}, {"b", p.b}, {"s0", p.s0}, {"delta", p.delta}};
}

inline void from_json(const nlohmann::json& j, IdmParams& p) {
  j.at("v0").get_to(p.v0);
  j.at("T").get_to(p.T);
  j.at("a_max").get_to(p.a_max);
  j.at("b").get_to(p.b);
  j.at("s0").get_to(p.s0);
  p.delta = j.value("delta", 4.0);
  if (!p.valid()) throw DataError("IDM parameters must all be > 0");
}

// Desired gap s*(v, dv). The dynamic term is floored at zero so that a fast
// opening gap cannot produce a negative desired gap.
inline double desired_gap(const IdmParams& p, double v, double rel_v) {
  const double dynamic = v * p.T + v * (-rel_v) / (2.0 * std::sqrt(p.a_max * p.b));
  return p.s0 + std::max(0.0, dynamic);
}

// IDM acceleration for bumper-to-bumper `gap`, own speed `v` and relative
// speed `rel_v` = lead speed - own speed. Not clamped.
inline double idm_accel(const IdmParams& p, double gap, double v, double rel_v) {
  if (!(gap > 0.0)) throw InvalidArgument("idm_accel: gap must be > 0");
  const double s_star = desired_gap(p, v, rel_v);
  return p.a_max * (1.0 - std::pow(v / p.v0, p.delta) - (s_star / gap) * (s_star / gap));
}

inline double idm_accel_clamped(const IdmParams& p, double gap, double v, double rel_v) {
  return std::clamp(idm_accel(p, gap, v, rel_v), kAccelMin, kAccelMax);
}

struct FollowerTrace {
  std::vector<double> ego_x;
  std::vector<double> ego_v;
  std::vector<double> accel;  // one per executed step
  bool collided = false;
};

// Replays the recorded lead open-loop and drives the ego with IDM, starting
// from the recorded ego state at frame 0.
inline FollowerTrace simulate_follower(const IdmParams& p, const CarFollowingEvent& ev) {
  FollowerTrace tr;
  const std::size_t n = ev.frames.size();
  tr.ego_x.reserve(n);
  tr.ego_v.reserve(n);
  double x = ev.frames[0].ego_x;
  double v = ev.frames[0].ego_v;
  tr.ego_x.push_back(x);
  tr.ego_v.push_back(v);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const Frame& cur = ev.frames[i];
    const double gap = cur.lead_x - ev.lead_length - x;
    const double a = idm_accel_clamped(p, gap, v, cur.lead_v - v);
    const auto step = integrate_longitudinal(v, a, ev.dt);
    x += step.displacement;
    v = step.speed;
    tr.accel.push_back(a);
    tr.ego_x.push_back(x);
    tr.ego_v.push_back(v);
    if (!(ev.frames[i + 1].lead_x - ev.lead_length - x > 0.0)) {
      tr.collided = true;
      break;
    }
  }
  return tr;
}

// Pooled root-mean-square spacing error over all frames of all events.
// Returns +inf when the parameters produce a collision on any event.
inline double spacing_rmse(const IdmParams& p, const Dataset& events) {
  double sq = 0.0;
  std::size_t count = 0;
  for (const auto& ev : events.events) {
    const auto tr = simulate_follower(p, ev);
    if (tr.collided) return std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < tr.ego_x.size(); ++i) {
      const double err = tr.ego_x[i] - ev.frames[i].ego_x;  // gap error == position error
      sq += err * err;
    }
    count += tr.ego_x.size();
  }
  if (count == 0) return std::numeric_limits<double>::infinity();
  return std::sqrt(sq / static_cast<double>(count));
}

struct Bounds {
  double lo = 0.0;
  double hi = 0.0;
};

struct CalibrationConfig {
  std::size_t iterations = 200;          // random-search candidates
  std::size_t refine_evaluations = 600;  // coordinate-descent objective evaluations
  std::uint64_t seed = 0;
  Bounds v0{20.0, 40.0};
  Bounds T{0.8, 3.0};
  Bounds a_max{0.5, 3.0};
  Bounds b{0.5, 4.0};
  Bounds s0{1.0, 5.0};
};

struct CalibrationResult {
  IdmParams params;
  double rmse = 0.0;
  std::size_t evaluations = 0;
  // Objective after the random phase and after every accepted refinement move.
  std::vector<double> accepted_objective;
};

namespace detail {

inline constexpr std::size_t kCalibratedParams = 5;

inline double& param_slot(IdmParams& p, std::size_t i) {
  switch (i) {
    case 0: return p.v0;
    case 1: return p.T;
    case 2: return p.a_max;
    case 3: return p.b;
    default: return p.s0;
  }
}

inline Bounds bounds_slot(const CalibrationConfig& c, std::size_t i) {
  switch (i) {
    case 0: return c.v0;
    case 1: return c.T;
    case 2: return c.a_max;
    case 3: return c.b;
    default: return c.s0;
  }
}

}  // namespace detail

// Random search over the bounding box followed by coordinate descent with
// step halving. Deterministic per seed.
inline CalibrationResult calibrate_detailed(const Dataset& events, const CalibrationConfig& cfg) {
  if (events.empty()) throw InvalidArgument("calibrate: no events");
  if (cfg.iterations == 0) throw InvalidArgument("calibrate: iterations must be >= 1");
  constexpr double kInf = std::numeric_limits<double>::infinity();

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  CalibrationResult res;
  double best = kInf;
  IdmParams best_p;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    IdmParams cand;
    for (std::size_t k = 0; k < detail::kCalibratedParams; ++k) {
      const Bounds bd = detail::bounds_slot(cfg, k);
      detail::param_slot(cand, k) = bd.lo + unit(rng) * (bd.hi - bd.lo);
    }
    const double obj = spacing_rmse(cand, events);
    ++res.evaluations;
    if (it == 0 || obj < best) {
      best = obj;
      best_p = cand;
    }
  }
  if (!std::isfinite(best)) throw DataError("calibrate: every candidate collides");
  res.accepted_objective.push_back(best);

  std::array<double, detail::kCalibratedParams> step{};
  for (std::size_t k = 0; k < step.size(); ++k) {
    const Bounds bd = detail::bounds_slot(cfg, k);
    step[k] = 0.1 * (bd.hi - bd.lo);
  }
  std::size_t budget = cfg.refine_evaluations;
  while (budget > 0) {
    bool improved = false;
    for (std::size_t k = 0; k < detail::kCalibratedParams && budget > 0; ++k) {
      const Bounds bd = detail::bounds_slot(cfg, k);
      for (double dir : {1.0, -1.0}) {
        if (budget == 0) break;
        IdmParams trial = best_p;
        double& slot = detail::param_slot(trial, k);
        slot = std::clamp(slot + dir * step[k], bd.lo, bd.hi);
        if (slot == detail::param_slot(best_p, k)) continue;
        const double obj = spacing_rmse(trial, events);
        --budget;
        ++res.evaluations;
        if (obj < best) {
          best = obj;
          best_p = trial;
          res.accepted_objective.push_back(best);
          improved = true;
          break;
        }
      }
    }
    if (!improved) {
      double largest = 0.0;
      for (std::size_t k = 0; k < step.size(); ++k) {
        step[k] *= 0.5;
        const Bounds bd = detail::bounds_slot(cfg, k);
        largest = std::max(largest, step[k] / (bd.hi - bd.lo));
      }
      if (largest < 1e-7) break;
    }
  }
  res.params = best_p;
  res.rmse = best;
  return res;
}

inline IdmParams calibrate(const Dataset& events, const CalibrationConfig& cfg) {
  return calibrate_detailed(events, cfg).params;
}

}  // namespace drivestyle::idm
