#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <string>

#include "drivestyle/error.hpp"
#include "drivestyle/idm.hpp"
#include "drivestyle/kinematics.hpp"
#include "drivestyle/trajdata.hpp"

namespace drivestyle {

struct SyntheticConfig {
  std::size_t n_events = 10;
  double dt = 0.1;
  double horizon = 60.0;
  std::uint64_t style_seed = 0;
  // When set, every follower uses exactly these parameters (calibration
  // self-consistency fixtures); otherwise parameters are drawn per event.
  std::optional<idm::IdmParams> fixed_follower;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr double kLeadAccelMin = -3.0;
inline constexpr double kLeadAccelMax = 2.0;
inline constexpr double kLeadSpeedMax = 35.0;

// One attempt at an event; returns nullopt if the follower collided.
inline std::optional<CarFollowingEvent> try_generate_event(const SyntheticConfig& cfg, std::mt19937_64& rng,
                                                           const std::string& id) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  std::normal_distribution<double> accel_draw(0.0, 0.7);

  idm::IdmParams follower = cfg.fixed_follower.value_or(idm::IdmParams{
      uniform(26.0, 36.0), uniform(1.0, 2.0), uniform(0.8, 2.0), uniform(1.2, 2.5), uniform(1.5, 3.0), 4.0});

  const auto n_frames = static_cast<std::size_t>(std::llround(cfg.horizon / cfg.dt));
  CarFollowingEvent ev;
  ev.event_id = id;
  ev.dt = cfg.dt;
  ev.lead_length = kDefaultLeadLength;
  ev.frames.resize(n_frames);

  double lead_v = uniform(12.0, 30.0);
  double ego_v = std::max(0.0, lead_v + uniform(-2.0, 2.0));
  const double gap0 = std::clamp(follower.s0 + ego_v * follower.T + uniform(0.0, 10.0), 5.0, 80.0);
  double ego_x = 0.0;
  double lead_x = ego_x + ev.lead_length + gap0;

  double seg_left = 0.0;
  double seg_accel = 0.0;
  for (std::size_t i = 0; i < n_frames; ++i) {
    ev.frames[i] = Frame{static_cast<double>(i) * cfg.dt, lead_x, lead_v, ego_x, ego_v};
    if (i + 1 == n_frames) break;

    if (seg_left <= 0.0) {
      if (u01(rng) < 0.15) {
        seg_accel = uniform(kLeadAccelMin, -1.5);
        seg_left = uniform(1.0, 3.0);
      } else {
        seg_accel = std::clamp(accel_draw(rng), kLeadAccelMin, kLeadAccelMax);
        seg_left = uniform(2.0, 8.0);
      }
    }
    seg_left -= cfg.dt;
    double a_lead = seg_accel;
    if (lead_v + a_lead * cfg.dt > kLeadSpeedMax) a_lead = (kLeadSpeedMax - lead_v) / cfg.dt;
    const auto lead_step = integrate_longitudinal(lead_v, a_lead, cfg.dt);

    const double gap = lead_x - ev.lead_length - ego_x;
    const double a_ego = idm::idm_accel_clamped(follower, gap, ego_v, lead_v - ego_v);
    const auto ego_step = integrate_longitudinal(ego_v, a_ego, cfg.dt);

    lead_x += lead_step.displacement;
    lead_v = lead_step.speed;
    ego_x += ego_step.displacement;
    ego_v = ego_step.speed;
    if (!(lead_x - ev.lead_length - ego_x > 0.0)) return std::nullopt;
  }
  return ev;
}

}  // namespace detail

// Synthetic car-following events: a lead driving piecewise-constant
// acceleration segments, followed by an IDM driver. Deterministic per seed.
inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n_events < 1) throw InvalidArgument("generate_synthetic: n_events must be >= 1");
  if (std::abs(cfg.dt - 0.04) > 1e-12 && std::abs(cfg.dt - 0.1) > 1e-12) {
    throw InvalidArgument("generate_synthetic: dt must be 0.04 or 0.1");
  }
  if (!(cfg.horizon >= 5.0)) throw InvalidArgument("generate_synthetic: horizon must be >= 5 s");
  if (cfg.fixed_follower && !cfg.fixed_follower->valid()) throw InvalidArgument("invalid fixed follower params");

  Dataset ds;
  ds.events.reserve(cfg.n_events);
  for (std::size_t i = 0; i < cfg.n_events; ++i) {
    std::mt19937_64 rng(detail::splitmix64(cfg.style_seed * 1000003ULL + i));
    char id[64];
    std::snprintf(id, sizeof id, "syn%llu-%04zu", static_cast<unsigned long long>(cfg.style_seed), i);
    std::optional<CarFollowingEvent> ev;
    for (int attempt = 0; attempt < 50 && !ev; ++attempt) ev = detail::try_generate_event(cfg, rng, id);
    if (!ev) throw DataError(std::string("generate_synthetic: could not produce a collision-free event ") + id);
    ds.events.push_back(std::move(*ev));
  }
  return ds;
}

inline Dataset generate_synthetic(std::size_t n_events, double dt, double horizon, std::uint64_t style_seed) {
  SyntheticConfig cfg;
  cfg.n_events = n_events;
  cfg.dt = dt;
  cfg.horizon = horizon;
  cfg.style_seed = style_seed;
  return generate_synthetic(cfg);
}

}  // namespace drivestyle
