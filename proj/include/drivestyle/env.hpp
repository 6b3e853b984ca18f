#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "drivestyle/error.hpp"
#include "drivestyle/kinematics.hpp"
#include "drivestyle/reward/evaluate.hpp"
#include "drivestyle/reward/features.hpp"
#include "drivestyle/trajdata.hpp"

namespace drivestyle::env {

struct EnvState {
  double gap = 0.0;         // bumper-to-bumper spacing [m]
  double ego_v = 0.0;       // [m/s]
  double lead_v = 0.0;      // [m/s]
  double rel_v = 0.0;       // lead_v - ego_v [m/s]
  double prev_accel = 0.0;  // action applied on the previous step [m/s^2]
  std::size_t t_index = 0;  // frame counter into the event
  double ego_x = 0.0;       // absolute positions, kept for replay/export
  double lead_x = 0.0;

  bool operator==(const EnvState&) const = default;
};

struct Action {
  double accel = 0.0;
};

inline double clamp_accel(double a) { return std::clamp(a, kAccelMin, kAccelMax); }

enum class Termination { kEndOfLeadTrace, kCollision };

inline const char* to_string(Termination t) {
  return t == Termination::kCollision ? "collision" : "end_of_lead_trace";
}

struct EpisodeRollout {
  std::string event_id;
  double dt = 0.1;
  double lead_length = kDefaultLeadLength;
  std::vector<EnvState> states;
  std::vector<Action> actions;  // clamped, as executed
  std::vector<double> rewards;
  Termination terminated_by = Termination::kEndOfLeadTrace;
};

inline EnvState reset(const CarFollowingEvent& ev) {
  if (ev.frames.empty()) throw InvalidArgument("reset: event has no frames");
  const Frame& f = ev.frames.front();
  EnvState s;
  s.gap = ev.gap_at(0);
  s.ego_v = f.ego_v;
  s.lead_v = f.lead_v;
  s.rel_v = f.lead_v - f.ego_v;
  s.prev_accel = 0.0;
  s.t_index = 0;
  s.ego_x = f.ego_x;
  s.lead_x = f.lead_x;
  return s;
}

struct StepResult {
  EnvState next;
  bool done = false;
  bool collided = false;
};

// Deterministic transition: the ego integrates the clamped action, the lead
// is read from the recorded next frame.
inline StepResult step(const EnvState& s, Action action, const CarFollowingEvent& ev, double dt) {
  if (s.t_index + 1 >= ev.frames.size()) throw InvalidArgument("step: already at the last frame of the event");
  const double a = clamp_accel(action.accel);
  const auto ego = integrate_longitudinal(s.ego_v, a, dt);
  const Frame& next_frame = ev.frames[s.t_index + 1];
  const double lead_disp = next_frame.lead_x - s.lead_x;

  StepResult r;
  EnvState& n = r.next;
  n.gap = s.gap + lead_disp - ego.displacement;
  n.ego_v = ego.speed;
  n.lead_v = next_frame.lead_v;
  n.rel_v = n.lead_v - n.ego_v;
  n.prev_accel = a;
  n.t_index = s.t_index + 1;
  n.ego_x = s.ego_x + ego.displacement;
  n.lead_x = next_frame.lead_x;
  r.collided = n.gap <= 0.0;
  r.done = r.collided || n.t_index + 1 >= ev.frames.size();
  return r;
}

inline reward::FeatureVector transition_features(const EnvState& s, double applied_accel, const EnvState& next,
                                                 double dt) {
  return reward::make_features(next.ego_v, applied_accel, s.prev_accel, dt, next.gap, next.lead_v);
}

// Any callable choosing an acceleration for a state.
template <typename F>
concept ActionSource = requires(F f, const EnvState& s) {
  { f(s) } -> std::convertible_to<double>;
};

// Runs a full episode from frame 0. `reward` may be null (rewards left 0).
template <ActionSource Policy>
EpisodeRollout rollout(Policy&& policy, const reward::RewardExpr* reward, const CarFollowingEvent& ev) {
  EpisodeRollout out;
  out.event_id = ev.event_id;
  out.dt = ev.dt;
  out.lead_length = ev.lead_length;
  out.states.reserve(ev.frames.size());
  out.states.push_back(reset(ev));
  if (ev.frames.size() < 2) return out;
  out.actions.reserve(ev.frames.size() - 1);
  out.rewards.reserve(ev.frames.size() - 1);
  while (true) {
    const EnvState& s = out.states.back();
    const double a = clamp_accel(static_cast<double>(policy(s)));
    StepResult r = step(s, Action{a}, ev, ev.dt);
    double rew = 0.0;
    if (reward != nullptr) {
      rew = reward::evaluate(*reward, transition_features(s, a, r.next, ev.dt));
      if (!std::isfinite(rew)) {
        throw TrainingError("reward is not finite on event '" + ev.event_id + "' at step " +
                            std::to_string(s.t_index));
      }
    }
    out.actions.push_back(Action{a});
    out.rewards.push_back(rew);
    out.states.push_back(r.next);
    if (r.done) {
      out.terminated_by = r.collided ? Termination::kCollision : Termination::kEndOfLeadTrace;
      break;
    }
  }
  return out;
}

}  // namespace drivestyle::env
