#pragma once

namespace drivestyle {

// Actuation limits shared by the simulator, the policy and the IDM baseline.
inline constexpr double kAccelMin = -5.0;
inline constexpr double kAccelMax = 3.0;

// Longitudinal point-mass motion over one step of constant acceleration.
// Speed never goes negative: when braking would cross zero inside the step,
// the vehicle stops at t* = v / |a| and stays at rest for the remainder.
struct LongitudinalStep {
  double displacement = 0.0;
  double speed = 0.0;
};

inline LongitudinalStep integrate_longitudinal(double speed, double accel, double dt) {
  const double end_speed = speed + accel * dt;
  if (end_speed >= 0.0) {
    return {speed * dt + 0.5 * accel * dt * dt, end_speed};
  }
  // accel < 0 here, otherwise end_speed could not be negative.
  const double stop_time = speed / -accel;
  return {speed * stop_time + 0.5 * accel * stop_time * stop_time, 0.0};
}

}  // namespace drivestyle
