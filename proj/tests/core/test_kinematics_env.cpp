#include <gtest/gtest.h>

#include <random>

#include "drivestyle/env.hpp"
#include "drivestyle/kinematics.hpp"
#include "drivestyle/reward/parser.hpp"
#include "fixtures.hpp"

using namespace drivestyle;

TEST(Integrate, ConstantAccelerationClosedForm) {
  const auto s = integrate_longitudinal(10.0, 2.0, 0.5);
  EXPECT_DOUBLE_EQ(s.speed, 11.0);
  EXPECT_DOUBLE_EQ(s.displacement, 10.0 * 0.5 + 0.5 * 2.0 * 0.25);
}

TEST(Integrate, StopsInsideStepInsteadOfReversing) {
  // 1 m/s braking at 5 m/s^2 stops after 0.2 s having covered 0.1 m.
  const auto s = integrate_longitudinal(1.0, -5.0, 0.5);
  EXPECT_EQ(s.speed, 0.0);
  EXPECT_NEAR(s.displacement, 0.1, 1e-15);
  const auto at_rest = integrate_longitudinal(0.0, -3.0, 0.1);
  EXPECT_EQ(at_rest.speed, 0.0);
  EXPECT_EQ(at_rest.displacement, 0.0);
}

TEST(Integrate, SpeedNeverNegativeAndDisplacementNonNegative) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> v(0.0, 40.0), a(kAccelMin, kAccelMax), dt(0.01, 1.0);
  for (int i = 0; i < 100000; ++i) {
    const auto s = integrate_longitudinal(v(rng), a(rng), dt(rng));
    ASSERT_GE(s.speed, 0.0);
    ASSERT_GE(s.displacement, 0.0);
  }
}

TEST(Env, ResetReadsFrameZero) {
  const auto ev = fixtures::cruise_event("c", 12.0, 25.0, 10);
  const auto s = env::reset(ev);
  EXPECT_DOUBLE_EQ(s.gap, 25.0);
  EXPECT_EQ(s.ego_v, 12.0);
  EXPECT_EQ(s.rel_v, 0.0);
  EXPECT_EQ(s.t_index, 0u);
  EXPECT_EQ(s.prev_accel, 0.0);
}

TEST(Env, StepClampsActionAndAdvancesLeadFromRecording) {
  const auto ev = fixtures::cruise_event("c", 10.0, 30.0, 5);
  const auto s = env::reset(ev);
  const auto r = env::step(s, env::Action{50.0}, ev, ev.dt);
  EXPECT_EQ(r.next.prev_accel, kAccelMax);
  EXPECT_DOUBLE_EQ(r.next.ego_v, 10.0 + kAccelMax * 0.1);
  EXPECT_DOUBLE_EQ(r.next.lead_x, ev.frames[1].lead_x);
  EXPECT_NEAR(r.next.gap, 30.0 - 0.5 * kAccelMax * 0.01, 1e-12);
  EXPECT_FALSE(r.done);
  const auto single = fixtures::cruise_event("x", 1.0, 5.0, 1);
  EXPECT_THROW(env::step(env::reset(single), env::Action{}, single, 0.1), InvalidArgument);
}

TEST(Env, EqualSpeedZeroActionKeepsGap) {
  const auto ev = fixtures::cruise_event("c", 17.3, 21.7, 1001);
  const auto ro = env::rollout([](const env::EnvState&) { return 0.0; }, nullptr, ev);
  ASSERT_EQ(ro.states.size(), 1001u);
  for (const auto& s : ro.states) ASSERT_NEAR(s.gap, 21.7, 1e-9);
  EXPECT_EQ(ro.terminated_by, env::Termination::kEndOfLeadTrace);
}

TEST(Env, CollisionTerminatesEpisode) {
  const auto ev = fixtures::cruise_event("c", 5.0, 3.0, 200);
  const auto ro = env::rollout([](const env::EnvState&) { return 3.0; }, nullptr, ev);
  EXPECT_EQ(ro.terminated_by, env::Termination::kCollision);
  EXPECT_LE(ro.states.back().gap, 0.0);
  EXPECT_LT(ro.states.size(), 200u);
}

TEST(Env, ReplayOfRecordedAccelerationsTracksPositions) {
  const Dataset ds = fixtures::synthetic(10, 21, 10.0);
  for (const auto& ev : ds.events) {
    std::size_t i = 0;
    const auto ro = env::rollout(
        [&](const env::EnvState&) {
          const double a = (ev.frames[i + 1].ego_v - ev.frames[i].ego_v) / ev.dt;
          ++i;
          return a;
        },
        nullptr, ev);
    ASSERT_EQ(ro.states.size(), ev.frames.size());
    for (std::size_t k = 0; k < ro.states.size(); ++k) {
      ASSERT_NEAR(ro.states[k].ego_x, ev.frames[k].ego_x, 0.05) << ev.event_id << " frame " << k;
      ASSERT_GE(ro.states[k].ego_v, 0.0);
    }
  }
}

TEST(Env, RewardIsEvaluatedOnTransitionFeatures) {
  const auto ev = fixtures::cruise_event("c", 10.0, 20.0, 3);
  const auto reward = reward::parse_or_throw("accel + 100 * jerk + speed");
  const auto ro = env::rollout([](const env::EnvState&) { return 1.0; }, &reward, ev);
  ASSERT_EQ(ro.rewards.size(), 2u);
  // step 1: accel 1, jerk (1 - 0)/0.1 = 10, speed 10.1
  EXPECT_NEAR(ro.rewards[0], 1.0 + 1000.0 + 10.1, 1e-9);
  // step 2: jerk 0, speed 10.2
  EXPECT_NEAR(ro.rewards[1], 1.0 + 10.2, 1e-9);
}

TEST(Features, GuardsAndSigns) {
  const auto f = reward::make_features(10.0, 1.0, 0.0, 0.1, 20.0, 8.0);
  EXPECT_EQ(f.rel_speed, -2.0);
  EXPECT_DOUBLE_EQ(f.thw, 2.0);
  EXPECT_DOUBLE_EQ(f.ttc, 10.0);
  EXPECT_EQ(f.collided, 0.0);
  EXPECT_EQ(reward::guarded_thw(5.0, 0.0), reward::kTimeCap);
  EXPECT_EQ(reward::guarded_ttc(5.0, 1.0), reward::kTimeCap);
  EXPECT_EQ(reward::make_features(1.0, 0, 0, 0.1, -1.0, 1.0).collided, 1.0);
  EXPECT_EQ(reward::make_features(1.0, 0, 0, 0.1, -1.0, 0.0).thw, 0.0);
}
