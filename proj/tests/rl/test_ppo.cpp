#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "drivestyle/reward/parser.hpp"
#include "drivestyle/rl/ppo.hpp"
#include "fixtures.hpp"

using namespace drivestyle;
using namespace drivestyle::rl;

namespace {

bool grad_close(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  return diff <= 1e-4 * std::max(std::abs(analytic), std::abs(numeric)) || diff <= 1e-9;
}

// Direct definition: A_t = sum_l (gamma lambda)^l delta_{t+l}, up to the
// segment end.
std::vector<double> gae_by_definition(const std::vector<double>& r, const std::vector<double>& v,
                                      const std::vector<double>& nv, const std::vector<std::uint8_t>& end,
                                      double gamma, double lambda) {
  std::vector<double> out(r.size());
  for (std::size_t t = 0; t < r.size(); ++t) {
    double acc = 0.0, w = 1.0;
    for (std::size_t k = t; k < r.size(); ++k) {
      acc += w * (r[k] + gamma * nv[k] - v[k]);
      if (end[k]) break;
      w *= gamma * lambda;
    }
    out[t] = acc;
  }
  return out;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.total_steps = 2048;
  cfg.steps_per_batch = 1024;
  cfg.epochs_per_batch = 2;
  cfg.n_seeds = 2;
  cfg.probe_events = 2;
  return cfg;
}

}  // namespace

TEST(Gaussian, LogProbAndEntropy) {
  EXPECT_NEAR(gaussian_log_prob(0.0, 0.0, 0.0), -0.5 * std::log(2 * M_PI), 1e-15);
  EXPECT_NEAR(gaussian_log_prob(3.0, 1.0, std::log(2.0)), -0.5 - std::log(2.0) - 0.5 * std::log(2 * M_PI), 1e-14);
  EXPECT_NEAR(gaussian_entropy(0.0), 0.5 * std::log(2 * M_PI * M_E), 1e-15);
}

TEST(Surrogate, ClippedBranchIsFlat) {
  // A > 0 and ratio far above 1 + eps: value pinned at (1 + eps) A.
  const PpoSample s{1.0, gaussian_log_prob(1.0, 0.0, 0.0) - 1.0, 2.0};
  const auto t = surrogate_terms(s, 0.0, 0.0, 0.2);
  EXPECT_GT(t.ratio, 1.2);
  EXPECT_DOUBLE_EQ(t.surrogate, 1.2 * 2.0);
  EXPECT_EQ(t.d_mean, 0.0);
  EXPECT_EQ(t.d_log_std, 0.0);
  const auto nudged = surrogate_terms(s, 0.01, 0.01, 0.2);
  EXPECT_DOUBLE_EQ(nudged.surrogate, t.surrogate);
  // A < 0 and ratio below 1 - eps.
  const PpoSample neg{1.0, gaussian_log_prob(1.0, 0.0, 0.0) + 1.0, -1.0};
  EXPECT_DOUBLE_EQ(surrogate_terms(neg, 0.0, 0.0, 0.2).surrogate, -0.8);
  EXPECT_EQ(surrogate_terms(neg, 0.0, 0.0, 0.2).d_mean, 0.0);
}

TEST(Surrogate, ClipFormula) {
  EXPECT_EQ(clipped_surrogate(1.5, 1.0, 0.2), 1.2);
  EXPECT_EQ(clipped_surrogate(1.5, -1.0, 0.2), -1.5);
  EXPECT_EQ(clipped_surrogate(0.5, 1.0, 0.2), 0.5);
  EXPECT_EQ(clipped_surrogate(0.5, -1.0, 0.2), -0.8);
}

TEST(ToyObjective, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  const double h = 1e-5;
  for (int point = 0; point < 100; ++point) {
    const double old_mean = n(rng), old_log_std = 0.3 * n(rng);
    std::vector<PpoSample> batch(32);
    for (auto& s : batch) {
      s.action = old_mean + std::exp(old_log_std) * n(rng);
      s.old_log_prob = gaussian_log_prob(s.action, old_mean, old_log_std);
      s.advantage = n(rng);
    }
    const double mean = old_mean + 0.2 * n(rng), log_std = old_log_std + 0.1 * n(rng);
    const auto o = toy_policy_objective(batch, mean, log_std, 0.2, 0.01);
    const double fd_mean = (toy_policy_objective(batch, mean + h, log_std, 0.2, 0.01).value -
                            toy_policy_objective(batch, mean - h, log_std, 0.2, 0.01).value) /
                           (2 * h);
    const double fd_ls = (toy_policy_objective(batch, mean, log_std + h, 0.2, 0.01).value -
                          toy_policy_objective(batch, mean, log_std - h, 0.2, 0.01).value) /
                         (2 * h);
    ASSERT_TRUE(grad_close(o.d_mean, fd_mean)) << point << ": " << o.d_mean << " vs " << fd_mean;
    ASSERT_TRUE(grad_close(o.d_log_std, fd_ls)) << point << ": " << o.d_log_std << " vs " << fd_ls;
  }
}

TEST(Gae, MatchesDefinitionOnRandomSegments) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = 1 + rng() % 50;
    std::vector<double> r(len), v(len), nv(len);
    std::vector<std::uint8_t> end(len);
    for (std::size_t t = 0; t < len; ++t) {
      r[t] = n(rng);
      v[t] = n(rng);
      end[t] = rng() % 7 == 0;
      nv[t] = end[t] && rng() % 2 ? 0.0 : n(rng);
    }
    end.back() = 1;
    const double gamma = 0.9 + 0.09 * (rng() % 10) / 10.0, lambda = (rng() % 11) / 10.0;
    const auto got = compute_gae(r, v, nv, end, gamma, lambda);
    const auto want = gae_by_definition(r, v, nv, end, gamma, lambda);
    for (std::size_t t = 0; t < len; ++t) ASSERT_NEAR(got[t], want[t], 1e-12);
  }
}

TEST(Gae, LambdaZeroIsOneStepTd) {
  const std::vector<double> r = {1, 2, 3}, v = {0.5, 0.5, 0.5}, nv = {0.5, 0.5, 0.0};
  const std::vector<std::uint8_t> end = {0, 0, 1};
  const auto a = compute_gae(r, v, nv, end, 0.9, 0.0);
  EXPECT_DOUBLE_EQ(a[0], 1 + 0.45 - 0.5);
  EXPECT_DOUBLE_EQ(a[2], 3 - 0.5);
}

TEST(Advantages, StandardisedToZeroMeanUnitStd) {
  std::vector<double> a = {1, 2, 3, 4, 10};
  normalize_advantages(a);
  double mean = 0, var = 0;
  for (double x : a) mean += x;
  mean /= a.size();
  for (double x : a) var += (x - mean) * (x - mean);
  EXPECT_NEAR(mean, 0.0, 1e-15);
  EXPECT_NEAR(var / a.size(), 1.0, 1e-12);
  std::vector<double> flat = {2, 2, 2};
  normalize_advantages(flat);
  EXPECT_EQ(flat, (std::vector<double>{0, 0, 0}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Adam adam(2, 0.1);
  std::vector<double> p = {1.0, -1.0};
  adam.step(p, std::vector<double>{5.0, -0.001});
  EXPECT_NEAR(p[0], 0.9, 1e-6);
  EXPECT_NEAR(p[1], -0.9, 1e-3);
}

TEST(EvaluateReturn, GeometricSumOfConstantReward) {
  Dataset ds;
  ds.events.push_back(fixtures::cruise_event("c", 10.0, 20.0, 11));
  const auto reward = reward::parse_or_throw("1");
  const double g = 0.9;
  EXPECT_NEAR(evaluate_return(init_policy(0), reward, ds, g), (1 - std::pow(g, 10)) / (1 - g), 1e-12);
  EXPECT_DOUBLE_EQ(discounted_sum(std::vector<double>{1, 1, 1}, 0.5), 1.75);
  EXPECT_THROW(evaluate_return(init_policy(0), reward, Dataset{}, g), InvalidArgument);
}

TEST(Train, DeterministicPerSeedAndSelectsBestProbeReturn) {
  const Dataset train = fixtures::synthetic(4, 3, 10.0);
  const auto reward = reward::parse_or_throw("-pow(accel - 0.5, 2)");
  const auto cfg = small_config();
  const auto a = ppo_train(reward, train, cfg);
  const auto b = ppo_train(reward, train, cfg);
  EXPECT_EQ(a.best_policy.weights, b.best_policy.weights);
  ASSERT_EQ(a.per_seed_returns.size(), 2u);
  EXPECT_EQ(a.per_seed_returns[a.best_seed_index], *std::max_element(a.per_seed_returns.begin(), a.per_seed_returns.end()));
  EXPECT_EQ(a.learning_curve().size(), 3u);
  EXPECT_EQ(a.learning_curve().front().step, 0u);
  EXPECT_EQ(a.learning_curve().back().step, 2048u);
  EXPECT_FALSE(a.any_diverged());

  auto parallel = cfg;
  parallel.jobs = 2;
  EXPECT_EQ(ppo_train(reward, train, parallel).best_policy.weights, a.best_policy.weights);
}

TEST(Train, StopTokenCancels) {
  const Dataset train = fixtures::synthetic(2, 3, 10.0);
  std::stop_source src;
  src.request_stop();
  const auto r = ppo_train(reward::parse_or_throw("speed"), train, small_config(), src.get_token());
  EXPECT_TRUE(r.cancelled);
}

TEST(Train, RejectsBadConfiguration) {
  const Dataset train = fixtures::synthetic(2, 3, 10.0);
  auto cfg = small_config();
  cfg.gamma = 1.0;
  EXPECT_THROW(ppo_train(reward::parse_or_throw("speed"), train, cfg), InvalidArgument);
  EXPECT_THROW(ppo_train(reward::parse_or_throw("speed"), Dataset{}, small_config()), InvalidArgument);
}

TEST(Train, LearnsTargetAccelerationDirection) {
  const Dataset train = fixtures::synthetic(6, 12, 20.0);
  const auto reward = reward::parse_or_throw("-pow(accel - 0.5, 2)");
  auto cfg = small_config();
  cfg.total_steps = 16384;
  cfg.steps_per_batch = 2048;
  cfg.epochs_per_batch = 10;
  const auto run = train_single_seed(reward, train, cfg, 1);
  EXPECT_GT(run.learning_curve.back().mean_return, run.learning_curve.front().mean_return);
}
