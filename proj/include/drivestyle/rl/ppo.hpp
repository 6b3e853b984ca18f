#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <stop_token>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "drivestyle/env.hpp"
#include "drivestyle/error.hpp"
#include "drivestyle/reward/ast.hpp"
#include "drivestyle/reward/evaluate.hpp"
#include "drivestyle/rl/network.hpp"
#include "drivestyle/rl/policy.hpp"
#include "drivestyle/trajdata.hpp"

namespace drivestyle::rl {

struct TrainConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_ratio = 0.2;
  std::size_t epochs_per_batch = 10;
  std::size_t steps_per_batch = 4096;
  std::size_t minibatch_size = 64;
  std::size_t total_steps = 200000;
  double learning_rate = 3e-4;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double max_grad_norm = 0.5;
  std::uint64_t seed = 0;
  std::size_t n_seeds = 5;
  std::size_t probe_events = 10;
  std::size_t jobs = 1;  // seeds trained concurrently

  void validate() const {
    auto bad = [](const std::string& what) { throw InvalidArgument("TrainConfig: " + what); };
    if (!(gamma > 0.0 && gamma < 1.0)) bad("gamma must be in (0, 1)");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) bad("gae_lambda must be in [0, 1]");
    if (!(clip_ratio > 0.0 && clip_ratio < 1.0)) bad("clip_ratio must be in (0, 1)");
    if (epochs_per_batch == 0) bad("epochs_per_batch must be >= 1");
    if (steps_per_batch == 0) bad("steps_per_batch must be >= 1");
    if (minibatch_size == 0) bad("minibatch_size must be >= 1");
    if (total_steps == 0) bad("total_steps must be >= 1");
    if (!(learning_rate > 0.0)) bad("learning_rate must be > 0");
    if (n_seeds == 0) bad("n_seeds must be >= 1");
    if (probe_events == 0) bad("probe_events must be >= 1");
  }
};

// ---- objective pieces (kept free-standing so they can be checked in isolation) ----

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

inline double gaussian_log_prob(double x, double mean, double log_std) {
  const double z = (x - mean) / std::exp(log_std);
  return -0.5 * z * z - log_std - kHalfLog2Pi;
}

inline double gaussian_entropy(double log_std) { return log_std + 0.5 + kHalfLog2Pi; }

struct PpoSample {
  double action = 0.0;    // raw (unclamped) sampled action
  double old_log_prob = 0.0;
  double advantage = 0.0;
};

// Clipped surrogate of one sample: min(r A, clip(r, 1-eps, 1+eps) A).
inline double clipped_surrogate(double ratio, double advantage, double clip) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - clip, 1.0 + clip) * advantage);
}

struct SurrogateTerms {
  double surrogate = 0.0;
  double d_mean = 0.0;     // d surrogate / d mean
  double d_log_std = 0.0;  // d surrogate / d log_std
  double ratio = 1.0;
};

// Surrogate value of one sample and its gradient with respect to the Gaussian
// parameters. The gradient vanishes where the clipped branch is selected.
inline SurrogateTerms surrogate_terms(const PpoSample& s, double mean, double log_std, double clip) {
  SurrogateTerms t;
  const double lp = gaussian_log_prob(s.action, mean, log_std);
  t.ratio = std::exp(lp - s.old_log_prob);
  t.surrogate = clipped_surrogate(t.ratio, s.advantage, clip);
  const bool clipped = (s.advantage > 0.0 && t.ratio > 1.0 + clip) || (s.advantage < 0.0 && t.ratio < 1.0 - clip);
  if (!clipped) {
    const double var = std::exp(2.0 * log_std);
    const double diff = s.action - mean;
    const double d_lp = t.ratio * s.advantage;  // d(r A)/d(log prob)
    t.d_mean = d_lp * diff / var;
    t.d_log_std = d_lp * (diff * diff / var - 1.0);
  }
  return t;
}

// Mean clipped-surrogate objective plus entropy bonus of a state-independent
// Gaussian policy (mean, log_std) over a batch, with its exact gradient.
struct ToyObjective {
  double value = 0.0;
  double d_mean = 0.0;
  double d_log_std = 0.0;
};

inline ToyObjective toy_policy_objective(std::span<const PpoSample> batch, double mean, double log_std, double clip,
                                         double entropy_coef) {
  ToyObjective o;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& s : batch) {
    const auto t = surrogate_terms(s, mean, log_std, clip);
    o.value += t.surrogate * inv;
    o.d_mean += t.d_mean * inv;
    o.d_log_std += t.d_log_std * inv;
  }
  o.value += entropy_coef * gaussian_entropy(log_std);
  o.d_log_std += entropy_coef;
  return o;
}

// Generalized advantage estimation over a flat batch of transitions.
// `next_values[t]` is V(s_{t+1}) (0 for terminal transitions) and
// `segment_end[t]` stops the backward recursion (episode end or batch end).
inline std::vector<double> compute_gae(std::span<const double> rewards, std::span<const double> values,
                                       std::span<const double> next_values, std::span<const std::uint8_t> segment_end,
                                       double gamma, double lambda) {
  std::vector<double> adv(rewards.size(), 0.0);
  double running = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    if (segment_end[t]) running = 0.0;
    const double delta = rewards[t] + gamma * next_values[t] - values[t];
    running = delta + gamma * lambda * running;
    adv[t] = running;
  }
  return adv;
}

// In-place standardisation to mean 0 and (population) standard deviation 1.
inline void normalize_advantages(std::span<double> adv) {
  if (adv.empty()) return;
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= static_cast<double>(adv.size());
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  var /= static_cast<double>(adv.size());
  const double sd = std::sqrt(var);
  for (double& a : adv) a = sd > 1e-12 ? (a - mean) / sd : 0.0;
}

// Adam with bias correction.
class Adam {
 public:
  Adam(std::size_t n, double lr) : lr_(lr), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grad[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  std::size_t t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

// Running variance of the discounted return, used to scale rewards before
// value regression (mean is not subtracted).
class ReturnScaler {
 public:
  explicit ReturnScaler(double gamma) : gamma_(gamma) {}

  double scale(double reward, bool episode_start) {
    if (episode_start) ret_ = 0.0;
    ret_ = gamma_ * ret_ + reward;
    ++count_;
    const double delta = ret_ - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta * (ret_ - mean_);
    const double var = count_ > 1 ? m2_ / static_cast<double>(count_ - 1) : 1.0;
    return reward / std::sqrt(var + 1e-8);
  }

 private:
  double gamma_;
  double ret_ = 0.0;
  double mean_ = 0.0;
  double m2_ = 0.0;
  std::size_t count_ = 0;
};

// ---- evaluation ----

inline double discounted_sum(std::span<const double> rewards, double gamma) {
  double total = 0.0;
  double g = 1.0;
  for (double r : rewards) {
    total += g * r;
    g *= gamma;
  }
  return total;
}

// Mean discounted return of mean-mode rollouts over `events`.
inline double evaluate_return(const PolicyParams& policy, const reward::RewardExpr& reward, const Dataset& events,
                              double gamma) {
  if (events.empty()) throw InvalidArgument("evaluate_return: no events");
  double sum = 0.0;
  for (const auto& ev : events.events) {
    const auto ro = rollout(policy, reward, ev, ActionMode::kMean);
    sum += discounted_sum(ro.rewards, gamma);
  }
  return sum / static_cast<double>(events.size());
}

inline Dataset probe_subset(const Dataset& train, std::size_t n) {
  Dataset probe;
  probe.split_tag = train.split_tag;
  const std::size_t k = std::min(n, train.size());
  probe.events.assign(train.events.begin(), train.events.begin() + static_cast<std::ptrdiff_t>(k));
  return probe;
}

// ---- training ----

struct CurvePoint {
  std::size_t step = 0;
  double mean_return = 0.0;
};

struct SeedRun {
  std::uint64_t seed = 0;
  PolicyParams policy;
  double probe_return = 0.0;
  std::vector<CurvePoint> learning_curve;
  bool diverged = false;  // a whole batch had every action pinned at a bound
  bool cancelled = false;
};

struct TrainResult {
  PolicyParams best_policy;
  std::size_t best_seed_index = 0;
  std::vector<double> per_seed_returns;
  std::vector<std::vector<CurvePoint>> learning_curves;
  std::vector<bool> diverged;
  bool cancelled = false;

  std::vector<CurvePoint> learning_curve() const { return learning_curves.at(best_seed_index); }
  bool any_diverged() const { return std::find(diverged.begin(), diverged.end(), true) != diverged.end(); }
};

namespace detail {

inline double mean_mode_return(const ActorCriticLayout& layout, std::span<const double> params,
                               const ObservationScale& scale, const reward::RewardExpr& reward, const Dataset& probe,
                               double gamma) {
  Mlp::Cache cache;
  double sum = 0.0;
  for (const auto& ev : probe.events) {
    const auto ro = env::rollout(
        [&](const env::EnvState& s) {
          const Observation o = observe(s, scale);
          return layout.actor.forward(params, o, cache);
        },
        &reward, ev);
    sum += discounted_sum(ro.rewards, gamma);
  }
  return sum / static_cast<double>(probe.size());
}

struct Transition {
  Observation obs{};
  double raw_action = 0.0;
  double log_prob = 0.0;
  double value = 0.0;
  double reward = 0.0;  // scaled
  double next_value = 0.0;
  std::uint8_t segment_end = 0;
};

}  // namespace detail

// One PPO training run. Returns the final policy (single precision).
inline SeedRun train_single_seed(const reward::RewardExpr& reward, const Dataset& train, const TrainConfig& cfg,
                                 std::uint64_t seed, std::stop_token stop = {}) {
  cfg.validate();
  if (train.empty()) throw InvalidArgument("ppo_train: empty training data");
  for (const auto& e : train.events) {
    if (e.frames.size() < 2) throw InvalidArgument("ppo_train: event '" + e.event_id + "' has fewer than 2 frames");
  }

  const auto layout = ActorCriticLayout::standard();
  const ObservationScale scale;
  std::vector<double> params = init_flat_params(seed);
  std::vector<double> grad(params.size(), 0.0);
  Adam adam(params.size(), cfg.learning_rate);
  ReturnScaler scaler(cfg.gamma);
  std::mt19937_64 rng(seed ^ 0x5DEECE66DULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_event(0, train.size() - 1);
  const Dataset probe = probe_subset(train, cfg.probe_events);

  SeedRun run;
  run.seed = seed;
  run.learning_curve.push_back({0, detail::mean_mode_return(layout, params, scale, reward, probe, cfg.gamma)});

  const CarFollowingEvent* ev = &train.events[pick_event(rng)];
  env::EnvState state = env::reset(*ev);
  bool episode_start = true;
  Mlp::Cache actor_cache, critic_cache;

  std::vector<detail::Transition> batch;
  std::size_t steps_done = 0;
  while (steps_done < cfg.total_steps) {
    if (stop.stop_requested()) {
      run.cancelled = true;
      break;
    }
    const std::size_t n = std::min(cfg.steps_per_batch, cfg.total_steps - steps_done);
    batch.assign(n, {});
    std::size_t saturated = 0;
    for (std::size_t t = 0; t < n; ++t) {
      auto& tr = batch[t];
      tr.obs = observe(state, scale);
      const double mean = layout.actor.forward(params, tr.obs, actor_cache);
      tr.value = layout.critic.forward(params, tr.obs, critic_cache);
      const double log_std = params[layout.log_std_index];
      tr.raw_action = mean + std::exp(log_std) * normal(rng);
      tr.log_prob = gaussian_log_prob(tr.raw_action, mean, log_std);
      const double applied = env::clamp_accel(tr.raw_action);
      if (applied == kAccelMin || applied == kAccelMax) ++saturated;

      const auto res = env::step(state, env::Action{applied}, *ev, ev->dt);
      const double r = reward::evaluate(reward, env::transition_features(state, applied, res.next, ev->dt));
      if (!std::isfinite(r)) throw TrainingError("reward is not finite during training");
      tr.reward = scaler.scale(r, episode_start);
      episode_start = false;

      if (res.done) {
        tr.segment_end = 1;
        tr.next_value = res.collided ? 0.0 : layout.critic.forward(params, observe(res.next, scale), critic_cache);
        ev = &train.events[pick_event(rng)];
        state = env::reset(*ev);
        episode_start = true;
      } else {
        state = res.next;
        if (t + 1 == n) {
          tr.segment_end = 1;
          tr.next_value = layout.critic.forward(params, observe(state, scale), critic_cache);
        }
      }
      if (!tr.segment_end) {
        // Filled in from the next transition's value estimate below.
        tr.next_value = std::numeric_limits<double>::quiet_NaN();
      }
    }
    for (std::size_t t = 0; t + 1 < n; ++t) {
      if (!batch[t].segment_end) batch[t].next_value = batch[t + 1].value;
    }
    if (saturated == n) run.diverged = true;
    steps_done += n;

    std::vector<double> rewards(n), values(n), next_values(n);
    std::vector<std::uint8_t> ends(n);
    for (std::size_t t = 0; t < n; ++t) {
      rewards[t] = batch[t].reward;
      values[t] = batch[t].value;
      next_values[t] = batch[t].next_value;
      ends[t] = batch[t].segment_end;
    }
    std::vector<double> adv = compute_gae(rewards, values, next_values, ends, cfg.gamma, cfg.gae_lambda);
    std::vector<double> returns(n);
    for (std::size_t t = 0; t < n; ++t) returns[t] = adv[t] + values[t];
    normalize_advantages(adv);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 0; epoch < cfg.epochs_per_batch; ++epoch) {
      for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
      for (std::size_t start = 0; start < n; start += cfg.minibatch_size) {
        const std::size_t end = std::min(n, start + cfg.minibatch_size);
        const double inv = 1.0 / static_cast<double>(end - start);
        std::fill(grad.begin(), grad.end(), 0.0);
        const double log_std = params[layout.log_std_index];
        double d_log_std = 0.0;
        for (std::size_t k = start; k < end; ++k) {
          const auto& tr = batch[order[k]];
          const double mean = layout.actor.forward(params, tr.obs, actor_cache);
          const auto terms =
              surrogate_terms({tr.raw_action, tr.log_prob, adv[order[k]]}, mean, log_std, cfg.clip_ratio);
          // Loss = -surrogate - c_e * entropy + c_v * (V - R)^2, averaged.
          layout.actor.backward(params, actor_cache, -terms.d_mean * inv, grad);
          d_log_std += -terms.d_log_std * inv;
          const double v = layout.critic.forward(params, tr.obs, critic_cache);
          layout.critic.backward(params, critic_cache, 2.0 * cfg.value_coef * (v - returns[order[k]]) * inv, grad);
        }
        grad[layout.log_std_index] = d_log_std - cfg.entropy_coef;
        double norm = 0.0;
        for (double g : grad) norm += g * g;
        norm = std::sqrt(norm);
        if (norm > cfg.max_grad_norm) {
          const double s = cfg.max_grad_norm / norm;
          for (double& g : grad) g *= s;
        }
        adam.step(params, grad);
        params[layout.log_std_index] = std::clamp(params[layout.log_std_index], kLogStdMin, kLogStdMax);
      }
    }
    run.learning_curve.push_back(
        {steps_done, detail::mean_mode_return(layout, params, scale, reward, probe, cfg.gamma)});
  }
  run.policy = to_policy_params(params, scale);
  run.probe_return = evaluate_return(run.policy, reward, probe, cfg.gamma);
  return run;
}

// Trains cfg.n_seeds independent policies (seeds cfg.seed, cfg.seed + 1, ...)
// and keeps the one with the highest mean-mode return on a fixed probe made of
// the first cfg.probe_events training events.
inline TrainResult ppo_train(const reward::RewardExpr& reward, const Dataset& train, const TrainConfig& cfg,
                             std::stop_token stop = {}) {
  cfg.validate();
  if (train.empty()) throw InvalidArgument("ppo_train: empty training data");
  std::vector<SeedRun> runs(cfg.n_seeds);
  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, cfg.n_seeds));
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < cfg.n_seeds; i = next++) {
      runs[i] = train_single_seed(reward, train, cfg, cfg.seed + i, stop);
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::future<void>> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.push_back(std::async(std::launch::async, worker));
    for (auto& f : pool) f.get();
  }

  TrainResult res;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    res.per_seed_returns.push_back(runs[i].probe_return);
    res.learning_curves.push_back(runs[i].learning_curve);
    res.diverged.push_back(runs[i].diverged);
    res.cancelled = res.cancelled || runs[i].cancelled;
    if (runs[i].probe_return > runs[res.best_seed_index].probe_return) res.best_seed_index = i;
  }
  res.best_policy = runs[res.best_seed_index].policy;
  return res;
}

}  // namespace drivestyle::rl
