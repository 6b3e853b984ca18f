#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drivestyle/env.hpp"
#include "drivestyle/error.hpp"
#include "drivestyle/kinematics.hpp"
#include "drivestyle/rl/network.hpp"

namespace drivestyle::rl {

inline constexpr std::size_t kObservationSize = 5;
inline constexpr std::size_t kHiddenWidth = 64;
inline constexpr double kLogStdMin = -4.0;
inline constexpr double kLogStdMax = 1.0;
inline constexpr double kObservationClip = 10.0;

// Input normalisation constants, stored with every policy.
struct ObservationScale {
  double gap = 50.0;
  double speed = 30.0;
  double accel = 3.0;
  bool operator==(const ObservationScale&) const = default;
};

using Observation = std::array<double, kObservationSize>;

inline Observation observe(const env::EnvState& s, const ObservationScale& sc) {
  Observation o{s.gap / sc.gap, s.ego_v / sc.speed, s.rel_v / sc.speed, s.lead_v / sc.speed,
                s.prev_accel / sc.accel};
  for (double& x : o) x = std::clamp(x, -kObservationClip, kObservationClip);
  return o;
}

// Parameter layout shared by the trainer and persisted policies: actor MLP,
// critic MLP, then the state-independent log standard deviation.
struct ActorCriticLayout {
  Mlp actor;
  Mlp critic;
  std::size_t log_std_index = 0;
  std::size_t total = 0;

  static ActorCriticLayout standard() {
    ActorCriticLayout l;
    l.actor = Mlp({kObservationSize, kHiddenWidth, kHiddenWidth, 1}, 0);
    l.critic = Mlp({kObservationSize, kHiddenWidth, kHiddenWidth, 1}, l.actor.end());
    l.log_std_index = l.critic.end();
    l.total = l.log_std_index + 1;
    return l;
  }
};

struct TensorShape {
  std::string name;
  std::vector<std::size_t> dims;
  bool operator==(const TensorShape&) const = default;
};

// Trained stochastic acceleration policy plus value head. Weights are kept
// in single precision, exactly as persisted.
struct PolicyParams {
  std::vector<TensorShape> shapes;
  std::vector<float> weights;  // concatenation of `shapes` in order
  double log_std = 0.0;
  ObservationScale scale;

  bool operator==(const PolicyParams&) const = default;
};

inline std::vector<TensorShape> standard_shapes() {
  std::vector<TensorShape> out;
  const auto layout = ActorCriticLayout::standard();
  for (const auto* net : {&layout.actor, &layout.critic}) {
    const std::string prefix = net == &layout.actor ? "actor" : "critic";
    for (std::size_t l = 0; l < net->layers(); ++l) {
      out.push_back({prefix + ".l" + std::to_string(l) + ".weight", {net->out_size(l), net->in_size(l)}});
      out.push_back({prefix + ".l" + std::to_string(l) + ".bias", {net->out_size(l)}});
    }
  }
  return out;
}

inline std::size_t element_count(const std::vector<TensorShape>& shapes) {
  std::size_t n = 0;
  for (const auto& s : shapes) {
    std::size_t k = 1;
    for (auto d : s.dims) k *= d;
    n += k;
  }
  return n;
}

inline void check_consistent(const PolicyParams& p) {
  if (p.shapes != standard_shapes()) throw DataError("policy: unsupported tensor shapes");
  if (p.weights.size() != element_count(p.shapes)) throw DataError("policy: weight count does not match shapes");
  if (!(p.log_std >= kLogStdMin && p.log_std <= kLogStdMax)) throw DataError("policy: log_std out of range");
}

// Flat double parameters (trainer layout) -> persisted form.
inline PolicyParams to_policy_params(std::span<const double> params, const ObservationScale& scale) {
  const auto layout = ActorCriticLayout::standard();
  PolicyParams p;
  p.shapes = standard_shapes();
  p.weights.resize(layout.log_std_index);
  for (std::size_t i = 0; i < layout.log_std_index; ++i) p.weights[i] = static_cast<float>(params[i]);
  p.log_std = std::clamp(params[layout.log_std_index], kLogStdMin, kLogStdMax);
  p.scale = scale;
  return p;
}

inline std::vector<double> to_flat_params(const PolicyParams& p) {
  check_consistent(p);
  std::vector<double> flat(p.weights.begin(), p.weights.end());
  flat.push_back(p.log_std);
  return flat;
}

enum class ActionMode { kStochastic, kMean };

// Inference wrapper over PolicyParams.
class PolicyNetwork {
 public:
  explicit PolicyNetwork(const PolicyParams& p)
      : layout_(ActorCriticLayout::standard()), params_(to_flat_params(p)), scale_(p.scale) {}

  double mean_action(const env::EnvState& s) const {
    const Observation o = observe(s, scale_);
    return layout_.actor.forward(params_, o, cache_);
  }
  double value(const env::EnvState& s) const {
    const Observation o = observe(s, scale_);
    return layout_.critic.forward(params_, o, cache_);
  }
  double log_std() const { return params_[layout_.log_std_index]; }

  // Gaussian sample (or the mean), clamped to the actuation limits.
  double act(const env::EnvState& s, ActionMode mode, std::mt19937_64& rng) const {
    double a = mean_action(s);
    if (mode == ActionMode::kStochastic) {
      std::normal_distribution<double> n(0.0, 1.0);
      a += std::exp(log_std()) * n(rng);
    }
    return env::clamp_accel(a);
  }

 private:
  ActorCriticLayout layout_;
  std::vector<double> params_;
  ObservationScale scale_;
  mutable Mlp::Cache cache_;
};

// Orthogonal init: gain 1.0 for hidden layers and the value head, 0.01 for the
// action-mean head; log_std starts at 0.
inline std::vector<double> init_flat_params(std::uint64_t seed) {
  const auto layout = ActorCriticLayout::standard();
  std::vector<double> params(layout.total, 0.0);
  std::mt19937_64 rng(seed);
  layout.actor.init_orthogonal(params, rng, 1.0, 0.01);
  layout.critic.init_orthogonal(params, rng, 1.0, 1.0);
  params[layout.log_std_index] = 0.0;
  return params;
}

inline PolicyParams init_policy(std::uint64_t seed) { return to_policy_params(init_flat_params(seed), {}); }

inline env::Action sample_action(const PolicyParams& policy, const env::EnvState& state, ActionMode mode,
                                 std::uint64_t rng_seed) {
  PolicyNetwork net(policy);
  std::mt19937_64 rng(rng_seed);
  return env::Action{net.act(state, mode, rng)};
}

// Episode under a stored policy. Mean mode ignores `rng_seed`.
inline env::EpisodeRollout rollout(const PolicyParams& policy, const reward::RewardExpr& reward,
                                   const CarFollowingEvent& ev, ActionMode mode, std::uint64_t rng_seed = 0) {
  PolicyNetwork net(policy);
  std::mt19937_64 rng(rng_seed);
  return env::rollout([&](const env::EnvState& s) { return net.act(s, mode, rng); }, &reward, ev);
}

// ---- persistence: sidecar JSON + little-endian float32 weights ----

inline constexpr const char* kPolicyFormat = "drivestyle-policy-v1";

inline nlohmann::json policy_sidecar(const PolicyParams& p) {
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& s : p.shapes) shapes.push_back({{"name", s.name}, {"shape", s.dims}});
  return {{"format", kPolicyFormat},
          {"tensors", shapes},
          {"log_std", p.log_std},
          {"normalization", {{"gap", p.scale.gap}, {"speed", p.scale.speed}, {"accel", p.scale.accel}}},
          {"action_bounds", {kAccelMin, kAccelMax}},
          {"weight_count", p.weights.size()}};
}

inline std::string encode_f32le(const std::vector<float>& values) {
  std::string out(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  return out;
}

inline std::vector<float> decode_f32le(const std::string& bytes) {
  if (bytes.size() % 4 != 0) throw DataError("weight file length is not a multiple of 4");
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

inline PolicyParams policy_from_parts(const nlohmann::json& sidecar, const std::string& weight_bytes) {
  if (!sidecar.is_object() || sidecar.value("format", "") != kPolicyFormat) {
    throw DataError("policy sidecar: unknown format");
  }
  PolicyParams p;
  try {
    for (const auto& t : sidecar.at("tensors")) {
      p.shapes.push_back({t.at("name").get<std::string>(), t.at("shape").get<std::vector<std::size_t>>()});
    }
    p.log_std = sidecar.at("log_std").get<double>();
    const auto& n = sidecar.at("normalization");
    p.scale = ObservationScale{n.at("gap").get<double>(), n.at("speed").get<double>(), n.at("accel").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("policy sidecar: ") + e.what());
  }
  p.weights = decode_f32le(weight_bytes);
  check_consistent(p);
  return p;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Writes `<stem>.json` and `<stem>.f32` next to each other. `weights_path`
// must end in ".f32".
inline void save_policy(const PolicyParams& p, const std::filesystem::path& weights_path) {
  check_consistent(p);
  auto sidecar = weights_path;
  sidecar.replace_extension(".json");
  {
    std::ofstream w(weights_path, std::ios::binary);
    if (!w) throw DataError("cannot write '" + weights_path.string() + "'");
    const std::string bytes = encode_f32le(p.weights);
    w.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::ofstream s(sidecar);
  if (!s) throw DataError("cannot write '" + sidecar.string() + "'");
  s << policy_sidecar(p).dump(2) << '\n';
}

inline PolicyParams load_policy(const std::filesystem::path& weights_path) {
  auto sidecar = weights_path;
  sidecar.replace_extension(".json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_bytes(sidecar));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("policy sidecar '" + sidecar.string() + "': " + e.what());
  }
  return policy_from_parts(j, read_file_bytes(weights_path));
}

}  // namespace drivestyle::rl
