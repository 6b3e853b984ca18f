#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "drivestyle/env.hpp"
#include "drivestyle/error.hpp"
#include "drivestyle/numeric.hpp"
#include "drivestyle/trajdata.hpp"

namespace drivestyle::stats {

enum class Metric { kSpeed, kAcceleration, kJerk, kSpacing, kTimeHeadway, kRelativeSpeed };

inline constexpr std::array<Metric, 6> kAllMetrics = {Metric::kSpeed,   Metric::kAcceleration, Metric::kJerk,
                                                      Metric::kSpacing, Metric::kTimeHeadway,  Metric::kRelativeSpeed};

inline constexpr std::string_view metric_name(Metric m) {
  switch (m) {
    case Metric::kSpeed: return "speed";
    case Metric::kAcceleration: return "acceleration";
    case Metric::kJerk: return "jerk";
    case Metric::kSpacing: return "spacing";
    case Metric::kTimeHeadway: return "time_headway";
    case Metric::kRelativeSpeed: return "relative_speed";
  }
  return "speed";
}

inline std::optional<Metric> metric_from_name(std::string_view name) {
  for (Metric m : kAllMetrics) {
    if (metric_name(m) == name) return m;
  }
  return std::nullopt;
}

inline constexpr std::string_view metric_unit(Metric m) {
  switch (m) {
    case Metric::kSpeed:
    case Metric::kRelativeSpeed: return "m/s";
    case Metric::kAcceleration: return "m/s^2";
    case Metric::kJerk: return "m/s^3";
    case Metric::kSpacing: return "m";
    case Metric::kTimeHeadway: return "s";
  }
  return "";
}

inline constexpr double kHeadwayCap = 20.0;
inline constexpr double kHeadwaySpeedFloor = 0.5;
inline constexpr double kNearBand = 0.1;

// Time headway used for statistics: spacing / speed, capped at 20 s and
// pinned to the cap when the ego is (nearly) stopped.
inline double stats_headway(double spacing, double speed) {
  if (speed <= kHeadwaySpeedFloor) return kHeadwayCap;
  return std::min(spacing / speed, kHeadwayCap);
}

struct MetricSummary {
  Metric metric = Metric::kSpeed;
  double mean = 0.0;
  double std = 0.0;
  double p10 = 0.0;
  double p50 = 0.0;
  double p90 = 0.0;
  std::size_t sample_count = 0;

  bool operator==(const MetricSummary&) const = default;
};

struct StatsReport {
  std::string subject;
  std::string test_set_id;
  std::vector<MetricSummary> summaries;  // one per metric, in kAllMetrics order

  const MetricSummary* find(Metric m) const {
    for (const auto& s : summaries) {
      if (s.metric == m) return &s;
    }
    return nullptr;
  }
  const MetricSummary& at(Metric m) const {
    if (const auto* s = find(m)) return *s;
    throw DataError("stats report '" + subject + "' has no metric '" + std::string(metric_name(m)) + "'");
  }

  bool operator==(const StatsReport&) const = default;
};

// Pooled per-frame samples of every metric.
struct MetricSamples {
  std::array<std::vector<double>, kAllMetrics.size()> values;

  std::vector<double>& of(Metric m) { return values[static_cast<std::size_t>(m)]; }
  const std::vector<double>& of(Metric m) const { return values[static_cast<std::size_t>(m)]; }
};

inline MetricSummary summarize(Metric m, std::vector<double> xs) {
  if (xs.empty()) throw DataError("no samples for metric '" + std::string(metric_name(m)) + "'");
  MetricSummary s;
  s.metric = m;
  s.sample_count = xs.size();
  s.mean = mean_of(xs);
  s.std = stddev_of(xs);
  std::sort(xs.begin(), xs.end());
  s.p10 = percentile_sorted(xs, 0.10);
  s.p50 = percentile_sorted(xs, 0.50);
  s.p90 = percentile_sorted(xs, 0.90);
  return s;
}

inline StatsReport report_from_samples(const MetricSamples& samples, std::string subject, std::string test_set_id) {
  StatsReport r;
  r.subject = std::move(subject);
  r.test_set_id = std::move(test_set_id);
  for (Metric m : kAllMetrics) r.summaries.push_back(summarize(m, samples.of(m)));
  return r;
}

inline void add_rollout_samples(const env::EpisodeRollout& ro, MetricSamples& out) {
  for (const auto& s : ro.states) {
    out.of(Metric::kSpeed).push_back(s.ego_v);
    out.of(Metric::kSpacing).push_back(s.gap);
    out.of(Metric::kTimeHeadway).push_back(stats_headway(s.gap, s.ego_v));
    out.of(Metric::kRelativeSpeed).push_back(s.rel_v);
  }
  for (std::size_t i = 0; i < ro.actions.size(); ++i) {
    out.of(Metric::kAcceleration).push_back(ro.actions[i].accel);
    if (i > 0) out.of(Metric::kJerk).push_back((ro.actions[i].accel - ro.actions[i - 1].accel) / ro.dt);
  }
}

// Statistics of simulated behaviour, pooled over all frames of all rollouts.
inline StatsReport compute_report(std::span<const env::EpisodeRollout> rollouts, const std::string& subject,
                                  const std::string& test_set_id = "") {
  if (rollouts.empty()) throw InvalidArgument("compute_report: no rollouts");
  MetricSamples samples;
  for (const auto& ro : rollouts) add_rollout_samples(ro, samples);
  return report_from_samples(samples, subject, test_set_id);
}

// Statistics of the recorded ego vehicles (acceleration by first difference
// of speed, jerk by first difference of acceleration).
inline StatsReport natural_baseline(const Dataset& test) {
  if (test.empty()) throw InvalidArgument("natural_baseline: empty test set");
  MetricSamples samples;
  for (const auto& ev : test.events) {
    double prev_accel = 0.0;
    for (std::size_t i = 0; i < ev.frames.size(); ++i) {
      const Frame& f = ev.frames[i];
      const double gap = ev.gap_at(i);
      samples.of(Metric::kSpeed).push_back(f.ego_v);
      samples.of(Metric::kSpacing).push_back(gap);
      samples.of(Metric::kTimeHeadway).push_back(stats_headway(gap, f.ego_v));
      samples.of(Metric::kRelativeSpeed).push_back(f.lead_v - f.ego_v);
      if (i + 1 < ev.frames.size()) {
        const double accel = (ev.frames[i + 1].ego_v - f.ego_v) / ev.dt;
        samples.of(Metric::kAcceleration).push_back(accel);
        if (i > 0) samples.of(Metric::kJerk).push_back((accel - prev_accel) / ev.dt);
        prev_accel = accel;
      }
    }
  }
  return report_from_samples(samples, "natural", test.fingerprint());
}

// Affine map sending the baseline's 10th percentile to 0 and 90th to 1.
inline double normalize(double value, const MetricSummary& baseline) {
  const double span = baseline.p90 - baseline.p10;
  if (!(span > 0.0)) {
    throw DataError("degenerate baseline for metric '" + std::string(metric_name(baseline.metric)) +
                    "' (p90 == p10)");
  }
  return (value - baseline.p10) / span;
}

enum class Direction { kAbove, kNear, kBelow };

inline constexpr std::string_view direction_name(Direction d) {
  return d == Direction::kAbove ? "above" : d == Direction::kBelow ? "below" : "near";
}

struct ComparisonRow {
  Metric metric = Metric::kSpeed;
  double candidate = 0.0;  // normalised candidate mean
  double natural = 0.0;    // normalised baseline mean
  Direction direction = Direction::kNear;

  bool operator==(const ComparisonRow&) const = default;
};

// One row per selected metric; the direction compares the candidate's
// normalised mean with the baseline's own normalised mean (band +-0.1).
inline std::vector<ComparisonRow> compare_reports(const StatsReport& candidate, const StatsReport& baseline,
                                                  std::span<const Metric> selected) {
  if (selected.empty()) throw InvalidArgument("compare_reports: no metrics selected");
  std::vector<ComparisonRow> rows;
  for (Metric m : selected) {
    const MetricSummary& base = baseline.at(m);
    ComparisonRow row;
    row.metric = m;
    row.candidate = normalize(candidate.at(m).mean, base);
    row.natural = normalize(base.mean, base);
    const double d = row.candidate - row.natural;
    row.direction = d > kNearBand ? Direction::kAbove : d < -kNearBand ? Direction::kBelow : Direction::kNear;
    rows.push_back(row);
  }
  return rows;
}

// One-line digest of a report, used in prompts and retrieval keys.
inline std::string digest(const StatsReport& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  bool first = true;
  for (const auto& s : r.summaries) {
    if (!first) os << "; ";
    first = false;
    os << metric_name(s.metric) << " mean " << s.mean << " " << metric_unit(s.metric) << " (p10 " << s.p10
       << ", p90 " << s.p90 << ")";
  }
  return os.str();
}

// ---- JSON ----

inline nlohmann::json to_json(const MetricSummary& s) {
  return {{"metric", metric_name(s.metric)}, {"mean", s.mean}, {"std", s.std},   {"p10", s.p10},
          {"p50", s.p50},                    {"p90", s.p90},   {"sample_count", s.sample_count}};
}

inline nlohmann::json to_json(const StatsReport& r) {
  nlohmann::json summaries = nlohmann::json::array();
  for (const auto& s : r.summaries) summaries.push_back(to_json(s));
  return {{"subject", r.subject}, {"test_set_id", r.test_set_id}, {"summaries", summaries}};
}

inline StatsReport report_from_json(const nlohmann::json& j) {
  try {
    StatsReport r;
    r.subject = j.at("subject").get<std::string>();
    r.test_set_id = j.at("test_set_id").get<std::string>();
    for (const auto& s : j.at("summaries")) {
      MetricSummary m;
      const auto name = s.at("metric").get<std::string>();
      const auto metric = metric_from_name(name);
      if (!metric) throw DataError("unknown metric '" + name + "'");
      m.metric = *metric;
      m.mean = s.at("mean").get<double>();
      m.std = s.at("std").get<double>();
      m.p10 = s.at("p10").get<double>();
      m.p50 = s.at("p50").get<double>();
      m.p90 = s.at("p90").get<double>();
      m.sample_count = s.at("sample_count").get<std::size_t>();
      r.summaries.push_back(m);
    }
    for (Metric m : kAllMetrics) {
      if (!r.find(m)) throw DataError("stats report misses metric '" + std::string(metric_name(m)) + "'");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed stats report: ") + e.what());
  }
}

inline nlohmann::json to_json(std::span<const ComparisonRow> rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"metric", metric_name(r.metric)},
                   {"candidate_normalized_mean", r.candidate},
                   {"natural_normalized_mean", r.natural},
                   {"direction", direction_name(r.direction)}});
  }
  return out;
}

}  // namespace drivestyle::stats
