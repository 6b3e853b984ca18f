#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "drivestyle/error.hpp"
#include "drivestyle/llm/embedding.hpp"
#include "drivestyle/statseval.hpp"

namespace drivestyle::llm {

// What "better" means for a metric under a given style.
enum class Objective { kHigherMean, kLowerMean, kNearNatural, kLowerSpread, kHigherSpread };

inline const char* to_string(Objective o) {
  switch (o) {
    case Objective::kHigherMean: return "higher_mean";
    case Objective::kLowerMean: return "lower_mean";
    case Objective::kNearNatural: return "near_natural";
    case Objective::kLowerSpread: return "lower_spread";
    case Objective::kHigherSpread: return "higher_spread";
  }
  return "near_natural";
}

inline Objective objective_from_string(const std::string& s) {
  for (auto o : {Objective::kHigherMean, Objective::kLowerMean, Objective::kNearNatural, Objective::kLowerSpread,
                 Objective::kHigherSpread}) {
    if (s == to_string(o)) return o;
  }
  throw DataError("unknown objective '" + s + "'");
}

struct MetricGoal {
  stats::Metric metric;
  Objective objective;
};

// Keyword-driven stand-in for the language model's reading of a command.
struct StyleProfile {
  std::string name;
  std::vector<std::string> keywords;
  std::vector<MetricGoal> goals;            // in order of relevance
  std::vector<std::string> record_hints;    // substrings of record ids that fit the style
  std::string tweak_term;                   // DSL term added by generated variants
  double tweak_coef = 0.0;                  // signed weight of the first variant
};

inline std::vector<StyleProfile> default_profiles() {
  using stats::Metric;
  return {
      {"urgency",
       {"late", "hurry", "fast", "faster", "quick", "quickly", "rush", "aggressive", "aggressively", "sporty",
        "speed up", "asap", "hurry up", "honking", "urging", "overtake"},
       {{Metric::kSpeed, Objective::kHigherMean}, {Metric::kAcceleration, Objective::kHigherSpread}},
       {"aggressive", "sporty", "efficiency"},
       "speed",
       0.05},
      {"comfort",
       {"smooth", "smoothly", "sick", "comfort", "comfortable", "gentle", "gently", "dizzy", "relax", "relaxed",
        "calm", "coffee", "nausea", "sleep", "car sick", "movie", "breakfast", "food", "not in a hurry"},
       {{Metric::kJerk, Objective::kLowerSpread}, {Metric::kAcceleration, Objective::kLowerSpread}},
       {"comfort", "eco_smooth"},
       "abs(jerk)",
       -0.05},
      {"safety",
       {"safe", "safety", "safely", "careful", "carefully", "cautious", "caution", "conservative", "conservatively",
        "fog", "foggy", "rain", "raining", "snow", "snowing", "dark", "hazy", "visibility", "street lights", "child",
        "children", "baby", "nervous", "distance", "plenty of time"},
       {{Metric::kSpacing, Objective::kHigherMean}, {Metric::kTimeHeadway, Objective::kHigherMean}},
       {"conservative", "safety"},
       "clip(thw, 0, 4)",
       0.2},
      {"eco",
       {"eco", "fuel", "economical", "economy", "energy", "efficient", "battery"},
       {{Metric::kAcceleration, Objective::kLowerSpread}, {Metric::kSpeed, Objective::kNearNatural}},
       {"eco_smooth", "comfort"},
       "pow(accel, 2)",
       -0.05},
      {"normal",
       {"normal", "normally", "usual", "regular", "average", "typical"},
       {{Metric::kSpeed, Objective::kNearNatural}, {Metric::kSpacing, Objective::kNearNatural}},
       {"normal"},
       "abs(rel_speed)",
       -0.02},
  };
}

// A matched keyword counts once per word it contains, so "not in a hurry"
// outweighs "hurry".
inline std::size_t keyword_hits(const std::string& normalized, const StyleProfile& p) {
  const std::string padded = " " + normalized + " ";
  std::size_t hits = 0;
  for (const auto& k : p.keywords) {
    const std::string nk = normalize_text(k);
    if (padded.find(" " + nk + " ") != std::string::npos) {
      hits += 1 + static_cast<std::size_t>(std::count(nk.begin(), nk.end(), ' '));
    }
  }
  return hits;
}

// Profile with the most keyword hits; ties go to the earlier profile. Without
// any hit the profile named "normal" (or the last one) applies.
inline const StyleProfile& match_profile(std::string_view command, const std::vector<StyleProfile>& profiles) {
  if (profiles.empty()) throw InvalidArgument("no style profiles");
  const std::string norm = normalize_text(command);
  const StyleProfile* best = nullptr;
  std::size_t best_hits = 0;
  for (const auto& p : profiles) {
    const std::size_t h = keyword_hits(norm, p);
    if (h > best_hits) {
      best = &p;
      best_hits = h;
    }
  }
  if (best) return *best;
  for (const auto& p : profiles) {
    if (p.name == "normal") return p;
  }
  return profiles.back();
}

inline Objective objective_for(const StyleProfile& p, stats::Metric m) {
  for (const auto& g : p.goals) {
    if (g.metric == m) return g.objective;
  }
  return Objective::kNearNatural;
}

// Higher is better.
inline double objective_score(Objective o, const stats::MetricSummary& s, const stats::MetricSummary& baseline) {
  switch (o) {
    case Objective::kHigherMean: return stats::normalize(s.mean, baseline);
    case Objective::kLowerMean: return -stats::normalize(s.mean, baseline);
    case Objective::kNearNatural:
      return -std::abs(stats::normalize(s.mean, baseline) - stats::normalize(baseline.mean, baseline));
    case Objective::kLowerSpread: return -(s.p90 - s.p10) / (baseline.p90 - baseline.p10);
    case Objective::kHigherSpread: return (s.p90 - s.p10) / (baseline.p90 - baseline.p10);
  }
  return 0.0;
}

inline StyleProfile profile_from_json(const nlohmann::json& j) {
  StyleProfile p;
  try {
    p.name = j.at("name").get<std::string>();
    p.keywords = j.at("keywords").get<std::vector<std::string>>();
    for (const auto& g : j.at("goals")) {
      const auto name = g.at("metric").get<std::string>();
      const auto m = stats::metric_from_name(name);
      if (!m) throw DataError("profile '" + p.name + "': unknown metric '" + name + "'");
      p.goals.push_back({*m, objective_from_string(g.at("objective").get<std::string>())});
    }
    p.record_hints = j.value("record_hints", std::vector<std::string>{});
    p.tweak_term = j.value("tweak_term", std::string("speed"));
    p.tweak_coef = j.value("tweak_coef", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("style profile: ") + e.what());
  }
  if (p.goals.empty()) throw DataError("profile '" + p.name + "' has no goals");
  return p;
}

}  // namespace drivestyle::llm
