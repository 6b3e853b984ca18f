#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "drivestyle/reward/parser.hpp"
#include "drivestyle/statseval.hpp"
#include "drivestyle/styledb.hpp"

namespace drivestyle::llm {

enum class Step { kRerank, kMetricSelection, kRewardGeneration, kAlignment };

inline const char* to_string(Step s) {
  switch (s) {
    case Step::kRerank: return "style-rerank";
    case Step::kMetricSelection: return "metric-selection";
    case Step::kRewardGeneration: return "reward-generation";
    case Step::kAlignment: return "alignment-verdict";
  }
  return "style-rerank";
}

// Body of the last fenced block whose info string is `tag`, if any.
inline std::optional<std::string> extract_fenced(std::string_view text, std::string_view tag) {
  const std::string open = "```" + std::string(tag);
  std::optional<std::string> found;
  std::size_t pos = 0;
  while (true) {
    const auto start = text.find(open, pos);
    if (start == std::string_view::npos) break;
    const auto line_end = text.find('\n', start);
    if (line_end == std::string_view::npos) break;
    // The info string must be exactly `tag`.
    std::string_view info = text.substr(start + 3, line_end - start - 3);
    while (!info.empty() && (info.back() == '\r' || info.back() == ' ')) info.remove_suffix(1);
    const auto close = text.find("```", line_end + 1);
    if (close == std::string_view::npos) break;
    if (info == tag) found = std::string(text.substr(line_end + 1, close - line_end - 1));
    pos = close + 3;
  }
  return found;
}

struct RewardCandidate {
  std::string source;
  std::optional<reward::RewardExpr> expr;
  std::string diagnostic;  // empty when the source parsed
};

struct StructuredVerdict {
  Step step = Step::kRerank;
  std::vector<std::string> selected_ids;
  std::vector<stats::Metric> metrics;
  std::vector<RewardCandidate> rewards;
  std::optional<styledb::Verdict> verdict;
  std::string winner;
  std::string rationale;
};

struct VerdictExpectations {
  std::size_t n = 2;                    // metric count
  std::size_t m = 2;                    // maximum number of generated rewards
  std::set<std::string> allowed_ids;    // rerank: candidate ids
  std::set<std::string> allowed_winners;  // alignment: subject names
};

struct VerdictParse {
  std::optional<StructuredVerdict> value;
  std::string diagnostic;  // set when value is empty

  bool ok() const { return value.has_value(); }
};

namespace detail {

inline std::vector<stats::Metric> parse_metric_list(const nlohmann::json& arr, std::size_t n, std::string& err) {
  std::vector<stats::Metric> out;
  if (!arr.is_array()) {
    err = "\"metrics\" must be an array";
    return out;
  }
  if (arr.size() != n) {
    err = "expected exactly " + std::to_string(n) + " metrics, got " + std::to_string(arr.size());
    return out;
  }
  for (const auto& v : arr) {
    if (!v.is_string()) {
      err = "metric names must be strings";
      return {};
    }
    const auto m = stats::metric_from_name(v.get<std::string>());
    if (!m) {
      err = "unknown metric '" + v.get<std::string>() + "'";
      return {};
    }
    if (std::find(out.begin(), out.end(), *m) != out.end()) {
      err = "metric '" + v.get<std::string>() + "' listed twice";
      return {};
    }
    out.push_back(*m);
  }
  return out;
}

inline VerdictParse fail(std::string msg) { return {std::nullopt, std::move(msg)}; }

}  // namespace detail

// Extracts the fenced ```json block of the response and checks it against the
// step's schema. Generated rewards are parsed here; a reward that does not
// parse keeps its diagnostic and does not invalidate the other entries.
inline VerdictParse parse_verdict(Step step, std::string_view raw, const VerdictExpectations& ex = {}) {
  if (raw.empty()) return detail::fail("empty response");
  const auto block = extract_fenced(raw, "json");
  if (!block) return detail::fail("no fenced json block in response");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(*block);
  } catch (const nlohmann::json::exception& e) {
    return detail::fail(std::string("json block does not parse: ") + e.what());
  }
  if (!j.is_object()) return detail::fail("json block must be an object");

  StructuredVerdict v;
  v.step = step;
  if (j.contains("rationale")) {
    if (!j["rationale"].is_string()) return detail::fail("\"rationale\" must be a string");
    v.rationale = j["rationale"].get<std::string>();
  }
  std::string err;
  switch (step) {
    case Step::kRerank: {
      const auto it = j.find("selected_ids");
      if (it == j.end() || !it->is_array() || it->empty()) return detail::fail("\"selected_ids\" must be a non-empty array");
      for (const auto& id : *it) {
        if (!id.is_string()) return detail::fail("selected ids must be strings");
        const auto s = id.get<std::string>();
        if (!ex.allowed_ids.empty() && !ex.allowed_ids.count(s)) return detail::fail("unknown style id '" + s + "'");
        if (std::find(v.selected_ids.begin(), v.selected_ids.end(), s) != v.selected_ids.end()) {
          return detail::fail("style id '" + s + "' listed twice");
        }
        v.selected_ids.push_back(s);
      }
      break;
    }
    case Step::kMetricSelection: {
      if (!j.contains("metrics")) return detail::fail("missing \"metrics\"");
      v.metrics = detail::parse_metric_list(j["metrics"], ex.n, err);
      if (!err.empty()) return detail::fail(err);
      break;
    }
    case Step::kRewardGeneration: {
      const auto it = j.find("rewards");
      if (it == j.end() || !it->is_array()) return detail::fail("\"rewards\" must be an array");
      if (it->size() > ex.m) {
        return detail::fail("expected at most " + std::to_string(ex.m) + " rewards, got " + std::to_string(it->size()));
      }
      for (const auto& r : *it) {
        if (!r.is_string()) return detail::fail("rewards must be strings of the reward language");
        RewardCandidate c;
        c.source = r.get<std::string>();
        auto parsed = reward::parse(c.source);
        if (auto* d = std::get_if<reward::ParseDiagnostic>(&parsed)) {
          c.diagnostic = d->to_string();
        } else {
          c.expr = std::get<reward::RewardExpr>(std::move(parsed));
        }
        v.rewards.push_back(std::move(c));
      }
      break;
    }
    case Step::kAlignment: {
      const auto vit = j.find("verdict");
      if (vit == j.end() || !vit->is_string()) return detail::fail("\"verdict\" must be a string");
      v.verdict = styledb::verdict_from_string(vit->get<std::string>());
      if (!v.verdict) return detail::fail("unknown verdict '" + vit->get<std::string>() + "'");
      if (!j.contains("metrics")) return detail::fail("missing \"metrics\"");
      v.metrics = detail::parse_metric_list(j["metrics"], ex.n, err);
      if (!err.empty()) return detail::fail(err);
      const auto wit = j.find("winner");
      if (wit == j.end() || !wit->is_string()) return detail::fail("\"winner\" must be a string");
      v.winner = wit->get<std::string>();
      if (!ex.allowed_winners.empty() && !ex.allowed_winners.count(v.winner)) {
        return detail::fail("unknown winner '" + v.winner + "'");
      }
      if (*v.verdict != styledb::Verdict::kChallengerBetter && v.winner != "provisional") {
        return detail::fail("winner must be \"provisional\" unless the verdict is challenger_better");
      }
      if (*v.verdict == styledb::Verdict::kChallengerBetter && v.winner == "provisional") {
        return detail::fail("challenger_better needs a candidate as winner");
      }
      break;
    }
  }
  return {std::move(v), {}};
}

inline nlohmann::json to_json(const StructuredVerdict& v) {
  nlohmann::json j = {{"step", to_string(v.step)}};
  switch (v.step) {
    case Step::kRerank: j["selected_ids"] = v.selected_ids; break;
    case Step::kRewardGeneration: {
      nlohmann::json rs = nlohmann::json::array();
      for (const auto& r : v.rewards) {
        nlohmann::json e = {{"source", r.source}, {"parsed", r.expr.has_value()}};
        if (!r.diagnostic.empty()) e["diagnostic"] = r.diagnostic;
        rs.push_back(e);
      }
      j["rewards"] = rs;
      break;
    }
    case Step::kAlignment:
      j["verdict"] = styledb::to_string(*v.verdict);
      j["winner"] = v.winner;
      [[fallthrough]];
    case Step::kMetricSelection: {
      nlohmann::json ms = nlohmann::json::array();
      for (auto m : v.metrics) ms.push_back(std::string(stats::metric_name(m)));
      j["metrics"] = ms;
      break;
    }
  }
  j["rationale"] = v.rationale;
  return j;
}

}  // namespace drivestyle::llm
