#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "drivestyle/fsutil.hpp"
#include "drivestyle/idm.hpp"
#include "drivestyle/llm/types.hpp"
#include "drivestyle/policy_eval.hpp"

namespace drivestyle::service {

inline constexpr double kClipSeconds = 15.0;

struct Clip {
  std::string clip_id;
  std::string event_id;
  double dt = 0.1;
  std::vector<Frame> frames;
  double lead_length = kDefaultLeadLength;
  std::string source_label;  // "ours" or "baseline"; never sent to clients
};

inline nlohmann::json frames_json(const std::vector<Frame>& frames) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& f : frames) {
    out.push_back({{"t", f.t}, {"lead_x", f.lead_x}, {"lead_v", f.lead_v}, {"ego_x", f.ego_x}, {"ego_v", f.ego_v}});
  }
  return out;
}

// Public form: no source label.
inline nlohmann::json clip_public_json(const Clip& c) {
  return {{"clip_id", c.clip_id},
          {"event_id", c.event_id},
          {"dt", c.dt},
          {"lead_length", c.lead_length},
          {"frames", frames_json(c.frames)}};
}

inline nlohmann::json clip_storage_json(const Clip& c) {
  auto j = clip_public_json(c);
  j["source_label"] = c.source_label;
  return j;
}

inline Clip clip_from_json(const nlohmann::json& j) {
  Clip c;
  try {
    c.clip_id = j.at("clip_id").get<std::string>();
    c.event_id = j.at("event_id").get<std::string>();
    c.dt = j.at("dt").get<double>();
    c.lead_length = j.at("lead_length").get<double>();
    c.source_label = j.value("source_label", std::string());
    for (const auto& f : j.at("frames")) {
      c.frames.push_back({f.at("t").get<double>(), f.at("lead_x").get<double>(), f.at("lead_v").get<double>(),
                          f.at("ego_x").get<double>(), f.at("ego_v").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("clip: ") + e.what());
  }
  if (c.frames.size() < 2) throw DataError("clip '" + c.clip_id + "' has fewer than 2 frames");
  return c;
}

struct Comparison {
  std::string comparison_id;
  std::string command;
  std::string side_a;  // clip ids
  std::string side_b;
  char ours_side = 'A';
};

inline nlohmann::json comparison_storage_json(const Comparison& c) {
  return {{"comparison_id", c.comparison_id},
          {"command", c.command},
          {"side_a", c.side_a},
          {"side_b", c.side_b},
          {"ours_side", std::string(1, c.ours_side)}};
}

inline Comparison comparison_from_json(const nlohmann::json& j) {
  Comparison c;
  try {
    c.comparison_id = j.at("comparison_id").get<std::string>();
    c.command = j.at("command").get<std::string>();
    c.side_a = j.at("side_a").get<std::string>();
    c.side_b = j.at("side_b").get<std::string>();
    const auto s = j.at("ours_side").get<std::string>();
    if (s != "A" && s != "B") throw DataError("comparison '" + c.comparison_id + "': ours_side must be A or B");
    c.ours_side = s[0];
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("comparison: ") + e.what());
  }
  return c;
}

inline std::string hex_id(std::string_view key) {
  static const char* digits = "0123456789abcdef";
  std::uint64_t h = fnv1a64(key);
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = digits[h & 0xF];
  return s;
}

// First `kClipSeconds` of an event with the ego driven by the given follower.
inline std::vector<Frame> excerpt_frames(const CarFollowingEvent& ev, const std::vector<double>& ego_x,
                                         const std::vector<double>& ego_v) {
  const auto limit = static_cast<std::size_t>(std::llround(kClipSeconds / ev.dt));
  const std::size_t n = std::min({limit, ego_x.size(), ev.frames.size()});
  std::vector<Frame> out;
  for (std::size_t i = 0; i < n; ++i) {
    const Frame& f = ev.frames[i];
    out.push_back({f.t, f.lead_x, f.lead_v, ego_x[i], ego_v[i]});
  }
  return out;
}

inline Clip policy_clip(const rl::PolicyParams& policy, const reward::RewardExpr& reward, const CarFollowingEvent& ev) {
  const auto ro = rl::rollout(policy, reward, ev, rl::ActionMode::kMean);
  std::vector<double> xs, vs;
  for (const auto& s : ro.states) {
    xs.push_back(ev.frames[s.t_index].lead_x - ev.lead_length - s.gap);
    vs.push_back(s.ego_v);
  }
  Clip c;
  c.event_id = ev.event_id;
  c.dt = ev.dt;
  c.lead_length = ev.lead_length;
  c.frames = excerpt_frames(ev, xs, vs);
  c.source_label = "ours";
  return c;
}

inline Clip idm_clip(const idm::IdmParams& p, const CarFollowingEvent& ev) {
  const auto tr = idm::simulate_follower(p, ev);
  Clip c;
  c.event_id = ev.event_id;
  c.dt = ev.dt;
  c.lead_length = ev.lead_length;
  c.frames = excerpt_frames(ev, tr.ego_x, tr.ego_v);
  c.source_label = "baseline";
  return c;
}

struct ComparisonBatch {
  std::vector<Clip> clips;
  std::vector<Comparison> comparisons;
};

// Pairs a policy with the IDM baseline on `n_events` test events drawn
// without replacement; the side of our clip is a fair coin per comparison.
inline ComparisonBatch build_comparisons(const std::string& command, const rl::PolicyParams& policy,
                                         const reward::RewardExpr& reward, const idm::IdmParams& baseline,
                                         const Dataset& test, std::size_t n_events, std::uint64_t seed) {
  if (test.empty()) throw InvalidArgument("build_comparisons: empty test set");
  if (n_events == 0) throw InvalidArgument("build_comparisons: need at least one event");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(test.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
  order.resize(std::min(n_events, order.size()));

  ComparisonBatch batch;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& ev = test.events[order[k]];
    const std::string key = command + "\x1f" + ev.event_id + "\x1f" + std::to_string(seed) + "\x1f" + std::to_string(k);
    Clip ours = policy_clip(policy, reward, ev);
    Clip base = idm_clip(baseline, ev);
    ours.clip_id = "clip-" + hex_id(key + "\x1f" + "1");
    base.clip_id = "clip-" + hex_id(key + "\x1f" + "2");
    Comparison c;
    c.comparison_id = "cmp-" + hex_id(key);
    c.command = command;
    c.ours_side = (rng() & 1u) ? 'A' : 'B';
    c.side_a = c.ours_side == 'A' ? ours.clip_id : base.clip_id;
    c.side_b = c.ours_side == 'A' ? base.clip_id : ours.clip_id;
    batch.clips.push_back(std::move(ours));
    batch.clips.push_back(std::move(base));
    batch.comparisons.push_back(std::move(c));
  }
  return batch;
}

// <dir>/comparisons.json, <dir>/clips/<clip_id>.json, <dir>/votes.jsonl
inline void append_batch(const std::filesystem::path& dir, const ComparisonBatch& batch) {
  std::filesystem::create_directories(dir / "clips");
  nlohmann::json all = nlohmann::json::array();
  if (std::filesystem::exists(dir / "comparisons.json")) {
    try {
      all = nlohmann::json::parse(read_text_file(dir / "comparisons.json"));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("comparisons.json: ") + e.what());
    }
  }
  std::set<std::string> known;
  for (const auto& c : all) known.insert(c.at("comparison_id").get<std::string>());
  for (const auto& clip : batch.clips) {
    write_file_atomic(dir / "clips" / (clip.clip_id + ".json"), clip_storage_json(clip).dump() + "\n");
  }
  for (const auto& c : batch.comparisons) {
    if (known.count(c.comparison_id)) throw DataError("comparison '" + c.comparison_id + "' already exists");
    all.push_back(comparison_storage_json(c));
  }
  write_file_atomic(dir / "comparisons.json", all.dump(2) + "\n");
}

enum class Choice { kA, kB, kEven };

inline std::optional<Choice> choice_from_string(const std::string& s) {
  if (s == "A") return Choice::kA;
  if (s == "B") return Choice::kB;
  if (s == "even") return Choice::kEven;
  return std::nullopt;
}

struct Tally {
  std::size_t prefer_ours = 0;
  std::size_t prefer_baseline = 0;
  std::size_t even = 0;
  std::size_t tested_events() const { return prefer_ours + prefer_baseline + even; }
};

enum class VoteStatus { kOk, kUnknown, kAlreadyVoted };

using CommandHandler = std::function<nlohmann::json(const std::string& text)>;

// Serves a prepared comparison batch and records votes. The batch is read
// once; votes are appended to votes.jsonl under a lock.
class PreferenceService {
 public:
  explicit PreferenceService(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (std::filesystem::exists(dir_ / "comparisons.json")) {
      nlohmann::json all;
      try {
        all = nlohmann::json::parse(read_text_file(dir_ / "comparisons.json"));
      } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("comparisons.json: ") + e.what());
      }
      for (const auto& j : all) {
        auto c = comparison_from_json(j);
        index_[c.comparison_id] = comparisons_.size();
        if (std::find(commands_.begin(), commands_.end(), c.command) == commands_.end()) commands_.push_back(c.command);
        comparisons_.push_back(std::move(c));
      }
    }
    if (std::filesystem::exists(dir_ / "votes.jsonl")) {
      std::istringstream in(read_text_file(dir_ / "votes.jsonl"));
      std::size_t line_no = 0;
      for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.empty()) continue;
        try {
          const auto j = nlohmann::json::parse(line);
          const auto id = j.at("comparison_id").get<std::string>();
          const auto choice = choice_from_string(j.at("choice").get<std::string>());
          if (!choice || !index_.count(id)) throw DataError("bad vote");
          votes_[id] = *choice;
        } catch (const std::exception& e) {
          throw DataError("votes.jsonl:" + std::to_string(line_no) + ": " + e.what());
        }
      }
    }
  }

  std::size_t size() const { return comparisons_.size(); }

  std::optional<Clip> clip(const std::string& id) const {
    if (!valid_clip_id(id)) return std::nullopt;
    const auto path = dir_ / "clips" / (id + ".json");
    if (!std::filesystem::exists(path)) return std::nullopt;
    try {
      return clip_from_json(nlohmann::json::parse(read_text_file(path)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("clip '" + id + "': " + e.what());
    }
  }

  // Next comparison for the session: unvoted, not handed to another session,
  // and never served to this one before.
  std::optional<nlohmann::json> next(const std::string& session) {
    std::lock_guard lock(mu_);
    auto& seen = served_[session];
    for (const auto& c : comparisons_) {
      if (votes_.count(c.comparison_id) || seen.count(c.comparison_id)) continue;
      if (auto it = assigned_.find(c.comparison_id); it != assigned_.end() && it->second != session) continue;
      seen.insert(c.comparison_id);
      assigned_[c.comparison_id] = session;
      const auto a = clip(c.side_a);
      const auto b = clip(c.side_b);
      if (!a || !b) throw DataError("comparison '" + c.comparison_id + "' refers to a missing clip");
      return nlohmann::json{{"comparison_id", c.comparison_id},
                            {"command", c.command},
                            {"side_a", clip_public_json(*a)},
                            {"side_b", clip_public_json(*b)}};
    }
    return std::nullopt;
  }

  VoteStatus vote(const std::string& comparison_id, Choice choice, const std::string& session = {}) {
    std::lock_guard lock(mu_);
    if (!index_.count(comparison_id)) return VoteStatus::kUnknown;
    if (votes_.count(comparison_id)) return VoteStatus::kAlreadyVoted;
    const char* name = choice == Choice::kA ? "A" : choice == Choice::kB ? "B" : "even";
    append_line(dir_ / "votes.jsonl",
                nlohmann::json{{"comparison_id", comparison_id}, {"choice", name}, {"session", session}}.dump());
    votes_[comparison_id] = choice;
    return VoteStatus::kOk;
  }

  std::map<std::string, Tally> tallies() const {
    std::lock_guard lock(mu_);
    std::map<std::string, Tally> out;
    for (const auto& cmd : commands_) out[cmd];
    for (const auto& [id, choice] : votes_) {
      const Comparison& c = comparisons_[index_.at(id)];
      Tally& t = out[c.command];
      if (choice == Choice::kEven) {
        ++t.even;
      } else if ((choice == Choice::kA) == (c.ours_side == 'A')) {
        ++t.prefer_ours;
      } else {
        ++t.prefer_baseline;
      }
    }
    return out;
  }

  // Per-command counts and percentages plus a total row.
  nlohmann::json results() const {
    const auto t = tallies();
    auto row = [](const std::string& name, const Tally& x) {
      const double n = static_cast<double>(x.tested_events());
      auto pct = [n](std::size_t k) { return n > 0 ? 100.0 * static_cast<double>(k) / n : 0.0; };
      return nlohmann::json{{"command", name},
                            {"prefer_ours", x.prefer_ours},
                            {"prefer_baseline", x.prefer_baseline},
                            {"even", x.even},
                            {"tested_events", x.tested_events()},
                            {"prefer_ours_pct", pct(x.prefer_ours)},
                            {"prefer_baseline_pct", pct(x.prefer_baseline)},
                            {"even_pct", pct(x.even)}};
    };
    nlohmann::json rows = nlohmann::json::array();
    Tally total;
    for (const auto& cmd : commands_) {
      const Tally& x = t.at(cmd);
      rows.push_back(row(cmd, x));
      total.prefer_ours += x.prefer_ours;
      total.prefer_baseline += x.prefer_baseline;
      total.even += x.even;
    }
    return {{"rows", rows}, {"total", row("Total", total)}};
  }

 private:
  static bool valid_clip_id(const std::string& id) {
    return !id.empty() && id.size() < 100 &&
           std::all_of(id.begin(), id.end(), [](unsigned char c) { return std::isalnum(c) || c == '-'; });
  }

  std::filesystem::path dir_;
  std::vector<Comparison> comparisons_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::string> commands_;
  mutable std::mutex mu_;
  std::map<std::string, Choice> votes_;
  std::map<std::string, std::set<std::string>> served_;
  std::map<std::string, std::string> assigned_;
};

inline void json_reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void error_reply(httplib::Response& res, int status, const std::string& message) {
  json_reply(res, status, {{"error", message}});
}

// Wires the endpoints. `on_command` may be empty, in which case
// POST /api/commands answers 503.
inline void register_routes(httplib::Server& server, PreferenceService& svc, CommandHandler on_command,
                            const std::filesystem::path& static_dir = {}) {
  server.Post("/api/commands", [on_command](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      return error_reply(res, 400, "body must be JSON");
    }
    if (!body.is_object() || !body.contains("text") || !body["text"].is_string()) {
      return error_reply(res, 400, "missing \"text\"");
    }
    const auto text = body["text"].get<std::string>();
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return error_reply(res, 400, "empty command");
    if (!on_command) return error_reply(res, 503, "no pipeline configured");
    try {
      json_reply(res, 200, on_command(text));
    } catch (const llm::LlmError& e) {
      error_reply(res, 503, e.what());
    } catch (const InvalidArgument& e) {
      error_reply(res, 400, e.what());
    } catch (const std::exception& e) {
      error_reply(res, 500, e.what());
    }
  });

  server.Get("/api/comparisons/next", [&svc](const httplib::Request& req, httplib::Response& res) {
    const std::string session = req.get_param_value("session");
    if (session.empty()) return error_reply(res, 400, "missing session");
    const auto next = svc.next(session);
    if (!next) {
      res.status = 204;
      return;
    }
    json_reply(res, 200, *next);
  });

  server.Post("/api/votes", [&svc](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      return error_reply(res, 400, "body must be JSON");
    }
    if (!body.is_object() || !body.contains("comparison_id") || !body["comparison_id"].is_string() ||
        !body.contains("choice") || !body["choice"].is_string()) {
      return error_reply(res, 400, "need comparison_id and choice");
    }
    const auto choice = choice_from_string(body["choice"].get<std::string>());
    if (!choice) return error_reply(res, 400, "choice must be A, B or even");
    const std::string session = body.contains("session") && body["session"].is_string() ? body["session"].get<std::string>() : "";
    switch (svc.vote(body["comparison_id"].get<std::string>(), *choice, session)) {
      case VoteStatus::kOk: return json_reply(res, 200, {{"status", "recorded"}});
      case VoteStatus::kUnknown: return error_reply(res, 404, "unknown comparison");
      case VoteStatus::kAlreadyVoted: return error_reply(res, 409, "comparison already voted");
    }
  });

  server.Get("/api/results", [&svc](const httplib::Request&, httplib::Response& res) { json_reply(res, 200, svc.results()); });

  server.Get("/api/clips/:id", [&svc](const httplib::Request& req, httplib::Response& res) {
    const auto c = svc.clip(req.path_params.at("id"));
    if (!c) return error_reply(res, 404, "unknown clip");
    json_reply(res, 200, clip_public_json(*c));
  });

  if (!static_dir.empty() && std::filesystem::is_directory(static_dir)) server.set_mount_point("/", static_dir.string());
}

}  // namespace drivestyle::service
