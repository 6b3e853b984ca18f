#pragma once

#include <algorithm>
#include <cstdio>
#include <limits>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drivestyle/fsutil.hpp"
#include "drivestyle/llm/embedding.hpp"
#include "drivestyle/llm/profiles.hpp"
#include "drivestyle/llm/types.hpp"
#include "drivestyle/llm/verdict.hpp"
#include "drivestyle/numeric.hpp"

namespace drivestyle::llm {

struct ScriptedRule {
  std::string name;
  std::vector<std::string> contains;  // all must occur (case-insensitive)
  std::optional<std::regex> pattern;
  bool catch_all = false;
  std::string response;  // literal text, or "@builtin"
};

struct EmbeddingEntry {
  std::string text;
  std::vector<double> vector;  // explicit vector, or empty with `like`
  std::string like;
  double mix = 1.0;
};

struct ScriptedRules {
  std::vector<ScriptedRule> rules;
  std::vector<EmbeddingEntry> embeddings;
  std::vector<StyleProfile> profiles = default_profiles();
  double verdict_margin = 0.05;
};

inline const std::vector<std::string>& builtin_responders() {
  static const std::vector<std::string> names = {"@rerank", "@select_metrics", "@generate_rewards", "@judge"};
  return names;
}

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline ScriptedRules scripted_rules_from_json(const nlohmann::json& j) {
  ScriptedRules rules;
  try {
    for (const auto& r : j.at("rules")) {
      ScriptedRule rule;
      rule.name = r.value("name", std::string());
      rule.response = r.at("response").get<std::string>();
      if (r.contains("match") && r["match"] == "*") rule.catch_all = true;
      if (r.contains("contains")) {
        if (r["contains"].is_string()) {
          rule.contains.push_back(lowercase(r["contains"].get<std::string>()));
        } else {
          for (const auto& s : r["contains"]) rule.contains.push_back(lowercase(s.get<std::string>()));
        }
      }
      if (r.contains("pattern")) {
        try {
          rule.pattern.emplace(r["pattern"].get<std::string>(), std::regex::ECMAScript | std::regex::icase);
        } catch (const std::regex_error& e) {
          throw DataError("scripted rule '" + rule.name + "': bad pattern: " + e.what());
        }
      }
      if (!rule.catch_all && rule.contains.empty() && !rule.pattern) {
        throw DataError("scripted rule '" + rule.name + "' has no matcher");
      }
      if (!rule.response.empty() && rule.response.front() == '@') {
        const auto& b = builtin_responders();
        if (std::find(b.begin(), b.end(), rule.response) == b.end()) {
          throw DataError("scripted rule '" + rule.name + "': unknown responder '" + rule.response + "'");
        }
      }
      rules.rules.push_back(std::move(rule));
    }
    if (j.contains("embeddings")) {
      for (const auto& e : j["embeddings"]) {
        EmbeddingEntry entry;
        entry.text = e.at("text").get<std::string>();
        if (e.contains("vector")) entry.vector = e["vector"].get<std::vector<double>>();
        entry.like = e.value("like", std::string());
        entry.mix = e.value("mix", 1.0);
        if (entry.vector.empty() == entry.like.empty()) {
          throw DataError("embedding entry '" + entry.text + "' needs exactly one of vector / like");
        }
        if (!(entry.mix > 0.0 && entry.mix <= 1.0)) throw DataError("embedding entry '" + entry.text + "': mix must be in (0, 1]");
        rules.embeddings.push_back(std::move(entry));
      }
    }
    if (j.contains("profiles")) {
      rules.profiles.clear();
      for (const auto& p : j["profiles"]) rules.profiles.push_back(profile_from_json(p));
    }
    rules.verdict_margin = j.value("verdict_margin", rules.verdict_margin);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("scripted rules: ") + e.what());
  }
  const bool has_catch_all =
      std::any_of(rules.rules.begin(), rules.rules.end(), [](const ScriptedRule& r) { return r.catch_all; });
  if (!has_catch_all) throw DataError("scripted rules need a catch-all rule (\"match\": \"*\")");
  if (rules.profiles.empty()) throw DataError("scripted rules: empty profile list");
  return rules;
}

inline ScriptedRules load_scripted_rules(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("scripted rules '" + path.string() + "': " + e.what());
  }
  return scripted_rules_from_json(j);
}

// Deterministic backend: first matching rule answers; embeddings come from
// the table or the hashed trigram fallback. Immutable after construction.
class ScriptedBackend final : public LanguageModel {
 public:
  explicit ScriptedBackend(ScriptedRules rules) : rules_(std::move(rules)) {
    for (const auto& e : rules_.embeddings) resolve(normalize_text(e.text), 0);
  }

  std::string chat(const std::vector<ChatTurn>& turns) override {
    check_turns(turns);
    const ChatTurn* user = last_user_turn(turns);
    const std::string& text = user ? user->content : turns.back().content;
    const std::string lower = lowercase(text);
    for (const auto& r : rules_.rules) {
      if (matches(r, text, lower)) return respond(r, text);
    }
    return "";  // unreachable: a catch-all rule always exists
  }

  std::vector<double> embed(std::string_view text) override {
    const std::string key = normalize_text(text);
    if (key.empty()) throw InvalidArgument("cannot embed empty text");
    auto it = table_.find(key);
    if (it != table_.end()) return it->second;
    return hashed_trigram_embedding(text);
  }

  std::size_t embedding_dim() const override { return kHashedEmbeddingDim; }
  double default_fuzzy_threshold() const override { return 0.60; }
  BackendKind kind() const override { return BackendKind::kScripted; }
  const ScriptedRules& rules() const { return rules_; }

 private:
  const std::vector<double>& resolve(const std::string& key, int depth) {
    if (auto it = table_.find(key); it != table_.end()) return it->second;
    if (depth > 8) throw DataError("embedding table: alias chain too deep at '" + key + "'");
    const EmbeddingEntry* entry = nullptr;
    for (const auto& e : rules_.embeddings) {
      if (normalize_text(e.text) == key) entry = &e;
    }
    std::vector<double> v;
    if (!entry) {
      v = hashed_trigram_embedding(key);
    } else if (!entry->vector.empty()) {
      if (entry->vector.size() != kHashedEmbeddingDim) {
        throw DataError("embedding for '" + entry->text + "' must have " + std::to_string(kHashedEmbeddingDim) + " entries");
      }
      v = entry->vector;
      normalize_unit(v);
    } else {
      const std::string like_key = normalize_text(entry->like);
      if (like_key == key) throw DataError("embedding for '" + entry->text + "' is an alias of itself");
      const std::vector<double> base = resolve(like_key, depth + 1);
      const std::vector<double> own = hashed_trigram_embedding(key);
      v.resize(base.size());
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = entry->mix * base[i] + (1.0 - entry->mix) * own[i];
      normalize_unit(v);
    }
    if (!entry) return table_cache_.emplace(key, std::move(v)).first->second;
    return table_.emplace(key, std::move(v)).first->second;
  }

  static bool matches(const ScriptedRule& r, const std::string& text, const std::string& lower) {
    if (r.catch_all) return true;
    for (const auto& c : r.contains) {
      if (lower.find(c) == std::string::npos) return false;
    }
    if (r.pattern && !std::regex_search(text, *r.pattern)) return false;
    return true;
  }

  std::string respond(const ScriptedRule& r, const std::string& prompt) const {
    if (r.response.empty() || r.response.front() != '@') return r.response;
    const auto ctx_text = extract_fenced(prompt, "context");
    nlohmann::json ctx;
    if (ctx_text) {
      try {
        ctx = nlohmann::json::parse(*ctx_text);
      } catch (const nlohmann::json::exception&) {
        ctx = nullptr;
      }
    }
    if (!ctx.is_object()) return "No structured context was provided, so no decision can be made.";
    try {
      if (r.response == "@rerank") return rerank(ctx);
      if (r.response == "@select_metrics") return select_metrics(ctx);
      if (r.response == "@generate_rewards") return generate_rewards(ctx);
      if (r.response == "@judge") return judge(ctx);
    } catch (const std::exception& e) {
      return std::string("The context could not be used: ") + e.what();
    }
    return "";
  }

  static std::string fenced(const nlohmann::json& j) { return "```json\n" + j.dump(2) + "\n```\n"; }

  static std::string fixed3(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", x);
    return buf;
  }

  const StyleProfile& profile_of(const nlohmann::json& ctx) const {
    return match_profile(ctx.at("command").get<std::string>(), rules_.profiles);
  }

  std::string rerank(const nlohmann::json& ctx) const {
    const auto& prof = profile_of(ctx);
    struct Cand {
      std::string id;
      double sim;
      int hint;
    };
    std::vector<Cand> cands;
    for (const auto& c : ctx.at("candidates")) {
      Cand x{c.at("id").get<std::string>(), c.at("similarity").get<double>(), 0};
      const std::string lid = lowercase(x.id);
      for (const auto& h : prof.record_hints) {
        if (lid.find(lowercase(h)) != std::string::npos) ++x.hint;
      }
      cands.push_back(std::move(x));
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.hint != b.hint) return a.hint > b.hint;
      if (a.sim != b.sim) return a.sim > b.sim;
      return a.id < b.id;
    });
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& c : cands) ids.push_back(c.id);
    const std::string first = cands.empty() ? std::string("none") : cands.front().id;
    return "The command reads as a " + prof.name + " request. Among the retrieved styles, '" + first +
           "' fits it best.\n" +
           fenced({{"selected_ids", ids}, {"rationale", "style profile " + prof.name}});
  }

  std::string select_metrics(const nlohmann::json& ctx) const {
    const auto& prof = profile_of(ctx);
    const auto n = ctx.at("n").get<std::size_t>();
    std::vector<std::string> picked;
    for (const auto& g : prof.goals) picked.emplace_back(stats::metric_name(g.metric));
    for (auto m : stats::kAllMetrics) {
      const std::string name(stats::metric_name(m));
      if (std::find(picked.begin(), picked.end(), name) == picked.end()) picked.push_back(name);
    }
    picked.resize(std::min(n, picked.size()));
    return "For a " + prof.name + " request the most telling metrics are listed below.\n" +
           fenced({{"metrics", picked}, {"rationale", "style profile " + prof.name}});
  }

  std::string generate_rewards(const nlohmann::json& ctx) const {
    const auto& prof = profile_of(ctx);
    const auto m = ctx.at("m").get<std::size_t>();
    const std::string tmpl = ctx.at("template").get<std::string>();
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = 0; i < m; ++i) {
      const double c = prof.tweak_coef * static_cast<double>(i + 1);
      if (c == 0.0) {
        out.push_back(tmpl);
        continue;
      }
      out.push_back(tmpl + (c > 0 ? " + " : " - ") + format_double(std::abs(c)) + " * " + prof.tweak_term);
    }
    return "Starting from the template, each variant puts more weight on " + prof.tweak_term + ".\n" +
           fenced({{"rewards", out}, {"rationale", "style profile " + prof.name}});
  }

  std::string judge(const nlohmann::json& ctx) const {
    const auto& prof = profile_of(ctx);
    const auto baseline = stats::report_from_json(ctx.at("baseline"));
    std::vector<stats::Metric> metrics;
    for (const auto& name : ctx.at("metrics")) {
      const auto m = stats::metric_from_name(name.get<std::string>());
      if (!m) throw DataError("unknown metric in context");
      metrics.push_back(*m);
    }
    std::vector<std::pair<std::string, double>> scores;
    for (const auto& s : ctx.at("subjects")) {
      const auto rep = stats::report_from_json(s.at("report"));
      double total = 0.0;
      for (auto m : metrics) {
        try {
          total += objective_score(objective_for(prof, m), rep.at(m), baseline.at(m));
        } catch (const DataError&) {
          // degenerate baseline spread: the metric cannot discriminate
        }
      }
      scores.emplace_back(s.at("name").get<std::string>(), total);
    }
    double provisional = 0.0;
    std::string best_name;
    double best = -std::numeric_limits<double>::infinity();
    std::string lines;
    for (const auto& [name, score] : scores) {
      lines += name + " scores " + fixed3(score) + ". ";
      if (name == "provisional") {
        provisional = score;
      } else if (score > best) {
        best = score;
        best_name = name;
      }
    }
    std::string verdict = "tie";
    std::string winner = "provisional";
    if (!best_name.empty() && best > provisional + rules_.verdict_margin) {
      verdict = "challenger_better";
      winner = best_name;
    } else if (!best_name.empty() && best < provisional - rules_.verdict_margin) {
      verdict = "incumbent_better";
    }
    nlohmann::json names = nlohmann::json::array();
    for (auto m : metrics) names.push_back(std::string(stats::metric_name(m)));
    return "Comparing against natural driving for a " + prof.name + " request. " + lines + "\n" +
           fenced({{"verdict", verdict}, {"winner", winner}, {"metrics", names}, {"rationale", lines}});
  }

  ScriptedRules rules_;
  std::map<std::string, std::vector<double>> table_;
  std::map<std::string, std::vector<double>> table_cache_;
};

}  // namespace drivestyle::llm
