#pragma once

#include <chrono>
#include <functional>
#include <future>
#include <optional>
#include <stop_token>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drivestyle/llm/prompts.hpp"
#include "drivestyle/llm/types.hpp"
#include "drivestyle/llm/verdict.hpp"
#include "drivestyle/policy_eval.hpp"
#include "drivestyle/reward/printer.hpp"
#include "drivestyle/reward/validate.hpp"
#include "drivestyle/rl/ppo.hpp"
#include "drivestyle/styledb.hpp"

namespace drivestyle::orchestrator {

enum class CommandLevel { kI, kII, kIII };

inline const char* to_string(CommandLevel l) {
  switch (l) {
    case CommandLevel::kI: return "I";
    case CommandLevel::kII: return "II";
    case CommandLevel::kIII: return "III";
  }
  return "I";
}

struct UserCommand {
  std::string text;
  std::string received_at;  // empty: a logical timestamp is used
  std::optional<CommandLevel> level_hint;
};

struct PipelineConfig {
  std::size_t k = 3;
  std::size_t m = 2;
  std::size_t n = 2;
  std::optional<double> fuzzy_threshold;  // default: the backend's
  rl::TrainConfig train;
  bool keep_both_on_tie = false;
  double training_budget_s = 0.0;  // 0: wait for every candidate
  std::size_t probe_events = 5;    // training events used to screen generated rewards
  std::size_t jobs = 0;            // candidates trained at once; 0 = all

  void validate() const {
    if (k < 1) throw InvalidArgument("PipelineConfig: k must be >= 1");
    if (n < 1) throw InvalidArgument("PipelineConfig: n must be >= 1");
    if (n > stats::kAllMetrics.size()) throw InvalidArgument("PipelineConfig: n exceeds the number of metrics");
    if (fuzzy_threshold && !(*fuzzy_threshold > 0.0 && *fuzzy_threshold <= 1.0)) {
      throw InvalidArgument("PipelineConfig: fuzzy_threshold must be in (0, 1]");
    }
    if (!(training_budget_s >= 0.0)) throw InvalidArgument("PipelineConfig: training budget must be >= 0");
    if (probe_events == 0) throw InvalidArgument("PipelineConfig: probe_events must be >= 1");
    train.validate();
  }
};

struct CandidateOutcome {
  std::string name;  // "candidate-<i>"
  std::string reward_source;
  std::optional<rl::TrainResult> train_result;
  std::optional<stats::StatsReport> stats;
  std::string record_id;  // set when the candidate entered the database
};

struct AlignmentRow {
  std::string subject;
  std::vector<stats::ComparisonRow> rows;
};

struct PipelineOutcome {
  UserCommand command;
  std::string mode;
  bool fuzzy_hit = false;
  std::optional<double> fuzzy_similarity;
  std::vector<std::pair<std::string, double>> retrieved;
  std::string provisional_record_id;
  std::string chosen_record_id;
  std::vector<CandidateOutcome> candidates;
  std::vector<llm::StructuredVerdict> verdict_trail;
  std::vector<AlignmentRow> alignment_summary;
  std::vector<std::string> degraded;
  std::vector<std::string> events;
  std::vector<std::string> diagnostics;
  std::uint64_t database_version = 0;
  std::size_t trainings_launched = 0;

  bool diverged() const {
    for (const auto& c : candidates) {
      if (c.train_result && c.train_result->any_diverged()) return true;
    }
    return false;
  }
};

inline nlohmann::json to_json(const PipelineOutcome& o) {
  nlohmann::json retrieved = nlohmann::json::array();
  for (const auto& [id, sim] : o.retrieved) retrieved.push_back({{"id", id}, {"similarity", sim}});
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : o.candidates) {
    nlohmann::json tr = nullptr;
    if (c.train_result) {
      tr = {{"per_seed_returns", c.train_result->per_seed_returns},
            {"best_seed_index", c.train_result->best_seed_index},
            {"diverged", c.train_result->any_diverged()},
            {"cancelled", c.train_result->cancelled}};
    }
    cands.push_back({{"name", c.name},
                     {"reward_source", c.reward_source},
                     {"train_result", tr},
                     {"stats", c.stats ? stats::to_json(*c.stats) : nlohmann::json(nullptr)},
                     {"record_id", c.record_id.empty() ? nlohmann::json(nullptr) : nlohmann::json(c.record_id)}});
  }
  nlohmann::json trail = nlohmann::json::array();
  for (const auto& v : o.verdict_trail) trail.push_back(llm::to_json(v));
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& a : o.alignment_summary) summary.push_back({{"subject", a.subject}, {"rows", stats::to_json(a.rows)}});
  return {{"command",
           {{"text", o.command.text},
            {"received_at", o.command.received_at},
            {"level_hint", o.command.level_hint ? nlohmann::json(to_string(*o.command.level_hint)) : nlohmann::json(nullptr)}}},
          {"mode", o.mode},
          {"fuzzy_hit", o.fuzzy_hit},
          {"fuzzy_similarity", o.fuzzy_similarity ? nlohmann::json(*o.fuzzy_similarity) : nlohmann::json(nullptr)},
          {"retrieved", retrieved},
          {"provisional_record_id", o.provisional_record_id},
          {"chosen_record_id", o.chosen_record_id},
          {"candidates", cands},
          {"verdict_trail", trail},
          {"alignment_summary", summary},
          {"degraded", o.degraded},
          {"events", o.events},
          {"diagnostics", o.diagnostics},
          {"trainings_launched", o.trainings_launched},
          {"database_version", o.database_version}};
}

struct AlignmentResult {
  llm::StructuredVerdict metric_selection;
  llm::StructuredVerdict verdict;
};

class Pipeline {
 public:
  using EventHook = std::function<void(const std::string& event)>;

  Pipeline(llm::LanguageModel& model, llm::PromptLibrary prompts, styledb::StyleStore& store, Dataset train,
           Dataset test, PipelineConfig cfg)
      : model_(model),
        prompts_(std::move(prompts)),
        store_(store),
        train_(std::move(train)),
        test_(std::move(test)),
        cfg_(std::move(cfg)) {
    cfg_.validate();
    if (test_.empty()) throw InvalidArgument("pipeline: empty test set");
    if (train_.empty()) throw InvalidArgument("pipeline: empty training set");
    if (store_.snapshot()->embedding_dim() != model_.embedding_dim()) {
      throw InvalidArgument("pipeline: database embedding dimension differs from the backend's");
    }
    baseline_ = stats::natural_baseline(test_);
    probe_ = rl::probe_subset(train_, cfg_.probe_events);
  }

  void set_event_hook(EventHook hook) { hook_ = std::move(hook); }
  const PipelineConfig& config() const { return cfg_; }
  const stats::StatsReport& baseline() const { return baseline_; }

  PipelineOutcome run_command(UserCommand cmd) {
    if (cmd.text.find_first_not_of(" \t\r\n") == std::string::npos) throw InvalidArgument("empty command");
    PipelineOutcome out;
    out.mode = model_.kind() == llm::BackendKind::kLive ? "live" : "scripted";
    const auto snap = store_.snapshot();
    if (snap->empty()) throw InvalidArgument("pipeline: the style database is empty");
    if (cmd.received_at.empty()) cmd.received_at = "logical-" + std::to_string(snap->version() + 1);
    out.command = cmd;

    // (1) embed
    const std::vector<double> emb = model_.embed(cmd.text);
    emit(out, "embedded");

    // (2) fuzzy memory
    const double threshold = cfg_.fuzzy_threshold.value_or(model_.default_fuzzy_threshold());
    if (const auto hit = styledb::fuzzy_lookup(*snap, emb, threshold)) {
      out.fuzzy_hit = true;
      out.fuzzy_similarity = hit->similarity;
      out.provisional_record_id = hit->record->id;
      out.chosen_record_id = hit->record->id;
      emit(out, "fuzzy_hit " + hit->record->id);
      record_command(out, cmd, emb);
      return out;
    }

    // (3) retrieval and re-rank
    const auto top = styledb::top_k(*snap, emb, cfg_.k);
    for (const auto& s : top) out.retrieved.emplace_back(s.record->id, s.similarity);
    emit(out, "retrieved " + std::to_string(top.size()));
    const auto rerank = ask_rerank(cmd, top, out);
    out.verdict_trail.push_back(rerank);

    // (4) provisional answer
    const styledb::StyleRecord& provisional = snap->at(rerank.selected_ids.front());
    if (!provisional.policy) throw DataError("record '" + provisional.id + "' has no trained policy");
    out.provisional_record_id = provisional.id;
    out.chosen_record_id = provisional.id;
    emit(out, "provisional " + provisional.id);

    if (cfg_.m == 0) {
      record_command(out, cmd, emb);
      return out;
    }

    // (5) candidate generation and training
    const reward::RewardExpr template_expr = reward::parse_or_throw(provisional.reward_source);
    auto sources = generate_candidates(cmd, template_expr, out);
    if (sources.empty()) {
      out.degraded.push_back("no_valid_candidates");
      emit(out, "degraded no_valid_candidates");
      record_command(out, cmd, emb);
      return out;
    }
    for (std::size_t i = 0; i < sources.size(); ++i) {
      CandidateOutcome c;
      c.name = "candidate-" + std::to_string(i + 1);
      c.reward_source = sources[i].first;
      out.candidates.push_back(std::move(c));
    }
    train_candidates(sources, out);

    // (6) evaluation
    const stats::StatsReport prov_report = provisional_report(provisional);
    std::vector<std::pair<std::string, stats::StatsReport>> subjects;
    for (std::size_t i = 0; i < out.candidates.size(); ++i) {
      auto& c = out.candidates[i];
      if (!c.train_result || c.train_result->cancelled) continue;
      c.stats = policy_report(c.train_result->best_policy, sources[i].second, test_, c.name);
      subjects.emplace_back(c.name, *c.stats);
    }
    emit(out, "evaluated");
    if (subjects.empty()) {
      record_command(out, cmd, emb);
      return out;
    }
    const AlignmentResult align = evaluate_alignment(prov_report, subjects, cmd, out);
    out.verdict_trail.push_back(align.metric_selection);
    out.verdict_trail.push_back(align.verdict);
    out.alignment_summary.push_back({"provisional", stats::compare_reports(prov_report, baseline_, align.verdict.metrics)});
    for (const auto& [name, rep] : subjects) {
      out.alignment_summary.push_back({name, stats::compare_reports(rep, baseline_, align.verdict.metrics)});
    }

    // (7) database update
    apply_verdict(out, provisional.id, *align.verdict.verdict, align.verdict.winner, sources);
    record_command(out, cmd, emb);
    return out;
  }

  // Candidate reward sources paired with their parsed form; at most m.
  std::vector<std::pair<std::string, reward::RewardExpr>> generate_candidates(const UserCommand& cmd,
                                                                             const reward::RewardExpr& tmpl,
                                                                             PipelineOutcome& out) {
    const std::string tmpl_text = reward::pretty_print(tmpl);
    const nlohmann::json ctx = {{"command", cmd.text}, {"m", cfg_.m}, {"template", tmpl_text}};
    const std::string prompt = prompts_.render(
        "reward_generation",
        {{"command", cmd.text}, {"template", tmpl_text}, {"m", std::to_string(cfg_.m)}, {"context", ctx.dump(2)}});
    llm::VerdictExpectations ex;
    ex.m = cfg_.m;

    std::vector<std::pair<std::string, reward::RewardExpr>> accepted;
    std::vector<std::string> problems;
    auto take = [&](const llm::StructuredVerdict& v) {
      for (const auto& r : v.rewards) {
        if (accepted.size() >= cfg_.m) break;
        if (!r.expr) {
          problems.push_back("'" + r.source + "': " + r.diagnostic);
          continue;
        }
        const auto rep = reward::validate_reward(*r.expr, probe_);
        if (!rep.finite) {
          problems.push_back("'" + r.source + "': not finite on event " + rep.offending_event.value_or("?"));
          continue;
        }
        const bool dup = std::any_of(accepted.begin(), accepted.end(),
                                     [&](const auto& a) { return a.second == *r.expr; });
        if (!dup) accepted.emplace_back(r.source, *r.expr);
      }
    };

    std::vector<llm::ChatTurn> turns = {{llm::Role::kSystem, prompts_.render("system", {})},
                                        {llm::Role::kUser, prompt}};
    std::string raw = model_.chat(turns);
    auto parsed = llm::parse_verdict(llm::Step::kRewardGeneration, raw, ex);
    if (parsed.ok()) {
      out.verdict_trail.push_back(*parsed.value);
      take(*parsed.value);
    } else {
      problems.push_back(parsed.diagnostic);
    }
    if (accepted.size() < cfg_.m && !problems.empty()) {
      std::string problem;
      for (const auto& p : problems) problem += (problem.empty() ? "" : "; ") + p;
      for (const auto& p : problems) out.diagnostics.push_back("reward-generation: " + p);
      emit(out, "repair reward-generation");
      turns.push_back({llm::Role::kAssistant, raw});
      turns.push_back({llm::Role::kUser, repair_prompt(llm::Step::kRewardGeneration, problem, prompt)});
      problems.clear();
      raw = model_.chat(turns);
      auto second = llm::parse_verdict(llm::Step::kRewardGeneration, raw, ex);
      if (second.ok()) {
        out.verdict_trail.push_back(*second.value);
        take(*second.value);
      } else {
        problems.push_back(second.diagnostic);
      }
      for (const auto& p : problems) out.diagnostics.push_back("reward-generation (after repair): " + p);
    }
    emit(out, "candidates " + std::to_string(accepted.size()));
    return accepted;
  }

  AlignmentResult evaluate_alignment(const stats::StatsReport& provisional,
                                     const std::vector<std::pair<std::string, stats::StatsReport>>& candidates,
                                     const UserCommand& cmd, PipelineOutcome& out) {
    // metric selection
    nlohmann::json names = nlohmann::json::array();
    for (auto m : stats::kAllMetrics) names.push_back(std::string(stats::metric_name(m)));
    const nlohmann::json sel_ctx = {{"command", cmd.text}, {"n", cfg_.n}, {"metrics", names}};
    const std::string sel_prompt = prompts_.render("metric_selection", {{"command", cmd.text},
                                                                        {"n", std::to_string(cfg_.n)},
                                                                        {"baseline", stats::digest(baseline_)},
                                                                        {"context", sel_ctx.dump(2)}});
    llm::VerdictExpectations ex;
    ex.n = cfg_.n;
    AlignmentResult res;
    res.metric_selection = ask(llm::Step::kMetricSelection, sel_prompt, ex, out);

    // verdict
    nlohmann::json selected = nlohmann::json::array();
    std::string metric_list;
    for (auto m : res.metric_selection.metrics) {
      selected.push_back(std::string(stats::metric_name(m)));
      metric_list += (metric_list.empty() ? "" : ", ") + std::string(stats::metric_name(m));
    }
    nlohmann::json subjects = nlohmann::json::array();
    subjects.push_back({{"name", "provisional"}, {"report", stats::to_json(provisional)}});
    std::string tables = comparison_table("provisional", provisional, res.metric_selection.metrics);
    ex.allowed_winners = {"provisional"};
    for (const auto& [name, rep] : candidates) {
      subjects.push_back({{"name", name}, {"report", stats::to_json(rep)}});
      tables += comparison_table(name, rep, res.metric_selection.metrics);
      ex.allowed_winners.insert(name);
    }
    const nlohmann::json ctx = {{"command", cmd.text},
                                {"n", cfg_.n},
                                {"metrics", selected},
                                {"baseline", stats::to_json(baseline_)},
                                {"subjects", subjects}};
    const std::string prompt = prompts_.render(
        "alignment", {{"command", cmd.text}, {"metrics", metric_list}, {"tables", tables}, {"context", ctx.dump(2)}});
    res.verdict = ask(llm::Step::kAlignment, prompt, ex, out);
    emit(out, std::string("verdict ") + styledb::to_string(*res.verdict.verdict));
    return res;
  }

 private:
  void emit(PipelineOutcome& out, const std::string& event) {
    out.events.push_back(event);
    if (hook_) hook_(event);
  }

  std::string repair_prompt(llm::Step step, const std::string& problem, const std::string& request) const {
    return prompts_.render("repair", {{"step", llm::to_string(step)}, {"problem", problem}, {"request", request}});
  }

  // One request with at most one repair re-prompt; a second failure is fatal.
  llm::StructuredVerdict ask(llm::Step step, const std::string& prompt, const llm::VerdictExpectations& ex,
                             PipelineOutcome& out) {
    std::vector<llm::ChatTurn> turns = {{llm::Role::kSystem, prompts_.render("system", {})},
                                        {llm::Role::kUser, prompt}};
    const std::string raw = model_.chat(turns);
    auto parsed = llm::parse_verdict(step, raw, ex);
    if (parsed.ok()) return *parsed.value;
    out.diagnostics.push_back(std::string(llm::to_string(step)) + ": " + parsed.diagnostic);
    emit(out, std::string("repair ") + llm::to_string(step));
    turns.push_back({llm::Role::kAssistant, raw});
    turns.push_back({llm::Role::kUser, repair_prompt(step, parsed.diagnostic, prompt)});
    auto second = llm::parse_verdict(step, model_.chat(turns), ex);
    if (second.ok()) return *second.value;
    throw llm::LlmError(llm::ErrorCategory::kSchema,
                        std::string(llm::to_string(step)) + " answer unusable after repair: " + second.diagnostic);
  }

  llm::StructuredVerdict ask_rerank(const UserCommand& cmd, const std::vector<styledb::ScoredRecord>& top,
                                    PipelineOutcome& out) {
    nlohmann::json cands = nlohmann::json::array();
    std::string listing;
    llm::VerdictExpectations ex;
    for (const auto& s : top) {
      const auto& r = *s.record;
      const std::string dig = r.stats ? stats::digest(*r.stats) : std::string("no statistics");
      cands.push_back({{"id", r.id}, {"similarity", s.similarity}, {"reward", r.reward_source}, {"digest", dig}});
      listing += "- id: " + r.id + " (similarity " + format_double(s.similarity) + ")\n  reward: " +
                 reward::pretty_print(reward::parse_or_throw(r.reward_source)) + "\n  behaviour: " + dig + "\n";
      ex.allowed_ids.insert(r.id);
    }
    const nlohmann::json ctx = {{"command", cmd.text}, {"candidates", cands}};
    const std::string prompt = prompts_.render(
        "rerank",
        {{"command", cmd.text}, {"k", std::to_string(top.size())}, {"listing", listing}, {"context", ctx.dump(2)}});
    return ask(llm::Step::kRerank, prompt, ex, out);
  }

  std::string comparison_table(const std::string& name, const stats::StatsReport& rep,
                               const std::vector<stats::Metric>& metrics) const {
    std::string t = name + ":\n";
    for (const auto& row : stats::compare_reports(rep, baseline_, metrics)) {
      t += "  " + std::string(stats::metric_name(row.metric)) + ": normalised " + format_double(row.candidate) +
           " vs natural " + format_double(row.natural) + " (" + std::string(stats::direction_name(row.direction)) +
           ")\n";
    }
    return t;
  }

  stats::StatsReport provisional_report(const styledb::StyleRecord& r) const {
    if (r.stats && r.stats->test_set_id == test_.fingerprint()) return *r.stats;
    return policy_report(*r.policy, reward::parse_or_throw(r.reward_source), test_, r.id);
  }

  void train_candidates(const std::vector<std::pair<std::string, reward::RewardExpr>>& sources,
                        PipelineOutcome& out) {
    std::stop_source stop;
    const std::size_t width = cfg_.jobs == 0 ? sources.size() : std::min(cfg_.jobs, sources.size());
    emit(out, "training " + std::to_string(sources.size()));
    out.trainings_launched = sources.size();
    std::vector<std::optional<rl::TrainResult>> results(sources.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (std::size_t i = next++; i < sources.size(); i = next++) {
        results[i] = rl::ppo_train(sources[i].second, train_, cfg_.train, stop.get_token());
      }
    };
    std::vector<std::future<void>> pool;
    for (std::size_t j = 0; j < width; ++j) pool.push_back(std::async(std::launch::async, worker));
    bool expired = false;
    if (cfg_.training_budget_s > 0.0) {
      const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                                   std::chrono::duration<double>(cfg_.training_budget_s));
      for (auto& f : pool) {
        if (f.wait_until(deadline) != std::future_status::ready) {
          expired = true;
          stop.request_stop();
          break;
        }
      }
    }
    for (auto& f : pool) f.get();
    for (std::size_t i = 0; i < sources.size(); ++i) {
      if (results[i] && (expired || results[i]->cancelled)) results[i]->cancelled = true;
      out.candidates[i].train_result = std::move(results[i]);
    }
    if (expired) out.degraded.push_back("training_budget_expired");
    if (out.diverged()) out.degraded.push_back("training_diverged");
    emit(out, expired ? "training expired" : "training finished");
  }

  void apply_verdict(PipelineOutcome& out, const std::string& provisional_id, styledb::Verdict verdict,
                     const std::string& winner, const std::vector<std::pair<std::string, reward::RewardExpr>>& sources) {
    if (verdict == styledb::Verdict::kIncumbentBetter ||
        (verdict == styledb::Verdict::kTie && !cfg_.keep_both_on_tie)) {
      store_.mutate([&](styledb::StyleDatabase& db) { db.replace_if_better(provisional_id, {}, verdict); });
      emit(out, "database kept " + provisional_id);
      return;
    }
    std::size_t idx = 0;
    for (std::size_t i = 0; i < out.candidates.size(); ++i) {
      if (out.candidates[i].name == winner) idx = i;
    }
    if (verdict == styledb::Verdict::kTie) {
      // keep-both: the first trained candidate joins the database
      while (idx < out.candidates.size() && !out.candidates[idx].stats) ++idx;
      if (idx == out.candidates.size()) return;
    }
    auto& cand = out.candidates[idx];
    const auto snap = store_.snapshot();
    std::string id;
    for (std::size_t salt = 1;; ++salt) {
      id = "gen-" + std::to_string(snap->version() + 1) + "-" + std::to_string(idx + 1) +
           (salt > 1 ? "-" + std::to_string(salt) : std::string());
      if (!snap->find(id) && !snap->retired().count(id)) break;
    }
    styledb::StyleRecord rec;
    rec.id = id;
    rec.reward_source = reward::pretty_print(sources[idx].second);
    rec.policy = cand.train_result->best_policy;
    rec.stats = *cand.stats;
    rec.stats->subject = id;
    rec.provenance = styledb::Provenance::kGenerated;
    rec.embedding = model_.embed(styledb::retrieval_text(rec.reward_source, rec.stats));
    const std::string chosen = store_.mutate([&](styledb::StyleDatabase& db) {
      return db.replace_if_better(provisional_id, std::move(rec), verdict, cfg_.keep_both_on_tie);
    });
    cand.record_id = id;
    out.chosen_record_id = chosen;
    emit(out, "database " + std::string(styledb::to_string(verdict)) + " " + id);
  }

  void record_command(PipelineOutcome& out, const UserCommand& cmd, const std::vector<double>& emb) {
    store_.mutate([&](styledb::StyleDatabase& db) {
      db.append_command(out.chosen_record_id, {cmd.text, cmd.received_at, emb});
    });
    out.database_version = store_.snapshot()->version();
    emit(out, "recorded " + out.chosen_record_id);
  }

  llm::LanguageModel& model_;
  llm::PromptLibrary prompts_;
  styledb::StyleStore& store_;
  Dataset train_;
  Dataset test_;
  PipelineConfig cfg_;
  stats::StatsReport baseline_;
  Dataset probe_;
  EventHook hook_;
};

}  // namespace drivestyle::orchestrator
