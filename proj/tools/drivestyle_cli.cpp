// Command-line entry point.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 LLM error, 4 training
// divergence.

#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "drivestyle/idm.hpp"
#include "drivestyle/llm/backend.hpp"
#include "drivestyle/orchestrator.hpp"
#include "drivestyle/policy_eval.hpp"
#include "drivestyle/reward/corpus.hpp"
#include "drivestyle/seeding.hpp"
#include "drivestyle/service.hpp"
#include "drivestyle/synthetic.hpp"
#include "drivestyle/trajdata.hpp"

namespace ds = drivestyle;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitLlm = 3;
constexpr int kExitDiverged = 4;

const std::string kDataDir = DRIVESTYLE_DATA_DIR;

struct Common {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

struct LlmFlags {
  std::string mode = "scripted";
  std::string rules = kDataDir + "/scripted/rules.json";
  std::string prompts = kDataDir + "/prompts";
  std::string endpoint = "https://api.openai.com/v1";
  std::string model = "gpt-4o";
  std::string embedding_model = "text-embedding-3-small";
  std::size_t embedding_dim = 1536;
  double temperature = 0.3;
  std::string api_key_env = "OPENAI_API_KEY";
  double timeout = 60.0;
  unsigned retries = 3;
  std::string audit;

  void add(CLI::App* app) {
    app->add_option("--mode", mode, "LLM backend")->check(CLI::IsMember({"scripted", "live"}))->capture_default_str();
    app->add_option("--rules", rules, "Scripted backend rules (JSON)")->capture_default_str();
    app->add_option("--prompts", prompts, "Prompt template directory")->capture_default_str();
    app->add_option("--endpoint", endpoint, "Live backend base URL")->capture_default_str();
    app->add_option("--model", model, "Live chat model")->capture_default_str();
    app->add_option("--embedding-model", embedding_model, "Live embedding model")->capture_default_str();
    app->add_option("--embedding-dim", embedding_dim, "Live embedding dimension")->capture_default_str();
    app->add_option("--temperature", temperature, "Sampling temperature")->check(CLI::Range(0.0, 2.0))->capture_default_str();
    app->add_option("--api-key-env", api_key_env, "Environment variable holding the API key")->capture_default_str();
    app->add_option("--timeout", timeout, "Live request timeout in seconds")->capture_default_str();
    app->add_option("--retries", retries, "Retries on transient live failures")->capture_default_str();
    app->add_option("--audit", audit, "Append live requests and responses to this file");
  }

  ds::llm::ModelConfig config() const {
    ds::llm::ModelConfig c;
    c.backend = mode == "live" ? ds::llm::BackendKind::kLive : ds::llm::BackendKind::kScripted;
    c.endpoint = endpoint;
    c.model = model;
    c.embedding_model = embedding_model;
    c.embedding_dim = embedding_dim;
    c.temperature = temperature;
    c.api_key_env = api_key_env;
    c.timeout_s = timeout;
    c.max_retries = retries;
    c.audit_path = audit;
    return c;
  }

  std::unique_ptr<ds::llm::LanguageModel> backend() const { return ds::llm::make_backend(config(), rules); }
};

struct TrainFlags {
  std::size_t steps = 200000;
  std::size_t seeds = 5;
  double lr = 3e-4;
  std::size_t batch = 4096;

  void add(CLI::App* app, std::size_t default_steps, std::size_t default_seeds) {
    steps = default_steps;
    seeds = default_seeds;
    app->add_option("--steps", steps, "Environment steps per seed")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--seeds", seeds, "Independent training seeds")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--batch", batch, "Steps per PPO batch")->check(CLI::PositiveNumber)->capture_default_str();
  }

  ds::rl::TrainConfig config(const Common& c) const {
    ds::rl::TrainConfig t;
    t.total_steps = steps;
    t.n_seeds = seeds;
    t.learning_rate = lr;
    t.steps_per_batch = batch;
    t.seed = c.seed;
    t.jobs = c.jobs;
    return t;
  }
};

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ds::DataError("cannot write '" + path + "'");
  out << text;
}

nlohmann::json train_result_json(const ds::rl::TrainResult& r) {
  nlohmann::json curves = nlohmann::json::array();
  for (const auto& c : r.learning_curves) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : c) pts.push_back({p.step, p.mean_return});
    curves.push_back(pts);
  }
  return {{"per_seed_returns", r.per_seed_returns},
          {"best_seed_index", r.best_seed_index},
          {"diverged", r.diverged},
          {"cancelled", r.cancelled},
          {"learning_curves", curves}};
}

std::string iso_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

ds::idm::IdmParams read_idm(const std::string& path) {
  try {
    return nlohmann::json::parse(ds::read_text_file(path)).get<ds::idm::IdmParams>();
  } catch (const nlohmann::json::exception& e) {
    throw ds::DataError("IDM parameter file '" + path + "': " + e.what());
  }
}

// Record answering a command without running the pipeline: fuzzy hit if
// any, else the nearest record by embedding.
const ds::styledb::StyleRecord& pick_record(const ds::styledb::StyleDatabase& db, ds::llm::LanguageModel& model,
                                            const std::string& command, double threshold) {
  const auto e = model.embed(command);
  if (const auto hit = ds::styledb::fuzzy_lookup(db, e, threshold)) return *hit->record;
  if (db.empty()) throw ds::DataError("style database is empty");
  return *ds::styledb::top_k(db, e, 1).front().record;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language-driven car-following style customization"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML/INI file with option defaults (flags take precedence)");
  Common common;
  app.add_option("--seed", common.seed, "Random seed")->capture_default_str();
  app.add_option("--jobs", common.jobs, "Parallel workers for seeds / candidates")->check(CLI::PositiveNumber)->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic car-following dataset");
  std::string synth_out;
  std::size_t synth_events = 100;
  double synth_dt = 0.1, synth_horizon = 60.0;
  synth->add_option("--out", synth_out, "Output CSV")->required();
  synth->add_option("--events", synth_events, "Number of events")->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--dt", synth_dt, "Time step (0.04 or 0.1)")->capture_default_str();
  synth->add_option("--horizon", synth_horizon, "Event length in seconds")->capture_default_str();

  // split
  auto* split = app.add_subcommand("split", "Event-level train/test split");
  std::string split_in, split_train, split_test;
  double test_fraction = 0.15;
  split->add_option("--data", split_in, "Input CSV")->required()->check(CLI::ExistingFile);
  split->add_option("--test-fraction", test_fraction, "Fraction of events held out")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  split->add_option("--train-out", split_train, "Training CSV")->required();
  split->add_option("--test-out", split_test, "Test CSV")->required();

  // seed-db
  auto* seed_db = app.add_subcommand("seed-db", "Train and install the seed style corpus");
  std::string sd_train, sd_test, sd_db, sd_corpus = kDataDir + "/seed_rewards", sd_report;
  LlmFlags sd_llm;
  TrainFlags sd_tf;
  seed_db->add_option("--train", sd_train, "Training CSV")->required()->check(CLI::ExistingFile);
  seed_db->add_option("--test", sd_test, "Test CSV")->required()->check(CLI::ExistingFile);
  seed_db->add_option("--db", sd_db, "Database directory")->required();
  seed_db->add_option("--corpus", sd_corpus, "Directory of .rwd files")->capture_default_str();
  seed_db->add_option("--report", sd_report, "Write per-style training results (JSON)");
  sd_llm.add(seed_db);
  sd_tf.add(seed_db, 200000, 5);

  // run
  auto* run = app.add_subcommand("run", "Run the pipeline for one command");
  std::string run_text, run_db, run_train, run_test, run_out, run_level;
  std::size_t run_k = 3, run_m = 2, run_n = 2;
  std::optional<double> run_threshold;
  double run_budget = 0.0;
  bool run_keep_both = false;
  LlmFlags run_llm;
  TrainFlags run_tf;
  run->add_option("command", run_text, "User command")->required();
  run->add_option("--db", run_db, "Database directory")->required()->check(CLI::ExistingDirectory);
  run->add_option("--train", run_train, "Training CSV")->required()->check(CLI::ExistingFile);
  run->add_option("--test", run_test, "Test CSV")->required()->check(CLI::ExistingFile);
  run->add_option("--k", run_k, "Styles retrieved")->check(CLI::PositiveNumber)->capture_default_str();
  run->add_option("--m", run_m, "Candidate rewards generated")->capture_default_str();
  run->add_option("--n", run_n, "Metrics used in the verdict")->check(CLI::Range(1, 6))->capture_default_str();
  run->add_option("--fuzzy-threshold", run_threshold, "Fuzzy memory threshold (default depends on backend)")
      ->check(CLI::Range(0.0, 1.0));
  run->add_option("--budget", run_budget, "Training wall-clock budget in seconds (0 = none)")->capture_default_str();
  run->add_flag("--keep-both", run_keep_both, "On a tie, add the candidate as a new style");
  run->add_option("--level", run_level, "Command level tag")->check(CLI::IsMember({"I", "II", "III"}));
  run->add_option("--out", run_out, "Outcome JSON (default stdout)");
  run_llm.add(run);
  run_tf.add(run, 200000, 5);

  // train
  auto* train = app.add_subcommand("train", "Train a policy for one reward");
  std::string tr_reward, tr_train, tr_out, tr_result;
  TrainFlags tr_tf;
  train->add_option("--reward", tr_reward, "Reward source (.rwd)")->required()->check(CLI::ExistingFile);
  train->add_option("--train", tr_train, "Training CSV")->required()->check(CLI::ExistingFile);
  train->add_option("--out", tr_out, "Policy weights (.f32, sidecar written next to it)")->required();
  train->add_option("--result", tr_result, "TrainResult JSON (default stdout)");
  tr_tf.add(train, 200000, 5);

  // eval
  auto* eval = app.add_subcommand("eval", "Statistics of a policy (or of natural driving) on a test set");
  std::string ev_policy, ev_reward, ev_test, ev_out;
  bool ev_natural = false;
  eval->add_option("--policy", ev_policy, "Policy weights (.f32)")->check(CLI::ExistingFile);
  eval->add_option("--reward", ev_reward, "Reward source used for the rollouts")->check(CLI::ExistingFile);
  eval->add_option("--test", ev_test, "Test CSV")->required()->check(CLI::ExistingFile);
  eval->add_flag("--natural", ev_natural, "Report the recorded drivers instead of a policy");
  eval->add_option("--out", ev_out, "StatsReport JSON (default stdout)");

  // calibrate-idm
  auto* calib = app.add_subcommand("calibrate-idm", "Fit IDM parameters to recorded followers");
  std::string ci_train, ci_test, ci_out;
  std::size_t ci_iterations = 200;
  calib->add_option("--train", ci_train, "Calibration CSV")->required()->check(CLI::ExistingFile);
  calib->add_option("--test", ci_test, "Held-out CSV for reporting")->check(CLI::ExistingFile);
  calib->add_option("--iterations", ci_iterations, "Random-search candidates")->check(CLI::PositiveNumber)->capture_default_str();
  calib->add_option("--out", ci_out, "IDM parameter JSON (default stdout)");

  // make-comparisons
  auto* mkcmp = app.add_subcommand("make-comparisons", "Prepare policy-vs-IDM comparison clips for one command");
  std::string mc_command, mc_db, mc_test, mc_idm, mc_out;
  std::size_t mc_events = 20;
  std::optional<double> mc_threshold;
  LlmFlags mc_llm;
  mkcmp->add_option("--command", mc_command, "User command")->required();
  mkcmp->add_option("--events", mc_events, "Test events to compare")->check(CLI::PositiveNumber)->capture_default_str();
  mkcmp->add_option("--db", mc_db, "Database directory")->required()->check(CLI::ExistingDirectory);
  mkcmp->add_option("--test", mc_test, "Test CSV")->required()->check(CLI::ExistingFile);
  mkcmp->add_option("--idm", mc_idm, "Calibrated IDM parameters (JSON)")->required()->check(CLI::ExistingFile);
  mkcmp->add_option("--out", mc_out, "Comparison data directory")->required();
  mkcmp->add_option("--fuzzy-threshold", mc_threshold, "Fuzzy memory threshold")->check(CLI::Range(0.0, 1.0));
  mc_llm.add(mkcmp);

  // serve
  auto* serve = app.add_subcommand("serve", "Serve the comparison tool and pipeline API");
  std::string sv_host = "127.0.0.1", sv_data, sv_ui, sv_db, sv_train, sv_test;
  int sv_port = 8080;
  LlmFlags sv_llm;
  TrainFlags sv_tf;
  serve->add_option("--host", sv_host, "Bind address")->capture_default_str();
  serve->add_option("--port", sv_port, "Port")->check(CLI::Range(1, 65535))->capture_default_str();
  serve->add_option("--data", sv_data, "Comparison data directory")->required();
  serve->add_option("--ui", sv_ui, "Built UI bundle served at /");
  serve->add_option("--db", sv_db, "Database directory (enables POST /api/commands)");
  serve->add_option("--train", sv_train, "Training CSV for the pipeline");
  serve->add_option("--test", sv_test, "Test CSV for the pipeline");
  sv_llm.add(serve);
  sv_tf.add(serve, 200000, 5);

  // export-clip
  auto* export_clip = app.add_subcommand("export-clip", "Write the clip of a policy on one event");
  std::string ec_policy, ec_reward, ec_data, ec_event, ec_out;
  export_clip->add_option("--policy", ec_policy, "Policy weights (.f32)")->required()->check(CLI::ExistingFile);
  export_clip->add_option("--reward", ec_reward, "Reward source")->required()->check(CLI::ExistingFile);
  export_clip->add_option("--data", ec_data, "CSV containing the event")->required()->check(CLI::ExistingFile);
  export_clip->add_option("--event", ec_event, "Event id")->required();
  export_clip->add_option("--out", ec_out, "Clip JSON (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) {
      const auto d = ds::generate_synthetic(synth_events, synth_dt, synth_horizon, common.seed);
      ds::save_events(synth_out, d);
      std::cerr << "wrote " << d.size() << " events to " << synth_out << "\n";
      return kExitOk;
    }
    if (*split) {
      const auto d = ds::load_events(split_in);
      const auto [tr, te] = ds::split_train_test(d, {test_fraction, common.seed});
      ds::save_events(split_train, tr);
      ds::save_events(split_test, te);
      std::cout << "train " << tr.size() << " test " << te.size() << "\n";
      return kExitOk;
    }
    if (*seed_db) {
      const auto tr = ds::load_events(sd_train);
      const auto te = ds::load_events(sd_test);
      const auto corpus = ds::reward::load_reward_corpus(sd_corpus);
      auto model = sd_llm.backend();
      ds::styledb::StyleDatabase db(model->embedding_dim());
      const auto summaries = ds::seed_database(db, corpus, tr, te, sd_tf.config(common), *model);
      ds::styledb::persist(db, sd_db);
      nlohmann::json rep = nlohmann::json::object();
      bool diverged = false;
      for (const auto& s : summaries) {
        rep[s.id] = train_result_json(s.train_result);
        diverged = diverged || s.train_result.any_diverged();
      }
      if (!sd_report.empty()) write_output(sd_report, rep.dump(2) + "\n");
      std::cerr << "installed " << db.size() << " styles in " << sd_db << "\n";
      return diverged ? kExitDiverged : kExitOk;
    }
    if (*run) {
      auto model = run_llm.backend();
      ds::styledb::StyleStore store(ds::styledb::load(run_db), std::filesystem::path(run_db));
      ds::orchestrator::PipelineConfig cfg;
      cfg.k = run_k;
      cfg.m = run_m;
      cfg.n = run_n;
      cfg.fuzzy_threshold = run_threshold;
      cfg.train = run_tf.config(common);
      cfg.train.jobs = 1;
      cfg.jobs = common.jobs;
      cfg.training_budget_s = run_budget;
      cfg.keep_both_on_tie = run_keep_both;
      ds::orchestrator::Pipeline pipe(*model, ds::llm::PromptLibrary::load(run_llm.prompts), store,
                                      ds::load_events(run_train), ds::load_events(run_test), cfg);
      ds::orchestrator::UserCommand cmd;
      cmd.text = run_text;
      if (run_llm.mode == "live") cmd.received_at = iso_now();
      if (run_level == "I") cmd.level_hint = ds::orchestrator::CommandLevel::kI;
      if (run_level == "II") cmd.level_hint = ds::orchestrator::CommandLevel::kII;
      if (run_level == "III") cmd.level_hint = ds::orchestrator::CommandLevel::kIII;
      pipe.set_event_hook([](const std::string& e) { std::cerr << "[pipeline] " << e << "\n"; });
      const auto outcome = pipe.run_command(cmd);
      write_output(run_out, ds::orchestrator::to_json(outcome).dump(2) + "\n");
      return outcome.diverged() ? kExitDiverged : kExitOk;
    }
    if (*train) {
      const auto src = ds::reward::load_reward_file(tr_reward);
      const auto res = ds::rl::ppo_train(src.expr, ds::load_events(tr_train), tr_tf.config(common));
      ds::rl::save_policy(res.best_policy, tr_out);
      write_output(tr_result, train_result_json(res).dump(2) + "\n");
      return res.any_diverged() ? kExitDiverged : kExitOk;
    }
    if (*eval) {
      const auto te = ds::load_events(ev_test);
      ds::stats::StatsReport rep;
      if (ev_natural) {
        rep = ds::stats::natural_baseline(te);
      } else {
        if (ev_policy.empty() || ev_reward.empty()) throw ds::InvalidArgument("eval needs --policy and --reward, or --natural");
        const auto src = ds::reward::load_reward_file(ev_reward);
        rep = ds::policy_report(ds::rl::load_policy(ev_policy), src.expr, te,
                                std::filesystem::path(ev_policy).stem().string());
      }
      write_output(ev_out, ds::stats::to_json(rep).dump(2) + "\n");
      return kExitOk;
    }
    if (*calib) {
      ds::idm::CalibrationConfig cc;
      cc.iterations = ci_iterations;
      cc.seed = common.seed;
      const auto tr = ds::load_events(ci_train);
      const auto res = ds::idm::calibrate_detailed(tr, cc);
      nlohmann::json j = res.params;
      std::cerr << "calibration spacing RMSE " << res.rmse << " m over " << res.evaluations << " evaluations\n";
      if (!ci_test.empty()) {
        const auto te = ds::load_events(ci_test);
        std::cerr << "held-out spacing RMSE " << ds::idm::spacing_rmse(res.params, te) << " m (default parameters "
                  << ds::idm::spacing_rmse(ds::idm::IdmParams{}, te) << " m)\n";
      }
      write_output(ci_out, j.dump(2) + "\n");
      return kExitOk;
    }
    if (*mkcmp) {
      auto model = mc_llm.backend();
      const auto db = ds::styledb::load(mc_db);
      const auto& rec = pick_record(db, *model, mc_command, mc_threshold.value_or(model->default_fuzzy_threshold()));
      if (!rec.policy) throw ds::DataError("record '" + rec.id + "' has no trained policy");
      const auto batch = ds::service::build_comparisons(mc_command, *rec.policy, ds::reward::parse_or_throw(rec.reward_source),
                                                        read_idm(mc_idm), ds::load_events(mc_test), mc_events, common.seed);
      ds::service::append_batch(mc_out, batch);
      std::cerr << "style '" << rec.id << "': " << batch.comparisons.size() << " comparisons added to " << mc_out << "\n";
      return kExitOk;
    }
    if (*serve) {
      ds::service::PreferenceService svc(sv_data);
      std::unique_ptr<ds::llm::LanguageModel> model;
      std::unique_ptr<ds::styledb::StyleStore> store;
      std::unique_ptr<ds::orchestrator::Pipeline> pipe;
      std::mutex pipe_mu;
      ds::service::CommandHandler handler;
      if (!sv_db.empty()) {
        if (sv_train.empty() || sv_test.empty()) throw ds::InvalidArgument("--db needs --train and --test");
        model = sv_llm.backend();
        store = std::make_unique<ds::styledb::StyleStore>(ds::styledb::load(sv_db), std::filesystem::path(sv_db));
        ds::orchestrator::PipelineConfig cfg;
        cfg.train = sv_tf.config(common);
        cfg.train.jobs = 1;
        cfg.jobs = common.jobs;
        pipe = std::make_unique<ds::orchestrator::Pipeline>(*model, ds::llm::PromptLibrary::load(sv_llm.prompts), *store,
                                                            ds::load_events(sv_train), ds::load_events(sv_test), cfg);
        const bool live = sv_llm.mode == "live";
        handler = [&pipe, &pipe_mu, live](const std::string& text) {
          std::lock_guard lock(pipe_mu);
          ds::orchestrator::UserCommand cmd{text, live ? iso_now() : std::string(), std::nullopt};
          const auto o = pipe->run_command(cmd);
          return nlohmann::json{{"chosen_record_id", o.chosen_record_id},
                                {"provisional_record_id", o.provisional_record_id},
                                {"fuzzy_hit", o.fuzzy_hit},
                                {"degraded", o.degraded},
                                {"outcome", ds::orchestrator::to_json(o)}};
        };
      }
      httplib::Server server;
      ds::service::register_routes(server, svc, handler, sv_ui);
      std::cerr << "serving " << svc.size() << " comparisons on http://" << sv_host << ":" << sv_port << "\n";
      if (!server.listen(sv_host, sv_port)) throw ds::DataError("cannot listen on " + sv_host + ":" + std::to_string(sv_port));
      return kExitOk;
    }
    if (*export_clip) {
      const auto d = ds::load_events(ec_data);
      const auto* ev = d.find(ec_event);
      if (!ev) throw ds::DataError("event '" + ec_event + "' not found in " + ec_data);
      const auto src = ds::reward::load_reward_file(ec_reward);
      auto clip = ds::service::policy_clip(ds::rl::load_policy(ec_policy), src.expr, *ev);
      clip.clip_id = "clip-" + ds::service::hex_id(ec_policy + "\x1f" + ec_event);
      write_output(ec_out, ds::service::clip_public_json(clip).dump(2) + "\n");
      return kExitOk;
    }
  } catch (const ds::llm::LlmError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitLlm;
  } catch (const ds::TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const ds::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
