#include <gtest/gtest.h>

#include <fstream>

#include "drivestyle/llm/backend.hpp"
#include "drivestyle/llm/prompts.hpp"
#include "drivestyle/llm/verdict.hpp"
#include "fixtures.hpp"

using namespace drivestyle;
using namespace drivestyle::llm;

namespace {

const std::filesystem::path kData = DRIVESTYLE_DATA_DIR;

ScriptedBackend default_backend() { return ScriptedBackend(load_scripted_rules(kData / "scripted" / "rules.json")); }

std::string ask(LanguageModel& lm, const std::string& step, const nlohmann::json& ctx) {
  return lm.chat({{Role::kSystem, "You help choose driving styles."},
                  {Role::kUser, "Step: " + step + "\n```context\n" + ctx.dump() + "\n```\n"}});
}

stats::StatsReport report(const std::string& subject, double mean, double spread) {
  stats::StatsReport r;
  r.subject = subject;
  r.test_set_id = "t";
  for (auto m : stats::kAllMetrics) {
    stats::MetricSummary s;
    s.metric = m;
    s.mean = mean;
    s.std = spread / 2.56;
    s.p10 = mean - spread / 2;
    s.p50 = mean;
    s.p90 = mean + spread / 2;
    s.sample_count = 100;
    r.summaries.push_back(s);
  }
  return r;
}

const char* const kAnchors[] = {"I'm going to be late for the train.", "It's getting dark and visibility has decreased.",
                                "I am dizzy and prefer a smooth ride."};

}  // namespace

TEST(ScriptedRules, NeedCatchAll) {
  const auto j = nlohmann::json::parse(R"({"rules":[{"name":"a","contains":"x","response":"y"}]})");
  EXPECT_THROW(scripted_rules_from_json(j), DataError);
}

TEST(ScriptedRules, RejectBadEntries) {
  auto parse = [](const char* s) { return scripted_rules_from_json(nlohmann::json::parse(s)); };
  EXPECT_THROW(parse(R"({"rules":[{"name":"a","response":"y"},{"match":"*","response":"z"}]})"), DataError);
  EXPECT_THROW(parse(R"({"rules":[{"name":"a","pattern":"(","response":"y"},{"match":"*","response":"z"}]})"), DataError);
  EXPECT_THROW(parse(R"({"rules":[{"name":"a","contains":"q","response":"@nope"},{"match":"*","response":"z"}]})"),
               DataError);
  EXPECT_THROW(parse(R"({"rules":[{"match":"*"}]})"), DataError);
  EXPECT_THROW(parse(R"({"rules":[{"match":"*","response":"z"}],"embeddings":[{"text":"a"}]})"), DataError);
  EXPECT_THROW(parse(R"({"rules":[{"match":"*","response":"z"}],"embeddings":[{"text":"a","like":"b","mix":0}]})"),
               DataError);
  EXPECT_THROW(parse(R"({"rules":[{"match":"*","response":"z"}],"profiles":[]})"), DataError);
}

TEST(ScriptedRules, AliasErrorsSurfaceAtConstruction) {
  auto rules = scripted_rules_from_json(
      nlohmann::json::parse(R"({"rules":[{"match":"*","response":"z"}],"embeddings":[{"text":"a b","like":"A, b!"}]})"));
  EXPECT_THROW(ScriptedBackend{rules}, DataError);
  auto short_vec = scripted_rules_from_json(
      nlohmann::json::parse(R"({"rules":[{"match":"*","response":"z"}],"embeddings":[{"text":"a","vector":[1,2]}]})"));
  EXPECT_THROW(ScriptedBackend{short_vec}, DataError);
}

TEST(ScriptedRules, LoadFailures) {
  fixtures::TempDir dir("rules");
  EXPECT_THROW(load_scripted_rules(dir / "missing.json"), Error);
  std::ofstream(dir / "bad.json") << "{not json";
  EXPECT_THROW(load_scripted_rules(dir / "bad.json"), DataError);
}

TEST(ScriptedBackend, LiteralRulesMatchInOrder) {
  auto rules = scripted_rules_from_json(nlohmann::json::parse(R"({"rules":[
      {"name":"both","contains":["alpha","beta"],"response":"AB"},
      {"name":"re","pattern":"^go+al$","response":"GOAL"},
      {"match":"*","response":"other"}]})"));
  ScriptedBackend lm(rules);
  EXPECT_EQ(lm.chat({{Role::kUser, "BETA then Alpha"}}), "AB");
  EXPECT_EQ(lm.chat({{Role::kUser, "alpha only"}}), "other");
  EXPECT_EQ(lm.chat({{Role::kUser, "Goooal"}}), "GOAL");
  // the last user turn is the one matched
  EXPECT_EQ(lm.chat({{Role::kUser, "goal"}, {Role::kAssistant, "ok"}, {Role::kUser, "alpha beta"}}), "AB");
  EXPECT_THROW(lm.chat({}), InvalidArgument);
  EXPECT_THROW(lm.chat({{Role::kUser, ""}}), InvalidArgument);
  EXPECT_EQ(lm.kind(), BackendKind::kScripted);
  EXPECT_EQ(lm.embedding_dim(), kHashedEmbeddingDim);
}

TEST(ScriptedBackend, BuiltinWithoutContextExplainsItself) {
  auto lm = default_backend();
  const auto reply = lm.chat({{Role::kUser, "Step: style-rerank\nno context here"}});
  EXPECT_EQ(reply, "No structured context was provided, so no decision can be made.");
  EXPECT_FALSE(parse_verdict(Step::kRerank, reply).ok());
  EXPECT_EQ(lm.chat({{Role::kUser, "What is the weather?"}}), "I can only help with driving-style requests.");
}

TEST(ScriptedBackend, RerankPrefersHintedRecords) {
  auto lm = default_backend();
  const nlohmann::json ctx = {{"command", "Drive aggressively, I'm late."},
                              {"candidates",
                               {{{"id", "comfort"}, {"similarity", 0.9}},
                                {{"id", "aggressive"}, {"similarity", 0.2}},
                                {{"id", "normal"}, {"similarity", 0.5}}}}};
  const auto p = parse_verdict(Step::kRerank, ask(lm, "style-rerank", ctx));
  ASSERT_TRUE(p.ok()) << p.diagnostic;
  EXPECT_EQ(p.value->selected_ids, (std::vector<std::string>{"aggressive", "comfort", "normal"}));
}

TEST(ScriptedBackend, MetricSelectionFollowsProfile) {
  auto lm = default_backend();
  for (std::size_t n : {1u, 2u, 4u}) {
    VerdictExpectations ex;
    ex.n = n;
    const auto p = parse_verdict(Step::kMetricSelection,
                                 ask(lm, "metric-selection", {{"command", "Please drive safely in the fog."}, {"n", n}}), ex);
    ASSERT_TRUE(p.ok()) << p.diagnostic;
    EXPECT_EQ(p.value->metrics.front(), stats::Metric::kSpacing);
  }
  const auto p = parse_verdict(Step::kMetricSelection,
                               ask(lm, "metric-selection", {{"command", "I feel car sick"}, {"n", 2}}));
  ASSERT_TRUE(p.ok());
  EXPECT_EQ(p.value->metrics, (std::vector<stats::Metric>{stats::Metric::kJerk, stats::Metric::kAcceleration}));
}

TEST(ScriptedBackend, GeneratedRewardsParse) {
  auto lm = default_backend();
  VerdictExpectations ex;
  ex.m = 3;
  const auto p = parse_verdict(
      Step::kRewardGeneration,
      ask(lm, "reward-generation", {{"command", "hurry up"}, {"m", 3}, {"template", "speed - 0.1 * abs(jerk)"}}), ex);
  ASSERT_TRUE(p.ok()) << p.diagnostic;
  ASSERT_EQ(p.value->rewards.size(), 3u);
  for (const auto& r : p.value->rewards) {
    EXPECT_TRUE(r.expr.has_value()) << r.source << ": " << r.diagnostic;
    EXPECT_NE(r.source.find("speed - 0.1 * abs(jerk) + "), std::string::npos);
  }
  EXPECT_NE(p.value->rewards[0].source, p.value->rewards[1].source);
}

TEST(ScriptedBackend, JudgeComparesAgainstProvisional) {
  auto lm = default_backend();
  const auto base = report("natural", 10.0, 4.0);
  auto judge = [&](double provisional_mean, double candidate_mean) {
    const nlohmann::json ctx = {
        {"command", "drive aggressively"},
        {"baseline", stats::to_json(base)},
        {"metrics", {"speed", "acceleration"}},
        {"subjects",
         {{{"name", "provisional"}, {"report", stats::to_json(report("p", provisional_mean, 4.0))}},
          {{"name", "candidate-1"}, {"report", stats::to_json(report("c", candidate_mean, 4.0))}}}}};
    VerdictExpectations ex;
    ex.allowed_winners = {"provisional", "candidate-1"};
    auto p = parse_verdict(Step::kAlignment, ask(lm, "alignment-verdict", ctx), ex);
    EXPECT_TRUE(p.ok()) << p.diagnostic;
    return p;
  };
  auto better = judge(10.0, 12.0);
  EXPECT_EQ(*better.value->verdict, styledb::Verdict::kChallengerBetter);
  EXPECT_EQ(better.value->winner, "candidate-1");
  auto worse = judge(12.0, 10.0);
  EXPECT_EQ(*worse.value->verdict, styledb::Verdict::kIncumbentBetter);
  auto tie = judge(11.0, 11.0);
  EXPECT_EQ(*tie.value->verdict, styledb::Verdict::kTie);
  EXPECT_EQ(tie.value->winner, "provisional");
}

TEST(ScriptedBackend, ChatIsDeterministic) {
  auto a = default_backend();
  auto b = default_backend();
  const nlohmann::json ctx = {{"command", "drive normally"}, {"n", 2}};
  EXPECT_EQ(ask(a, "metric-selection", ctx), ask(b, "metric-selection", ctx));
}

TEST(ScriptedEmbeddings, ParaphrasesClearThreshold) {
  auto lm = default_backend();
  const auto rules = load_scripted_rules(kData / "scripted" / "rules.json");
  ASSERT_FALSE(rules.embeddings.empty());
  for (const auto& e : rules.embeddings) {
    const auto a = lm.embed(e.text);
    const auto b = lm.embed(e.like);
    EXPECT_NEAR(l2_norm(a), 1.0, 1e-12);
    EXPECT_GE(cosine_similarity(a, b), lm.default_fuzzy_threshold()) << e.text;
  }
}

TEST(ScriptedEmbeddings, UnrelatedCommandsStayBelowThreshold) {
  auto lm = default_backend();
  const char* const unrelated[] = {"Keep a steady pace on the highway.", "Follow the truck at a fixed distance.",
                                   "Drive aggressively.", "Save fuel on this trip.", "Please drive normally."};
  for (const char* u : unrelated) {
    const auto eu = lm.embed(u);
    for (const char* a : kAnchors) {
      EXPECT_LT(cosine_similarity(eu, lm.embed(a)), lm.default_fuzzy_threshold()) << u << " vs " << a;
    }
  }
}

TEST(ScriptedEmbeddings, TableEntriesAreExactForEquivalentText) {
  auto lm = default_backend();
  EXPECT_EQ(lm.embed("I'm going to be late for the plane."), lm.embed("i m going to be late for the plane"));
  EXPECT_EQ(lm.embed("some command"), hashed_trigram_embedding("some command"));
  EXPECT_THROW(lm.embed("?!"), InvalidArgument);
}

TEST(MakeBackend, ScriptedByDefault) {
  ModelConfig cfg;
  auto lm = make_backend(cfg, kData / "scripted" / "rules.json");
  EXPECT_EQ(lm->kind(), BackendKind::kScripted);
  cfg.temperature = 3.0;
  EXPECT_THROW(make_backend(cfg, kData / "scripted" / "rules.json"), InvalidArgument);
}

TEST(Prompts, ShippedTemplatesRender) {
  const auto lib = PromptLibrary::load(kData / "prompts");
  for (const char* name : {"system", "rerank", "metric_selection", "reward_generation", "alignment", "repair"}) {
    EXPECT_TRUE(lib.contains(name)) << name;
  }
  const std::map<std::string, std::string> vars = {{"command", "CMD"}, {"context", "CTX"}, {"k", "3"},
                                                   {"listing", "L"},   {"n", "2"},         {"baseline", "B"},
                                                   {"m", "2"},         {"template", "T"},  {"metrics", "M"},
                                                   {"tables", "TB"},   {"problem", "P"},   {"request", "R"},
                                                   {"step", "S"}};
  const auto rendered = lib.render("rerank", vars);
  EXPECT_NE(rendered.find("CMD"), std::string::npos);
  EXPECT_EQ(rendered.find("{{"), std::string::npos);
  EXPECT_THROW(lib.render("rerank", {{"command", "x"}}), InvalidArgument);
  EXPECT_THROW(lib.get("nope"), DataError);
}

TEST(Prompts, VersionsAndPlaceholders) {
  fixtures::TempDir dir("prompts");
  std::ofstream(dir / "greet.v1.txt") << "old {{who}}";
  std::ofstream(dir / "greet.v2.txt") << "hello {{who}}, {{who}}!";
  std::ofstream(dir / "broken.v1.txt") << "oops {{who";
  std::ofstream(dir / "README") << "ignored";
  const auto lib = PromptLibrary::load(dir.path());
  EXPECT_EQ(lib.get("greet").version, "v2");
  EXPECT_EQ(lib.render("greet", {{"who", "ann"}}), "hello ann, ann!");
  EXPECT_THROW(lib.render("broken", {{"who", "x"}}), DataError);
  EXPECT_THROW(PromptLibrary::load(dir / "missing"), DataError);
}
