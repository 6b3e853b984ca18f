#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "drivestyle/llm/embedding.hpp"
#include "drivestyle/statseval.hpp"
#include "drivestyle/styledb.hpp"
#include "fixtures.hpp"

using namespace drivestyle;
using namespace drivestyle::styledb;

namespace {

constexpr std::size_t kDim = 8;

std::vector<double> axis(std::size_t i, std::size_t dim = kDim) {
  std::vector<double> v(dim, 0.0);
  v[i % dim] = 1.0;
  return v;
}

std::vector<double> mix(std::size_t i, std::size_t j, double w) {
  std::vector<double> v(kDim, 0.0);
  v[i] = w;
  v[j] = std::sqrt(1.0 - w * w);
  return v;
}

StyleRecord record(const std::string& id, std::vector<double> emb, std::vector<CommandEntry> cmds = {}) {
  StyleRecord r;
  r.id = id;
  r.reward_source = "speed - 0.1 * abs(jerk)";
  r.embedding = std::move(emb);
  r.commands = std::move(cmds);
  r.provenance = Provenance::kSeedHuman;
  return r;
}

const stats::StatsReport& sample_stats() {
  static const stats::StatsReport r = stats::natural_baseline(fixtures::synthetic(2, 3, 10.0));
  return r;
}

StyleRecord trained(const std::string& id, std::vector<double> emb, std::uint64_t seed) {
  auto r = record(id, std::move(emb));
  r.policy = rl::init_policy(seed);
  r.stats = sample_stats();
  return r;
}

}  // namespace

TEST(StyleDb, InsertValidatesRecords) {
  StyleDatabase db(kDim);
  EXPECT_THROW(db.insert(record("", axis(0))), InvalidArgument);
  EXPECT_THROW(db.insert(record("../x", axis(0))), InvalidArgument);
  EXPECT_THROW(db.insert(record("a", std::vector<double>(kDim, 1.0))), InvalidArgument);
  EXPECT_THROW(db.insert(record("a", axis(0, kDim + 1))), InvalidArgument);
  auto bad_src = record("a", axis(0));
  bad_src.reward_source = "speed +";
  EXPECT_THROW(db.insert(bad_src), InvalidArgument);
  auto no_stats = record("a", axis(0));
  no_stats.policy = rl::init_policy(1);
  EXPECT_THROW(db.insert(no_stats), InvalidArgument);
  auto bad_cmd = record("a", axis(0), {{"go", "t0", std::vector<double>(kDim, 0.0)}});
  EXPECT_THROW(db.insert(bad_cmd), InvalidArgument);
  EXPECT_EQ(db.version(), 0u);

  db.insert(record("a", axis(0)));
  EXPECT_EQ(db.version(), 1u);
  EXPECT_THROW(db.insert(record("a", axis(1))), InvalidArgument);
  EXPECT_EQ(db.size(), 1u);
}

TEST(StyleDb, TopKOrdersBySimilarityThenId) {
  StyleDatabase db(kDim);
  db.insert(record("c", axis(0)));
  db.insert(record("a", axis(0)));
  db.insert(record("b", mix(0, 1, 0.8)));
  db.insert(record("d", axis(3)));
  const auto got = top_k(db, axis(0), 3);
  ASSERT_EQ(got.size(), 3u);
  EXPECT_EQ(got[0].record->id, "a");
  EXPECT_EQ(got[1].record->id, "c");
  EXPECT_EQ(got[2].record->id, "b");
  EXPECT_NEAR(got[2].similarity, 0.8, 1e-12);
  EXPECT_EQ(top_k(db, axis(3), 10).size(), 4u);
  EXPECT_EQ(top_k(db, axis(0), 4).back().similarity, 0.0);
  EXPECT_THROW(top_k(db, axis(0), 0), InvalidArgument);
  EXPECT_THROW(top_k(db, axis(0, 3), 1), InvalidArgument);
}

TEST(StyleDb, TopKTotalOrderOnRandomDatabases) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    StyleDatabase db(kDim);
    const int count = 1 + static_cast<int>(rng() % 12);
    for (int i = 0; i < count; ++i) {
      std::vector<double> v(kDim);
      for (auto& x : v) x = std::round(n(rng));  // coarse values force ties
      if (llm::l2_norm(v) == 0.0) v[0] = 1.0;
      llm::normalize_unit(v);
      db.insert(record("r" + std::to_string(rng() % 1000) + "-" + std::to_string(i), v));
    }
    auto q = axis(rng() % kDim);
    const auto got = top_k(db, q, db.size());
    for (std::size_t i = 1; i < got.size(); ++i) {
      const bool ordered = got[i - 1].similarity > got[i].similarity ||
                           (got[i - 1].similarity == got[i].similarity && got[i - 1].record->id < got[i].record->id);
      ASSERT_TRUE(ordered);
    }
  }
}

TEST(StyleDb, FuzzyLookupUsesCommandHistory) {
  StyleDatabase db(kDim);
  EXPECT_FALSE(fuzzy_lookup(db, axis(0), 0.5));
  db.insert(record("a", axis(5), {{"hurry", "t1", axis(0)}, {"faster", "t2", axis(1)}}));
  db.insert(record("b", axis(5), {{"calm", "t3", axis(2)}}));
  auto hit = fuzzy_lookup(db, axis(1), 0.9);
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->record->id, "a");
  EXPECT_EQ(hit->similarity, 1.0);
  EXPECT_FALSE(fuzzy_lookup(db, mix(2, 3, 0.7), 0.75));
  EXPECT_EQ(fuzzy_lookup(db, mix(2, 3, 0.7), 0.7)->record->id, "b");
  // Threshold 1 only admits exact embeddings.
  EXPECT_TRUE(fuzzy_lookup(db, axis(2), 1.0));
  EXPECT_FALSE(fuzzy_lookup(db, mix(2, 3, 0.999999), 1.0));
  EXPECT_THROW(fuzzy_lookup(db, axis(0), 0.0), InvalidArgument);
  EXPECT_THROW(fuzzy_lookup(db, axis(0), 1.5), InvalidArgument);
}

TEST(StyleDb, ReplaceIfBetterSemantics) {
  StyleDatabase db(kDim);
  db.insert(record("inc", axis(0), {{"fast", "t1", axis(1)}}));
  const auto v0 = db.version();

  EXPECT_EQ(db.replace_if_better("inc", record("c1", axis(2)), Verdict::kIncumbentBetter), "inc");
  EXPECT_EQ(db.replace_if_better("inc", record("c2", axis(2)), Verdict::kTie), "inc");
  EXPECT_EQ(db.version(), v0);
  EXPECT_EQ(db.size(), 1u);

  EXPECT_EQ(db.replace_if_better("inc", record("c3", axis(2)), Verdict::kTie, true), "inc");
  EXPECT_EQ(db.size(), 2u);
  EXPECT_TRUE(db.find("c3"));

  const auto v1 = db.version();
  auto challenger = record("c4", axis(3), {{"faster", "t2", axis(4)}});
  challenger.reward_source = "2 * speed";
  EXPECT_EQ(db.replace_if_better("inc", challenger, Verdict::kChallengerBetter), "c4");
  EXPECT_EQ(db.version(), v1 + 1);
  EXPECT_FALSE(db.find("inc"));
  EXPECT_TRUE(db.retired().count("inc"));
  const auto& c4 = db.at("c4");
  ASSERT_EQ(c4.commands.size(), 2u);
  EXPECT_EQ(c4.commands[0].text, "fast");
  EXPECT_EQ(c4.commands[1].text, "faster");
  EXPECT_EQ(c4.reward_source, "2 * speed");
  EXPECT_EQ(db.size(), 2u);

  EXPECT_THROW(db.replace_if_better("inc", record("c5", axis(0)), Verdict::kTie), InvalidArgument);
  EXPECT_THROW(db.replace_if_better("c4", record("c3", axis(0)), Verdict::kChallengerBetter), InvalidArgument);
  EXPECT_THROW(db.insert(record("inc", axis(0))), InvalidArgument);
  EXPECT_NE(db.audit_log().back().find("replace inc -> c4"), std::string::npos);
}

TEST(StyleDb, RandomMutationsKeepVersionMonotoneAndSizeNonDecreasing) {
  std::mt19937_64 rng(10);
  StyleDatabase db(kDim);
  int next = 0;
  for (int step = 0; step < 500; ++step) {
    const auto before_version = db.version();
    const auto before_size = db.size();
    const auto op = db.empty() ? 0 : rng() % 3;
    std::vector<std::string> ids;
    for (const auto& [id, r] : db.records()) ids.push_back(id);
    if (op == 0) {
      db.insert(record("r" + std::to_string(next++), axis(rng())));
      EXPECT_GT(db.version(), before_version);
    } else if (op == 1) {
      db.append_command(ids[rng() % ids.size()], {"cmd", "t", axis(rng())});
      EXPECT_GT(db.version(), before_version);
    } else {
      const auto verdict = static_cast<Verdict>(rng() % 3);
      db.replace_if_better(ids[rng() % ids.size()], record("r" + std::to_string(next++), axis(rng())), verdict,
                           rng() % 2);
      EXPECT_GE(db.version(), before_version);
    }
    EXPECT_GE(db.size(), before_size);
  }
}

TEST(StyleDb, PersistLoadRoundTripIsExact) {
  fixtures::TempDir dir("db");
  StyleDatabase db(kDim);
  db.insert(trained("fast", axis(0), 1));
  db.insert(record("plain", axis(1), {{"slow down", "2026-01-01T00:00:00Z", axis(2)}}));
  db.append_command("fast", {"hurry", "logical-3", mix(0, 1, 0.6)});
  persist(db, dir.path());
  const auto back = load(dir.path());
  EXPECT_EQ(back, db);
  EXPECT_TRUE(std::filesystem::exists(dir / "records/fast.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "policies/fast.f32"));
  EXPECT_TRUE(std::filesystem::exists(dir / "policies/fast.json"));
  EXPECT_FALSE(std::filesystem::exists(dir / "policies/plain.f32"));

  const auto j = nlohmann::json::parse(std::ifstream(dir / "records/fast.json"));
  for (const char* key : {"id", "reward_source", "policy_ref", "stats", "commands", "embedding", "provenance"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["policy_ref"], "policies/fast.f32");

  // Replacement removes the retired record's files.
  auto d2 = back;
  d2.replace_if_better("fast", trained("fast2", axis(3), 2), Verdict::kChallengerBetter);
  persist(d2, dir.path());
  EXPECT_FALSE(std::filesystem::exists(dir / "records/fast.json"));
  EXPECT_FALSE(std::filesystem::exists(dir / "policies/fast.f32"));
  EXPECT_EQ(load(dir.path()), d2);
  for (const auto& e : std::filesystem::directory_iterator(dir / "records")) {
    EXPECT_EQ(e.path().string().find(".tmp"), std::string::npos);
  }
}

TEST(StyleDb, LoadReportsDamage) {
  fixtures::TempDir dir("db-bad");
  StyleDatabase db(kDim);
  db.insert(trained("fast", axis(0), 1));
  persist(db, dir.path());
  std::filesystem::remove(dir / "policies/fast.f32");
  try {
    load(dir.path());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("fast"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("missing policy weight file"), std::string::npos);
  }
  EXPECT_THROW(load(dir / "nope"), DataError);
  std::ofstream(dir / "meta.json") << "{\"format\": \"other\"}";
  EXPECT_THROW(load(dir.path()), DataError);
}

TEST(StyleStore, SnapshotsAreImmutableAndMutationsPersist) {
  fixtures::TempDir dir("store");
  StyleStore store(StyleDatabase(kDim), dir.path());
  const auto before = store.snapshot();
  store.mutate([](StyleDatabase& db) { db.insert(record("a", axis(0))); });
  EXPECT_TRUE(before->empty());
  EXPECT_EQ(store.snapshot()->size(), 1u);
  EXPECT_EQ(load(dir.path()), *store.snapshot());
  const auto id = store.mutate([](StyleDatabase& db) {
    return db.replace_if_better("a", record("b", axis(1)), Verdict::kChallengerBetter);
  });
  EXPECT_EQ(id, "b");
  EXPECT_EQ(store.snapshot()->version(), 2u);
}

TEST(Retrieval, TextIncludesDigest) {
  EXPECT_EQ(retrieval_text("speed", std::nullopt), "speed");
  EXPECT_NE(retrieval_text("speed", sample_stats()).find(" | "), std::string::npos);
}

TEST(VerdictNames, RoundTrip) {
  for (auto v : {Verdict::kChallengerBetter, Verdict::kIncumbentBetter, Verdict::kTie}) {
    EXPECT_EQ(verdict_from_string(to_string(v)), v);
  }
  EXPECT_FALSE(verdict_from_string("draw"));
  EXPECT_EQ(provenance_from_string("generated"), Provenance::kGenerated);
  EXPECT_THROW(provenance_from_string("mixed"), DataError);
}
