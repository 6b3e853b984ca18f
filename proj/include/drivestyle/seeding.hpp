#pragma once

#include <string>
#include <vector>

#include "drivestyle/llm/types.hpp"
#include "drivestyle/policy_eval.hpp"
#include "drivestyle/reward/corpus.hpp"
#include "drivestyle/rl/ppo.hpp"
#include "drivestyle/styledb.hpp"

namespace drivestyle {

struct SeedSummary {
  std::string id;
  rl::TrainResult train_result;
};

// Trains every corpus reward, evaluates it on `test` and inserts the record.
inline std::vector<SeedSummary> seed_database(styledb::StyleDatabase& db,
                                              const std::vector<reward::RewardSource>& corpus, const Dataset& train,
                                              const Dataset& test, const rl::TrainConfig& cfg,
                                              llm::LanguageModel& model) {
  if (db.embedding_dim() != model.embedding_dim()) {
    throw InvalidArgument("seed_database: database embedding dimension differs from the backend's");
  }
  std::vector<SeedSummary> out;
  for (const auto& src : corpus) {
    styledb::StyleRecord rec;
    rec.id = src.id;
    rec.reward_source = src.text;
    const auto prov = src.metadata.count("provenance") ? src.metadata.at("provenance") : std::string("seed_human");
    rec.provenance = styledb::provenance_from_string(prov);
    auto result = rl::ppo_train(src.expr, train, cfg);
    rec.policy = result.best_policy;
    rec.stats = policy_report(*rec.policy, src.expr, test, rec.id);
    rec.embedding = model.embed(styledb::retrieval_text(rec.reward_source, rec.stats));
    db.insert(std::move(rec));
    out.push_back({src.id, std::move(result)});
  }
  return out;
}

}  // namespace drivestyle
