#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "drivestyle/error.hpp"
#include "drivestyle/fsutil.hpp"
#include "drivestyle/llm/embedding.hpp"
#include "drivestyle/reward/parser.hpp"
#include "drivestyle/rl/policy.hpp"
#include "drivestyle/statseval.hpp"

namespace drivestyle::styledb {

inline constexpr double kNormTolerance = 1e-6;
inline constexpr double kLiveFuzzyThreshold = 0.85;
inline constexpr double kHashedFuzzyThreshold = 0.60;
inline constexpr const char* kDatabaseFormat = "drivestyle-db-v1";

enum class Provenance { kSeedHuman, kSeedDataDriven, kGenerated };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::kSeedHuman: return "seed_human";
    case Provenance::kSeedDataDriven: return "seed_data_driven";
    case Provenance::kGenerated: return "generated";
  }
  return "generated";
}

inline Provenance provenance_from_string(const std::string& s) {
  if (s == "seed_human") return Provenance::kSeedHuman;
  if (s == "seed_data_driven") return Provenance::kSeedDataDriven;
  if (s == "generated") return Provenance::kGenerated;
  throw DataError("unknown provenance '" + s + "'");
}

struct CommandEntry {
  std::string text;
  std::string timestamp;
  std::vector<double> embedding;

  bool operator==(const CommandEntry&) const = default;
};

struct StyleRecord {
  std::string id;
  std::string reward_source;
  std::optional<rl::PolicyParams> policy;
  std::optional<stats::StatsReport> stats;
  std::vector<CommandEntry> commands;
  std::vector<double> embedding;
  Provenance provenance = Provenance::kGenerated;

  std::string policy_ref() const { return policy ? "policies/" + id + ".f32" : std::string(); }

  bool operator==(const StyleRecord&) const = default;
};

// Ids double as file names.
inline bool valid_id(const std::string& id) {
  if (id.empty() || id.size() > 128 || id.front() == '.') return false;
  return std::all_of(id.begin(), id.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-' || c == '.';
  });
}

inline void check_unit(const std::vector<double>& v, std::size_t dim, const std::string& what) {
  if (v.size() != dim) {
    throw InvalidArgument(what + ": embedding dimension " + std::to_string(v.size()) + " != " + std::to_string(dim));
  }
  const double n = llm::l2_norm(v);
  if (!(std::abs(n - 1.0) <= kNormTolerance)) throw InvalidArgument(what + ": embedding is not unit norm");
}

inline void validate_record(const StyleRecord& r, std::size_t dim) {
  if (!valid_id(r.id)) throw InvalidArgument("invalid record id '" + r.id + "'");
  check_unit(r.embedding, dim, "record '" + r.id + "'");
  for (const auto& c : r.commands) check_unit(c.embedding, dim, "command of record '" + r.id + "'");
  const auto parsed = reward::parse(r.reward_source);
  if (const auto* d = std::get_if<reward::ParseDiagnostic>(&parsed)) {
    throw InvalidArgument("record '" + r.id + "': reward does not parse: " + d->to_string());
  }
  if (r.policy && !r.stats) throw InvalidArgument("record '" + r.id + "': trained policy without stats");
  if (r.policy) rl::check_consistent(*r.policy);
}

// Text embedded for retrieval: the reward source plus a one-line stats digest.
inline std::string retrieval_text(const std::string& reward_source, const std::optional<stats::StatsReport>& st) {
  std::string text = reward_source;
  if (st) text += " | " + stats::digest(*st);
  return text;
}

struct ScoredRecord {
  const StyleRecord* record = nullptr;
  double similarity = 0.0;
};

enum class Verdict { kChallengerBetter, kIncumbentBetter, kTie };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::kChallengerBetter: return "challenger_better";
    case Verdict::kIncumbentBetter: return "incumbent_better";
    case Verdict::kTie: return "tie";
  }
  return "tie";
}

inline std::optional<Verdict> verdict_from_string(const std::string& s) {
  if (s == "challenger_better") return Verdict::kChallengerBetter;
  if (s == "incumbent_better") return Verdict::kIncumbentBetter;
  if (s == "tie") return Verdict::kTie;
  return std::nullopt;
}

class StyleDatabase {
 public:
  explicit StyleDatabase(std::size_t embedding_dim = llm::kHashedEmbeddingDim) : dim_(embedding_dim) {
    if (dim_ == 0) throw InvalidArgument("embedding dimension must be positive");
  }

  std::size_t embedding_dim() const { return dim_; }
  std::uint64_t version() const { return version_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::map<std::string, StyleRecord>& records() const { return records_; }
  const std::set<std::string>& retired() const { return retired_; }
  const std::vector<std::string>& audit_log() const { return audit_; }

  const StyleRecord* find(const std::string& id) const {
    auto it = records_.find(id);
    return it == records_.end() ? nullptr : &it->second;
  }
  const StyleRecord& at(const std::string& id) const {
    if (const auto* r = find(id)) return *r;
    throw InvalidArgument("no record '" + id + "'");
  }

  void insert(StyleRecord record) {
    validate_record(record, dim_);
    if (records_.count(record.id) || retired_.count(record.id)) {
      throw InvalidArgument("duplicate record id '" + record.id + "'");
    }
    const std::string id = record.id;
    records_.emplace(id, std::move(record));
    ++version_;
    log("insert " + id);
  }

  void append_command(const std::string& id, CommandEntry cmd) {
    auto it = records_.find(id);
    if (it == records_.end()) throw InvalidArgument("no record '" + id + "'");
    check_unit(cmd.embedding, dim_, "command");
    it->second.commands.push_back(std::move(cmd));
    ++version_;
    log("command " + id);
  }

  // Returns the id of the record that answers for the incumbent afterwards.
  std::string replace_if_better(const std::string& incumbent_id, StyleRecord challenger, Verdict verdict,
                                bool keep_both_on_tie = false) {
    auto it = records_.find(incumbent_id);
    if (it == records_.end()) throw InvalidArgument("no incumbent record '" + incumbent_id + "'");
    switch (verdict) {
      case Verdict::kChallengerBetter: {
        validate_record(challenger, dim_);
        if (challenger.id == incumbent_id || records_.count(challenger.id) || retired_.count(challenger.id)) {
          throw InvalidArgument("challenger id '" + challenger.id + "' is not fresh");
        }
        std::vector<CommandEntry> history = it->second.commands;
        history.insert(history.end(), challenger.commands.begin(), challenger.commands.end());
        challenger.commands = std::move(history);
        const std::string cid = challenger.id;
        records_.erase(it);
        retired_.insert(incumbent_id);
        records_.emplace(cid, std::move(challenger));
        ++version_;
        log("replace " + incumbent_id + " -> " + cid);
        return cid;
      }
      case Verdict::kTie:
        if (keep_both_on_tie) {
          const std::string cid = challenger.id;
          insert(std::move(challenger));
          log("tie keep-both " + incumbent_id + " + " + cid);
          return incumbent_id;
        }
        log("tie " + incumbent_id + " kept");
        return incumbent_id;
      case Verdict::kIncumbentBetter:
        log("incumbent_better " + incumbent_id + " kept");
        return incumbent_id;
    }
    return incumbent_id;
  }

  // Restores state read from disk.
  static StyleDatabase restore(std::size_t dim, std::uint64_t version, std::map<std::string, StyleRecord> records,
                               std::set<std::string> retired, std::vector<std::string> audit) {
    StyleDatabase db(dim);
    for (const auto& [id, r] : records) validate_record(r, dim);
    db.records_ = std::move(records);
    db.retired_ = std::move(retired);
    db.version_ = version;
    db.audit_ = std::move(audit);
    return db;
  }

  bool operator==(const StyleDatabase&) const = default;

 private:
  void log(std::string line) { audit_.push_back("v" + std::to_string(version_) + " " + std::move(line)); }

  std::size_t dim_;
  std::uint64_t version_ = 0;
  std::map<std::string, StyleRecord> records_;
  std::set<std::string> retired_;
  std::vector<std::string> audit_;
};

// Cosine top-k over record embeddings; similarity descending, then id ascending.
inline std::vector<ScoredRecord> top_k(const StyleDatabase& db, const std::vector<double>& query, std::size_t k) {
  if (k == 0) throw InvalidArgument("top_k: k must be >= 1");
  if (query.size() != db.embedding_dim()) throw InvalidArgument("top_k: embedding dimension mismatch");
  std::vector<ScoredRecord> scored;
  for (const auto& [id, r] : db.records()) scored.push_back({&r, llm::cosine_similarity(query, r.embedding)});
  std::stable_sort(scored.begin(), scored.end(), [](const ScoredRecord& a, const ScoredRecord& b) {
    return a.similarity > b.similarity;  // map order already ascends by id
  });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

// Best record by the maximum similarity over its stored command embeddings,
// returned only when that similarity reaches `threshold`.
inline std::optional<ScoredRecord> fuzzy_lookup(const StyleDatabase& db, const std::vector<double>& command,
                                                double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw InvalidArgument("fuzzy_lookup: threshold must be in (0, 1]");
  if (command.size() != db.embedding_dim()) throw InvalidArgument("fuzzy_lookup: embedding dimension mismatch");
  std::optional<ScoredRecord> best;
  for (const auto& [id, r] : db.records()) {
    for (const auto& c : r.commands) {
      const double s = llm::cosine_similarity(command, c.embedding);
      if (!best || s > best->similarity) best = ScoredRecord{&r, s};
    }
  }
  if (best && best->similarity >= threshold) return best;
  return std::nullopt;
}

// ---- persistence ----
//
// <dir>/meta.json              format, embedding_dim, version, record ids, retired ids
// <dir>/records/<id>.json      one record
// <dir>/policies/<id>.f32      float32 little-endian weights
// <dir>/policies/<id>.json     tensor sidecar
// <dir>/audit.log              one line per database event

inline nlohmann::json record_to_json(const StyleRecord& r) {
  nlohmann::json commands = nlohmann::json::array();
  for (const auto& c : r.commands) {
    commands.push_back({{"text", c.text}, {"timestamp", c.timestamp}, {"embedding", c.embedding}});
  }
  return {{"id", r.id},
          {"provenance", to_string(r.provenance)},
          {"reward_source", r.reward_source},
          {"policy_ref", r.policy ? nlohmann::json(r.policy_ref()) : nlohmann::json(nullptr)},
          {"stats", r.stats ? stats::to_json(*r.stats) : nlohmann::json(nullptr)},
          {"commands", commands},
          {"embedding", r.embedding}};
}

inline StyleRecord record_from_json(const nlohmann::json& j) {
  StyleRecord r;
  r.id = j.at("id").get<std::string>();
  r.provenance = provenance_from_string(j.at("provenance").get<std::string>());
  r.reward_source = j.at("reward_source").get<std::string>();
  if (!j.at("stats").is_null()) r.stats = stats::report_from_json(j.at("stats"));
  for (const auto& c : j.at("commands")) {
    r.commands.push_back({c.at("text").get<std::string>(), c.at("timestamp").get<std::string>(),
                          c.at("embedding").get<std::vector<double>>()});
  }
  r.embedding = j.at("embedding").get<std::vector<double>>();
  return r;
}

inline void persist(const StyleDatabase& db, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "records");
  fs::create_directories(dir / "policies");
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& [id, r] : db.records()) {
    ids.push_back(id);
    if (r.policy) {
      write_file_atomic(dir / "policies" / (id + ".f32"), rl::encode_f32le(r.policy->weights));
      write_file_atomic(dir / "policies" / (id + ".json"), rl::policy_sidecar(*r.policy).dump(2) + "\n");
    }
    write_file_atomic(dir / "records" / (id + ".json"), record_to_json(r).dump(2) + "\n");
  }
  std::string audit;
  for (const auto& line : db.audit_log()) audit += line + "\n";
  write_file_atomic(dir / "audit.log", audit);
  const nlohmann::json meta = {{"format", kDatabaseFormat},
                               {"embedding_dim", db.embedding_dim()},
                               {"version", db.version()},
                               {"records", ids},
                               {"retired", db.retired()}};
  write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");
  // Retired files go only after the new meta no longer lists them.
  for (const auto& id : db.retired()) {
    std::error_code ec;
    fs::remove(dir / "records" / (id + ".json"), ec);
    fs::remove(dir / "policies" / (id + ".f32"), ec);
    fs::remove(dir / "policies" / (id + ".json"), ec);
  }
}

inline StyleDatabase load(const std::filesystem::path& dir) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text_file(dir / "meta.json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("database meta '" + (dir / "meta.json").string() + "': " + e.what());
  }
  if (meta.value("format", "") != kDatabaseFormat) throw DataError("database meta: unknown format");
  std::map<std::string, StyleRecord> records;
  std::size_t dim = 0;
  std::uint64_t version = 0;
  std::set<std::string> retired;
  std::vector<std::string> ids;
  try {
    dim = meta.at("embedding_dim").get<std::size_t>();
    version = meta.at("version").get<std::uint64_t>();
    retired = meta.at("retired").get<std::set<std::string>>();
    ids = meta.at("records").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("database meta: ") + e.what());
  }
  for (const auto& id : ids) {
    if (!valid_id(id)) throw DataError("database meta: invalid record id '" + id + "'");
    StyleRecord r;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text_file(dir / "records" / (id + ".json")));
      r = record_from_json(j);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("record '" + id + "': " + e.what());
    } catch (const DataError& e) {
      throw DataError("record '" + id + "': " + e.what());
    }
    if (r.id != id) throw DataError("record '" + id + "': id field says '" + r.id + "'");
    if (!j.at("policy_ref").is_null()) {
      const auto weights = dir / "policies" / (id + ".f32");
      const auto sidecar = dir / "policies" / (id + ".json");
      if (!std::filesystem::exists(weights)) throw DataError("record '" + id + "': missing policy weight file");
      try {
        r.policy = rl::policy_from_parts(nlohmann::json::parse(read_text_file(sidecar)), read_text_file(weights));
      } catch (const nlohmann::json::exception& e) {
        throw DataError("record '" + id + "': policy sidecar: " + e.what());
      } catch (const DataError& e) {
        throw DataError("record '" + id + "': " + e.what());
      }
    }
    try {
      validate_record(r, dim);
    } catch (const Error& e) {
      throw DataError("record '" + id + "': " + e.what());
    }
    records.emplace(id, std::move(r));
  }
  std::vector<std::string> audit;
  if (std::filesystem::exists(dir / "audit.log")) {
    std::istringstream in(read_text_file(dir / "audit.log"));
    for (std::string line; std::getline(in, line);) {
      if (!line.empty()) audit.push_back(line);
    }
  }
  return StyleDatabase::restore(dim, version, std::move(records), std::move(retired), std::move(audit));
}

// Single writer, many readers. Readers hold immutable snapshots; a mutation
// Single writer, many readers. A mutation copies the current state, applies the
// change, persists it when a directory is set, then publishes the new snapshot.
class StyleStore {
 public:
  explicit StyleStore(StyleDatabase db, std::optional<std::filesystem::path> dir = std::nullopt)
      : current_(std::make_shared<const StyleDatabase>(std::move(db))), dir_(std::move(dir)) {}

  std::shared_ptr<const StyleDatabase> snapshot() const {
    std::lock_guard lock(read_mu_);
    return current_;
  }

  template <typename F>
  auto mutate(F&& f) {
    std::lock_guard write(write_mu_);
    auto next = std::make_shared<StyleDatabase>(*snapshot());
    if constexpr (std::is_void_v<decltype(f(*next))>) {
      f(*next);
      publish(std::move(next));
    } else {
      auto result = f(*next);
      publish(std::move(next));
      return result;
    }
  }

  const std::optional<std::filesystem::path>& directory() const { return dir_; }

 private:
  void publish(std::shared_ptr<StyleDatabase> next) {
    if (dir_) persist(*next, *dir_);
    std::lock_guard lock(read_mu_);
    current_ = std::move(next);
  }

  mutable std::mutex read_mu_;
  std::mutex write_mu_;
  std::shared_ptr<const StyleDatabase> current_;
  std::optional<std::filesystem::path> dir_;
};

}  // namespace drivestyle::styledb
