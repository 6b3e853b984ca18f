#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "drivestyle/error.hpp"
#include "drivestyle/reward/parser.hpp"

namespace drivestyle::reward {

// A reward program loaded from a `.rwd` source file. Header comments of the
// form `# key: value` are collected as metadata (id, provenance, summary).
struct RewardSource {
  std::string id;
  std::string text;
  std::map<std::string, std::string> metadata;
  RewardExpr expr;
};

inline std::map<std::string, std::string> read_metadata(const std::string& text) {
  std::map<std::string, std::string> meta;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash == std::string::npos) continue;
    const std::string body = line.substr(hash + 1);
    const auto colon = body.find(':');
    if (colon == std::string::npos) continue;
    auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    const std::string key = strip(body.substr(0, colon));
    if (key.empty() || key.find(' ') != std::string::npos) continue;
    meta.emplace(key, strip(body.substr(colon + 1)));
  }
  return meta;
}

inline RewardSource load_reward_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open reward file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  RewardSource src;
  src.text = buf.str();
  src.metadata = read_metadata(src.text);
  src.id = src.metadata.count("id") ? src.metadata.at("id") : path.stem().string();
  auto parsed = parse(src.text);
  if (auto* d = std::get_if<ParseDiagnostic>(&parsed)) {
    throw DataError("reward file '" + path.string() + "': " + d->to_string());
  }
  src.expr = std::get<RewardExpr>(std::move(parsed));
  return src;
}

// All `*.rwd` files of a directory, sorted by file name.
inline std::vector<RewardSource> load_reward_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("reward corpus directory '" + dir.string() + "' not found");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".rwd") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<RewardSource> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_reward_file(f));
  return out;
}

}  // namespace drivestyle::reward
