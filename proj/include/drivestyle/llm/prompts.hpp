#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "drivestyle/error.hpp"
#include "drivestyle/fsutil.hpp"

namespace drivestyle::llm {

struct PromptTemplate {
  std::string name;
  std::string version;
  std::string text;
};

// Versioned templates `<name>.<version>.txt` with `{{placeholder}}` slots.
// When several versions of a name exist the lexicographically greatest wins.
class PromptLibrary {
 public:
  static PromptLibrary load(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw DataError("prompt directory '" + dir.string() + "' not found");
    PromptLibrary lib;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
      const std::string stem = entry.path().stem().string();
      const auto dot = stem.rfind('.');
      if (dot == std::string::npos || dot == 0) continue;
      PromptTemplate t{stem.substr(0, dot), stem.substr(dot + 1), read_text_file(entry.path())};
      auto it = lib.templates_.find(t.name);
      if (it == lib.templates_.end() || it->second.version < t.version) lib.templates_[t.name] = std::move(t);
    }
    return lib;
  }

  void add(PromptTemplate t) { templates_[t.name] = std::move(t); }

  const PromptTemplate& get(const std::string& name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) throw DataError("no prompt template '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return templates_.count(name) != 0; }

  // Every placeholder in the template must be supplied.
  std::string render(const std::string& name, const std::map<std::string, std::string>& vars) const {
    const std::string& text = get(name).text;
    std::string out;
    std::size_t pos = 0;
    while (true) {
      const auto open = text.find("{{", pos);
      if (open == std::string::npos) break;
      const auto close = text.find("}}", open + 2);
      if (close == std::string::npos) throw DataError("prompt '" + name + "': unterminated placeholder");
      const std::string key = text.substr(open + 2, close - open - 2);
      auto it = vars.find(key);
      if (it == vars.end()) throw InvalidArgument("prompt '" + name + "': no value for '" + key + "'");
      out.append(text, pos, open - pos);
      out += it->second;
      pos = close + 2;
    }
    out.append(text, pos, std::string::npos);
    return out;
  }

 private:
  std::map<std::string, PromptTemplate> templates_;
};

}  // namespace drivestyle::llm
