#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drivestyle/error.hpp"
#include "drivestyle/numeric.hpp"

namespace drivestyle::llm {

inline constexpr std::size_t kHashedEmbeddingDim = 256;

// Lowercases, maps punctuation to spaces and collapses runs of whitespace.
inline std::string normalize_text(std::string_view text) {
  std::string out;
  bool space = true;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      out.push_back(static_cast<char>(std::tolower(c)));
      space = false;
    } else if (!space) {
      out.push_back(' ');
      space = true;
    }
  }
  if (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline void normalize_unit(std::vector<double>& v) {
  const double n = l2_norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) throw InvalidArgument("cannot normalize a zero or non-finite vector");
  for (double& x : v) x /= n;
}

// Offline embedding: counts of hashed character trigrams of the normalized
// text padded with one space on each side, scaled to unit length.
inline std::vector<double> hashed_trigram_embedding(std::string_view text, std::size_t dim = kHashedEmbeddingDim) {
  if (dim == 0) throw InvalidArgument("embedding dimension must be positive");
  const std::string norm = normalize_text(text);
  if (norm.empty()) throw InvalidArgument("cannot embed empty text");
  const std::string padded = " " + norm + " ";
  std::vector<double> v(dim, 0.0);
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    v[fnv1a64(std::string_view(padded).substr(i, 3)) % dim] += 1.0;
  }
  normalize_unit(v);
  return v;
}

// Cosine similarity clamped to [-1, 1]. For identical vectors the result is
// exactly 1: sqrt(s * s) == s for finite s.
inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("embedding dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (!(na > 0.0) || !(nb > 0.0)) return 0.0;
  const double c = dot / std::sqrt(na * nb);
  return std::clamp(c, -1.0, 1.0);
}

}  // namespace drivestyle::llm
