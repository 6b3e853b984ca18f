#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <set>
#include <string_view>
#include <utility>
#include <vector>

#include "drivestyle/reward/features.hpp"

namespace drivestyle::reward {

enum class NodeKind {
  kConst,
  kFeature,
  kNeg,
  kAbs,
  kExp,
  kTanh,
  kSqrtAbs,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMin,
  kMax,
  kPow,   // children: base; exponent stored in `value`
  kClip,  // children: x, lo, hi
  kIf,    // children: lhs, rhs, then, else; comparison in `cmp`
};

enum class CmpOp { kLt, kLe, kGt, kGe };

inline constexpr std::string_view cmp_symbol(CmpOp op) {
  switch (op) {
    case CmpOp::kLt: return "<";
    case CmpOp::kLe: return "<=";
    case CmpOp::kGt: return ">";
    case CmpOp::kGe: return ">=";
  }
  return "<";
}

inline constexpr std::size_t kMaxDepth = 24;
inline constexpr std::size_t kMaxNodes = 512;

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  NodeKind kind = NodeKind::kConst;
  double value = 0.0;
  Feature feature = Feature::kSpeed;
  CmpOp cmp = CmpOp::kLt;
  std::vector<NodePtr> children;
};

inline std::size_t arity(NodeKind k) {
  switch (k) {
    case NodeKind::kConst:
    case NodeKind::kFeature: return 0;
    case NodeKind::kNeg:
    case NodeKind::kAbs:
    case NodeKind::kExp:
    case NodeKind::kTanh:
    case NodeKind::kSqrtAbs:
    case NodeKind::kPow: return 1;
    case NodeKind::kAdd:
    case NodeKind::kSub:
    case NodeKind::kMul:
    case NodeKind::kDiv:
    case NodeKind::kMin:
    case NodeKind::kMax: return 2;
    case NodeKind::kClip: return 3;
    case NodeKind::kIf: return 4;
  }
  return 0;
}

// Immutable reward expression tree. Copies share nodes, so values are cheap to
// pass around and safe to read from many threads.
class RewardExpr {
 public:
  RewardExpr() : root_(std::make_shared<Node>()) {}
  explicit RewardExpr(NodePtr root) : root_(std::move(root)) {}

  const Node& root() const { return *root_; }
  const NodePtr& root_ptr() const { return root_; }

  std::size_t depth() const { return depth_of(*root_); }
  std::size_t node_count() const { return count_of(*root_); }

  std::set<Feature> features() const {
    std::set<Feature> out;
    collect(*root_, out);
    return out;
  }

  // Structural equality (constants compared exactly).
  friend bool operator==(const RewardExpr& a, const RewardExpr& b) { return same(*a.root_, *b.root_); }

 private:
  static std::size_t depth_of(const Node& n) {
    std::size_t d = 0;
    for (const auto& c : n.children) d = std::max(d, depth_of(*c));
    return d + 1;
  }
  static std::size_t count_of(const Node& n) {
    std::size_t c = 1;
    for (const auto& ch : n.children) c += count_of(*ch);
    return c;
  }
  static void collect(const Node& n, std::set<Feature>& out) {
    if (n.kind == NodeKind::kFeature) out.insert(n.feature);
    for (const auto& c : n.children) collect(*c, out);
  }
  static bool same(const Node& a, const Node& b) {
    if (a.kind != b.kind || a.children.size() != b.children.size()) return false;
    switch (a.kind) {
      case NodeKind::kConst:
      case NodeKind::kPow:
        if (a.value != b.value) return false;
        break;
      case NodeKind::kFeature:
        if (a.feature != b.feature) return false;
        break;
      case NodeKind::kIf:
        if (a.cmp != b.cmp) return false;
        break;
      default: break;
    }
    for (std::size_t i = 0; i < a.children.size(); ++i) {
      if (!same(*a.children[i], *b.children[i])) return false;
    }
    return true;
  }

  NodePtr root_;
};

// Construction helpers.
namespace ast {

inline RewardExpr constant(double v) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::kConst;
  n->value = v;
  return RewardExpr(std::move(n));
}

inline RewardExpr feature(Feature f) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::kFeature;
  n->feature = f;
  return RewardExpr(std::move(n));
}

inline RewardExpr make(NodeKind kind, std::initializer_list<RewardExpr> children, double value = 0.0,
                       CmpOp cmp = CmpOp::kLt) {
  auto n = std::make_shared<Node>();
  n->kind = kind;
  n->value = value;
  n->cmp = cmp;
  for (const auto& c : children) n->children.push_back(c.root_ptr());
  return RewardExpr(std::move(n));
}

inline RewardExpr unary(NodeKind kind, const RewardExpr& a) { return make(kind, {a}); }
inline RewardExpr binary(NodeKind kind, const RewardExpr& a, const RewardExpr& b) { return make(kind, {a, b}); }
inline RewardExpr pow(const RewardExpr& base, double exponent) { return make(NodeKind::kPow, {base}, exponent); }
inline RewardExpr clip(const RewardExpr& x, const RewardExpr& lo, const RewardExpr& hi) {
  return make(NodeKind::kClip, {x, lo, hi});
}
inline RewardExpr if_then_else(const RewardExpr& lhs, CmpOp op, const RewardExpr& rhs, const RewardExpr& then_e,
                               const RewardExpr& else_e) {
  return make(NodeKind::kIf, {lhs, rhs, then_e, else_e}, 0.0, op);
}

}  // namespace ast

}  // namespace drivestyle::reward
