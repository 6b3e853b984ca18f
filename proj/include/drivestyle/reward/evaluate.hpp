#pragma once

#include <algorithm>
#include <cmath>

#include "drivestyle/reward/ast.hpp"
#include "drivestyle/reward/features.hpp"

namespace drivestyle::reward {

// Evaluation is total: every intermediate result is kept finite.
//  - division by |d| < 1e-6 uses sign(d) * 1e-6 (sign(0) = +1)
//  - exp arguments are capped at 700
//  - pow with a non-integer exponent uses |base|; a zero base under a
//    negative exponent is lifted to 1e-6
//  - arithmetic results saturate at +-1e300
inline constexpr double kDivisionGuard = 1e-6;
inline constexpr double kExpArgCap = 700.0;
inline constexpr double kSaturation = 1e300;

inline double saturate(double v) { return std::clamp(v, -kSaturation, kSaturation); }

inline double guarded_divide(double num, double den) {
  if (std::abs(den) < kDivisionGuard) den = den >= 0.0 ? kDivisionGuard : -kDivisionGuard;
  return saturate(num / den);
}

inline double guarded_pow(double base, double exponent) {
  const bool integral = std::floor(exponent) == exponent;
  if (!integral) base = std::abs(base);
  if (exponent < 0.0 && std::abs(base) < kDivisionGuard) base = base >= 0.0 ? kDivisionGuard : -kDivisionGuard;
  return saturate(std::pow(base, exponent));
}

inline bool compare(CmpOp op, double a, double b) {
  switch (op) {
    case CmpOp::kLt: return a < b;
    case CmpOp::kLe: return a <= b;
    case CmpOp::kGt: return a > b;
    case CmpOp::kGe: return a >= b;
  }
  return false;
}

inline double evaluate_node(const Node& n, const FeatureVector& f) {
  auto arg = [&](std::size_t i) { return evaluate_node(*n.children[i], f); };
  switch (n.kind) {
    case NodeKind::kConst: return n.value;
    case NodeKind::kFeature: return f.get(n.feature);
    case NodeKind::kNeg: return -arg(0);
    case NodeKind::kAbs: return std::abs(arg(0));
    case NodeKind::kExp: return saturate(std::exp(std::min(arg(0), kExpArgCap)));
    case NodeKind::kTanh: return std::tanh(arg(0));
    case NodeKind::kSqrtAbs: return std::sqrt(std::abs(arg(0)));
    case NodeKind::kAdd: return saturate(arg(0) + arg(1));
    case NodeKind::kSub: return saturate(arg(0) - arg(1));
    case NodeKind::kMul: return saturate(arg(0) * arg(1));
    case NodeKind::kDiv: return guarded_divide(arg(0), arg(1));
    case NodeKind::kMin: return std::min(arg(0), arg(1));
    case NodeKind::kMax: return std::max(arg(0), arg(1));
    case NodeKind::kPow: return guarded_pow(arg(0), n.value);
    case NodeKind::kClip: {
      const double x = arg(0);
      return std::min(std::max(x, arg(1)), arg(2));
    }
    case NodeKind::kIf: return compare(n.cmp, arg(0), arg(1)) ? arg(2) : arg(3);
  }
  return 0.0;
}

inline double evaluate(const RewardExpr& e, const FeatureVector& f) { return evaluate_node(e.root(), f); }

}  // namespace drivestyle::reward
