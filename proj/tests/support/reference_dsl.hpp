#pragma once

// Reference implementation of the reward language used as a test oracle.
// It shares no code with the library: its own tree type, its own fully
// parenthesised printer and its own interpreter written from the language
// rules.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "drivestyle/reward/ast.hpp"
#include "drivestyle/reward/features.hpp"

namespace reftest {

enum class Op { Num, Var, Neg, Abs, Exp, Tanh, Sqrt, Add, Sub, Mul, Div, Min, Max, Pow, Clip, If };

struct Ref {
  Op op = Op::Num;
  double num = 0.0;  // literal, or exponent for Pow
  int var = 0;       // index into the feature name table
  int rel = 0;       // 0 <, 1 <=, 2 >, 3 >=
  std::vector<Ref> kids;
};

inline const char* const kVarNames[] = {"speed", "accel", "jerk", "gap", "rel_speed",
                                        "thw",   "ttc",   "lead_speed", "collided"};
inline constexpr int kVarCount = 9;
inline const char* const kRelNames[] = {"<", "<=", ">", ">="};

inline std::string lit(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Every node wrapped in parentheses; negative literals as "(-x)".
inline std::string print(const Ref& r) {
  auto k = [&](std::size_t i) { return print(r.kids[i]); };
  switch (r.op) {
    case Op::Num: return std::signbit(r.num) ? "(-" + lit(-r.num) + ")" : lit(r.num);
    case Op::Var: return kVarNames[r.var];
    case Op::Neg: return "(-(" + k(0) + "))";
    case Op::Abs: return "abs(" + k(0) + ")";
    case Op::Exp: return "exp(" + k(0) + ")";
    case Op::Tanh: return "tanh(" + k(0) + ")";
    case Op::Sqrt: return "sqrt(" + k(0) + ")";
    case Op::Add: return "(" + k(0) + " + " + k(1) + ")";
    case Op::Sub: return "(" + k(0) + " - " + k(1) + ")";
    case Op::Mul: return "(" + k(0) + " * " + k(1) + ")";
    case Op::Div: return "(" + k(0) + " / " + k(1) + ")";
    case Op::Min: return "min(" + k(0) + ", " + k(1) + ")";
    case Op::Max: return "max(" + k(0) + ", " + k(1) + ")";
    case Op::Pow: return "pow(" + k(0) + ", " + (std::signbit(r.num) ? "-" + lit(-r.num) : lit(r.num)) + ")";
    case Op::Clip: return "clip(" + k(0) + ", " + k(1) + ", " + k(2) + ")";
    case Op::If: return "if(" + k(0) + " " + kRelNames[r.rel] + " " + k(1) + ", " + k(2) + ", " + k(3) + ")";
  }
  return "";
}

// ---- interpreter ----

inline constexpr double kBig = 1e300;
inline constexpr double kTiny = 1e-6;

inline double sat(double v) {
  if (v > kBig) return kBig;
  if (v < -kBig) return -kBig;
  return v;
}

struct Env {
  double v[kVarCount] = {};
};

inline double eval(const Ref& r, const Env& env) {
  auto k = [&](std::size_t i) { return eval(r.kids[i], env); };
  switch (r.op) {
    case Op::Num: return r.num;
    case Op::Var: return env.v[r.var];
    case Op::Neg: return -k(0);
    case Op::Abs: return std::fabs(k(0));
    case Op::Exp: {
      double x = k(0);
      if (x > 700.0) x = 700.0;
      return sat(std::exp(x));
    }
    case Op::Tanh: return std::tanh(k(0));
    case Op::Sqrt: return std::sqrt(std::fabs(k(0)));
    case Op::Add: return sat(k(0) + k(1));
    case Op::Sub: return sat(k(0) - k(1));
    case Op::Mul: return sat(k(0) * k(1));
    case Op::Div: {
      const double n = k(0);
      double d = k(1);
      if (d > -kTiny && d < kTiny) d = d < 0.0 ? -kTiny : kTiny;
      return sat(n / d);
    }
    case Op::Min: {
      const double a = k(0), b = k(1);
      return b < a ? b : a;
    }
    case Op::Max: {
      const double a = k(0), b = k(1);
      return a < b ? b : a;
    }
    case Op::Pow: {
      double base = k(0);
      const double e = r.num;
      if (e != std::trunc(e)) base = std::fabs(base);
      if (e < 0.0 && base > -kTiny && base < kTiny) base = base < 0.0 ? -kTiny : kTiny;
      return sat(std::pow(base, e));
    }
    case Op::Clip: {
      const double x = k(0), lo = k(1), hi = k(2);
      const double up = x < lo ? lo : x;
      return hi < up ? hi : up;
    }
    case Op::If: {
      const double a = k(0), b = k(1);
      bool t = false;
      switch (r.rel) {
        case 0: t = a < b; break;
        case 1: t = a <= b; break;
        case 2: t = a > b; break;
        default: t = a >= b; break;
      }
      return t ? k(2) : k(3);
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

inline drivestyle::reward::FeatureVector to_features(const Env& env) {
  drivestyle::reward::FeatureVector f;
  f.speed = env.v[0];
  f.accel = env.v[1];
  f.jerk = env.v[2];
  f.gap = env.v[3];
  f.rel_speed = env.v[4];
  f.thw = env.v[5];
  f.ttc = env.v[6];
  f.lead_speed = env.v[7];
  f.collided = env.v[8];
  return f;
}

// ---- conversion to the library tree (for structural comparisons) ----

inline drivestyle::reward::RewardExpr to_library(const Ref& r) {
  namespace ast = drivestyle::reward::ast;
  using drivestyle::reward::CmpOp;
  using drivestyle::reward::NodeKind;
  auto k = [&](std::size_t i) { return to_library(r.kids[i]); };
  switch (r.op) {
    case Op::Num: return ast::constant(r.num);
    case Op::Var: return ast::feature(static_cast<drivestyle::reward::Feature>(r.var));
    case Op::Neg: return ast::unary(NodeKind::kNeg, k(0));
    case Op::Abs: return ast::unary(NodeKind::kAbs, k(0));
    case Op::Exp: return ast::unary(NodeKind::kExp, k(0));
    case Op::Tanh: return ast::unary(NodeKind::kTanh, k(0));
    case Op::Sqrt: return ast::unary(NodeKind::kSqrtAbs, k(0));
    case Op::Add: return ast::binary(NodeKind::kAdd, k(0), k(1));
    case Op::Sub: return ast::binary(NodeKind::kSub, k(0), k(1));
    case Op::Mul: return ast::binary(NodeKind::kMul, k(0), k(1));
    case Op::Div: return ast::binary(NodeKind::kDiv, k(0), k(1));
    case Op::Min: return ast::binary(NodeKind::kMin, k(0), k(1));
    case Op::Max: return ast::binary(NodeKind::kMax, k(0), k(1));
    case Op::Pow: return ast::pow(k(0), r.num);
    case Op::Clip: return ast::clip(k(0), k(1), k(2));
    case Op::If: {
      static constexpr CmpOp ops[] = {CmpOp::kLt, CmpOp::kLe, CmpOp::kGt, CmpOp::kGe};
      return ast::if_then_else(k(0), ops[r.rel], k(1), k(2), k(3));
    }
  }
  return ast::constant(0.0);
}

// ---- random generation ----

class Generator {
 public:
  explicit Generator(std::uint64_t seed) : rng_(seed) {}

  Ref expr(int max_depth) {
    budget_ = 200;
    return node(max_depth);
  }

  double literal() {
    switch (pick(8)) {
      case 0: return static_cast<double>(pick(11));
      case 1: return -static_cast<double>(pick(11));
      case 2: return uniform(-10.0, 10.0);
      case 3: return uniform(-1.0, 1.0);
      case 4: return std::ldexp(uniform(-1.0, 1.0), static_cast<int>(pick(60)) - 30);
      case 5: return 0.5 * static_cast<double>(static_cast<int>(pick(9)) - 4);
      case 6: return uniform(-1e-6, 1e-6);
      default: return uniform(-1000.0, 1000.0);
    }
  }

  double exponent() {
    switch (pick(4)) {
      case 0: return static_cast<double>(static_cast<int>(pick(7)) - 3);
      case 1: return 0.5 * static_cast<double>(static_cast<int>(pick(9)) - 4);
      case 2: return uniform(-3.0, 3.0);
      default: return static_cast<double>(pick(4));
    }
  }

  // Feature values biased towards the guard boundaries.
  Env features() {
    Env env;
    for (int i = 0; i < kVarCount; ++i) {
      switch (pick(10)) {
        case 0: env.v[i] = 0.0; break;
        case 1: env.v[i] = uniform(-1e-6, 1e-6); break;
        case 2: env.v[i] = 1e6; break;
        case 3: env.v[i] = uniform(-1e3, 1e3); break;
        case 4: env.v[i] = static_cast<double>(static_cast<int>(pick(7)) - 3); break;
        default: env.v[i] = uniform(-40.0, 40.0); break;
      }
    }
    env.v[8] = pick(2) ? 1.0 : 0.0;
    return env;
  }

  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

 private:
  Ref leaf() {
    Ref r;
    if (pick(2)) {
      r.op = Op::Num;
      r.num = literal();
    } else {
      r.op = Op::Var;
      r.var = static_cast<int>(pick(kVarCount));
    }
    return r;
  }

  Ref node(int depth) {
    if (depth <= 1 || budget_ <= 0 || pick(4) == 0) return leaf();
    static constexpr Op inner[] = {Op::Neg, Op::Abs, Op::Exp, Op::Tanh, Op::Sqrt, Op::Add, Op::Sub, Op::Mul,
                                   Op::Div, Op::Min, Op::Max, Op::Pow, Op::Clip, Op::If};
    Ref r;
    r.op = inner[pick(std::size(inner))];
    std::size_t n = 0;
    switch (r.op) {
      case Op::Neg:
      case Op::Abs:
      case Op::Exp:
      case Op::Tanh:
      case Op::Sqrt:
      case Op::Pow: n = 1; break;
      case Op::Clip: n = 3; break;
      case Op::If: n = 4; break;
      default: n = 2; break;
    }
    budget_ -= static_cast<int>(n);
    if (r.op == Op::Pow) r.num = exponent();
    if (r.op == Op::If) r.rel = static_cast<int>(pick(4));
    for (std::size_t i = 0; i < n; ++i) r.kids.push_back(node(depth - 1));
    return r;
  }

  std::mt19937_64 rng_;
  int budget_ = 0;
};

inline bool close_relative(double a, double b, double tol) {
  if (a == b) return true;
  if (std::isnan(a) || std::isnan(b)) return false;
  return std::fabs(a - b) <= tol * std::max(std::fabs(a), std::fabs(b));
}

}  // namespace reftest
