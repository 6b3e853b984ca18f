#pragma once

#include <string>

#include "drivestyle/numeric.hpp"
#include "drivestyle/reward/ast.hpp"

namespace drivestyle::reward {

namespace detail {

inline int precedence(const Node& n) {
  switch (n.kind) {
    case NodeKind::kAdd:
    case NodeKind::kSub: return 1;
    case NodeKind::kMul:
    case NodeKind::kDiv: return 2;
    default: return 3;
  }
}

inline const char* call_name(NodeKind k) {
  switch (k) {
    case NodeKind::kAbs: return "abs";
    case NodeKind::kExp: return "exp";
    case NodeKind::kTanh: return "tanh";
    case NodeKind::kSqrtAbs: return "sqrt";
    case NodeKind::kMin: return "min";
    case NodeKind::kMax: return "max";
    case NodeKind::kPow: return "pow";
    case NodeKind::kClip: return "clip";
    case NodeKind::kIf: return "if";
    default: return "?";
  }
}

inline void print_node(const Node& n, std::string& out);

inline void print_wrapped(const Node& n, bool wrap, std::string& out) {
  if (wrap) out += '(';
  print_node(n, out);
  if (wrap) out += ')';
}

inline void print_node(const Node& n, std::string& out) {
  switch (n.kind) {
    case NodeKind::kConst:
      out += format_double(n.value);
      return;
    case NodeKind::kFeature:
      out += feature_name(n.feature);
      return;
    case NodeKind::kNeg: {
      // "-(2)" keeps neg(const) distinct from the folded literal "-2".
      const Node& c = *n.children[0];
      out += '-';
      print_wrapped(c, precedence(c) < 3 || c.kind == NodeKind::kConst, out);
      return;
    }
    case NodeKind::kAdd:
    case NodeKind::kSub:
    case NodeKind::kMul:
    case NodeKind::kDiv: {
      const int p = precedence(n);
      const Node& lhs = *n.children[0];
      const Node& rhs = *n.children[1];
      print_wrapped(lhs, precedence(lhs) < p, out);
      out += n.kind == NodeKind::kAdd ? " + " : n.kind == NodeKind::kSub ? " - " : n.kind == NodeKind::kMul ? " * " : " / ";
      // The grammar is left-associative, so an equal-precedence right operand
      // must keep its parentheses.
      print_wrapped(rhs, precedence(rhs) <= p, out);
      return;
    }
    case NodeKind::kIf:
      out += "if(";
      print_node(*n.children[0], out);
      out += ' ';
      out += cmp_symbol(n.cmp);
      out += ' ';
      print_node(*n.children[1], out);
      out += ", ";
      print_node(*n.children[2], out);
      out += ", ";
      print_node(*n.children[3], out);
      out += ')';
      return;
    case NodeKind::kPow:
      out += "pow(";
      print_node(*n.children[0], out);
      out += ", ";
      out += format_double(n.value);
      out += ')';
      return;
    default: {
      out += call_name(n.kind);
      out += '(';
      for (std::size_t i = 0; i < n.children.size(); ++i) {
        if (i) out += ", ";
        print_node(*n.children[i], out);
      }
      out += ')';
      return;
    }
  }
}

}  // namespace detail

// Canonical source text; parse(pretty_print(e)) == e.
inline std::string pretty_print(const RewardExpr& e) {
  std::string out;
  detail::print_node(e.root(), out);
  return out;
}

}  // namespace drivestyle::reward
