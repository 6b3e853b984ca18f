#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <variant>
#include <vector>

#include "drivestyle/error.hpp"
#include "drivestyle/reward/ast.hpp"
#include "drivestyle/reward/features.hpp"

namespace drivestyle::reward {

struct ParseDiagnostic {
  std::size_t offset = 0;  // byte offset into the source
  std::size_t line = 1;    // 1-based
  std::size_t column = 1;  // 1-based, in bytes
  std::string message;
  std::string token;  // offending token text; empty at end of input

  std::string to_string() const {
    std::string s = std::to_string(line) + ":" + std::to_string(column) + ": " + message;
    if (!token.empty()) s += " near '" + token + "'";
    return s;
  }
};

using ParseResult = std::variant<RewardExpr, ParseDiagnostic>;

class RewardParseError : public Error {
 public:
  explicit RewardParseError(ParseDiagnostic d) : Error("reward parse error at " + d.to_string()), diag_(std::move(d)) {}
  const ParseDiagnostic& diagnostic() const { return diag_; }

 private:
  ParseDiagnostic diag_;
};

namespace detail {

enum class Tok { kNumber, kIdent, kLParen, kRParen, kComma, kPlus, kMinus, kStar, kSlash, kLt, kLe, kGt, kGe, kEnd };

struct Token {
  Tok kind = Tok::kEnd;
  std::size_t offset = 0;
  std::string_view text;
  double number = 0.0;
};

class Parser {
 public:
  explicit Parser(std::string_view src) : src_(src) {}

  ParseResult run() {
    try {
      advance();
      RewardExpr e = parse_expr();
      if (cur_.kind != Tok::kEnd) fail(cur_, "unexpected token after expression");
      if (e.node_count() > kMaxNodes) fail_at(0, "expression exceeds " + std::to_string(kMaxNodes) + " nodes", "");
      if (e.depth() > kMaxDepth) fail_at(0, "expression exceeds depth " + std::to_string(kMaxDepth), "");
      return e;
    } catch (const Abort&) {
      return *diag_;
    }
  }

 private:
  struct Abort {};

  // Guards the recursive descent itself; the AST depth bound is checked after.
  static constexpr std::size_t kMaxNesting = 64;

  [[noreturn]] void fail_at(std::size_t offset, std::string msg, std::string token) {
    ParseDiagnostic d;
    d.offset = offset;
    d.message = std::move(msg);
    d.token = std::move(token);
    for (std::size_t i = 0; i < offset && i < src_.size(); ++i) {
      if (src_[i] == '\n') {
        ++d.line;
        d.column = 1;
      } else {
        ++d.column;
      }
    }
    diag_ = std::move(d);
    throw Abort{};
  }
  [[noreturn]] void fail(const Token& t, std::string msg) { fail_at(t.offset, std::move(msg), std::string(t.text)); }

  void skip_space_and_comments() {
    while (pos_ < src_.size()) {
      const char c = src_[pos_];
      if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        ++pos_;
      } else {
        break;
      }
    }
  }

  void advance() {
    skip_space_and_comments();
    Token t;
    t.offset = pos_;
    if (pos_ >= src_.size()) {
      t.kind = Tok::kEnd;
      cur_ = t;
      return;
    }
    const char c = src_[pos_];
    auto single = [&](Tok k) {
      t.kind = k;
      t.text = src_.substr(pos_, 1);
      ++pos_;
    };
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      lex_number(t);
    } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t end = pos_;
      while (end < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[end])) || src_[end] == '_')) ++end;
      t.kind = Tok::kIdent;
      t.text = src_.substr(pos_, end - pos_);
      pos_ = end;
    } else if (c == '(') {
      single(Tok::kLParen);
    } else if (c == ')') {
      single(Tok::kRParen);
    } else if (c == ',') {
      single(Tok::kComma);
    } else if (c == '+') {
      single(Tok::kPlus);
    } else if (c == '-') {
      single(Tok::kMinus);
    } else if (c == '*') {
      single(Tok::kStar);
    } else if (c == '/') {
      single(Tok::kSlash);
    } else if (c == '<' || c == '>') {
      const bool eq = pos_ + 1 < src_.size() && src_[pos_ + 1] == '=';
      t.kind = c == '<' ? (eq ? Tok::kLe : Tok::kLt) : (eq ? Tok::kGe : Tok::kGt);
      t.text = src_.substr(pos_, eq ? 2 : 1);
      pos_ += eq ? 2 : 1;
    } else {
      t.text = src_.substr(pos_, 1);
      cur_ = t;
      fail(t, "unexpected character");
    }
    cur_ = t;
  }

  void lex_number(Token& t) {
    std::size_t end = pos_;
    std::size_t digits = 0;
    while (end < src_.size() && std::isdigit(static_cast<unsigned char>(src_[end]))) ++end, ++digits;
    if (end < src_.size() && src_[end] == '.') {
      ++end;
      while (end < src_.size() && std::isdigit(static_cast<unsigned char>(src_[end]))) ++end, ++digits;
    }
    if (digits > 0 && end < src_.size() && (src_[end] == 'e' || src_[end] == 'E')) {
      std::size_t e = end + 1;
      if (e < src_.size() && (src_[e] == '+' || src_[e] == '-')) ++e;
      std::size_t exp_digits = 0;
      while (e < src_.size() && std::isdigit(static_cast<unsigned char>(src_[e]))) ++e, ++exp_digits;
      if (exp_digits > 0) end = e;
    }
    t.kind = Tok::kNumber;
    t.text = src_.substr(pos_, end - pos_);
    if (digits == 0) {
      pos_ = end;
      fail(t, "malformed number");
    }
    auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.number);
    if (ec != std::errc{} || ptr != t.text.data() + t.text.size() || !std::isfinite(t.number)) {
      pos_ = end;
      fail(t, "number out of range");
    }
    pos_ = end;
  }

  void expect(Tok k, const char* what) {
    if (cur_.kind != k) fail(cur_, std::string("expected ") + what);
    advance();
  }

  struct NestGuard {
    Parser& p;
    explicit NestGuard(Parser& parser) : p(parser) {
      if (++p.nesting_ > kMaxNesting) p.fail(p.cur_, "expression nested too deeply");
    }
    ~NestGuard() { --p.nesting_; }
  };

  RewardExpr parse_expr() {
    NestGuard guard(*this);
    RewardExpr lhs = parse_term();
    while (cur_.kind == Tok::kPlus || cur_.kind == Tok::kMinus) {
      const NodeKind k = cur_.kind == Tok::kPlus ? NodeKind::kAdd : NodeKind::kSub;
      advance();
      lhs = ast::binary(k, lhs, parse_term());
      check_size(lhs);
    }
    return lhs;
  }

  RewardExpr parse_term() {
    RewardExpr lhs = parse_factor();
    while (cur_.kind == Tok::kStar || cur_.kind == Tok::kSlash) {
      const NodeKind k = cur_.kind == Tok::kStar ? NodeKind::kMul : NodeKind::kDiv;
      advance();
      lhs = ast::binary(k, lhs, parse_factor());
      check_size(lhs);
    }
    return lhs;
  }

  // Rejects runaway inputs early instead of building huge trees.
  void check_size(const RewardExpr& e) {
    if (++built_ > 4 * kMaxNodes) fail(cur_, "expression exceeds " + std::to_string(kMaxNodes) + " nodes");
    (void)e;
  }

  RewardExpr parse_factor() {
    NestGuard guard(*this);
    const Token t = cur_;
    switch (t.kind) {
      case Tok::kNumber:
        advance();
        return ast::constant(t.number);
      case Tok::kMinus: {
        advance();
        // A minus directly before a literal folds into a negative constant, so
        // every constant has exactly one spelling.
        if (cur_.kind == Tok::kNumber) {
          const double v = cur_.number;
          advance();
          return ast::constant(-v);
        }
        return ast::unary(NodeKind::kNeg, parse_factor());
      }
      case Tok::kLParen: {
        advance();
        RewardExpr e = parse_expr();
        expect(Tok::kRParen, "')'");
        return e;
      }
      case Tok::kIdent: {
        advance();
        if (cur_.kind == Tok::kLParen) return parse_call(t);
        if (auto f = feature_from_name(t.text)) return ast::feature(*f);
        fail(t, "unknown feature");
      }
      default: fail(t, "expected expression");
    }
  }

  RewardExpr parse_call(const Token& name) {
    advance();  // '('
    const std::string_view fn = name.text;
    if (fn == "if") {
      RewardExpr lhs = parse_expr();
      CmpOp op;
      switch (cur_.kind) {
        case Tok::kLt: op = CmpOp::kLt; break;
        case Tok::kLe: op = CmpOp::kLe; break;
        case Tok::kGt: op = CmpOp::kGt; break;
        case Tok::kGe: op = CmpOp::kGe; break;
        default: fail(cur_, "expected comparison operator");
      }
      advance();
      RewardExpr rhs = parse_expr();
      expect(Tok::kComma, "','");
      RewardExpr then_e = parse_expr();
      expect(Tok::kComma, "','");
      RewardExpr else_e = parse_expr();
      expect(Tok::kRParen, "')'");
      return ast::if_then_else(lhs, op, rhs, then_e, else_e);
    }

    std::vector<RewardExpr> args;
    std::vector<Token> arg_tokens;
    if (cur_.kind != Tok::kRParen) {
      while (true) {
        arg_tokens.push_back(cur_);
        args.push_back(parse_expr());
        if (cur_.kind != Tok::kComma) break;
        advance();
      }
    }
    expect(Tok::kRParen, "')' or ','");

    auto want = [&](std::size_t n) {
      if (args.size() != n) {
        fail(name, "function '" + std::string(fn) + "' takes " + std::to_string(n) + " argument" +
                       (n == 1 ? "" : "s") + ", got " + std::to_string(args.size()));
      }
    };
    if (fn == "abs") {
      want(1);
      return ast::unary(NodeKind::kAbs, args[0]);
    }
    if (fn == "exp") {
      want(1);
      return ast::unary(NodeKind::kExp, args[0]);
    }
    if (fn == "tanh") {
      want(1);
      return ast::unary(NodeKind::kTanh, args[0]);
    }
    if (fn == "sqrt") {
      want(1);
      return ast::unary(NodeKind::kSqrtAbs, args[0]);
    }
    if (fn == "min") {
      want(2);
      return ast::binary(NodeKind::kMin, args[0], args[1]);
    }
    if (fn == "max") {
      want(2);
      return ast::binary(NodeKind::kMax, args[0], args[1]);
    }
    if (fn == "clip") {
      want(3);
      return ast::clip(args[0], args[1], args[2]);
    }
    if (fn == "pow") {
      want(2);
      if (args[1].root().kind != NodeKind::kConst) fail(arg_tokens[1], "pow exponent must be a numeric constant");
      return ast::pow(args[0], args[1].root().value);
    }
    fail(name, "unknown function");
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  Token cur_;
  std::size_t nesting_ = 0;
  std::size_t built_ = 0;
  std::optional<ParseDiagnostic> diag_;
};

}  // namespace detail

// Parses reward source text. `#` starts a comment running to end of line.
// Never throws on malformed input: errors come back as a diagnostic.
inline ParseResult parse(std::string_view source) { return detail::Parser(source).run(); }

inline RewardExpr parse_or_throw(std::string_view source) {
  auto r = parse(source);
  if (auto* d = std::get_if<ParseDiagnostic>(&r)) throw RewardParseError(*d);
  return std::get<RewardExpr>(std::move(r));
}

}  // namespace drivestyle::reward
