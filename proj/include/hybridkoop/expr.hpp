#pragma once

// Scalar expression language used for vector fields, guard level sets, resets
// and analytic observables.
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := '-' unary | power
//   power   := primary ('^' unary)?          (right-associative)
//   primary := number | x<k> | func '(' expr (',' expr)* ')' | '(' expr ')'
//
// Functions: exp ln sin cos sqrt abs (unary), atan2 pow (binary).

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "hybridkoop/error.hpp"
#include "hybridkoop/linalg.hpp"

namespace hybridkoop {

enum class BinaryOp { add, sub, mul, div, pow };
enum class Function { exp, ln, sin, cos, sqrt, abs, atan2, pow };

struct ExprNode {
  enum class Kind { number, variable, negate, binary, call };

  Kind kind = Kind::number;
  double number = 0.0;
  int variable = 0;  // 1-based
  BinaryOp op = BinaryOp::add;
  Function function = Function::exp;
  std::vector<std::shared_ptr<const ExprNode>> children;
  std::size_t offset = 0;  // byte offset of the originating token
};

/// Immutable expression tree. Copies share structure.
class ExprTree {
 public:
  ExprTree();  // the constant 0

  static ExprTree constant(double value);
  static ExprTree variable(int index);
  static ExprTree negate(const ExprTree& operand);
  static ExprTree binary(BinaryOp op, const ExprTree& lhs, const ExprTree& rhs);
  static ExprTree call(Function fn, std::vector<ExprTree> args);

  const ExprNode& root() const { return *root_; }

  /// Largest variable index referenced (0 for closed expressions).
  int max_variable() const;

  /// Structural equality; source offsets are ignored.
  friend bool operator==(const ExprTree& a, const ExprTree& b);

  /// Replaces every x<k> by vars[k-1].
  friend ExprTree substitute(const ExprTree& e, const std::vector<ExprTree>& vars);

 private:
  explicit ExprTree(std::shared_ptr<const ExprNode> root) : root_(std::move(root)) {}
  friend class ExprParser;

  std::shared_ptr<const ExprNode> root_;
};

class ParseError : public Error {
 public:
  ParseError(ErrorCode code, const std::string& what, std::size_t offset,
             std::vector<std::string> expected = {})
      : Error(code, what, static_cast<double>(offset)),
        offset_(offset),
        expected_(std::move(expected)) {}

  std::size_t offset() const noexcept { return offset_; }
  const std::vector<std::string>& expected() const noexcept { return expected_; }

 private:
  std::size_t offset_;
  std::vector<std::string> expected_;
};

ExprTree parse(std::string_view text);

ExprTree substitute(const ExprTree& e, const std::vector<ExprTree>& vars);

/// Parses and rejects variables beyond x<max_vars>.
ExprTree parse(std::string_view text, int max_vars);

/// Minimal-parenthesis rendering; parse(print(e)) == e for trees whose
/// literals are non-negative and finite (all parser output qualifies).
std::string print(const ExprTree& e);

/// Throws Error(domain) with the offending node's source offset as value().
double eval(const ExprTree& e, const Vec& x);

/// order-th derivative of t -> e(x + t v) at t = 0 (order 1 or 2), central
/// differences with one Richardson extrapolation.
double directional_derivative(const ExprTree& e, const Vec& x, const Vec& v, int order);

struct DirectionalJet {
  double value = 0.0;
  std::vector<double> first;  // one per direction
  Mat second;                 // mixed second derivatives, symmetric
};

DirectionalJet directional_jet(const ExprTree& e, const Vec& x, const std::vector<Vec>& directions,
                               int max_order);

}  // namespace hybridkoop
