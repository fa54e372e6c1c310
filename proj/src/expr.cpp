#include "hybridkoop/expr.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "hybridkoop/numdiff.hpp"

namespace hybridkoop {

namespace {

using NodePtr = std::shared_ptr<const ExprNode>;

struct FunctionInfo {
  std::string_view name;
  Function fn;
  int arity;
};

constexpr std::array<FunctionInfo, 8> kFunctions{{
    {"exp", Function::exp, 1},
    {"ln", Function::ln, 1},
    {"sin", Function::sin, 1},
    {"cos", Function::cos, 1},
    {"sqrt", Function::sqrt, 1},
    {"abs", Function::abs, 1},
    {"atan2", Function::atan2, 2},
    {"pow", Function::pow, 2},
}};

const FunctionInfo* find_function(std::string_view name) {
  for (const auto& info : kFunctions) {
    if (info.name == name) return &info;
  }
  return nullptr;
}

std::string_view function_name(Function fn) {
  for (const auto& info : kFunctions) {
    if (info.fn == fn) return info.name;
  }
  return "?";
}

bool nodes_equal(const ExprNode& a, const ExprNode& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case ExprNode::Kind::number:
      return a.number == b.number;
    case ExprNode::Kind::variable:
      return a.variable == b.variable;
    case ExprNode::Kind::negate:
      break;
    case ExprNode::Kind::binary:
      if (a.op != b.op) return false;
      break;
    case ExprNode::Kind::call:
      if (a.function != b.function) return false;
      break;
  }
  if (a.children.size() != b.children.size()) return false;
  for (std::size_t i = 0; i < a.children.size(); ++i) {
    if (!nodes_equal(*a.children[i], *b.children[i])) return false;
  }
  return true;
}

int max_var(const ExprNode& n) {
  int m = n.kind == ExprNode::Kind::variable ? n.variable : 0;
  for (const auto& c : n.children) m = std::max(m, max_var(*c));
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Construction

ExprTree::ExprTree() : ExprTree(constant(0.0)) {}

ExprTree ExprTree::constant(double value) {
  auto n = std::make_shared<ExprNode>();
  n->kind = ExprNode::Kind::number;
  n->number = value;
  return ExprTree(std::move(n));
}

ExprTree ExprTree::variable(int index) {
  if (index < 1) throw Error(ErrorCode::invalid_argument, "variable index must be >= 1");
  auto n = std::make_shared<ExprNode>();
  n->kind = ExprNode::Kind::variable;
  n->variable = index;
  return ExprTree(std::move(n));
}

ExprTree ExprTree::negate(const ExprTree& operand) {
  auto n = std::make_shared<ExprNode>();
  n->kind = ExprNode::Kind::negate;
  n->children = {operand.root_};
  return ExprTree(std::move(n));
}

ExprTree ExprTree::binary(BinaryOp op, const ExprTree& lhs, const ExprTree& rhs) {
  auto n = std::make_shared<ExprNode>();
  n->kind = ExprNode::Kind::binary;
  n->op = op;
  n->children = {lhs.root_, rhs.root_};
  return ExprTree(std::move(n));
}

ExprTree ExprTree::call(Function fn, std::vector<ExprTree> args) {
  const int arity = (fn == Function::atan2 || fn == Function::pow) ? 2 : 1;
  if (static_cast<int>(args.size()) != arity) {
    throw Error(ErrorCode::arity, std::string(function_name(fn)) + " takes " +
                                      std::to_string(arity) + " argument(s)");
  }
  auto n = std::make_shared<ExprNode>();
  n->kind = ExprNode::Kind::call;
  n->function = fn;
  for (auto& a : args) n->children.push_back(a.root_);
  return ExprTree(std::move(n));
}

int ExprTree::max_variable() const { return max_var(*root_); }

bool operator==(const ExprTree& a, const ExprTree& b) { return nodes_equal(*a.root_, *b.root_); }

ExprTree substitute(const ExprTree& e, const std::vector<ExprTree>& vars) {
  const ExprNode& n = *e.root_;
  if (n.kind == ExprNode::Kind::variable) {
    if (n.variable > static_cast<int>(vars.size())) {
      throw Error(ErrorCode::unknown_identifier, "no replacement for x" + std::to_string(n.variable));
    }
    return vars[static_cast<std::size_t>(n.variable - 1)];
  }
  if (n.children.empty()) return e;
  auto copy = std::make_shared<ExprNode>(n);
  for (auto& c : copy->children) c = substitute(ExprTree(c), vars).root_;
  return ExprTree(std::move(copy));
}

// ---------------------------------------------------------------------------
// Parsing

class ExprParser {
 public:
  ExprParser(std::string_view text, int max_vars) : text_(text), max_vars_(max_vars) {}

  ExprTree run() {
    skip_ws();
    NodePtr root = parse_expr();
    skip_ws();
    if (pos_ != text_.size()) {
      fail(ErrorCode::syntax, "unexpected input", {"operator", "end of input"});
    }
    return ExprTree(std::move(root));
  }

 private:
  [[noreturn]] void fail(ErrorCode code, const std::string& what,
                         std::vector<std::string> expected = {}) const {
    std::ostringstream msg;
    msg << what << " at offset " << pos_;
    if (!expected.empty()) {
      msg << " (expected ";
      for (std::size_t i = 0; i < expected.size(); ++i) msg << (i ? ", " : "") << expected[i];
      msg << ")";
    }
    throw ParseError(code, msg.str(), pos_, std::move(expected));
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  static NodePtr make_binary(BinaryOp op, NodePtr l, NodePtr r, std::size_t at) {
    auto n = std::make_shared<ExprNode>();
    n->kind = ExprNode::Kind::binary;
    n->op = op;
    n->children = {std::move(l), std::move(r)};
    n->offset = at;
    return n;
  }

  NodePtr parse_expr() {
    NodePtr lhs = parse_term();
    for (;;) {
      skip_ws();
      const std::size_t at = pos_;
      if (accept('+')) {
        lhs = make_binary(BinaryOp::add, lhs, parse_term(), at);
      } else if (accept('-')) {
        lhs = make_binary(BinaryOp::sub, lhs, parse_term(), at);
      } else {
        return lhs;
      }
    }
  }

  NodePtr parse_term() {
    NodePtr lhs = parse_unary();
    for (;;) {
      skip_ws();
      const std::size_t at = pos_;
      if (accept('*')) {
        lhs = make_binary(BinaryOp::mul, lhs, parse_unary(), at);
      } else if (accept('/')) {
        lhs = make_binary(BinaryOp::div, lhs, parse_unary(), at);
      } else {
        return lhs;
      }
    }
  }

  NodePtr parse_unary() {
    skip_ws();
    const std::size_t at = pos_;
    if (accept('-')) {
      auto n = std::make_shared<ExprNode>();
      n->kind = ExprNode::Kind::negate;
      n->children = {parse_unary()};
      n->offset = at;
      return n;
    }
    return parse_power();
  }

  NodePtr parse_power() {
    NodePtr base = parse_primary();
    skip_ws();
    const std::size_t at = pos_;
    if (accept('^')) return make_binary(BinaryOp::pow, base, parse_unary(), at);
    return base;
  }

  NodePtr parse_primary() {
    skip_ws();
    const std::size_t at = pos_;
    if (pos_ >= text_.size()) {
      fail(ErrorCode::syntax, "unexpected end of input", {"number", "identifier", "'('", "'-'"});
    }
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      NodePtr inner = parse_expr();
      if (!accept(')')) fail(ErrorCode::syntax, "unbalanced parenthesis", {"')'", "operator"});
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t end = pos_;
      while (end < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[end])) || text_[end] == '_')) {
        ++end;
      }
      const std::string_view ident = text_.substr(pos_, end - pos_);
      if (const FunctionInfo* info = find_function(ident)) {
        pos_ = end;
        return parse_call(*info, at);
      }
      if (ident.size() >= 2 && ident[0] == 'x') {
        int index = 0;
        const auto* first = ident.data() + 1;
        const auto* last = ident.data() + ident.size();
        auto [ptr, ec] = std::from_chars(first, last, index);
        if (ec == std::errc{} && ptr == last && index >= 1 && ident[1] != '0') {
          if (max_vars_ > 0 && index > max_vars_) {
            fail(ErrorCode::unknown_identifier,
                 "variable '" + std::string(ident) + "' exceeds dimension " +
                     std::to_string(max_vars_));
          }
          pos_ = end;
          auto n = std::make_shared<ExprNode>();
          n->kind = ExprNode::Kind::variable;
          n->variable = index;
          n->offset = at;
          return n;
        }
      }
      fail(ErrorCode::unknown_identifier, "unknown identifier '" + std::string(ident) + "'");
    }
    fail(ErrorCode::syntax, std::string("unexpected character '") + c + "'",
         {"number", "identifier", "'('", "'-'"});
  }

  NodePtr parse_number() {
    const std::size_t start = pos_;
    auto digits = [&] {
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    };
    digits();
    if (pos_ < text_.size() && text_[pos_] == '.') {
      ++pos_;
      digits();
    }
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t save = pos_;
      ++pos_;
      if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
      if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        digits();
      } else {
        pos_ = save;
      }
    }
    double value = 0.0;
    const auto* first = text_.data() + start;
    const auto* last = text_.data() + pos_;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last) {
      pos_ = start;
      fail(ErrorCode::syntax, "malformed number", {"number"});
    }
    auto n = std::make_shared<ExprNode>();
    n->kind = ExprNode::Kind::number;
    n->number = value;
    n->offset = start;
    return n;
  }

  NodePtr parse_call(const FunctionInfo& info, std::size_t at) {
    if (!accept('(')) fail(ErrorCode::syntax, "function call without arguments", {"'('"});
    std::vector<NodePtr> args;
    args.push_back(parse_expr());
    while (accept(',')) args.push_back(parse_expr());
    if (!accept(')')) fail(ErrorCode::syntax, "unterminated argument list", {"','", "')'"});
    if (static_cast<int>(args.size()) != info.arity) {
      pos_ = at;
      fail(ErrorCode::arity, std::string(info.name) + " takes " + std::to_string(info.arity) +
                                 " argument(s), got " + std::to_string(args.size()));
    }
    auto n = std::make_shared<ExprNode>();
    n->kind = ExprNode::Kind::call;
    n->function = info.fn;
    n->children = std::move(args);
    n->offset = at;
    return n;
  }

  std::string_view text_;
  int max_vars_;
  std::size_t pos_ = 0;
};

ExprTree parse(std::string_view text) { return ExprParser(text, 0).run(); }

ExprTree parse(std::string_view text, int max_vars) { return ExprParser(text, max_vars).run(); }

// ---------------------------------------------------------------------------
// Printing

namespace {

int precedence(const ExprNode& n) {
  switch (n.kind) {
    case ExprNode::Kind::binary:
      switch (n.op) {
        case BinaryOp::add:
        case BinaryOp::sub:
          return 1;
        case BinaryOp::mul:
        case BinaryOp::div:
          return 2;
        case BinaryOp::pow:
          return 4;
      }
      return 0;
    case ExprNode::Kind::negate:
      return 3;
    default:
      return 5;
  }
}

void print_node(const ExprNode& n, std::string& out);

void print_wrapped(const ExprNode& n, bool parens, std::string& out) {
  if (parens) out += '(';
  print_node(n, out);
  if (parens) out += ')';
}

void print_node(const ExprNode& n, std::string& out) {
  switch (n.kind) {
    case ExprNode::Kind::number: {
      std::array<char, 64> buf{};
      auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), n.number);
      out.append(buf.data(), ptr);
      return;
    }
    case ExprNode::Kind::variable:
      out += 'x';
      out += std::to_string(n.variable);
      return;
    case ExprNode::Kind::negate:
      out += '-';
      print_wrapped(*n.children[0], precedence(*n.children[0]) < 3, out);
      return;
    case ExprNode::Kind::binary: {
      const ExprNode& l = *n.children[0];
      const ExprNode& r = *n.children[1];
      const int p = precedence(n);
      if (n.op == BinaryOp::pow) {
        print_wrapped(l, precedence(l) <= 4, out);
        out += '^';
        print_wrapped(r, precedence(r) < 3, out);
        return;
      }
      print_wrapped(l, precedence(l) < p, out);
      switch (n.op) {
        case BinaryOp::add: out += " + "; break;
        case BinaryOp::sub: out += " - "; break;
        case BinaryOp::mul: out += " * "; break;
        case BinaryOp::div: out += " / "; break;
        case BinaryOp::pow: break;
      }
      print_wrapped(r, precedence(r) <= p, out);
      return;
    }
    case ExprNode::Kind::call:
      out += function_name(n.function);
      out += '(';
      for (std::size_t i = 0; i < n.children.size(); ++i) {
        if (i) out += ", ";
        print_node(*n.children[i], out);
      }
      out += ')';
      return;
  }
}

}  // namespace

std::string print(const ExprTree& e) {
  std::string out;
  print_node(e.root(), out);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

[[noreturn]] void domain_error(const ExprNode& n, const std::string& what) {
  throw Error(ErrorCode::domain, what + " at offset " + std::to_string(n.offset),
              static_cast<double>(n.offset));
}

double checked(const ExprNode& n, double v) {
  if (!std::isfinite(v)) domain_error(n, "non-finite result");
  return v;
}

double power(const ExprNode& n, double base, double exponent) {
  if (exponent == std::trunc(exponent) && std::abs(exponent) <= 1024.0) {
    long k = static_cast<long>(std::abs(exponent));
    double result = 1.0;
    double b = base;
    while (k > 0) {
      if (k & 1) result *= b;
      b *= b;
      k >>= 1;
    }
    if (exponent < 0.0) {
      if (result == 0.0) domain_error(n, "zero raised to a negative power");
      result = 1.0 / result;
    }
    return checked(n, result);
  }
  if (base < 0.0) domain_error(n, "non-integer power of a negative base");
  if (base == 0.0 && exponent < 0.0) domain_error(n, "zero raised to a negative power");
  return checked(n, std::pow(base, exponent));
}

double eval_node(const ExprNode& n, const Vec& x) {
  switch (n.kind) {
    case ExprNode::Kind::number:
      return n.number;
    case ExprNode::Kind::variable:
      if (n.variable > x.size()) domain_error(n, "variable x" + std::to_string(n.variable) +
                                                     " outside state dimension");
      return x(n.variable - 1);
    case ExprNode::Kind::negate:
      return -eval_node(*n.children[0], x);
    case ExprNode::Kind::binary: {
      const double a = eval_node(*n.children[0], x);
      const double b = eval_node(*n.children[1], x);
      switch (n.op) {
        case BinaryOp::add: return checked(n, a + b);
        case BinaryOp::sub: return checked(n, a - b);
        case BinaryOp::mul: return checked(n, a * b);
        case BinaryOp::div:
          if (b == 0.0) domain_error(n, "division by zero");
          return checked(n, a / b);
        case BinaryOp::pow: return power(n, a, b);
      }
      break;
    }
    case ExprNode::Kind::call: {
      const double a = eval_node(*n.children[0], x);
      switch (n.function) {
        case Function::exp: return checked(n, std::exp(a));
        case Function::ln:
          if (a <= 0.0) domain_error(n, "ln of non-positive argument");
          return std::log(a);
        case Function::sin: return std::sin(a);
        case Function::cos: return std::cos(a);
        case Function::sqrt:
          if (a < 0.0) domain_error(n, "sqrt of negative argument");
          return std::sqrt(a);
        case Function::abs: return std::abs(a);
        case Function::atan2: return std::atan2(a, eval_node(*n.children[1], x));
        case Function::pow: return power(n, a, eval_node(*n.children[1], x));
      }
      break;
    }
  }
  domain_error(n, "malformed expression node");
}

}  // namespace

double eval(const ExprTree& e, const Vec& x) { return eval_node(e.root(), x); }

double directional_derivative(const ExprTree& e, const Vec& x, const Vec& v, int order) {
  return numdiff::directional([&](const Vec& y) { return eval(e, y); }, x, v, order);
}

DirectionalJet directional_jet(const ExprTree& e, const Vec& x, const std::vector<Vec>& directions,
                               int max_order) {
  if (max_order < 0 || max_order > 2) {
    throw Error(ErrorCode::invalid_argument, "jet order must be in [0, 2]");
  }
  DirectionalJet jet;
  jet.value = eval(e, x);
  const auto m = static_cast<Eigen::Index>(directions.size());
  if (max_order >= 1) {
    for (const auto& v : directions) jet.first.push_back(directional_derivative(e, x, v, 1));
  }
  if (max_order >= 2) {
    jet.second = Mat::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const Vec& u = directions[static_cast<std::size_t>(i)];
      jet.second(i, i) = directional_derivative(e, x, u, 2);
      for (Eigen::Index j = 0; j < i; ++j) {
        const Vec& w = directions[static_cast<std::size_t>(j)];
        // polarization: D2[u, w] = (D2[u + w] - D2[u - w]) / 4
        const double mixed = (directional_derivative(e, x, Vec(u + w), 2) -
                              directional_derivative(e, x, Vec(u - w), 2)) /
                             4.0;
        jet.second(i, j) = mixed;
        jet.second(j, i) = mixed;
      }
    }
  }
  return jet;
}

}  // namespace hybridkoop
