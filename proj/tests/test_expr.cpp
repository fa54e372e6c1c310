#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "hybridkoop/expr.hpp"

using namespace hybridkoop;
using fixtures::vec;

TEST_SUITE("exprlang") {

TEST_CASE("parse builds the expected trees") {
  CHECK(parse("-x1") == ExprTree::negate(ExprTree::variable(1)));
  const ExprTree expected = ExprTree::binary(
      BinaryOp::sub, ExprTree::variable(2),
      ExprTree::binary(BinaryOp::div,
                       ExprTree::binary(BinaryOp::pow, ExprTree::variable(1), ExprTree::constant(2)),
                       ExprTree::constant(3)));
  CHECK(parse("x2 - x1^2/3") == expected);
  CHECK(parse("  x2-x1 ^ 2 /3 ") == expected);
}

TEST_CASE("precedence and associativity") {
  const Vec x = vec({2.0, 3.0});
  CHECK(eval(parse("2^3^2"), x) == doctest::Approx(512.0));
  CHECK(eval(parse("-x1^2"), x) == doctest::Approx(-4.0));
  CHECK(eval(parse("x1 - x2 - 1"), x) == doctest::Approx(-2.0));
  CHECK(eval(parse("x2 / x1 / 3"), x) == doctest::Approx(0.5));
  CHECK(eval(parse("2^-1"), x) == doctest::Approx(0.5));
  CHECK(eval(parse("atan2(1, 1)"), x) == doctest::Approx(std::atan(1.0)));
  CHECK(eval(parse("pow(x1, 0.5)"), x) == doctest::Approx(std::sqrt(2.0)));
  CHECK(eval(parse("abs(-x2) + cos(0) + sin(0)"), x) == doctest::Approx(4.0));
  CHECK(eval(parse("1.5e1"), x) == 15.0);
}

TEST_CASE("eval examples") {
  CHECK(eval(parse("exp(ln(x1))"), vec({1.7})) == doctest::Approx(1.7).epsilon(1e-15));
  CHECK(eval(parse("2/x1"), vec({2.0, 1.0})) == 1.0);
  CHECK(std::abs(eval(parse("x2 - x1^2/3"), vec({2.0, 4.0 / 3.0}))) < 1e-15);
  CHECK(eval(parse("5"), vec({0.3, -7.0})) == 5.0);
}

TEST_CASE("syntax errors carry offset and expected tokens") {
  try {
    parse("x1 + * 2");
    FAIL("expected a syntax error");
  } catch (const ParseError& e) {
    CHECK(e.code() == ErrorCode::syntax);
    CHECK(e.offset() == 5);
    CHECK_FALSE(e.expected().empty());
  }
  CHECK_THROWS_AS(parse("(x1"), ParseError);
  CHECK_THROWS_AS(parse(""), ParseError);
  CHECK_THROWS_AS(parse("x1 x2"), ParseError);
  CHECK_THROWS_AS(parse("x0"), ParseError);
  CHECK_THROWS_AS(parse("x01"), ParseError);
}

TEST_CASE("unknown identifiers and arity") {
  try {
    parse("tan(x1)");
    FAIL("expected an unknown identifier");
  } catch (const ParseError& e) {
    CHECK(e.code() == ErrorCode::unknown_identifier);
    CHECK(e.offset() == 0);
  }
  try {
    parse("atan2(x1)");
    FAIL("expected an arity error");
  } catch (const ParseError& e) {
    CHECK(e.code() == ErrorCode::arity);
  }
  CHECK_THROWS_AS(parse("exp(x1, x2)"), ParseError);
  CHECK_THROWS_AS(parse("x3 + 1", 2), Error);
  CHECK_NOTHROW(parse("x2 + 1", 2));
}

TEST_CASE("domain errors report the node offset") {
  auto code_and_offset = [](const char* text, const Vec& x) {
    try {
      eval(parse(text), x);
    } catch (const Error& e) {
      return std::make_pair(e.code(), e.value());
    }
    return std::make_pair(ErrorCode::syntax, -1.0);
  };
  const Vec x = vec({-1.0, 0.0});
  CHECK(code_and_offset("1 + ln(x1)", x) == std::make_pair(ErrorCode::domain, 4.0));
  CHECK(code_and_offset("sqrt(x1)", x).first == ErrorCode::domain);
  CHECK(code_and_offset("1/x2", x).first == ErrorCode::domain);
  CHECK(code_and_offset("x1^0.5", x).first == ErrorCode::domain);
  CHECK(code_and_offset("x2^-1", x).first == ErrorCode::domain);
  CHECK(eval(parse("x1^3"), x) == -1.0);
  CHECK(eval(parse("x1^-2"), x) == 1.0);
}

TEST_CASE("directional derivative examples") {
  const ExprTree phi = parse("x2 - x1^2/3");
  // along F at a general point: F phi = -2 phi
  const Vec x = vec({1.5, 1.0});
  const Vec f = vec({-1.5, -2.0});
  CHECK(directional_derivative(phi, x, f, 1) == doctest::Approx(-0.5).epsilon(1e-9));
  const Vec z = vec({1.0, 1.0 / 3.0});
  CHECK(std::abs(directional_derivative(phi, z, vec({-1.0, -2.0 / 3.0}), 1)) < 1e-9);
  CHECK(directional_derivative(parse("7"), x, f, 1) == 0.0);
  CHECK(directional_derivative(parse("7"), x, f, 2) == 0.0);
  CHECK(directional_derivative(parse("x1"), vec({1.0, 1.0}), vec({3.0, 4.0}), 1) ==
        doctest::Approx(3.0).epsilon(1e-12));
  CHECK_THROWS_AS(directional_derivative(phi, x, f, 3), Error);
}

TEST_CASE("directional jet holds mixed second derivatives") {
  const ExprTree e = parse("x1*x2 + x1^2");
  const Vec x = vec({0.5, 2.0});
  const DirectionalJet jet = directional_jet(e, x, {vec({1, 0}), vec({0, 1})}, 2);
  CHECK(jet.value == doctest::Approx(1.25));
  CHECK(jet.first[0] == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(jet.first[1] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(jet.second(0, 0) == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(jet.second(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(jet.second(1, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::abs(jet.second(1, 1)) < 1e-6);
}

namespace {

// Random tree over every node kind, literals non-negative.
ExprTree random_tree(std::mt19937_64& rng, int depth) {
  std::uniform_int_distribution<int> pick(0, depth <= 0 ? 1 : 6);
  std::uniform_real_distribution<double> lit(0.0, 10.0);
  switch (pick(rng)) {
    case 0: return ExprTree::constant(std::round(lit(rng) * 100.0) / 8.0);
    case 1: return ExprTree::variable(1 + static_cast<int>(rng() % 3));
    case 2: return ExprTree::negate(random_tree(rng, depth - 1));
    case 3:
    case 4: {
      const auto op = static_cast<BinaryOp>(rng() % 5);
      return ExprTree::binary(op, random_tree(rng, depth - 1), random_tree(rng, depth - 1));
    }
    case 5: {
      const auto fn = static_cast<Function>(rng() % 6);
      return ExprTree::call(fn, {random_tree(rng, depth - 1)});
    }
    default: {
      const Function fn = rng() % 2 ? Function::atan2 : Function::pow;
      return ExprTree::call(fn, {random_tree(rng, depth - 1), random_tree(rng, depth - 1)});
    }
  }
}

// Polynomial in three variables with an exact derivative oracle.
struct Poly {
  struct Term {
    double c;
    int e[3];
  };
  std::vector<Term> terms;

  std::string text() const {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (i) os << " + ";
      os << "(" << terms[i].c << ")";
      for (int k = 0; k < 3; ++k) {
        if (terms[i].e[k]) os << "*x" << k + 1 << "^" << terms[i].e[k];
      }
    }
    return os.str();
  }
  // d^order/dt^order of p(x + t v) at 0
  double derivative(const Vec& x, const Vec& v, int order) const {
    double acc = 0.0;
    for (const Term& t : terms) {
      // product of (x_k + s v_k)^e_k; expand via first/second derivative of the product
      double f[3], d1[3], d2[3];
      for (int k = 0; k < 3; ++k) {
        const int e = t.e[k];
        f[k] = std::pow(x(k), e);
        d1[k] = e >= 1 ? e * std::pow(x(k), e - 1) * v(k) : 0.0;
        d2[k] = e >= 2 ? e * (e - 1) * std::pow(x(k), e - 2) * v(k) * v(k) : 0.0;
      }
      if (order == 1) {
        acc += t.c * (d1[0] * f[1] * f[2] + f[0] * d1[1] * f[2] + f[0] * f[1] * d1[2]);
      } else {
        acc += t.c * (d2[0] * f[1] * f[2] + f[0] * d2[1] * f[2] + f[0] * f[1] * d2[2] +
                      2.0 * (d1[0] * d1[1] * f[2] + d1[0] * f[1] * d1[2] + f[0] * d1[1] * d1[2]));
      }
    }
    return acc;
  }
};

Poly random_poly(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> coef(-3.0, 3.0);
  Poly p;
  const int count = 1 + static_cast<int>(rng() % 5);
  for (int i = 0; i < count; ++i) {
    Poly::Term t{coef(rng), {0, 0, 0}};
    int budget = static_cast<int>(rng() % 5);
    while (budget-- > 0) t.e[rng() % 3] += 1;
    p.terms.push_back(t);
  }
  return p;
}

Vec random_point(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return vec({u(rng), u(rng), u(rng)});
}

}  // namespace

TEST_CASE("print/parse round trip on random trees") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 500; ++i) {
    const ExprTree e = random_tree(rng, 5);
    const std::string text = print(e);
    INFO(text);
    CHECK(parse(text) == e);
  }
}

TEST_CASE("finite differences match exact derivatives of random polynomials") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 300; ++i) {
    const Poly p = random_poly(rng);
    const ExprTree e = parse(p.text());
    const Vec x = random_point(rng, -2.0, 2.0);
    const Vec v = random_point(rng, -1.5, 1.5);
    for (int order = 1; order <= 2; ++order) {
      const double exact = p.derivative(x, v, order);
      const double approx = directional_derivative(e, x, v, order);
      double scale = 0.0;
      for (const auto& t : p.terms) scale += std::abs(t.c);
      scale *= std::pow(1.0 + x.norm(), 4) * std::pow(1.0 + v.norm(), order);
      const double tol = order == 1 ? 1e-8 : 1e-6;
      INFO(p.text(), " order ", order);
      CHECK(std::abs(approx - exact) <= tol * std::max(std::abs(exact), 1e-2 * scale));
    }
  }
}

TEST_CASE("directional derivatives are linear") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const Poly p = random_poly(rng);
    const Poly q = random_poly(rng);
    const double a = 1.7;
    const double b = -0.4;
    const ExprTree e1 = parse(p.text());
    const ExprTree e2 = parse(q.text());
    const ExprTree sum = ExprTree::binary(
        BinaryOp::add, ExprTree::binary(BinaryOp::mul, ExprTree::constant(a), e1),
        ExprTree::negate(ExprTree::binary(BinaryOp::mul, ExprTree::constant(-b), e2)));
    const Vec x = random_point(rng, -1.0, 1.0);
    const Vec v = random_point(rng, -1.0, 1.0);
    const double lhs = directional_derivative(sum, x, v, 1);
    const double rhs = a * directional_derivative(e1, x, v, 1) + b * directional_derivative(e2, x, v, 1);
    CHECK(std::abs(lhs - rhs) <= 1e-8 * std::max(1.0, std::abs(rhs)));
  }
}

}  // TEST_SUITE
