#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "hybridkoop/validate.hpp"

using namespace hybridkoop;
using fixtures::vec;

TEST_SUITE("core") {

TEST_CASE("guard sampling lands on the guard") {
  const auto sys = fixtures::paper_example();
  const auto pts = sample_guard(sys, 0, 50, 1);
  CHECK(pts.size() == 50);
  for (const Vec& z : pts) {
    CHECK(std::abs(guard_level(sys, 0, z)) < 1e-14);
    CHECK(z(1) >= 1e-3);
    CHECK(z(1) <= 10.0);
  }
  const auto again = sample_guard(sys, 0, 50, 1);
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK(pts[i] == again[i]);
}

TEST_CASE("guard sampling fails when the guard misses the box") {
  auto sys = fixtures::paper_example();
  sys.modes[0].guard_level = parse("5 - x1");
  try {
    sample_guard(sys, 0, 10, 0);
    FAIL("expected sampling_failure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::sampling_failure);
  }
}

TEST_CASE("tangent basis is orthogonal to the guard gradient") {
  auto sys = fixtures::paper_example();
  sys.modes[0].guard_level = parse("x1^2 + x2^2 - 4");
  const Vec z = vec({std::sqrt(2.0), std::sqrt(2.0)});
  const Mat t = guard_tangent_basis(sys, 0, z);
  CHECK(t.cols() == 1);
  CHECK(std::abs(t.col(0).dot(z)) < 1e-9);
  CHECK(t.col(0).norm() == doctest::Approx(1.0));
}

TEST_CASE("the worked example satisfies A1 to A3") {
  const auto sys = fixtures::paper_example();
  const ValidationReport r = validate_assumptions(sys, 100, 1e-8, 0);
  CHECK(r.all_pass());
  for (const auto& c : r.checks) {
    INFO(c.name, ": ", c.detail);
    CHECK(c.pass);
    if (c.name == "A1") CHECK(c.margin == doctest::Approx(1.0).epsilon(1e-9));
    if (c.name == "A3") CHECK(c.margin == doctest::Approx(1.0).epsilon(1e-2));
  }
}

TEST_CASE("negated field fails A1") {
  auto sys = fixtures::paper_example();
  sys.modes[0].vector_field = fixtures::exprs({"x1", "2*x2"});
  const ValidationReport r = validate_assumptions(sys, 100, 1e-8, 0);
  CHECK_FALSE(r.pass("A1"));
  CHECK(r.checks[0].margin == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("identity reset on the guard fails A3") {
  auto sys = fixtures::paper_example();
  sys.modes[0].reset = fixtures::exprs({"x1", "x2"});
  const ValidationReport r = validate_assumptions(sys, 50, 1e-8, 0);
  CHECK_FALSE(r.pass("A3"));
  CHECK_FALSE(r.pass("A2"));
  CHECK_FALSE(r.all_pass());
}

TEST_CASE("collapsing reset fails A2") {
  auto sys = fixtures::paper_example();
  sys.modes[0].reset = fixtures::exprs({"2", "1"});
  const ValidationReport r = validate_assumptions(sys, 50, 1e-8, 0);
  CHECK_FALSE(r.pass("A2"));
  CHECK(r.pass("A1"));
}

TEST_CASE("reset images lie on the interior side of the successor guard") {
  const auto sys = fixtures::paper_example();
  for (const Vec& z : sample_guard(sys, 0, 30, 9)) {
    const HybridState post = apply_reset(sys, {0, z});
    CHECK(guard_level(sys, post.mode, post.x) < 0.0);
  }
}

TEST_CASE("validation is deterministic for a fixed seed") {
  const auto sys = fixtures::paper_example();
  const auto a = validate_assumptions(sys, 40, 1e-8, 42);
  const auto b = validate_assumptions(sys, 40, 1e-8, 42);
  REQUIRE(a.checks.size() == b.checks.size());
  for (std::size_t i = 0; i < a.checks.size(); ++i) CHECK(a.checks[i].margin == b.checks[i].margin);
}

}  // TEST_SUITE
