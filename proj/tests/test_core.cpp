#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "hybridkoop/system.hpp"

using namespace hybridkoop;
using fixtures::vec;

TEST_SUITE("core") {

TEST_CASE("vector field evaluation") {
  const HybridSystemDef sys = fixtures::paper_example();
  CHECK(eval_vector_field(sys, {0, vec({1.5, 1.0})}).isApprox(vec({-1.5, -2.0})));
  CHECK(eval_vector_field(sys, {0, vec({2.0, 4.0 / 3.0})}).isApprox(vec({-2.0, -8.0 / 3.0})));

  HybridSystemDef zero = sys;
  zero.modes[0].vector_field = fixtures::exprs({"0", "0*x2"});
  CHECK(eval_vector_field(zero, {0, vec({1.3, 0.2})}).norm() == 0.0);
}

TEST_CASE("vector field errors name the component") {
  HybridSystemDef sys = fixtures::paper_example();
  sys.modes[0].vector_field = fixtures::exprs({"-x1", "ln(x2)"});
  try {
    eval_vector_field(sys, {0, vec({1.5, -1.0})});
    FAIL("expected a domain error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::domain);
    CHECK(e.value() == 1.0);
    CHECK(std::string(e.what()).find("component 2") != std::string::npos);
  }
}

TEST_CASE("guard distance") {
  const HybridSystemDef sys = fixtures::paper_example();
  CHECK(guard_distance(sys, {0, vec({1.0, 0.5})}) == 0.0);
  CHECK(guard_distance(sys, {0, vec({2.0, 1.0})}) == -1.0);
  CHECK(guard_distance(sys, {0, vec({1.25, 3.0})}) == -0.25);
  CHECK(guard_gradient(sys, 0, vec({1.5, 2.0})).isApprox(vec({-1.0, 0.0}), 1e-9));
}

TEST_CASE("reset") {
  const HybridSystemDef sys = fixtures::paper_example();
  HybridState post = apply_reset(sys, {0, vec({1.0, 0.5})});
  CHECK(post.mode == 0);
  CHECK(post.x.isApprox(vec({2.0, 1.5})));
  post = apply_reset(sys, {0, vec({1.0, 1.0 / 3.0})});
  CHECK(post.x.isApprox(vec({2.0, 4.0 / 3.0})));
  CHECK_THROWS_AS(apply_reset(sys, {0, vec({1.5, 0.5})}), Error);
  try {
    apply_reset(sys, {0, vec({1.5, 0.5})});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::not_on_guard);
  }
}

TEST_CASE("reset advances the mode by one") {
  HybridSystemDef sys;
  sys.num_modes = 3;
  sys.dim = 1;
  for (int j = 0; j < 3; ++j) {
    ModeDef m;
    m.vector_field = fixtures::exprs({"1"});
    m.guard_level = parse("x1 - 1");
    m.reset = fixtures::exprs({"x1"});
    m.domain_box = {{0.0, 1.0}};
    sys.modes.push_back(m);
  }
  check_structure(sys);
  for (int j = 0; j < 3; ++j) {
    const HybridState post = apply_reset(sys, {j, vec({1.0})});
    CHECK(post.mode == (j + 1) % 3);
    CHECK(post.x(0) == 1.0);
  }
}

TEST_CASE("structure checks") {
  HybridSystemDef sys = fixtures::paper_example();
  CHECK_NOTHROW(check_structure(sys));
  sys.modes[0].vector_field.push_back(parse("x1"));
  try {
    check_structure(sys);
    FAIL("expected a schema error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::schema);
    CHECK(std::string(e.what()).rfind("/modes/0/vector_field", 0) == 0);
  }
  sys = fixtures::paper_example();
  sys.modes[0].reset[1] = parse("x3");
  CHECK_THROWS_AS(check_structure(sys), Error);
  sys = fixtures::paper_example();
  sys.modes[0].domain_box[0] = {2.0, 1.0};
  CHECK_THROWS_AS(check_structure(sys), Error);
  sys = fixtures::paper_example();
  sys.modes.clear();
  CHECK_THROWS_AS(check_structure(sys), Error);

  CHECK_THROWS_AS(check_state(fixtures::paper_example(), {1, vec({1.0, 1.0})}), Error);
  CHECK_THROWS_AS(check_state(fixtures::paper_example(), {0, vec({1.0})}), Error);
}

}  // TEST_SUITE
