#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "hybridkoop/spectral.hpp"

using namespace hybridkoop;
using fixtures::vec;

namespace {

const double kLn2 = std::log(2.0);
const double kOmega = 2.0 * std::numbers::pi / kLn2;

PoincareSection section_at(const HybridSystemDef& sys, const std::string& level) {
  return make_section(sys, 0, parse(level));
}

// one mode in R^3: x1 as in the example, (x2, x3) driven by `rates`,
// reset adds `kick` to (x2, x3)
HybridSystemDef three_d(const std::vector<std::string>& field, const std::vector<std::string>& reset) {
  ModeDef m;
  m.vector_field = fixtures::exprs(field);
  m.guard_level = parse("1 - x1");
  m.reset = fixtures::exprs(reset);
  m.domain_box = {{1.0, 2.0}, {-10.0, 10.0}, {-10.0, 10.0}};
  m.collar_depth = 0.7;
  HybridSystemDef sys;
  sys.num_modes = 1;
  sys.dim = 3;
  sys.modes = {m};
  return sys;
}

SpectralReport analyse(const HybridSystemDef& sys, const PoincareSection& sec, const Vec& guess,
                       int r = 2) {
  const IntegratorConfig cfg;
  return floquet(sys, sec, find_limit_cycle(sys, sec, guess, cfg), cfg, r);
}

double angle_gap(double a, double b) {
  return std::abs(std::remainder(a - b, 2.0 * std::numbers::pi));
}

}  // namespace

TEST_SUITE("spectral") {

TEST_CASE("sections") {
  const auto sys = fixtures::paper_example();
  const PoincareSection sec = default_section(sys);
  CHECK(std::abs(sec.anchor(0) - 2.0) < 1e-12);
  // level 2 - x1 increases along the flow
  CHECK(sec.direction == 1.0);
  CHECK(std::abs(eval(sec.level, vec({2.0, 7.0}))) < 1e-15);
  CHECK(sec.tangent.cols() == 1);
  CHECK(std::abs(sec.tangent(1, 0) - 1.0) < 1e-15);
  const Vec y = sec.from_local(sec.to_local(vec({2.0, 3.0})));
  CHECK((y - vec({2.0, 3.0})).norm() < 1e-14);

  CHECK_THROWS_AS(make_section(sys, 0, parse("x1 - 1.5"), vec({1.4, 1.0})), Error);
  // the flow crosses this parabola in both directions
  CHECK_THROWS_AS(make_section(sys, 0, parse("x2 - 3*(x1 - 1.5)^2 - 0.5")), Error);
  CHECK_THROWS_AS(make_section(sys, 0, parse("x1 - 1")), Error);
  CHECK_THROWS_AS(make_section(sys, 0, parse("1 - x1")), Error);
}

TEST_CASE("return map") {
  const auto sys = fixtures::paper_example();
  const IntegratorConfig cfg;
  const PoincareSection sec = section_at(sys, "x1 - 2");
  Vec p = vec({2.0, 2.0});
  const double expected[] = {1.5, 1.375, 1.34375};
  for (double c : expected) {
    const SectionReturn ret = poincare_return(sys, sec, p, cfg);
    CHECK(std::abs(ret.point(1) - c) < 1e-10);
    CHECK(std::abs(ret.time - kLn2) < 1e-10);
    p = ret.point;
  }
  CHECK((poincare_map(sys, sec, vec({2.0, 4.0 / 3.0}), cfg) - vec({2.0, 4.0 / 3.0})).norm() < 1e-11);
  for (double c : {0.2, 3.0, 9.0}) {
    CHECK(std::abs(poincare_map(sys, sec, vec({2.0, c}), cfg)(1) - (c / 4 + 1)) < 1e-10);
  }
  CHECK_THROWS_AS(poincare_map(sys, sec, vec({1.5, 1.0}), cfg), Error);

  // section through the interior of the flow
  const PoincareSection mid = section_at(sys, "x1 - 1.5");
  CHECK(std::abs(poincare_map(sys, mid, vec({1.5, 2.0}), cfg)(1) - (2.0 / 4 + 0.5625)) < 1e-10);
}

TEST_CASE("limit cycle") {
  const auto sys = fixtures::paper_example();
  const IntegratorConfig cfg;
  const PoincareSection sec = section_at(sys, "x1 - 2");
  for (double c : {2.0, 10.0, 0.01}) {
    const LimitCycle lc = find_limit_cycle(sys, sec, vec({2.0, c}), cfg);
    CHECK((lc.x_star.x - vec({2.0, 4.0 / 3.0})).norm() < 1e-10);
    CHECK(std::abs(lc.tau - kLn2) < 1e-10);
    CHECK(lc.residual <= 1e-10);
  }
  const LimitCycle exact = find_limit_cycle(sys, sec, vec({2.0, 4.0 / 3.0}), cfg);
  CHECK(exact.newton_steps == 0);
  CHECK(exact.fixed_point_steps == 0);

  const LimitCycle mid = find_limit_cycle(sys, section_at(sys, "x1 - 1.5"), vec({1.5, 2.0}), cfg);
  CHECK((mid.x_star.x - vec({1.5, 0.75})).norm() < 1e-10);
  CHECK(std::abs(mid.tau - kLn2) < 1e-10);
}

TEST_CASE("no limit cycle for a sink") {
  ModeDef m;
  m.vector_field = fixtures::exprs({"-x1", "-2*x2"});
  m.guard_level = parse("x1 - 100");
  m.reset = fixtures::exprs({"x1", "x2"});
  m.domain_box = {{0.0, 200.0}, {-10.0, 10.0}};
  m.collar_depth = 0.5;
  HybridSystemDef sys;
  sys.num_modes = 1;
  sys.dim = 2;
  sys.modes = {m};
  IntegratorConfig cfg;
  cfg.max_time = 40.0;
  const PoincareSection sec = make_section(sys, 0, parse("x1 - 0.5"));
  try {
    find_limit_cycle(sys, sec, vec({0.5, 1.0}), cfg);
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK((e.code() == ErrorCode::no_return || e.code() == ErrorCode::not_stable));
  }
}

TEST_CASE("floquet on the example") {
  const auto sys = fixtures::paper_example();
  const SpectralReport rep = analyse(sys, section_at(sys, "x1 - 2"), vec({2.0, 2.0}));
  REQUIRE(rep.multipliers.size() == 1);
  CHECK(std::abs(rep.multipliers[0] - 0.25) < 1e-8);
  CHECK(std::abs(rep.exponents[0] + 2.0) < 1e-7);
  CHECK(std::abs(rep.omega - kOmega) < 1e-8);
  CHECK(std::abs(rep.omega * rep.tau - 2 * std::numbers::pi) < 1e-12);
  CHECK(rep.spectral_spread);
  CHECK(rep.nonresonant);
  CHECK_FALSE(rep.degenerate);
  CHECK(std::abs(rep.dominant_left()(0) - 1.0) < 1e-12);

  std::ostringstream text;
  write_spectral_report(text, rep);
  CHECK(text.str().find("tau = 0.69314718") != std::string::npos);
  CHECK(text.str().find("rho_2 = 0.2") != std::string::npos);
  CHECK(text.str().find("nonresonant = true") != std::string::npos);
}

TEST_CASE("section independence") {
  const auto sys = fixtures::paper_example();
  const SpectralReport a = analyse(sys, section_at(sys, "x1 - 2"), vec({2.0, 2.0}));
  const SpectralReport b = analyse(sys, section_at(sys, "x1 - 1.5"), vec({1.5, 2.0}));
  const SpectralReport c = analyse(sys, section_at(sys, "x1 - 1.2"), vec({1.2, 0.3}));
  CHECK(std::abs(a.tau - b.tau) < 1e-8);
  CHECK(std::abs(a.tau - c.tau) < 1e-8);
  CHECK(std::abs(a.multipliers[0] - b.multipliers[0]) < 1e-5);
  CHECK(std::abs(a.multipliers[0] - c.multipliers[0]) < 1e-5);
}

TEST_CASE("complex multiplier pair") {
  // (x2, x3) spirals at rate -1 +- 3i; the return map is affine with
  // linear part exp(A ln 2)
  const auto sys = three_d({"-x1", "-x2 - 3*x3", "3*x2 - x3"}, {"2", "x2 + 1", "x3"});
  const SpectralReport rep = analyse(sys, section_at(sys, "x1 - 2"), vec({2.0, 0.5, 0.5}));
  REQUIRE(rep.multipliers.size() == 2);
  const std::complex<double> expected = 0.5 * std::polar(1.0, 3.0 * kLn2);
  CHECK(std::abs(std::abs(rep.multipliers[0]) - 0.5) < 1e-7);
  CHECK(std::abs(rep.multipliers[0] - std::conj(rep.multipliers[1])) < 1e-9);
  CHECK(std::min(std::abs(rep.multipliers[0] - expected),
                 std::abs(rep.multipliers[0] - std::conj(expected))) < 1e-7);
  CHECK(std::abs(rep.exponents[0].real() + 1.0) < 1e-6);
  CHECK_FALSE(rep.degenerate);

  const IntegratorConfig cfg;
  const AmplitudeEigenfunction amp(sys, rep, 0, cfg);
  const PhaseEigenfunction phase(sys, rep, cfg);
  const Embedding emb = build_embedding(
      rep, {{phase.eigenvalue(), [&](const HybridState& s) { return phase(s); }, "phase"},
            {amp.eigenvalue(), [&](const HybridState& s) { return amp(s); }, "amp"}});
  CHECK(emb.dim() == 4);
  std::vector<HybridState> pts;
  for (double x1 : {1.1, 1.6}) {
    for (double x2 : {-0.5, 0.7}) pts.push_back({0, vec({x1, x2, 0.3})});
  }
  const ResidualReport res = embedding_residual(sys, emb, pts, {0.2, 0.5}, cfg);
  CHECK(res.evaluated == 4);
  CHECK(res.max_residual < 1e-5);
}

TEST_CASE("degenerate and resonant spectra") {
  const IntegratorConfig cfg;
  const auto tie = three_d({"-x1", "-2*x2", "-2*x3"}, {"2", "x2 + 1", "x3 + 1"});
  const SpectralReport t = analyse(tie, section_at(tie, "x1 - 2"), vec({2.0, 1.0, 1.0}));
  CHECK(t.degenerate);
  CHECK_THROWS_AS(AmplitudeEigenfunction(tie, t, 0, cfg), Error);

  // exponents -2, -5: |rho_3| = 1/32 < |rho_2|^2 = 1/16
  const auto narrow = three_d({"-x1", "-2*x2", "-5*x3"}, {"2", "x2 + 1", "x3 + 1"});
  const SpectralReport s = analyse(narrow, section_at(narrow, "x1 - 2"), vec({2.0, 1.0, 1.0}));
  CHECK_FALSE(s.degenerate);
  CHECK(s.nonresonant);
  CHECK_FALSE(s.spectral_spread);
  const auto wide = three_d({"-x1", "-2*x2", "-3*x3"}, {"2", "x2 + 1", "x3 + 1"});
  CHECK(analyse(wide, section_at(wide, "x1 - 2"), vec({2.0, 1.0, 1.0})).spectral_spread);

  // exponents -2, -4: nu_3 = 2 nu_2
  const auto resonant = three_d({"-x1", "-2*x2", "-4*x3"}, {"2", "x2 + 1", "x3 + 1"});
  const SpectralReport q = analyse(resonant, section_at(resonant, "x1 - 2"), vec({2.0, 1.0, 1.0}));
  CHECK_FALSE(q.nonresonant);
  CHECK(q.nonresonance_margin < 1e-4);
}

TEST_CASE("phase eigenfunction") {
  const auto sys = fixtures::paper_example();
  const IntegratorConfig cfg;
  const SpectralReport rep = analyse(sys, section_at(sys, "x1 - 2"), vec({2.0, 2.0}));
  const PhaseEigenfunction phase(sys, rep, cfg);
  CHECK(std::abs(phase.phase(rep.x_star)) < 1e-9);
  CHECK(std::abs(phase.phase({0, vec({2.0, 0.1})}) - phase.phase({0, vec({2.0, 1.9})})) < 1e-9);
  for (double x1 : {1.0, 1.25, 1.5, 1.9}) {
    for (double x2 : {0.1, 1.0, 5.0}) {
      const double th = phase.phase({0, vec({x1, x2})});
      CHECK(angle_gap(th, kOmega * std::log(x1)) < 1e-8);
    }
  }
  CHECK(phase.eigenvalue() == Complex(0.0, -rep.omega));

  const GridSpec grid = GridSpec::parse("5,4:1,2,0.1,2");
  const EigenfunctionGrid g = phase_eigenfunction(sys, rep, grid, cfg);
  CHECK(g.failures == 0);
  CHECK(g.function.eigenvalue == Complex(0.0, -rep.omega));
  for (const Complex& v : g.values) CHECK(std::abs(std::abs(v) - 1.0) < 1e-12);
}

TEST_CASE("amplitude eigenfunction") {
  const auto sys = fixtures::paper_example();
  const IntegratorConfig cfg;
  const SpectralReport rep = analyse(sys, section_at(sys, "x1 - 2"), vec({2.0, 2.0}));
  const AmplitudeEigenfunction amp(sys, rep, 0, cfg);
  CHECK(std::abs(amp.on_section(vec({2.0, 2.0})) - 2.0 / 3.0) < 1e-7);
  CHECK(std::abs(amp.on_section(vec({2.0, 4.0 / 3.0}))) < 1e-9);
  for (double x1 : {1.0, 1.3, 1.7, 2.0}) {
    for (double x2 : {0.1, 0.8, 3.0}) {
      const Complex v = amp({0, vec({x1, x2})});
      CHECK(std::abs(v - (x2 - x1 * x1 / 3)) < 1e-6 * (1 + std::abs(v)));
      // on the cycle
      CHECK(std::abs(amp({0, vec({x1, x1 * x1 / 3})})) < 1e-7);
    }
  }
}

TEST_CASE("eigen-relation residuals") {
  const auto sys = fixtures::paper_example();
  const IntegratorConfig cfg;
  const SpectralReport rep = analyse(sys, section_at(sys, "x1 - 2"), vec({2.0, 2.0}));
  std::vector<HybridState> pts;
  for (std::size_t i = 0; i < 16; ++i) {
    pts.push_back({0, GridSpec::parse("4,4:1,2,0.1,2").point(i)});
  }
  const auto amp = ObservableFn::expression(parse("x2 - x1^2/3"));
  CHECK(eigen_residual(sys, amp, -2.0, pts, 2 * kLn2, cfg).max_residual < 1e-6);
  const std::string arg = "2*3.14159265358979324*ln(x1)/ln(2)";
  const auto ph = ObservableFn::expression(parse("cos(" + arg + ")"), parse("sin(" + arg + ")"));
  CHECK(eigen_residual(sys, ph, Complex(0, -kOmega), pts, 2 * kLn2, cfg).max_residual < 1e-6);
  CHECK(eigen_residual(sys, ph, Complex(0, kOmega), pts, 2 * kLn2, cfg).max_residual > 0.1);
  CHECK(eigen_residual(sys, amp, -1.0, pts, 2 * kLn2, cfg).max_residual > 0.01);

  const GridSpec grid = GridSpec::parse("4,4:1,2,0.1,2");
  const auto pg = phase_eigenfunction(sys, rep, grid, cfg);
  const auto ag = amplitude_eigenfunction(sys, rep, grid, cfg);
  const ResidualReport rp = eigen_residual(sys, pg, 2 * rep.tau, cfg);
  const ResidualReport ra = eigen_residual(sys, ag, 2 * rep.tau, cfg);
  CHECK(rp.evaluated == 16);
  CHECK(rp.max_residual < 1e-3);
  CHECK(ra.max_residual < 1e-3);

  // the computed grids descend to the quotient
  const auto guard = std::vector<Vec>{vec({1.0, 0.2}), vec({1.0, 1.0}), vec({1.0, 4.0})};
  for (const auto* g : {&pg, &ag}) {
    const auto fn = g->function.fn;
    const auto obs = ObservableFn::callable([fn](int m, const Vec& x) { return fn({m, x}); });
    CHECK(quotient_consistency(sys, obs, 0, guard, 1e-6));
  }
}

TEST_CASE("uniqueness up to a scalar") {
  const auto sys = fixtures::paper_example();
  const IntegratorConfig cfg;
  const SpectralReport a = analyse(sys, section_at(sys, "x1 - 2"), vec({2.0, 2.0}));
  const SpectralReport b = analyse(sys, section_at(sys, "x1 - 1.5"), vec({1.5, 3.0}));
  const GridSpec grid = GridSpec::parse("6,5:1,2,0.1,2");
  const auto pa = phase_eigenfunction(sys, a, grid, cfg);
  const auto pb = phase_eigenfunction(sys, b, grid, cfg);
  const auto aa = amplitude_eigenfunction(sys, a, grid, cfg);
  const auto ab = amplitude_eigenfunction(sys, b, grid, cfg);
  CHECK(aligned_deviation(pa.values, pb.values) < 1e-6);
  CHECK(aligned_deviation(aa.values, ab.values, true) < 1e-6);
  // different normalisation anchors: the scalar is not 1
  CHECK(std::abs(align_scalar(pa.values, pb.values) - 1.0) > 0.1);
}

TEST_CASE("embedding") {
  const auto sys = fixtures::paper_example();
  const IntegratorConfig cfg;
  const SpectralReport rep = analyse(sys, section_at(sys, "x1 - 2"), vec({2.0, 2.0}));
  const PhaseEigenfunction phase(sys, rep, cfg);
  const AmplitudeEigenfunction amp(sys, rep, 0, cfg);
  const Eigenfunction fp{phase.eigenvalue(), [&](const HybridState& s) { return phase(s); }, "phase"};
  const Eigenfunction fa{amp.eigenvalue(), [&](const HybridState& s) { return amp(s); }, "amp"};
  const Embedding emb = build_embedding(rep, {fa, fp});
  REQUIRE(emb.dim() == 3);
  Mat expected(3, 3);
  expected << 0, rep.omega, 0, -rep.omega, 0, 0, 0, 0, rep.exponents[0].real();
  CHECK((emb.a - expected).norm() < 1e-12);
  CHECK((emb.a.bottomRightCorner(1, 1)(0, 0) + 2.0) < 1e-6);
  CHECK((emb(rep.x_star) - vec({1.0, 0.0, 0.0})).norm() < 1e-8);

  CHECK_THROWS_AS(build_embedding(rep, {fa}), Error);
  CHECK_THROWS_AS(build_embedding(rep, {fp}), Error);

  const GridSpec grid = GridSpec::parse("5,5:1,2,0.1,2");
  std::vector<HybridState> pts;
  for (std::size_t i = 0; i < grid.size(); ++i) pts.push_back({0, grid.point(i)});
  const double tau = rep.tau;
  const ResidualReport res = embedding_residual(sys, emb, pts, {tau / 4, tau / 2, tau}, cfg);
  CHECK(res.evaluated == 25);
  CHECK(res.max_residual < 1e-5);

  // injectivity modulo the identification (1, c) ~ (2, c + 1)
  std::vector<Vec> images;
  for (const auto& p : pts) images.push_back(emb(p));
  auto identified = [](const Vec& p, const Vec& q) {
    return std::abs(p(0) - 1) < 1e-12 && std::abs(q(0) - 2) < 1e-12 &&
           std::abs(q(1) - p(1) - 1) < 1e-12;
  };
  int collisions = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      const Vec& p = pts[i].x;
      const Vec& q = pts[j].x;
      if ((p - q).norm() < 1e-3 || identified(p, q) || identified(q, p)) continue;
      if ((images[i] - images[j]).norm() <= 1e-9) ++collisions;
    }
  }
  CHECK(collisions == 0);
}

TEST_CASE("grid spec and export") {
  const GridSpec g = GridSpec::parse("3,2:1,2,0.5,1.5");
  CHECK(g.size() == 6);
  CHECK((g.point(0) - vec({1.0, 0.5})).norm() == 0.0);
  CHECK((g.point(1) - vec({1.0, 1.5})).norm() == 0.0);
  CHECK((g.point(5) - vec({2.0, 1.5})).norm() == 0.0);
  CHECK(GridSpec::parse(g.to_string()).to_string() == g.to_string());
  CHECK_THROWS_AS(GridSpec::parse("3,2"), Error);
  CHECK_THROWS_AS(GridSpec::parse("3:1"), Error);
  CHECK_THROWS_AS(GridSpec::parse("0:1,2"), Error);
  CHECK_THROWS_AS(GridSpec::parse("2:2,1"), Error);
  CHECK_THROWS_AS(GridSpec::parse("2:a,1"), Error);

  const auto sys = fixtures::paper_example();
  const IntegratorConfig cfg;
  const SpectralReport rep = analyse(sys, section_at(sys, "x1 - 2"), vec({2.0, 2.0}));
  const GridSpec grid = GridSpec::parse("4,3:1,2,0.1,2");
  const auto one = amplitude_eigenfunction(sys, rep, grid, cfg, 0, 1);
  const auto many = amplitude_eigenfunction(sys, rep, grid, cfg, 0, 3);
  std::ostringstream a, b;
  write_eigenfunction_csv(a, one);
  write_eigenfunction_csv(b, many);
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("mode,x1,x2,re,im\n", 0) == 0);

  const Eigenfunction zero{Complex(-2.0), [](const HybridState&) { return Complex(0.0); }, "zero"};
  CHECK_THROWS_AS(tabulate(zero, grid), Error);
}

}  // TEST_SUITE
