#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "hybridkoop/system.hpp"

namespace fixtures {

using hybridkoop::ExprTree;
using hybridkoop::HybridSystemDef;
using hybridkoop::ModeDef;
using hybridkoop::Vec;

inline std::vector<ExprTree> exprs(const std::vector<std::string>& texts) {
  std::vector<ExprTree> out;
  for (const auto& t : texts) out.push_back(hybridkoop::parse(t));
  return out;
}

// F = (-x1, -2 x2), guard x1 = 1, reset (2, x2 + 1), one mode.
inline HybridSystemDef paper_example() {
  ModeDef m;
  m.vector_field = exprs({"-x1", "-2*x2"});
  m.guard_level = hybridkoop::parse("1 - x1");
  m.reset = exprs({"2", "x2 + 1"});
  m.domain_box = {{1.0, 2.0}, {1e-3, 10.0}};
  m.collar_depth = 0.7;
  m.frame = {exprs({"0", "x2"})};
  HybridSystemDef sys;
  sys.num_modes = 1;
  sys.dim = 2;
  sys.modes = {m};
  sys.period_hint = std::log(2.0);
  return sys;
}

inline Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) out(i++) = d;
  return out;
}

// closed-form oracles
inline Vec flow(const Vec& x, double t) { return vec({x(0) * std::exp(-t), x(1) * std::exp(-2 * t)}); }
inline double sigma(const Vec& x) { return std::log(x(0)); }
inline Vec h(const Vec& x) { return vec({1.0, x(1) / (x(0) * x(0))}); }
inline Vec psi(const Vec& x) {
  const double x1 = x(0);
  return vec({2.0 / x1, x(1) / std::pow(x1, 4) + 1.0 / (x1 * x1)});
}
inline Vec psi_inv(const Vec& y) {
  // y = (2/x1, x2/x1^4 + 1/x1^2)
  const double x1 = 2.0 / y(0);
  return vec({x1, (y(1) - 1.0 / (x1 * x1)) * std::pow(x1, 4)});
}

}  // namespace fixtures
