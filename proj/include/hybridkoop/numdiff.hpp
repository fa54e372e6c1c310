#pragma once

// Finite-difference kernels shared by the expression language, the Lie
// derivative machinery, pushforwards and the seam scan. All kernels take a
// callable returning double or std::complex<double>.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <type_traits>
#include <vector>

#include "hybridkoop/error.hpp"
#include "hybridkoop/linalg.hpp"

namespace hybridkoop::numdiff {

enum class Stencil { central, forward, backward };

struct StepOptions {
  Stencil stencil = Stencil::central;
  double scale = 1.0;  // multiplies the default step
};

/// Default step along v: cbrt(eps) for first order, eps^(1/4) for second
/// order, times (1 + |x|) / max(1, |v|).
inline double default_step(const Vec& x, const Vec& v, int order) {
  const double eps = std::numeric_limits<double>::epsilon();
  const double base = order == 1 ? std::cbrt(eps) : std::pow(eps, 0.25);
  return base * (1.0 + x.norm()) / std::max(1.0, v.norm());
}

/// One-sided stencils are noise limited at larger steps than central ones.
inline double one_sided_step(const Vec& x, const Vec& v, int order) {
  const double eps = std::numeric_limits<double>::epsilon();
  const double base = std::pow(eps, 1.0 / (order + 5.0));
  return base * (1.0 + x.norm()) / std::max(1.0, v.norm());
}

/// Fornberg weights for the derivative of order `order` at `x0` on `nodes`.
std::vector<double> fd_weights(std::span<const double> nodes, double x0, int order);

template <class F>
using diff_result_t = std::decay_t<std::invoke_result_t<F&, const Vec&>>;

/// order-th derivative of t -> f(x + t v) at t = 0. Central stencils use
/// Richardson extrapolation over (h, h/2); one-sided stencils use order + 5
/// equispaced nodes (fifth-order accurate).
template <class F>
diff_result_t<F> directional(F&& f, const Vec& x, const Vec& v, int order, StepOptions opt = {}) {
  using R = diff_result_t<F>;
  if (order < 1 || order > 2) {
    throw Error(ErrorCode::invalid_argument, "directional derivative order must be 1 or 2");
  }
  if (v.norm() == 0.0) return R{};

  if (opt.stencil == Stencil::central) {
    const double h = default_step(x, v, order) * opt.scale;
    auto at = [&](double t) -> R { return f(Vec(x + t * v)); };
    if (order == 1) {
      auto d1 = [&](double s) { return (at(s) - at(-s)) / (2.0 * s); };
      const R coarse = d1(h);
      const R fine = d1(0.5 * h);
      return (4.0 * fine - coarse) / 3.0;
    }
    const R f0 = at(0.0);
    auto d2 = [&](double s) { return (at(s) - 2.0 * f0 + at(-s)) / (s * s); };
    const R coarse = d2(h);
    const R fine = d2(0.5 * h);
    return (4.0 * fine - coarse) / 3.0;
  }

  const double sign = opt.stencil == Stencil::forward ? 1.0 : -1.0;
  const double h = one_sided_step(x, v, order) * opt.scale;
  const int count = order + 6;
  std::vector<double> nodes(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) nodes[static_cast<std::size_t>(i)] = sign * i * h;
  const std::vector<double> w = fd_weights(nodes, 0.0, order);
  R acc{};
  for (int i = 0; i < count; ++i) {
    const double t = nodes[static_cast<std::size_t>(i)];
    acc += w[static_cast<std::size_t>(i)] * f(Vec(x + t * v));
  }
  return acc;
}

/// Central-difference Jacobian of a vector map, one Richardson extrapolation
/// per column.
template <class F>
Mat jacobian(F&& f, const Vec& x, double scale = 1.0) {
  const Eigen::Index n = x.size();
  Mat jac;
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec e = Vec::Zero(n);
    e(i) = 1.0;
    const double h = default_step(x, e, 1) * scale;
    auto d1 = [&](double s) -> Vec {
      return (f(Vec(x + s * e)) - f(Vec(x - s * e))) / (2.0 * s);
    };
    const Vec col = (4.0 * d1(0.5 * h) - d1(h)) / 3.0;
    if (jac.size() == 0) jac.resize(col.size(), n);
    jac.col(i) = col;
  }
  return jac;
}

/// Directional derivative of a vector map (the Jacobian applied to v).
template <class F>
Vec directional_vec(F&& f, const Vec& x, const Vec& v, double scale = 1.0) {
  if (v.norm() == 0.0) return Vec::Zero(f(x).size());
  const double h = default_step(x, v, 1) * scale;
  auto d1 = [&](double s) -> Vec { return (f(Vec(x + s * v)) - f(Vec(x - s * v))) / (2.0 * s); };
  return (4.0 * d1(0.5 * h) - d1(h)) / 3.0;
}

}  // namespace hybridkoop::numdiff
