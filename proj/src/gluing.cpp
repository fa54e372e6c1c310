#include "hybridkoop/gluing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/LU>
#include <Eigen/SVD>
#include <boost/math/tools/toms748_solve.hpp>

#include "hybridkoop/numdiff.hpp"
#include "hybridkoop/validate.hpp"

namespace hybridkoop {

namespace {

Vec eval_all(const std::vector<ExprTree>& comps, const Vec& x) {
  Vec out(static_cast<Eigen::Index>(comps.size()));
  for (std::size_t i = 0; i < comps.size(); ++i) out(static_cast<Eigen::Index>(i)) = eval(comps[i], x);
  return out;
}

double smallest_singular_value(const Mat& m) {
  if (m.size() == 0) return std::numeric_limits<double>::infinity();
  Eigen::JacobiSVD<Mat> svd(m);
  const Vec sv = svd.singularValues();
  return sv(sv.size() - 1);
}

}  // namespace

FieldFn mode_field(const HybridSystemDef& sys, int mode) {
  return [&sys, mode](const Vec& x) { return eval_vector_field(sys, mode, x); };
}

FieldFn expr_field(std::vector<ExprTree> components) {
  return [comps = std::move(components)](const Vec& x) { return eval_all(comps, x); };
}

Frame system_frame(const HybridSystemDef& sys, int mode) {
  Frame frame;
  frame.mode = mode;
  frame.provenance = "system document, mode " + std::to_string(mode);
  for (const auto& comps : sys.mode(mode).frame) frame.aux.push_back(expr_field(comps));
  return frame;
}

Vec lie_bracket(const FieldFn& a, const FieldFn& b, const Vec& x) {
  const Vec av = a(x);
  const Vec bv = b(x);
  return numdiff::directional_vec(b, x, av) - numdiff::directional_vec(a, x, bv);
}

std::vector<Vec> sample_collar(const HybridSystemDef& sys, int mode, int count,
                               std::uint64_t seed, const IntegratorConfig& cfg) {
  const double depth = sys.mode(mode).collar_depth;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> depth_dist(0.0, 0.9 * depth);
  std::vector<Vec> out;
  std::uint64_t round = 0;
  while (static_cast<int>(out.size()) < count && round < 20) {
    const auto guard = sample_guard(sys, mode, count, seed + 7919 * (round + 1));
    for (const Vec& z : guard) {
      if (static_cast<int>(out.size()) >= count) break;
      try {
        out.push_back(integrate_mode(sys, {mode, z}, -depth_dist(rng), cfg).x);
      } catch (const Error&) {
        // left the box on the way back; skip
      }
    }
    ++round;
  }
  if (out.empty()) {
    throw Error(ErrorCode::sampling_failure, "no collar points inside the box of mode " +
                                                 std::to_string(mode));
  }
  return out;
}

FrameReport check_frame(const HybridSystemDef& sys, const Frame& frame, int samples, double tol,
                        std::uint64_t seed, const IntegratorConfig& cfg) {
  const int j = frame.mode;
  const int n = sys.dim;
  FrameReport report;
  report.mode = j;
  report.samples = samples;
  report.tol = tol;
  if (static_cast<int>(frame.aux.size()) != n - 1) {
    throw Error(ErrorCode::invalid_argument, "frame needs " + std::to_string(n - 1) + " fields");
  }

  report.span_margin = std::numeric_limits<double>::infinity();
  for (const Vec& z : sample_guard(sys, j, samples, seed)) {
    const Mat tangent = guard_tangent_basis(sys, j, z);
    const Vec grad = guard_gradient(sys, j, z);
    const Vec normal = grad / grad.norm();
    Mat cols(n, n - 1);
    for (int k = 0; k < n - 1; ++k) {
      const Vec fk = frame.aux[static_cast<std::size_t>(k)](z);
      cols.col(k) = fk;
      const double fn = fk.norm();
      report.normal_residual =
          std::max(report.normal_residual, fn > 0.0 ? std::abs(normal.dot(fk)) / fn : 1.0);
    }
    report.span_margin = std::min(report.span_margin, smallest_singular_value(tangent.transpose() * cols));
  }
  report.span_pass = report.span_margin > tol && report.normal_residual <= tol;

  std::vector<FieldFn> fields{mode_field(sys, j)};
  fields.insert(fields.end(), frame.aux.begin(), frame.aux.end());
  for (const Vec& x : sample_collar(sys, j, samples, seed + 1, cfg)) {
    for (std::size_t a = 0; a < fields.size(); ++a) {
      for (std::size_t b = a + 1; b < fields.size(); ++b) {
        report.bracket_residual =
            std::max(report.bracket_residual, lie_bracket(fields[a], fields[b], x).norm());
      }
    }
  }
  report.bracket_pass = report.bracket_residual <= tol;
  return report;
}

// ---------------------------------------------------------------------------
// Guard charts

GuardChart GuardChart::fitted(const HybridSystemDef& sys, int mode, const Vec& anchor) {
  const Vec grad = guard_gradient(sys, mode, anchor);
  Eigen::Index axis = -1;
  for (Eigen::Index i = 0; i < grad.size(); ++i) {
    if (std::abs(grad(i)) > 1e-12) {
      axis = i;
      break;
    }
  }
  if (axis < 0) throw Error(ErrorCode::chart_failure, "guard gradient vanishes at the anchor");
  const Eigen::Index n = anchor.size();
  const ExprTree level = sys.mode(mode).guard_level;
  const Interval iv = sys.mode(mode).domain_box[static_cast<std::size_t>(axis)];
  const double start = anchor(axis);

  GuardChart chart;
  chart.to_ = [axis, n](const Vec& z) {
    Vec c(n - 1);
    for (Eigen::Index i = 0, k = 0; i < n; ++i) {
      if (i != axis) c(k++) = z(i);
    }
    return c;
  };
  chart.from_ = [axis, n, level, iv, start](const Vec& c) {
    Vec z(n);
    for (Eigen::Index i = 0, k = 0; i < n; ++i) {
      if (i != axis) z(i) = c(k++);
    }
    auto g = [&](double s) {
      Vec q = z;
      q(axis) = s;
      return eval(level, q);
    };
    // Newton from the anchor's coordinate, bracketing fallback inside the box
    double s = start;
    for (int it = 0; it < 60; ++it) {
      double value;
      double slope;
      try {
        value = g(s);
        const double h = 1e-6 * (1.0 + std::abs(s));
        slope = (g(s + h) - g(s - h)) / (2.0 * h);
      } catch (const Error&) {
        break;
      }
      if (value == 0.0) {
        z(axis) = s;
        return z;
      }
      if (slope == 0.0 || !std::isfinite(slope)) break;
      const double step = value / slope;
      s -= step;
      if (std::abs(step) <= 1e-15 * (1.0 + std::abs(s))) {
        z(axis) = s;
        return z;
      }
    }
    try {
      const double glo = g(iv.lo);
      const double ghi = g(iv.hi);
      if ((glo < 0.0) != (ghi < 0.0)) {
        boost::uintmax_t iters = 200;
        auto stop = [](double a, double b) { return std::abs(b - a) <= 1e-15 * (1.0 + std::abs(a)); };
        const auto [a, b] = boost::math::tools::toms748_solve(g, iv.lo, iv.hi, glo, ghi, stop, iters);
        z(axis) = 0.5 * (a + b);
        return z;
      }
    } catch (const Error&) {
    }
    throw Error(ErrorCode::chart_failure, "guard chart: no guard point for these coordinates");
  };
  return chart;
}

GuardChart GuardChart::from_def(const GuardChartDef& def) {
  GuardChart chart;
  chart.to_ = [to = def.to_coords](const Vec& z) { return eval_all(to, z); };
  chart.from_ = [from = def.from_coords](const Vec& c) { return eval_all(from, c); };
  return chart;
}

GuardChart GuardChart::for_mode(const HybridSystemDef& sys, int mode, const Vec& anchor) {
  const auto& def = sys.mode(mode).guard_chart;
  if (def) return from_def(*def);
  return fitted(sys, mode, anchor);
}

Vec GuardChart::to_coords(const Vec& z) const { return to_(z); }
Vec GuardChart::from_coords(const Vec& c) const { return from_(c); }

// ---------------------------------------------------------------------------
// Psi and its inverse

HybridState gluing_map(const HybridSystemDef& sys, const HybridState& s,
                       const IntegratorConfig& cfg) {
  check_state(sys, s);
  const double sigma = time_to_impact(sys, s, cfg);
  const double depth = sys.mode(s.mode).collar_depth;
  if (sigma > depth * (1.0 + 1e-12)) {
    throw Error(ErrorCode::collar_violation,
                "time to impact " + std::to_string(sigma) + " exceeds the collar depth " +
                    std::to_string(depth),
                sigma);
  }
  const HybridState z = project_to_guard(sys, s, cfg);
  const HybridState landed = apply_reset(sys, z, cfg.guard_tol);
  return integrate_mode(sys, landed, sigma, cfg);
}

Vec gluing_map_continued(const HybridSystemDef& sys, int mode, const Vec& x,
                         const IntegratorConfig& cfg) {
  const GuardHit hit = signed_guard_hit(sys, mode, x, cfg);
  return flow_in_mode(sys, sys.next_mode(mode), reset_map(sys, mode, hit.x), hit.t, cfg);
}

namespace {

struct InverseResult {
  double t = 0.0;
  Vec z;  // guard point
};

// Damped Newton for phi^(j+1)_{-t}(y) = R(zeta^-1(c)) over (t, c), with
// several starting flow times. `accept` filters converged solutions.
template <class Accept>
InverseResult solve_inverse(const HybridSystemDef& sys, int next, const Vec& y,
                            const IntegratorConfig& cfg, Accept&& accept) {
  const int j = sys.prev_mode(next);
  const double depth = sys.mode(j).collar_depth;
  const Eigen::Index n = y.size();
  const Vec anchor = guard_anchor(sys, j);
  const GuardChart zeta = GuardChart::for_mode(sys, j, anchor);

  auto image_point = [&](const Vec& c) { return reset_map(sys, j, zeta.from_coords(c)); };
  auto residual = [&](const Vec& u) -> Vec {
    return flow_in_mode(sys, next, y, -u(0), cfg) - image_point(u.tail(n - 1));
  };
  const double scale = 1.0 + y.norm();

  // Gauss-Newton projection of p onto R(G) in chart coordinates
  auto project_image = [&](const Vec& p, Vec c) {
    for (int it = 0; it < 20; ++it) {
      const Vec r = image_point(c) - p;
      const Mat jac = numdiff::jacobian(image_point, c);
      const Vec step = jac.colPivHouseholderQr().solve(r);
      c -= step;
      if (step.norm() <= 1e-12 * (1.0 + c.norm())) break;
    }
    return c;
  };

  const Vec c_anchor = zeta.to_coords(anchor);
  std::string last_failure = "no start converged";
  for (double frac : {0.5, 0.0, 0.25, 0.75, 1.0, 0.1, 0.9}) {
    try {
      Vec u(n);
      u(0) = frac * depth;
      u.tail(n - 1) = project_image(flow_in_mode(sys, next, y, -u(0), cfg), c_anchor);
      Vec r = residual(u);
      double rnorm = r.norm();
      for (int it = 0; it < 60 && rnorm > 1e-13 * scale; ++it) {
        const Mat jac = numdiff::jacobian(residual, u);
        const Vec step = jac.partialPivLu().solve(r);
        if (!step.allFinite()) break;
        double lambda = 1.0;
        bool improved = false;
        for (int k = 0; k < 30; ++k) {
          const Vec trial = u - lambda * step;
          Vec rt;
          try {
            rt = residual(trial);
          } catch (const Error&) {
            lambda *= 0.5;
            continue;
          }
          if (rt.norm() < rnorm || rt.norm() <= 1e-13 * scale) {
            u = trial;
            r = rt;
            rnorm = rt.norm();
            improved = true;
            break;
          }
          lambda *= 0.5;
        }
        if (!improved || (lambda * step).norm() <= 1e-16 * (1.0 + u.norm())) break;
      }
      if (rnorm > 1e-10 * scale) {
        last_failure = "residual " + std::to_string(rnorm);
        continue;
      }
      InverseResult result{u(0), zeta.from_coords(u.tail(n - 1))};
      const std::string why = accept(result);
      if (!why.empty()) {
        last_failure = why;
        continue;
      }
      return result;
    } catch (const Error& e) {
      last_failure = e.what();
    }
  }
  throw Error(ErrorCode::not_in_image, "point is not in the gluing image: " + last_failure);
}

}  // namespace

HybridState gluing_map_inverse(const HybridSystemDef& sys, const HybridState& s,
                               const IntegratorConfig& cfg) {
  check_state(sys, s);
  const int j = sys.prev_mode(s.mode);
  const double depth = sys.mode(j).collar_depth;
  Vec x;
  solve_inverse(sys, s.mode, s.x, cfg, [&](const InverseResult& r) -> std::string {
    if (r.t < -1e-9 || r.t > depth * (1.0 + 1e-9)) {
      return "flow time " + std::to_string(r.t) + " outside the collar";
    }
    x = flow_in_mode(sys, j, r.z, -std::max(r.t, 0.0), cfg);
    if (!in_box(sys, j, x, cfg.box_tol)) return "preimage lies outside the domain box";
    return {};
  });
  return HybridState{j, std::move(x)};
}

Vec gluing_map_inverse_continued(const HybridSystemDef& sys, int image_mode, const Vec& y,
                                 const IntegratorConfig& cfg) {
  const int j = sys.prev_mode(image_mode);
  const double depth = sys.mode(j).collar_depth;
  const InverseResult r = solve_inverse(sys, image_mode, y, cfg, [&](const InverseResult& res) {
    return std::abs(res.t) <= 2.0 * depth ? std::string{} : std::string("flow time out of range");
  });
  return flow_in_mode(sys, j, r.z, -r.t, cfg);
}

// ---------------------------------------------------------------------------
// Pushforwards

Vec pushforward(const HybridSystemDef& sys, MapKind map, const FieldFn& field,
                const HybridState& s, const IntegratorConfig& cfg) {
  check_state(sys, s);
  if (map.kind == MapKind::Kind::gluing) {
    const int j = sys.prev_mode(s.mode);
    const Vec pre = gluing_map_inverse_continued(sys, s.mode, s.x, cfg);
    const Vec v = field(pre);
    return numdiff::directional_vec(
        [&](const Vec& x) { return gluing_map_continued(sys, j, x, cfg); }, pre, v);
  }
  const Vec pre = flow_in_mode(sys, s.mode, s.x, -map.t, cfg);
  const Vec v = field(pre);
  return numdiff::directional_vec(
      [&](const Vec& x) { return flow_in_mode(sys, s.mode, x, map.t, cfg); }, pre, v);
}

FieldFn pushforward_field(const HybridSystemDef& sys, int mode, MapKind map, FieldFn field,
                          const IntegratorConfig& cfg) {
  const int target = map.kind == MapKind::Kind::gluing ? sys.next_mode(mode) : mode;
  return [&sys, target, map, field = std::move(field), cfg](const Vec& x) {
    return pushforward(sys, map, field, HybridState{target, x}, cfg);
  };
}

// ---------------------------------------------------------------------------
// Collar chart

CollarChart::CollarChart(const HybridSystemDef& sys, int mode, GuardChart zeta,
                         IntegratorConfig cfg)
    : sys_(&sys), mode_(mode), zeta_(std::move(zeta)), cfg_(cfg) {}

Vec CollarChart::eta(const HybridState& s, Side side) const {
  HybridState base = s;
  double sign = -1.0;
  if (side == Side::image) {
    if (s.mode != sys_->next_mode(mode_)) {
      throw Error(ErrorCode::invalid_argument, "image-side point must lie in the successor mode");
    }
    base = gluing_map_inverse(*sys_, s, cfg_);
    sign = 1.0;
  } else if (s.mode != mode_) {
    throw Error(ErrorCode::invalid_argument, "collar-side point must lie in the chart's mode");
  }
  const double sigma = time_to_impact(*sys_, base, cfg_);
  const Vec c = zeta_.to_coords(project_to_guard(*sys_, base, cfg_).x);
  Vec y(c.size() + 1);
  y(0) = sign * sigma;
  y.tail(c.size()) = c;
  return y;
}

HybridState CollarChart::eta_inverse(const Vec& y) const {
  const Vec z = zeta_.from_coords(y.tail(y.size() - 1));
  if (y(0) < 0.0) return integrate_mode(*sys_, {mode_, z}, y(0), cfg_);
  const HybridState landed = apply_reset(*sys_, {mode_, z}, cfg_.guard_tol);
  return integrate_mode(*sys_, landed, y(0), cfg_);
}

Vec CollarChart::eta_inverse_branch(const Vec& y, Side side) const {
  const Vec z = zeta_.from_coords(y.tail(y.size() - 1));
  if (side == Side::collar) return flow_in_mode(*sys_, mode_, z, y(0), cfg_);
  return flow_in_mode(*sys_, sys_->next_mode(mode_), reset_map(*sys_, mode_, z), y(0), cfg_);
}

CollarChart build_collar_chart(const HybridSystemDef& sys, int mode, const GuardChart& zeta,
                               const IntegratorConfig& cfg) {
  for (const Vec& z : sample_guard(sys, mode, 20, 0)) {
    Vec back;
    try {
      back = zeta.from_coords(zeta.to_coords(z));
    } catch (const Error& e) {
      throw Error(ErrorCode::chart_failure, std::string("guard chart round trip failed: ") + e.what());
    }
    if ((back - z).norm() > 1e-8 * (1.0 + z.norm())) {
      throw Error(ErrorCode::chart_failure, "guard chart is not a bijection on guard samples");
    }
  }
  return CollarChart(sys, mode, zeta, cfg);
}

}  // namespace hybridkoop
