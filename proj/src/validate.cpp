#include "hybridkoop/validate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/SVD>
#include <boost/math/tools/toms748_solve.hpp>

#include "hybridkoop/numdiff.hpp"

namespace hybridkoop {

namespace {

std::vector<Vec> latin_hypercube(const std::vector<Interval>& box, int count, std::mt19937_64& rng) {
  const auto n = box.size();
  std::vector<Vec> pts(static_cast<std::size_t>(count), Vec(static_cast<Eigen::Index>(n)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<int> perm(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < n; ++i) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int k = 0; k < count; ++k) {
      const double u = (perm[static_cast<std::size_t>(k)] + unit(rng)) / count;
      pts[static_cast<std::size_t>(k)](static_cast<Eigen::Index>(i)) =
          box[i].lo + u * (box[i].hi - box[i].lo);
    }
  }
  return pts;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

Vec level_gradient(const ExprTree& level, const Vec& x) {
  Vec grad(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    grad(i) = directional_derivative(level, x, Vec::Unit(x.size(), i), 1);
  }
  return grad;
}

std::optional<Vec> level_point_along_axis(const std::vector<Interval>& box, const ExprTree& level,
                                          const Vec& p) {
  Vec grad;
  try {
    grad = level_gradient(level, p);
  } catch (const Error&) {
    return std::nullopt;
  }
  Eigen::Index axis = -1;
  for (Eigen::Index i = 0; i < grad.size(); ++i) {
    if (std::abs(grad(i)) > 1e-12) {
      axis = i;
      break;
    }
  }
  if (axis < 0) return std::nullopt;
  const Interval& iv = box[static_cast<std::size_t>(axis)];
  auto g = [&](double s) {
    Vec q = p;
    q(axis) = s;
    return eval(level, q);
  };
  try {
    const double glo = g(iv.lo);
    const double ghi = g(iv.hi);
    Vec z = p;
    if (glo == 0.0 || ghi == 0.0) {
      z(axis) = glo == 0.0 ? iv.lo : iv.hi;
      return z;
    }
    if ((glo < 0.0) == (ghi < 0.0)) return std::nullopt;
    boost::uintmax_t iters = 200;
    auto stop = [](double a, double b) { return std::abs(b - a) <= 1e-15 * (1.0 + std::abs(a)); };
    const auto [a, b] = boost::math::tools::toms748_solve(g, iv.lo, iv.hi, glo, ghi, stop, iters);
    z(axis) = std::abs(g(a)) <= std::abs(g(b)) ? a : b;
    return z;
  } catch (const Error&) {
    return std::nullopt;
  }
}

std::vector<Vec> sample_level_set(const std::vector<Interval>& box, const ExprTree& level,
                                  int count, std::uint64_t seed) {
  if (count < 1) throw Error(ErrorCode::invalid_argument, "sample count must be positive");
  std::mt19937_64 rng(seed);
  std::vector<Vec> out;
  for (const Vec& p : latin_hypercube(box, count, rng)) {
    if (auto z = level_point_along_axis(box, level, p)) out.push_back(*z);
  }
  if (out.empty()) {
    throw Error(ErrorCode::sampling_failure, "no level-set points found inside the box");
  }
  return out;
}

Vec level_set_anchor(const std::vector<Interval>& box, const ExprTree& level) {
  Vec centre(static_cast<Eigen::Index>(box.size()));
  for (std::size_t i = 0; i < box.size(); ++i) {
    centre(static_cast<Eigen::Index>(i)) = 0.5 * (box[i].lo + box[i].hi);
  }
  if (auto z = level_point_along_axis(box, level, centre)) return *z;
  return sample_level_set(box, level, 16, 0).front();
}

Mat level_tangent_basis(const ExprTree& level, const Vec& z) {
  const Vec grad = level_gradient(level, z);
  if (grad.norm() == 0.0) {
    throw Error(ErrorCode::invalid_argument, "level-set gradient vanishes");
  }
  const Eigen::Index n = grad.size();
  Eigen::JacobiSVD<Mat> svd(grad.transpose(), Eigen::ComputeFullV);
  Mat basis = svd.matrixV().rightCols(n - 1);
  for (Eigen::Index c = 0; c < basis.cols(); ++c) {
    Eigen::Index k;
    basis.col(c).cwiseAbs().maxCoeff(&k);
    if (basis(k, c) < 0.0) basis.col(c) *= -1.0;
  }
  return basis;
}

std::optional<Vec> guard_point_along_axis(const HybridSystemDef& sys, int mode, const Vec& p) {
  const ModeDef& m = sys.mode(mode);
  return level_point_along_axis(m.domain_box, m.guard_level, p);
}

Vec guard_anchor(const HybridSystemDef& sys, int mode) {
  const ModeDef& m = sys.mode(mode);
  return level_set_anchor(m.domain_box, m.guard_level);
}

std::vector<Vec> sample_guard(const HybridSystemDef& sys, int mode, int count,
                              std::uint64_t seed) {
  if (count < 1) throw Error(ErrorCode::invalid_argument, "sample count must be positive");
  const ModeDef& m = sys.mode(mode);
  try {
    return sample_level_set(m.domain_box, m.guard_level, count, seed);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::sampling_failure) throw;
    throw Error(ErrorCode::sampling_failure,
                "no guard points found inside the domain box of mode " + std::to_string(mode));
  }
}

Mat guard_tangent_basis(const HybridSystemDef& sys, int mode, const Vec& z) {
  try {
    return level_tangent_basis(sys.mode(mode).guard_level, z);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::invalid_argument) throw;
    throw Error(ErrorCode::invalid_argument, "guard gradient vanishes at a guard point");
  }
}

bool ValidationReport::pass(const std::string& name) const {
  return std::all_of(checks.begin(), checks.end(),
                     [&](const AssumptionCheck& c) { return c.name != name || c.pass; });
}

bool ValidationReport::all_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const AssumptionCheck& c) { return c.pass; });
}

ValidationReport validate_assumptions(const HybridSystemDef& sys, int samples, double tol,
                                      std::uint64_t seed, const IntegratorConfig& cfg) {
  check_structure(sys);
  ValidationReport report;
  report.samples = samples;
  report.tol = tol;
  report.seed = seed;

  std::vector<std::vector<Vec>> guards;
  for (int j = 0; j < sys.num_modes; ++j) {
    guards.push_back(sample_guard(sys, j, samples, seed + static_cast<std::uint64_t>(j)));
  }

  for (int j = 0; j < sys.num_modes; ++j) {
    const ModeDef& m = sys.mode(j);
    const int next = sys.next_mode(j);
    const ModeDef& mn = sys.mode(next);

    // A1: dg/dt along F on the guard
    AssumptionCheck a1{"A1", j, false, kInf, ""};
    for (const Vec& z : guards[static_cast<std::size_t>(j)]) {
      double rate;
      try {
        rate = directional_derivative(m.guard_level, z, eval_vector_field(sys, j, z), 1);
      } catch (const Error& e) {
        rate = -kInf;
        a1.detail = e.what();
      }
      a1.margin = std::min(a1.margin, rate);
    }
    a1.pass = a1.margin > tol;
    if (a1.detail.empty()) a1.detail = "min grad(g).F over guard samples";
    report.checks.push_back(a1);

    // A2: reset restricted to the guard is an immersion whose image is
    // transversal to the successor flow, lies inside the successor mode and
    // is left inward by that flow.
    AssumptionCheck a2{"A2", j, false, kInf, ""};
    double worst_sv = kInf;
    double worst_cross = kInf;
    double worst_level = kInf;
    bool inward = true;
    int outside = 0;  // images beyond the successor box are only counted
    for (const Vec& z : guards[static_cast<std::size_t>(j)]) {
      try {
        const Mat tangent = guard_tangent_basis(sys, j, z);
        const Mat dr = numdiff::jacobian([&](const Vec& y) { return reset_map(sys, j, y); }, z);
        const Mat image = dr * tangent;
        Eigen::JacobiSVD<Mat> svd(image, Eigen::ComputeFullU);
        const Vec sv = svd.singularValues();
        worst_sv = std::min(worst_sv, sv.size() ? sv(sv.size() - 1) : kInf);
        const Vec rz = reset_map(sys, j, z);
        const Vec normal = svd.matrixU().col(svd.matrixU().cols() - 1);
        const Vec f = eval_vector_field(sys, next, rz);
        const double fn = f.norm();
        worst_cross = std::min(worst_cross, fn > 0.0 ? std::abs(normal.dot(f)) / fn : 0.0);
        worst_level = std::min(worst_level, -eval(mn.guard_level, rz));
        const double dt = 1e-4 * mn.collar_depth;
        const Vec ahead = flow_in_mode(sys, next, rz, dt, cfg);
        if (eval(mn.guard_level, ahead) >= 0.0) inward = false;
        if (!in_box(sys, next, rz, cfg.box_tol)) {
          ++outside;
        } else if (!in_box(sys, next, ahead, cfg.box_tol)) {
          inward = false;
        }
      } catch (const Error& e) {
        inward = false;
        a2.detail = e.what();
      }
    }
    a2.margin = std::min({worst_sv, worst_cross, worst_level});
    a2.pass = inward && a2.margin > tol;
    if (a2.detail.empty()) {
      a2.detail = "min singular value " + std::to_string(worst_sv) + ", transversality " +
                  std::to_string(worst_cross) + ", successor level margin " +
                  std::to_string(worst_level) + (inward ? "" : ", image not entered inward");
      if (outside > 0) a2.detail += ", " + std::to_string(outside) + " images outside the successor box";
    }
    report.checks.push_back(a2);
  }

  // A3: guard of mode j stays away from the reset image of mode j - 1
  for (int j = 0; j < sys.num_modes; ++j) {
    const int prev = sys.prev_mode(j);
    AssumptionCheck a3{"A3", j, false, kInf, "min distance between guard and reset image"};
    for (const Vec& z : guards[static_cast<std::size_t>(prev)]) {
      Vec rz;
      try {
        rz = reset_map(sys, prev, z);
      } catch (const Error& e) {
        a3.margin = 0.0;
        a3.detail = e.what();
        continue;
      }
      for (const Vec& w : guards[static_cast<std::size_t>(j)]) {
        a3.margin = std::min(a3.margin, (w - rz).norm());
      }
    }
    a3.pass = a3.margin > tol;
    report.checks.push_back(a3);
  }
  return report;
}

}  // namespace hybridkoop
