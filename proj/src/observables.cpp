#include "hybridkoop/observables.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "hybridkoop/numdiff.hpp"

namespace hybridkoop {

// ---------------------------------------------------------------------------
// Tabulated grids

std::size_t TabulatedGrid::index(const std::vector<std::size_t>& idx) const {
  std::size_t flat = 0;
  for (std::size_t a = 0; a < axes.size(); ++a) flat = flat * axes[a].size() + idx[a];
  return flat;
}

Complex TabulatedGrid::interpolate(const Vec& x) const {
  const std::size_t dims = axes.size();
  if (static_cast<std::size_t>(x.size()) != dims) {
    throw Error(ErrorCode::invalid_argument, "tabulated observable: dimension mismatch");
  }
  // per-axis node window and Lagrange weights
  std::vector<std::size_t> first(dims);
  std::vector<std::vector<double>> weights(dims);
  for (std::size_t a = 0; a < dims; ++a) {
    const auto& ax = axes[a];
    const std::size_t count = std::min<std::size_t>(4, ax.size());
    const auto upper = std::upper_bound(ax.begin(), ax.end(), x(static_cast<Eigen::Index>(a)));
    const auto cell = static_cast<std::ptrdiff_t>(upper - ax.begin()) - 1;
    const auto hi_start = static_cast<std::ptrdiff_t>(ax.size() - count);
    first[a] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(cell - 1, 0, hi_start));
    weights[a].assign(count, 1.0);
    const double xa = x(static_cast<Eigen::Index>(a));
    for (std::size_t p = 0; p < count; ++p) {
      for (std::size_t q = 0; q < count; ++q) {
        if (p == q) continue;
        weights[a][p] *= (xa - ax[first[a] + q]) / (ax[first[a] + p] - ax[first[a] + q]);
      }
    }
  }
  Complex acc{};
  std::vector<std::size_t> offset(dims, 0);
  std::vector<std::size_t> idx(dims);
  for (;;) {
    double w = 1.0;
    for (std::size_t a = 0; a < dims; ++a) {
      w *= weights[a][offset[a]];
      idx[a] = first[a] + offset[a];
    }
    acc += w * values[index(idx)];
    std::size_t a = dims;
    while (a > 0) {
      --a;
      if (++offset[a] < weights[a].size()) break;
      offset[a] = 0;
      if (a == 0) return acc;
    }
    if (dims == 0) return acc;
  }
}

// ---------------------------------------------------------------------------
// ObservableFn

ObservableFn ObservableFn::expression(ExprTree re, ExprTree im) {
  ObservableFn f;
  f.kind_ = Kind::expression;
  f.re_ = {std::move(re)};
  f.im_ = {std::move(im)};
  return f;
}

ObservableFn ObservableFn::per_mode(std::vector<ExprTree> re, std::vector<ExprTree> im) {
  if (re.size() != im.size() || re.empty()) {
    throw Error(ErrorCode::invalid_argument, "observable needs one (re, im) pair per mode");
  }
  ObservableFn f;
  f.kind_ = Kind::expression;
  f.re_ = std::move(re);
  f.im_ = std::move(im);
  return f;
}

ObservableFn ObservableFn::tabulated(std::vector<TabulatedGrid> grids) {
  ObservableFn f;
  f.kind_ = Kind::tabulated;
  f.grids_ = std::move(grids);
  return f;
}

ObservableFn ObservableFn::callable(Callable fn) {
  ObservableFn f;
  f.kind_ = Kind::callable;
  f.fn_ = std::move(fn);
  return f;
}

Complex ObservableFn::operator()(int mode, const Vec& x) const {
  switch (kind_) {
    case Kind::expression: {
      const std::size_t j = re_.size() == 1 ? 0 : static_cast<std::size_t>(mode);
      return {eval(re_.at(j), x), eval(im_.at(j), x)};
    }
    case Kind::tabulated:
      return grids_.at(grids_.size() == 1 ? 0 : static_cast<std::size_t>(mode)).interpolate(x);
    case Kind::callable:
      return fn_(mode, x);
  }
  return {};
}

// ---------------------------------------------------------------------------
// Lie derivatives

namespace {

using Inside = std::function<bool(const Vec&)>;

// Outer layers of a nested stack difference an already differenced
// function; larger steps keep the inner noise from being amplified.
constexpr double kNestedCentralScale = 300.0;
constexpr double kNestedOneSidedScale = 4.0;

numdiff::StepOptions choose_stencil(bool central_only, const Inside& inside, const Vec& x,
                                    const Vec& v, int order, bool nested) {
  numdiff::StepOptions opt;
  opt.scale = nested ? kNestedCentralScale : 1.0;
  if (central_only || !inside) return opt;
  const double h = numdiff::default_step(x, v, order) * opt.scale;
  if (inside(x + h * v) && inside(x - h * v)) return opt;
  numdiff::StepOptions one;
  one.scale = nested ? kNestedOneSidedScale : 1.0;
  const double reach = (order + 5) * numdiff::one_sided_step(x, v, order) * one.scale;
  if (inside(x + reach * v)) {
    one.stencil = numdiff::Stencil::forward;
    return one;
  }
  if (inside(x - reach * v)) {
    one.stencil = numdiff::Stencil::backward;
    return one;
  }
  return opt;
}

Complex lie_rec(const ObservableFn& f, int mode, const std::vector<FieldFn>& fields,
                std::size_t from, const Vec& x, const Inside& inside) {
  if (from == fields.size()) return f(mode, x);
  auto inner = [&](const Vec& y) { return lie_rec(f, mode, fields, from + 1, y, inside); };
  const Vec v = fields[from](x);
  const bool nested = from + 1 < fields.size();
  const auto opt = choose_stencil(f.kind() == ObservableFn::Kind::expression, inside, x, v, 1, nested);
  return numdiff::directional(inner, x, v, 1, opt);
}

Inside mode_interior(const HybridSystemDef& sys, int mode) {
  return [&sys, mode](const Vec& y) {
    if (!in_box(sys, mode, y, 0.0)) return false;
    try {
      return guard_level(sys, mode, y) <= 0.0;
    } catch (const Error&) {
      return false;
    }
  };
}

}  // namespace

Complex lie_derivative(const ObservableFn& f, int mode, const std::vector<FieldFn>& fields,
                       const Vec& x, const std::function<bool(const Vec&)>& inside) {
  if (fields.size() > 2) {
    throw Error(ErrorCode::invalid_argument, "Lie derivative order above 2 is not supported");
  }
  return lie_rec(f, mode, fields, 0, x, inside);
}

Complex lie_derivative(const HybridSystemDef& sys, const ObservableFn& f,
                       const std::vector<FieldFn>& fields, const HybridState& s) {
  check_state(sys, s);
  return lie_derivative(f, s.mode, fields, s.x, mode_interior(sys, s.mode));
}

std::vector<std::vector<int>> multi_indices(int n, int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(static_cast<std::size_t>(n), 0);
  // odometer over [0, k]^n in lexicographic order, filtered by total order
  for (;;) {
    int total = 0;
    for (int v : cur) total += v;
    if (total <= k) out.push_back(cur);
    int a = n - 1;
    while (a >= 0 && cur[static_cast<std::size_t>(a)] == k) {
      cur[static_cast<std::size_t>(a)] = 0;
      --a;
    }
    if (a < 0) break;
    ++cur[static_cast<std::size_t>(a)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Membership

double default_membership_tol(int k, ObservableFn::Kind kind) {
  const double base = k <= 1 ? 1e-5 : 1e-3;
  return kind == ObservableFn::Kind::tabulated ? 10.0 * base : base;
}

MembershipReport check_membership(const HybridSystemDef& sys, const ObservableFn& f,
                                  const Frame& frame, int k, const std::vector<Vec>& guard_samples,
                                  double tol, const IntegratorConfig& cfg) {
  if (k < 0 || k > 2) throw Error(ErrorCode::invalid_argument, "k must be 0, 1 or 2");
  const int n = sys.dim;
  if (static_cast<int>(frame.aux.size()) != n - 1) {
    throw Error(ErrorCode::invalid_argument, "frame needs " + std::to_string(n - 1) + " fields");
  }
  const int j = frame.mode;
  const int next = sys.next_mode(j);

  std::vector<FieldFn> lhs_base{mode_field(sys, j)};
  std::vector<FieldFn> rhs_base{mode_field(sys, next)};
  for (const FieldFn& aux : frame.aux) {
    lhs_base.push_back(aux);
    rhs_base.push_back(pushforward_field(sys, j, MapKind::gluing(), aux, cfg));
  }
  const Inside inside_j = mode_interior(sys, j);
  const Inside inside_next = mode_interior(sys, next);

  MembershipReport report;
  report.mode = j;
  report.k = k;
  report.tol = tol;
  const auto indices = multi_indices(n, k);
  for (std::size_t i = 0; i < guard_samples.size(); ++i) {
    const Vec& z = guard_samples[i];
    for (const auto& l : indices) {
      MembershipRow row;
      row.sample_index = static_cast<int>(i);
      row.multi_index = l;
      try {
        std::vector<FieldFn> lhs_fields;
        std::vector<FieldFn> rhs_fields;
        for (int a = 0; a < n; ++a) {
          for (int rep = 0; rep < l[static_cast<std::size_t>(a)]; ++rep) {
            lhs_fields.push_back(lhs_base[static_cast<std::size_t>(a)]);
            rhs_fields.push_back(rhs_base[static_cast<std::size_t>(a)]);
          }
        }
        const Vec rz = reset_map(sys, j, z);
        row.lhs = lie_derivative(f, j, lhs_fields, z, inside_j);
        row.rhs = lie_derivative(f, next, rhs_fields, rz, inside_next);
        row.residual = std::abs(row.lhs - row.rhs);
        report.max_residual = std::max(report.max_residual, row.residual);
        report.max_lhs = std::max(report.max_lhs, std::abs(row.lhs));
      } catch (const Error& e) {
        row.error = e.what();
        ++report.failed_rows;
      }
      report.rows.push_back(std::move(row));
    }
  }
  report.pass = report.failed_rows == 0 && !guard_samples.empty() &&
                report.max_residual <= tol * (1.0 + report.max_lhs);
  return report;
}

namespace {

void write_csv_field(std::ostream& out, const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) {
    out << text;
    return;
  }
  out << '"';
  for (char c : text) {
    if (c == '"') out << '"';
    out << (c == '\n' ? ' ' : c);
  }
  out << '"';
}

}  // namespace

void write_membership_csv(std::ostream& out, const MembershipReport& report, int dim) {
  out << "sample_index";
  for (int a = 1; a <= dim; ++a) out << ",l" << a;
  out << ",lhs,rhs,residual,lhs_im,rhs_im,error\n";
  out << std::setprecision(17);
  for (const auto& row : report.rows) {
    out << row.sample_index;
    for (int v : row.multi_index) out << ',' << v;
    out << ',' << row.lhs.real() << ',' << row.rhs.real() << ',' << row.residual << ','
        << row.lhs.imag() << ',' << row.rhs.imag() << ',';
    write_csv_field(out, row.error);
    out << '\n';
  }
}

double quotient_residual(const HybridSystemDef& sys, const ObservableFn& f, int mode,
                         const std::vector<Vec>& guard_samples) {
  double worst = 0.0;
  for (const Vec& z : guard_samples) {
    const HybridState post = apply_reset(sys, {mode, z}, kDefaultGuardTol);
    worst = std::max(worst, std::abs(f(mode, z) - f(post.mode, post.x)));
  }
  return worst;
}

bool quotient_consistency(const HybridSystemDef& sys, const ObservableFn& f, int mode,
                          const std::vector<Vec>& guard_samples, double tol) {
  return quotient_residual(sys, f, mode, guard_samples) <= tol;
}

// ---------------------------------------------------------------------------
// Seam scan

namespace {

struct AxisOp {
  Eigen::Index axis;
  int order;
};

Complex chart_partial(const std::function<Complex(const Vec&)>& u, const std::vector<AxisOp>& ops,
                      std::size_t idx, const Vec& y, numdiff::Stencil seam_stencil) {
  if (idx == ops.size()) return u(y);
  auto inner = [&](const Vec& yy) { return chart_partial(u, ops, idx + 1, yy, seam_stencil); };
  Vec dir = Vec::Zero(y.size());
  dir(ops[idx].axis) = 1.0;
  const bool nested = idx + 1 < ops.size();
  numdiff::StepOptions opt;
  if (ops[idx].axis == 0) {
    opt.stencil = seam_stencil;
    opt.scale = nested ? kNestedOneSidedScale : 1.0;
  } else {
    opt.scale = nested ? kNestedCentralScale : 1.0;
  }
  return numdiff::directional(inner, y, dir, ops[idx].order, opt);
}

}  // namespace

ScanReport seam_smoothness_scan(const HybridSystemDef& sys, const ObservableFn& f,
                                const CollarChart& chart, int k, const std::vector<Vec>& grid,
                                double tol) {
  if (k < 0 || k > 2) throw Error(ErrorCode::invalid_argument, "k must be 0, 1 or 2");
  const int n = sys.dim;
  const int j = chart.mode();
  const int next = sys.next_mode(j);
  ScanReport report;
  report.k = k;
  report.tol = tol;

  auto side_fn = [&](CollarChart::Side side) {
    const int mode = side == CollarChart::Side::collar ? j : next;
    return std::function<Complex(const Vec&)>(
        [&chart, &f, side, mode](const Vec& y) { return f(mode, chart.eta_inverse_branch(y, side)); });
  };
  const auto collar = side_fn(CollarChart::Side::collar);
  const auto image = side_fn(CollarChart::Side::image);

  const auto orders = multi_indices(n, k);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    Vec y(n);
    y(0) = 0.0;
    y.tail(n - 1) = grid[g];
    for (const auto& a : orders) {
      ScanRow row;
      row.grid_index = static_cast<int>(g);
      row.coords = grid[g];
      row.orders = a;
      // y1 outermost (one-sided), remaining axes central inside
      std::vector<AxisOp> ops;
      if (a[0] > 0) ops.push_back({0, a[0]});
      for (int i = 1; i < n; ++i) {
        if (a[static_cast<std::size_t>(i)] > 0) ops.push_back({i, a[static_cast<std::size_t>(i)]});
      }
      try {
        row.left = chart_partial(collar, ops, 0, y, numdiff::Stencil::backward);
        row.right = chart_partial(image, ops, 0, y, numdiff::Stencil::forward);
        row.jump = std::abs(row.left - row.right);
        report.max_jump = std::max(report.max_jump, row.jump);
        if (ops.empty()) report.value_jump = std::max(report.value_jump, row.jump);
      } catch (const Error& e) {
        row.error = e.what();
        ++report.failed_rows;
      }
      report.rows.push_back(std::move(row));
    }
  }
  report.pass = report.failed_rows == 0 && !grid.empty() && report.max_jump <= tol;
  return report;
}

void write_scan_csv(std::ostream& out, const ScanReport& report, int dim) {
  out << "grid_index";
  for (int a = 2; a <= dim; ++a) out << ",y" << a;
  for (int a = 1; a <= dim; ++a) out << ",a" << a;
  out << ",left,right,jump,left_im,right_im,error\n";
  out << std::setprecision(17);
  for (const auto& row : report.rows) {
    out << row.grid_index;
    for (Eigen::Index i = 0; i < row.coords.size(); ++i) out << ',' << row.coords(i);
    for (int v : row.orders) out << ',' << v;
    out << ',' << row.left.real() << ',' << row.right.real() << ',' << row.jump << ','
        << row.left.imag() << ',' << row.right.imag() << ',';
    write_csv_field(out, row.error);
    out << '\n';
  }
}

}  // namespace hybridkoop
