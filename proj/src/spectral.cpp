#include "hybridkoop/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <thread>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include "hybridkoop/numdiff.hpp"
#include "hybridkoop/validate.hpp"

namespace hybridkoop {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kPi = std::numbers::pi;

double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  return a <= -kPi ? a + 2.0 * kPi : a;
}

CVec normalized_left(CVec w) {
  w /= w.norm();
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (std::abs(w(i)) > 1e-12) {
      w *= std::conj(w(i)) / std::abs(w(i));
      break;
    }
  }
  return w;
}

template <class Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

// ---------------------------------------------------------------------------
// Sections and return maps

Vec PoincareSection::to_local(const Vec& x) const { return tangent.transpose() * (x - anchor); }

Vec PoincareSection::from_local(const Vec& u) const {
  Vec y = anchor + tangent * u;
  const Vec normal = level_gradient(level, anchor).normalized();
  for (int it = 0; it < 20; ++it) {
    const double s = eval(level, y);
    if (std::abs(s) <= 1e-15 * (1.0 + y.norm())) break;
    const double ds = directional_derivative(level, y, normal, 1);
    if (ds == 0.0) break;
    y -= (s / ds) * normal;
  }
  return y;
}

SectionEvent PoincareSection::event() const { return SectionEvent{mode, level, direction}; }

PoincareSection make_section(const HybridSystemDef& sys, int mode, const ExprTree& level,
                             const std::optional<Vec>& anchor, double tol, int samples) {
  const ModeDef& m = sys.mode(mode);
  PoincareSection sec;
  sec.mode = mode;
  sec.level = level;
  sec.anchor = anchor ? *anchor : level_set_anchor(m.domain_box, level);
  if (sec.anchor.size() != sys.dim) {
    throw Error(ErrorCode::invalid_argument, "section anchor has the wrong dimension");
  }
  if (std::abs(eval(level, sec.anchor)) > 1e-9 * (1.0 + sec.anchor.norm())) {
    throw Error(ErrorCode::invalid_argument, "section anchor is not on the level set");
  }
  if (std::abs(eval(m.guard_level, sec.anchor)) <= tol * (1.0 + sec.anchor.norm())) {
    const Vec a = level_gradient(level, sec.anchor);
    const Vec b = level_gradient(m.guard_level, sec.anchor);
    if (std::abs(std::abs(a.dot(b)) - a.norm() * b.norm()) <= tol * a.norm() * b.norm()) {
      throw Error(ErrorCode::invalid_argument, "section coincides with the guard of mode " +
                                                   std::to_string(mode));
    }
  }
  sec.tangent = level_tangent_basis(level, sec.anchor);

  auto transversality = [&](const Vec& z) {
    const Vec grad = level_gradient(level, z);
    const Vec f = eval_vector_field(sys, mode, z);
    const double denom = grad.norm() * f.norm();
    return denom > 0.0 ? grad.dot(f) / denom : 0.0;
  };
  const double at_anchor = transversality(sec.anchor);
  if (std::abs(at_anchor) <= tol) {
    throw Error(ErrorCode::invalid_argument, "flow is tangent to the section at the anchor");
  }
  sec.direction = at_anchor > 0.0 ? 1.0 : -1.0;
  for (const Vec& z : sample_level_set(m.domain_box, level, samples, 0)) {
    if (sec.direction * transversality(z) <= tol) {
      std::ostringstream msg;
      msg << "flow is not transversal to the section at a sampled point (x1 = " << z(0) << ")";
      throw Error(ErrorCode::invalid_argument, msg.str());
    }
  }
  return sec;
}

PoincareSection default_section(const HybridSystemDef& sys) {
  const Vec z0 = guard_anchor(sys, 0);
  const int j = sys.next_mode(0);
  const Vec shift = reset_map(sys, 0, z0) - z0;
  std::vector<ExprTree> vars;
  for (int i = 0; i < sys.dim; ++i) {
    const double c = shift(i);
    const ExprTree x = ExprTree::variable(i + 1);
    vars.push_back(c >= 0.0 ? ExprTree::binary(BinaryOp::sub, x, ExprTree::constant(c))
                            : ExprTree::binary(BinaryOp::add, x, ExprTree::constant(-c)));
  }
  return make_section(sys, j, substitute(sys.mode(j).guard_level, vars));
}

SectionReturn poincare_return(const HybridSystemDef& sys, const PoincareSection& sec,
                              const Vec& p, const IntegratorConfig& cfg) {
  if (std::abs(eval(sec.level, p)) > 1e-8 * (1.0 + p.norm())) {
    throw Error(ErrorCode::invalid_argument, "point is not on the section");
  }
  try {
    HybridIntegrator integ(sys, cfg, HybridState{sec.mode, p});
    auto hit = integ.advance_to_section(sec.event(), cfg.max_time);
    if (!hit) throw Error(ErrorCode::no_return, "no return to the section before max_time");
    return {hit->state.x, hit->t};
  } catch (const Error& e) {
    if (e.code() == ErrorCode::no_return) throw;
    throw Error(ErrorCode::no_return, std::string("no return to the section: ") + e.what());
  }
}

Vec poincare_map(const HybridSystemDef& sys, const PoincareSection& sec, const Vec& p,
                 const IntegratorConfig& cfg) {
  return poincare_return(sys, sec, p, cfg).point;
}

// ---------------------------------------------------------------------------
// Limit cycle

LimitCycle find_limit_cycle(const HybridSystemDef& sys, const PoincareSection& sec,
                            const Vec& guess, const IntegratorConfig& cfg,
                            const CycleOptions& opt) {
  auto displacement = [&](const Vec& u) -> Vec {
    return sec.to_local(poincare_map(sys, sec, sec.from_local(u), cfg)) - u;
  };

  LimitCycle out;
  Vec u = sec.to_local(guess);
  Vec g = displacement(u);
  double res = g.norm();
  const Eigen::Index d = u.size();

  for (int it = 0; it < opt.max_iterations && res > opt.tol; ++it) {
    bool stepped = false;
    try {
      const Mat jac = numdiff::jacobian(displacement, u, opt.fd_scale);
      const Vec delta = jac.fullPivLu().solve(-g);
      if (delta.allFinite()) {
        double alpha = 1.0;
        for (int half = 0; half < 12 && !stepped; ++half, alpha *= 0.5) {
          try {
            const Vec trial = u + alpha * delta;
            const Vec gt = displacement(trial);
            if (gt.norm() < res) {
              u = trial;
              g = gt;
              stepped = true;
            }
          } catch (const Error&) {
          }
        }
      }
    } catch (const Error&) {
    }
    if (stepped) {
      ++out.newton_steps;
    } else {
      u += g;
      g = displacement(u);
      ++out.fixed_point_steps;
    }
    res = g.norm();
    if (!std::isfinite(res) || u.norm() > 1e12) break;
  }
  if (res <= opt.tol && res > 0.0) {
    // one polishing step; kept only if it helps
    try {
      const Mat jac = numdiff::jacobian(displacement, u, opt.fd_scale);
      const Vec trial = u + jac.fullPivLu().solve(-g);
      const Vec gt = displacement(trial);
      if (gt.norm() < res) {
        u = trial;
        res = gt.norm();
      }
    } catch (const Error&) {
    }
  }
  if (!(res <= opt.tol)) {
    std::ostringstream msg;
    msg << std::setprecision(6) << "return-map iteration did not converge (residual " << res
        << ", dimension " << d << "); the cycle may not be asymptotically stable";
    throw Error(ErrorCode::not_stable, msg.str(), res);
  }
  const Vec x = sec.from_local(u);
  const SectionReturn ret = poincare_return(sys, sec, x, cfg);
  out.x_star = HybridState{sec.mode, x};
  out.tau = ret.time;
  out.residual = (ret.point - x).norm();
  return out;
}

// ---------------------------------------------------------------------------
// Floquet analysis

SpectralReport floquet(const HybridSystemDef& sys, const PoincareSection& sec,
                       const LimitCycle& cycle, const IntegratorConfig& cfg, int r, double tol,
                       double fd_scale) {
  if (r < 1) throw Error(ErrorCode::invalid_argument, "r must be >= 1");
  if (!(cycle.tau > 0.0)) throw Error(ErrorCode::invalid_argument, "period must be positive");
  SpectralReport rep;
  rep.section = sec;
  rep.x_star = cycle.x_star;
  rep.tau = cycle.tau;
  rep.omega = 2.0 * kPi / cycle.tau;
  rep.r = r;

  const Vec u_star = sec.to_local(cycle.x_star.x);
  rep.dp = numdiff::jacobian(
      [&](const Vec& u) { return Vec(sec.to_local(poincare_map(sys, sec, sec.from_local(u), cfg))); },
      u_star, fd_scale);

  const Eigen::Index d = rep.dp.rows();
  Eigen::ComplexEigenSolver<CMat> right(rep.dp.cast<Complex>());
  Eigen::ComplexEigenSolver<CMat> left(rep.dp.cast<Complex>().adjoint());
  std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < d; ++i) order[static_cast<std::size_t>(i)] = i;
  const CVec& ev = right.eigenvalues();
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (std::abs(ev(a)) != std::abs(ev(b))) return std::abs(ev(a)) > std::abs(ev(b));
    return ev(a).imag() > ev(b).imag();
  });

  for (Eigen::Index i : order) {
    Complex rho = ev(i);
    if (std::abs(rho.imag()) <= 1e-12 * (1.0 + std::abs(rho))) rho = rho.real();
    rep.multipliers.push_back(rho);
    rep.exponents.push_back(std::log(rho) / cycle.tau);
    // left eigenvector: eigenvector of DP^H for conj(rho)
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < d; ++k) {
      if (std::abs(left.eigenvalues()(k) - std::conj(rho)) <
          std::abs(left.eigenvalues()(best) - std::conj(rho))) {
        best = k;
      }
    }
    CVec w = left.eigenvectors().col(best);
    if (rho.imag() == 0.0) w = w.real().cast<Complex>();
    rep.left_vectors.push_back(normalized_left(w));
  }

  for (std::size_t i = 0; i < rep.multipliers.size(); ++i) {
    if (std::abs(rep.multipliers[i]) >= 1.0) {
      std::ostringstream msg;
      msg << std::setprecision(17) << "Floquet multiplier " << rep.multipliers[i]
          << " has modulus >= 1";
      throw Error(ErrorCode::not_stable, msg.str(), std::abs(rep.multipliers[i]));
    }
    for (std::size_t j = i + 1; j < rep.multipliers.size(); ++j) {
      const Complex a = rep.multipliers[i];
      const Complex b = rep.multipliers[j];
      const bool conjugate = std::abs(a - std::conj(b)) <= 1e-8 && a.imag() != 0.0;
      if (!conjugate && std::abs(std::abs(a) - std::abs(b)) <= 1e-8 * std::abs(a)) {
        rep.degenerate = true;
      }
    }
  }

  // r-nonresonance over all multi-indices with 2 <= |m| <= r
  const auto n1 = static_cast<int>(rep.exponents.size());
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& m : multi_indices(n1, r)) {
    int total = 0;
    Complex combo = 0.0;
    for (int k = 0; k < n1; ++k) {
      total += m[static_cast<std::size_t>(k)];
      combo += static_cast<double>(m[static_cast<std::size_t>(k)]) *
               rep.exponents[static_cast<std::size_t>(k)];
    }
    if (total < 2) continue;
    for (const Complex& nu : rep.exponents) margin = std::min(margin, std::abs(nu - combo));
  }
  rep.nonresonance_margin = margin;
  rep.nonresonant = margin > tol;
  rep.spectral_spread =
      rep.multipliers.empty() ||
      std::abs(rep.multipliers.back()) > std::pow(std::abs(rep.multipliers.front()), r);
  return rep;
}

void write_spectral_report(std::ostream& out, const SpectralReport& rep) {
  const auto old = out.precision(17);
  auto cplx = [&](const Complex& c) {
    out << c.real() << (c.imag() < 0 ? " - " : " + ") << std::abs(c.imag()) << "i";
  };
  out << "section_mode = " << rep.section.mode << "\n";
  out << "section_level = " << print(rep.section.level) << "\n";
  out << "fixed_point_mode = " << rep.x_star.mode << "\n";
  out << "fixed_point =";
  for (Eigen::Index i = 0; i < rep.x_star.x.size(); ++i) out << " " << rep.x_star.x(i);
  out << "\n";
  out << "tau = " << rep.tau << "\n";
  out << "omega = " << rep.omega << "\n";
  for (std::size_t i = 0; i < rep.multipliers.size(); ++i) {
    out << "rho_" << i + 2 << " = ";
    cplx(rep.multipliers[i]);
    out << "\n";
    out << "nu_" << i + 2 << " = ";
    cplx(rep.exponents[i]);
    out << "\n";
  }
  out << "r = " << rep.r << "\n";
  out << "nonresonant = " << (rep.nonresonant ? "true" : "false") << "\n";
  out << "nonresonance_margin = " << rep.nonresonance_margin << "\n";
  out << "spectral_spread = " << (rep.spectral_spread ? "true" : "false") << "\n";
  out << "degenerate = " << (rep.degenerate ? "true" : "false") << "\n";
  if (!rep.left_vectors.empty()) {
    out << "w =";
    for (Eigen::Index i = 0; i < rep.dominant_left().size(); ++i) {
      out << " ";
      cplx(rep.dominant_left()(i));
    }
    out << "\n";
  }
  out.precision(old);
}

// ---------------------------------------------------------------------------
// Eigenfunctions

PhaseEigenfunction::PhaseEigenfunction(const HybridSystemDef& sys, const SpectralReport& report,
                                       const IntegratorConfig& cfg, const EigenOptions& opt)
    : sys_(&sys),
      event_(report.section.event()),
      tau_(report.tau),
      omega_(report.omega),
      cfg_(cfg),
      opt_(opt) {}

double PhaseEigenfunction::phase(const HybridState& s) const {
  HybridIntegrator integ(*sys_, cfg_, s);
  double prev = kNaN;
  for (int k = 0; k < opt_.max_returns; ++k) {
    auto hit = integ.advance_to_section(event_, integ.time() + cfg_.max_time, k == 0);
    if (!hit) throw Error(ErrorCode::no_return, "trajectory stopped returning to the section");
    const double offset = hit->t - k * tau_;
    if (k > 0 && std::abs(offset - prev) <= opt_.tol * (1.0 + std::abs(offset))) {
      return wrap_angle(omega_ * offset);
    }
    prev = offset;
  }
  throw Error(ErrorCode::no_convergence, "asymptotic phase did not converge");
}

Complex PhaseEigenfunction::operator()(const HybridState& s) const {
  return std::polar(1.0, phase(s));
}

AmplitudeEigenfunction::AmplitudeEigenfunction(const HybridSystemDef& sys,
                                               const SpectralReport& report, int index,
                                               const IntegratorConfig& cfg,
                                               const EigenOptions& opt)
    : sys_(&sys), section_(report.section), cfg_(cfg), opt_(opt) {
  if (index < 0 || index >= static_cast<int>(report.multipliers.size())) {
    throw Error(ErrorCode::invalid_argument, "multiplier index out of range");
  }
  const auto i = static_cast<std::size_t>(index);
  rho_ = report.multipliers[i];
  for (std::size_t j = 0; j < report.multipliers.size(); ++j) {
    if (j == i) continue;
    const Complex other = report.multipliers[j];
    const bool conjugate = rho_.imag() != 0.0 && std::abs(rho_ - std::conj(other)) <= 1e-8;
    if (!conjugate && std::abs(std::abs(rho_) - std::abs(other)) <= 1e-8 * std::abs(rho_)) {
      throw Error(ErrorCode::degenerate_spectrum,
                  "multiplier modulus is shared with another multiplier");
    }
  }
  nu_ = report.exponents[i];
  w_ = report.left_vectors[i];
  u_star_ = section_.to_local(report.x_star.x);
}

Complex AmplitudeEigenfunction::on_section(const Vec& p) const {
  auto project = [&](const Vec& x) -> Complex {
    const CVec d = (section_.to_local(x) - u_star_).cast<Complex>();
    return w_.dot(d);
  };
  Complex psi = project(p);
  Complex scale = 1.0;
  double prev_delta = std::numeric_limits<double>::infinity();
  Vec x = p;
  for (int m = 1; m <= opt_.max_returns; ++m) {
    x = poincare_map(*sys_, section_, x, cfg_);
    scale *= rho_;
    const Complex next = project(x) / scale;
    const double delta = std::abs(next - psi);
    if (delta <= opt_.tol * std::abs(next)) return next;
    // once the differences stop contracting the estimate sits on its noise floor
    if (m >= 2 && delta > 0.9 * prev_delta) return psi;
    psi = next;
    prev_delta = delta;
  }
  throw Error(ErrorCode::no_convergence, "amplitude estimate did not converge");
}

Complex AmplitudeEigenfunction::operator()(const HybridState& s) const {
  HybridIntegrator integ(*sys_, cfg_, s);
  auto hit = integ.advance_to_section(section_.event(), cfg_.max_time, true);
  if (!hit) throw Error(ErrorCode::no_return, "trajectory never reaches the section");
  return std::exp(-nu_ * hit->t) * on_section(hit->state.x);
}

// ---------------------------------------------------------------------------
// Grids

GridSpec GridSpec::parse(std::string_view text, int mode) {
  auto numbers = [&](std::string_view part) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= part.size()) {
      const std::size_t comma = std::min(part.find(',', pos), part.size());
      std::string item(part.substr(pos, comma - pos));
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(item, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (item.empty() || used != item.size()) {
        throw Error(ErrorCode::invalid_argument, "bad number '" + item + "' in grid spec");
      }
      out.push_back(v);
      pos = comma + 1;
    }
    return out;
  };
  const std::size_t colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw Error(ErrorCode::invalid_argument, "grid spec must look like n1,n2:lo1,hi1,lo2,hi2");
  }
  const auto counts = numbers(text.substr(0, colon));
  const auto bounds = numbers(text.substr(colon + 1));
  if (bounds.size() != 2 * counts.size()) {
    throw Error(ErrorCode::invalid_argument, "grid spec needs two bounds per axis");
  }
  GridSpec g;
  g.mode = mode;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] < 1 || counts[i] != std::floor(counts[i])) {
      throw Error(ErrorCode::invalid_argument, "grid counts must be positive integers");
    }
    if (!(bounds[2 * i] <= bounds[2 * i + 1])) {
      throw Error(ErrorCode::invalid_argument, "grid bounds must satisfy lo <= hi");
    }
    g.counts.push_back(static_cast<int>(counts[i]));
    g.box.push_back({bounds[2 * i], bounds[2 * i + 1]});
  }
  return g;
}

std::string GridSpec::to_string() const {
  std::ostringstream out;
  out << std::setprecision(17);
  for (std::size_t i = 0; i < counts.size(); ++i) out << (i ? "," : "") << counts[i];
  out << ":";
  for (std::size_t i = 0; i < box.size(); ++i) {
    out << (i ? "," : "") << box[i].lo << "," << box[i].hi;
  }
  return out.str();
}

std::size_t GridSpec::size() const {
  std::size_t n = counts.empty() ? 0 : 1;
  for (int c : counts) n *= static_cast<std::size_t>(c);
  return n;
}

Vec GridSpec::point(std::size_t index) const {
  const auto d = counts.size();
  Vec x(static_cast<Eigen::Index>(d));
  for (std::size_t k = d; k-- > 0;) {
    const auto c = static_cast<std::size_t>(counts[k]);
    const std::size_t i = index % c;
    index /= c;
    const double frac = c == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(c - 1);
    x(static_cast<Eigen::Index>(k)) = box[k].lo + frac * (box[k].hi - box[k].lo);
  }
  return x;
}

EigenfunctionGrid tabulate(const Eigenfunction& fn, const GridSpec& grid, int threads) {
  EigenfunctionGrid out;
  out.function = fn;
  out.grid = grid;
  const std::size_t n = grid.size();
  out.points.resize(n);
  out.values.assign(n, Complex(kNaN, kNaN));
  std::vector<char> failed(n, 0);
  parallel_for(n, threads, [&](std::size_t i) {
    out.points[i] = grid.point(i);
    try {
      out.values[i] = fn.fn(HybridState{grid.mode, out.points[i]});
    } catch (const Error&) {
      failed[i] = 1;
    }
  });
  out.failures = static_cast<int>(std::count(failed.begin(), failed.end(), 1));
  const bool all_zero = std::all_of(out.values.begin(), out.values.end(), [](const Complex& v) {
    return v == Complex(0.0, 0.0);
  });
  if (n > 0 && all_zero) {
    throw Error(ErrorCode::zero_eigenfunction, "eigenfunction vanishes on the whole grid");
  }
  return out;
}

EigenfunctionGrid phase_eigenfunction(const HybridSystemDef& sys, const SpectralReport& report,
                                      const GridSpec& grid, const IntegratorConfig& cfg,
                                      int threads, const EigenOptions& opt) {
  const PhaseEigenfunction phase(sys, report, cfg, opt);
  Eigenfunction fn{phase.eigenvalue(), [phase](const HybridState& s) { return phase(s); },
                   "phase"};
  EigenfunctionGrid out = tabulate(fn, grid, threads);

  // pick the conjugate with the smaller residual on a few grid points
  std::vector<HybridState> probes;
  const std::size_t stride = std::max<std::size_t>(1, out.points.size() / 5);
  for (std::size_t i = 0; i < out.points.size(); i += stride) {
    if (std::isfinite(out.values[i].real())) probes.push_back({grid.mode, out.points[i]});
  }
  const Complex minus{0.0, -report.omega};
  const double r_minus = eigen_residual(sys, fn.fn, minus, probes, report.tau, cfg, 4).max_residual;
  const double r_plus =
      eigen_residual(sys, fn.fn, std::conj(minus), probes, report.tau, cfg, 4).max_residual;
  out.function.eigenvalue = r_plus < r_minus ? std::conj(minus) : minus;
  std::ostringstream note;
  note << std::setprecision(6) << "theta(x*) = 0; residual(-i omega) = " << r_minus
       << ", residual(+i omega) = " << r_plus;
  out.normalization = note.str();
  return out;
}

EigenfunctionGrid amplitude_eigenfunction(const HybridSystemDef& sys,
                                          const SpectralReport& report, const GridSpec& grid,
                                          const IntegratorConfig& cfg, int index, int threads,
                                          const EigenOptions& opt) {
  const AmplitudeEigenfunction amp(sys, report, index, cfg, opt);
  Eigenfunction fn{amp.eigenvalue(), [amp](const HybridState& s) { return amp(s); },
                   "amplitude_" + std::to_string(index + 2)};
  EigenfunctionGrid out = tabulate(fn, grid, threads);
  out.normalization = "w unit length, first nonzero component real positive; phi(x*) = 0";
  return out;
}

void write_eigenfunction_csv(std::ostream& out, const EigenfunctionGrid& grid) {
  const auto old = out.precision(17);
  const Eigen::Index n = grid.points.empty() ? 0 : grid.points.front().size();
  out << "mode";
  for (Eigen::Index i = 0; i < n; ++i) out << ",x" << i + 1;
  out << ",re,im\n";
  for (std::size_t k = 0; k < grid.points.size(); ++k) {
    out << grid.grid.mode;
    for (Eigen::Index i = 0; i < n; ++i) out << "," << grid.points[k](i);
    out << "," << grid.values[k].real() << "," << grid.values[k].imag() << "\n";
  }
  out.precision(old);
}

// ---------------------------------------------------------------------------
// Residuals and alignment

ResidualReport eigen_residual(const HybridSystemDef& sys, const StateFn& phi, Complex lambda,
                              const std::vector<HybridState>& points, double horizon,
                              const IntegratorConfig& cfg, int time_samples) {
  if (!(horizon > 0.0) || time_samples < 1) {
    throw Error(ErrorCode::invalid_argument, "horizon and time_samples must be positive");
  }
  ResidualReport rep;
  for (const HybridState& x : points) {
    try {
      const Complex base = phi(x);
      HybridIntegrator integ(sys, cfg, x);
      double worst = 0.0;
      for (int k = 1; k <= time_samples; ++k) {
        const double t = horizon * k / time_samples;
        integ.advance_to(t);
        const Complex lhs = phi(integ.state());
        worst = std::max(worst, std::abs(lhs - std::exp(lambda * t) * base) / (1.0 + std::abs(base)));
      }
      rep.max_residual = std::max(rep.max_residual, worst);
      ++rep.evaluated;
    } catch (const Error&) {
      ++rep.skipped;
    }
  }
  return rep;
}

ResidualReport eigen_residual(const HybridSystemDef& sys, const ObservableFn& phi,
                              Complex lambda, const std::vector<HybridState>& points,
                              double horizon, const IntegratorConfig& cfg, int time_samples) {
  return eigen_residual(
      sys, [&](const HybridState& s) { return phi(s.mode, s.x); }, lambda, points, horizon, cfg,
      time_samples);
}

ResidualReport eigen_residual(const HybridSystemDef& sys, const EigenfunctionGrid& grid,
                              double horizon, const IntegratorConfig& cfg, int time_samples) {
  std::vector<HybridState> pts;
  for (std::size_t i = 0; i < grid.points.size(); ++i) {
    if (std::isfinite(grid.values[i].real())) pts.push_back({grid.grid.mode, grid.points[i]});
  }
  return eigen_residual(sys, grid.function.fn, grid.function.eigenvalue, pts, horizon, cfg,
                        time_samples);
}

Complex align_scalar(const std::vector<Complex>& a, const std::vector<Complex>& b,
                     bool real_only) {
  if (a.size() != b.size()) throw Error(ErrorCode::invalid_argument, "size mismatch");
  Complex num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += std::conj(b[i]) * a[i];
    den += std::norm(b[i]);
  }
  if (den == 0.0) throw Error(ErrorCode::zero_eigenfunction, "cannot align to a zero grid");
  Complex c = num / den;
  if (real_only) c = c.real();
  return c;
}

double aligned_deviation(const std::vector<Complex>& a, const std::vector<Complex>& b,
                         bool real_only) {
  const Complex c = align_scalar(a, b, real_only);
  double dev = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dev = std::max(dev, std::abs(a[i] - c * b[i]));
    scale = std::max(scale, std::abs(a[i]));
  }
  return scale > 0.0 ? dev / scale : dev;
}

// ---------------------------------------------------------------------------
// Embedding

Vec Embedding::operator()(const HybridState& s) const {
  Vec e(dim());
  Eigen::Index row = 0;
  for (const Eigenfunction& f : components) {
    const Complex v = f.fn(s);
    e(row++) = v.real();
    if (f.eigenvalue.imag() != 0.0) e(row++) = v.imag();
  }
  return e;
}

Embedding build_embedding(const SpectralReport& report, const std::vector<Eigenfunction>& eigfns,
                          double tol) {
  auto find = [&](auto&& pred) -> const Eigenfunction* {
    for (const Eigenfunction& f : eigfns) {
      if (pred(f.eigenvalue)) return &f;
    }
    return nullptr;
  };
  auto near = [&](Complex a, Complex b) { return std::abs(a - b) <= tol * (1.0 + std::abs(b)); };

  Embedding emb;
  const Eigenfunction* phase = find([&](Complex l) {
    return near(l, {0.0, -report.omega}) || near(l, {0.0, report.omega});
  });
  if (!phase) throw Error(ErrorCode::missing_eigenfunction, "no phase eigenfunction supplied");
  emb.components.push_back(*phase);
  emb.labels = {"re_phase", "im_phase"};

  for (std::size_t i = 0; i < report.exponents.size(); ++i) {
    const Complex nu = report.exponents[i];
    if (nu.imag() < 0.0) {
      bool paired = false;
      for (std::size_t j = 0; j < i; ++j) paired |= near(report.exponents[j], std::conj(nu));
      if (paired) continue;
    }
    const Eigenfunction* f = find([&](Complex l) { return near(l, nu) || near(l, std::conj(nu)); });
    if (!f) {
      throw Error(ErrorCode::missing_eigenfunction,
                  "no eigenfunction for exponent nu_" + std::to_string(i + 2));
    }
    emb.components.push_back(*f);
    if (f->eigenvalue.imag() != 0.0) {
      emb.labels.push_back("re_" + f->label);
      emb.labels.push_back("im_" + f->label);
    } else {
      emb.labels.push_back(f->label);
    }
  }

  const auto m = static_cast<Eigen::Index>(emb.labels.size());
  emb.a = Mat::Zero(m, m);
  Eigen::Index row = 0;
  for (const Eigenfunction& f : emb.components) {
    const double a = f.eigenvalue.real();
    const double b = f.eigenvalue.imag();
    if (b != 0.0) {
      // d/dt (Re, Im) of a function with U_t f = exp(lambda t) f
      emb.a.block(row, row, 2, 2) << a, -b, b, a;
      row += 2;
    } else {
      emb.a(row, row) = a;
      row += 1;
    }
  }
  return emb;
}

ResidualReport embedding_residual(const HybridSystemDef& sys, const Embedding& emb,
                                  const std::vector<HybridState>& points,
                                  const std::vector<double>& times, const IntegratorConfig& cfg) {
  std::vector<double> sorted = times;
  std::sort(sorted.begin(), sorted.end());
  std::vector<Mat> props;
  for (double t : sorted) props.push_back(Mat(emb.a * t).exp());
  ResidualReport rep;
  for (const HybridState& x : points) {
    try {
      const Vec e0 = emb(x);
      HybridIntegrator integ(sys, cfg, x);
      double worst = 0.0;
      for (std::size_t k = 0; k < sorted.size(); ++k) {
        integ.advance_to(sorted[k]);
        const Vec et = emb(integ.state());
        worst = std::max(worst, (et - props[k] * e0).norm() / (1.0 + e0.norm()));
      }
      rep.max_residual = std::max(rep.max_residual, worst);
      ++rep.evaluated;
    } catch (const Error&) {
      ++rep.skipped;
    }
  }
  return rep;
}

}  // namespace hybridkoop
