#include "hybridkoop/flow.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include <boost/math/tools/toms748_solve.hpp>
#include <boost/numeric/odeint.hpp>
#include <boost/numeric/odeint/external/eigen/eigen.hpp>

namespace hybridkoop {

namespace odeint = boost::numeric::odeint;

namespace {

using Stepper = odeint::runge_kutta_dopri5<Vec, double, Vec, double, odeint::vector_space_algebra>;
using Controlled = odeint::controlled_runge_kutta<Stepper>;

// Single-mode Dormand-Prince integrator with exact sub-step evaluation for
// event localisation (a fresh RK step from the last accepted state rather
// than the dense-output interpolant).
class Engine {
 public:
  Engine(const HybridSystemDef& sys, const IntegratorConfig& cfg, int mode, Vec x, double t)
      : sys_(&sys),
        cfg_(cfg),
        mode_(mode),
        x_(std::move(x)),
        t_(t),
        ctrl_(odeint::make_controlled(cfg.abs_tol, cfg.rel_tol, Stepper())) {
    dxdt_ = field(x_);
    dt_ = std::min(cfg_.max_step, 1e-3);
  }

  struct Trial {
    double dt = 0.0;
    Vec x;
    Vec dxdt;
    double dt_next = 0.0;
  };

  int mode() const { return mode_; }
  double t() const { return t_; }
  const Vec& x() const { return x_; }
  const Vec& dxdt() const { return dxdt_; }
  const IntegratorConfig& cfg() const { return cfg_; }
  const HybridSystemDef& sys() const { return *sys_; }

  Vec field(const Vec& x) const { return eval_vector_field(*sys_, mode_, x); }

  Trial attempt(double t_stop) {
    const double span = t_stop - t_;
    const double dir = span >= 0.0 ? 1.0 : -1.0;
    const double limit = std::min(cfg_.max_step, std::abs(span));
    double dt = dir * std::min(std::abs(dt_), limit);
    auto rhs = [this](const Vec& x, Vec& dxdt, double) { dxdt = field(x); };
    for (int tries = 0; tries < 500; ++tries) {
      double t = t_;
      double dt_try = dt;
      Vec out;
      Vec dxdt_out;
      const auto res = ctrl_.try_step(rhs, x_, dxdt_, t, out, dxdt_out, dt_try);
      if (res == odeint::success) {
        Trial trial{t - t_, std::move(out), std::move(dxdt_out), dt_try};
        return trial;
      }
      dt = dt_try;
      if (std::abs(dt) < 1e-15 * (1.0 + std::abs(t_))) break;
    }
    throw Error(ErrorCode::no_convergence,
                "integrator step size underflow at t = " + std::to_string(t_), t_);
  }

  void accept(Trial&& trial, bool limited_by_span) {
    t_ += trial.dt;
    x_ = std::move(trial.x);
    dxdt_ = std::move(trial.dxdt);
    if (!limited_by_span || std::abs(trial.dt_next) > std::abs(dt_)) dt_ = std::abs(trial.dt_next);
  }

  Vec state_at(double theta) {
    if (theta == 0.0) return x_;
    auto rhs = [this](const Vec& x, Vec& dxdt, double) { dxdt = field(x); };
    Vec out;
    Vec dxdt_out;
    ctrl_.stepper().do_step(rhs, x_, dxdt_, t_, out, dxdt_out, theta);
    return out;
  }

  void move_to(double theta) {
    x_ = state_at(theta);
    t_ += theta;
    dxdt_ = field(x_);
  }

  void reset_state(int mode, Vec x) {
    mode_ = mode;
    x_ = std::move(x);
    dxdt_ = field(x_);
  }

  // Root of level(phi_theta) between 0 and theta_end, where the signed level
  // is negative at 0 and non-negative at theta_end. The bracketed solution is
  // polished with Newton steps on the exact sub-step.
  double localize(const ExprTree& level, double sign, double theta_end) {
    auto f = [&](double th) { return sign * eval(level, state_at(th)); };
    const double lo = std::min(0.0, theta_end);
    const double hi = std::max(0.0, theta_end);
    const double flo = f(lo);
    const double fhi = f(hi);
    double theta = theta_end;
    if (fhi == 0.0 || flo == 0.0) {
      theta = fhi == 0.0 ? hi : lo;
    } else if ((flo < 0.0) == (fhi < 0.0)) {
      theta = std::abs(flo) < std::abs(fhi) ? lo : hi;
    } else {
      boost::uintmax_t iters = 200;
      const double tol = cfg_.guard_time_tol;
      auto stop = [tol](double a, double b) { return std::abs(b - a) <= tol; };
      const auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, stop, iters);
      theta = 0.5 * (a + b);
    }
    for (int k = 0; k < 2; ++k) {
      const Vec xs = state_at(theta);
      const double value = sign * eval(level, xs);
      const double rate = sign * directional_derivative(level, xs, field(xs), 1);
      if (rate == 0.0 || !std::isfinite(rate)) break;
      const double next = theta - value / rate;
      if (next < lo - 10.0 * cfg_.guard_time_tol || next > hi + 10.0 * cfg_.guard_time_tol) break;
      theta = next;
    }
    return theta;
  }

  double level_rate(const ExprTree& level, const Vec& x) const {
    return directional_derivative(level, x, field(x), 1);
  }

 private:
  const HybridSystemDef* sys_;
  IntegratorConfig cfg_;
  int mode_;
  Vec x_;
  Vec dxdt_;
  double t_;
  double dt_;
  Controlled ctrl_;
};

void ensure_in_box(const Engine& eng) {
  if (!in_box(eng.sys(), eng.mode(), eng.x(), eng.cfg().box_tol)) {
    throw Error(ErrorCode::escaped,
                "trajectory left the domain box of mode " + std::to_string(eng.mode()) +
                    " at t = " + std::to_string(eng.t()),
                eng.t());
  }
}

// Integrates the signed level sign*g along the mode flow until it becomes
// non-negative; returns the localized hit. Box checks are optional.
GuardHit run_to_level(Engine& eng, const ExprTree& level, double sign, double t_limit,
                      bool check_box) {
  const double t0 = eng.t();
  for (;;) {
    if ((t_limit - eng.t()) * (t_limit - t0) <= 0.0) {
      throw Error(ErrorCode::timeout,
                  "guard not reached within " + std::to_string(std::abs(t_limit - t0)) + " s",
                  eng.t());
    }
    const double before = sign * eval(level, eng.x());
    Engine::Trial trial = eng.attempt(t_limit);
    const double after = sign * eval(level, trial.x);
    if (before < 0.0 && after >= 0.0) {
      const double theta = eng.localize(level, sign, trial.dt);
      eng.move_to(theta);
      if (check_box) ensure_in_box(eng);
      return GuardHit{eng.t() - t0, eng.x()};
    }
    const bool limited = std::abs(trial.dt) >= std::abs(t_limit - eng.t()) * (1.0 - 1e-15);
    eng.accept(std::move(trial), limited);
    if (check_box) ensure_in_box(eng);
  }
}

GuardHit impact(const HybridSystemDef& sys, const HybridState& s, const IntegratorConfig& cfg) {
  check_state(sys, s);
  check_config(cfg);
  const double g0 = guard_level(sys, s.mode, s.x);
  if (g0 > cfg.guard_tol) {
    throw Error(ErrorCode::past_guard, "state lies past the guard of mode " +
                                           std::to_string(s.mode));
  }
  if (g0 >= 0.0) return GuardHit{0.0, s.x};
  Engine eng(sys, cfg, s.mode, s.x, 0.0);
  ensure_in_box(eng);
  return run_to_level(eng, sys.mode(s.mode).guard_level, 1.0, cfg.max_time, true);
}

}  // namespace

void check_config(const IntegratorConfig& cfg) {
  const double values[] = {cfg.rel_tol,    cfg.abs_tol,   cfg.guard_time_tol,
                           cfg.max_jumps_per_unit_time, cfg.max_time, cfg.max_step,
                           cfg.guard_tol,  cfg.box_tol,   cfg.graze_tol};
  for (double v : values) {
    if (!(v > 0.0)) throw Error(ErrorCode::invalid_argument, "integrator settings must be positive");
  }
}

// ---------------------------------------------------------------------------
// HybridIntegrator

struct HybridIntegrator::Impl {
  Impl(const HybridSystemDef& sys, const IntegratorConfig& cfg, HybridState start)
      : sys(&sys), cfg(cfg), eng(sys, cfg, start.mode, start.x, 0.0) {}

  const HybridSystemDef* sys;
  IntegratorConfig cfg;
  Engine eng;
  double t0 = 0.0;
  std::vector<JumpRecord> jumps;

  const ExprTree& guard() const { return sys->mode(eng.mode()).guard_level; }

  bool on_guard_outbound() const {
    const double g = eval(guard(), eng.x());
    return std::abs(g) <= cfg.guard_tol && eng.level_rate(guard(), eng.x()) > cfg.graze_tol;
  }

  void jump() {
    const double rate = eng.level_rate(guard(), eng.x());
    if (rate <= cfg.graze_tol) {
      throw Error(ErrorCode::grazing,
                  "tangential guard contact at t = " + std::to_string(eng.t()), eng.t());
    }
    HybridState pre{eng.mode(), eng.x()};
    HybridState post = apply_reset(*sys, pre, cfg.guard_tol);
    jumps.push_back(JumpRecord{eng.t(), pre, post});
    eng.reset_state(post.mode, post.x);
    const double elapsed = eng.t() - t0;
    if (static_cast<double>(jumps.size()) > cfg.max_jumps_per_unit_time * elapsed + 1.0) {
      throw Error(ErrorCode::zeno_suspected,
                  std::to_string(jumps.size()) + " resets within " + std::to_string(elapsed) +
                      " s",
                  eng.t());
    }
    ensure_in_box(eng);
  }

  double section_value(const SectionEvent& sec) const {
    return sec.direction * eval(sec.level, eng.x());
  }

  bool on_section_inbound(const SectionEvent& sec) const {
    if (eng.mode() != sec.mode) return false;
    return std::abs(section_value(sec)) <= cfg.guard_tol &&
           sec.direction * eng.level_rate(sec.level, eng.x()) > 0.0;
  }

  // Core loop. Returns a hit when `sec` is given and crossed before t_target.
  std::optional<SectionHit> run(double t_target, const SectionEvent* sec, bool include_current) {
    bool armed = true;
    if (sec) {
      if (include_current && on_section_inbound(*sec)) {
        return SectionHit{eng.t(), HybridState{eng.mode(), eng.x()}};
      }
      armed = !(eng.mode() == sec->mode && std::abs(section_value(*sec)) <= cfg.guard_tol);
    }
    while (eng.t() < t_target) {
      if (on_guard_outbound()) {
        jump();
        if (sec && on_section_inbound(*sec)) {
          return SectionHit{eng.t(), HybridState{eng.mode(), eng.x()}};
        }
        if (sec) armed = !(eng.mode() == sec->mode && std::abs(section_value(*sec)) <= cfg.guard_tol);
        continue;
      }
      const double g_before = eval(guard(), eng.x());
      if (g_before > cfg.guard_tol) {
        throw Error(ErrorCode::past_guard,
                    "state lies past the guard at t = " + std::to_string(eng.t()), eng.t());
      }
      Engine::Trial trial = eng.attempt(t_target);
      const double g_after = eval(guard(), trial.x);

      double theta_guard = std::numeric_limits<double>::infinity();
      if (g_before < 0.0 && g_after >= 0.0) {
        theta_guard = eng.localize(guard(), 1.0, trial.dt);
      }
      double theta_section = std::numeric_limits<double>::infinity();
      bool rearm = false;
      if (sec && eng.mode() == sec->mode) {
        const double u_before = section_value(*sec);
        const double u_after = sec->direction * eval(sec->level, trial.x);
        if (armed && u_before < 0.0 && u_after >= 0.0) {
          theta_section = eng.localize(sec->level, sec->direction, trial.dt);
        } else if (!armed && u_after < -cfg.guard_tol) {
          rearm = true;
        }
      }

      if (theta_section < theta_guard && std::isfinite(theta_section)) {
        eng.move_to(theta_section);
        ensure_in_box(eng);
        return SectionHit{eng.t(), HybridState{eng.mode(), eng.x()}};
      }
      if (std::isfinite(theta_guard)) {
        eng.move_to(theta_guard);
        ensure_in_box(eng);
        jump();
        if (sec && on_section_inbound(*sec)) {
          return SectionHit{eng.t(), HybridState{eng.mode(), eng.x()}};
        }
        if (sec) armed = !(eng.mode() == sec->mode && std::abs(section_value(*sec)) <= cfg.guard_tol);
        continue;
      }
      const bool limited = trial.dt >= (t_target - eng.t()) * (1.0 - 1e-15);
      if (limited) {
        trial.dt = t_target - eng.t();  // land exactly on the target time
      }
      eng.accept(std::move(trial), limited);
      ensure_in_box(eng);
      if (rearm) armed = true;
    }
    // Right-continuity: a crossing within the event tolerance of t_target
    // belongs to t_target.
    const double g = eval(guard(), eng.x());
    if (std::abs(g) <= cfg.guard_tol) {
      const double rate = eng.level_rate(guard(), eng.x());
      if (rate > cfg.graze_tol && -g / rate <= 1e3 * cfg.guard_time_tol) {
        jump();
        if (sec && on_section_inbound(*sec)) {
          return SectionHit{eng.t(), HybridState{eng.mode(), eng.x()}};
        }
      }
    }
    return std::nullopt;
  }
};

HybridIntegrator::HybridIntegrator(const HybridSystemDef& sys, const IntegratorConfig& cfg,
                                   HybridState start) {
  check_state(sys, start);
  check_config(cfg);
  if (!in_box(sys, start.mode, start.x, cfg.box_tol)) {
    throw Error(ErrorCode::escaped, "initial state outside the domain box", 0.0);
  }
  impl_ = std::make_unique<Impl>(sys, cfg, std::move(start));
}

HybridIntegrator::~HybridIntegrator() = default;
HybridIntegrator::HybridIntegrator(HybridIntegrator&&) noexcept = default;
HybridIntegrator& HybridIntegrator::operator=(HybridIntegrator&&) noexcept = default;

double HybridIntegrator::time() const { return impl_->eng.t(); }

HybridState HybridIntegrator::state() const {
  return HybridState{impl_->eng.mode(), impl_->eng.x()};
}

const std::vector<JumpRecord>& HybridIntegrator::jumps() const { return impl_->jumps; }

void HybridIntegrator::advance_to(double t_target) {
  if (t_target < time()) {
    throw Error(ErrorCode::invalid_argument, "hybrid flow is only defined forward in time");
  }
  if (t_target == time()) return;
  impl_->run(t_target, nullptr, false);
}

std::optional<SectionHit> HybridIntegrator::advance_to_section(const SectionEvent& section,
                                                               double t_limit,
                                                               bool include_current) {
  return impl_->run(t_limit, &section, include_current);
}

// ---------------------------------------------------------------------------
// Free functions

HybridState integrate_mode(const HybridSystemDef& sys, const HybridState& s, double t,
                           const IntegratorConfig& cfg) {
  check_state(sys, s);
  check_config(cfg);
  if (t == 0.0) return s;
  Engine eng(sys, cfg, s.mode, s.x, 0.0);
  ensure_in_box(eng);
  const ExprTree& guard = sys.mode(s.mode).guard_level;
  const double slack = 100.0 * cfg.guard_time_tol;
  while (std::abs(t - eng.t()) > 0.0) {
    const double g_before = eval(guard, eng.x());
    Engine::Trial trial = eng.attempt(t);
    const double g_after = eval(guard, trial.x);
    if (g_before <= cfg.guard_tol && g_after > cfg.guard_tol) {
      const double theta = eng.localize(guard, 1.0, trial.dt);
      const double crossing = eng.t() + theta;
      if (std::abs(crossing) < std::abs(t) - slack) {
        throw Error(ErrorCode::guard_crossed,
                    "guard crossed at t = " + std::to_string(crossing), crossing);
      }
    }
    const bool limited = std::abs(trial.dt) >= std::abs(t - eng.t()) * (1.0 - 1e-15);
    if (limited) trial.dt = t - eng.t();
    eng.accept(std::move(trial), limited);
    ensure_in_box(eng);
  }
  return HybridState{s.mode, eng.x()};
}

Vec flow_in_mode(const HybridSystemDef& sys, int mode, const Vec& x, double t,
                 const IntegratorConfig& cfg) {
  if (t == 0.0) return x;
  Engine eng(sys, cfg, mode, x, 0.0);
  while (std::abs(t - eng.t()) > 0.0) {
    Engine::Trial trial = eng.attempt(t);
    const bool limited = std::abs(trial.dt) >= std::abs(t - eng.t()) * (1.0 - 1e-15);
    if (limited) trial.dt = t - eng.t();
    eng.accept(std::move(trial), limited);
  }
  return eng.x();
}

GuardHit signed_guard_hit(const HybridSystemDef& sys, int mode, const Vec& x,
                          const IntegratorConfig& cfg) {
  const ExprTree& guard = sys.mode(mode).guard_level;
  const double g0 = eval(guard, x);
  if (g0 == 0.0) return GuardHit{0.0, x};
  Engine eng(sys, cfg, mode, x, 0.0);
  if (g0 < 0.0) return run_to_level(eng, guard, 1.0, cfg.max_time, false);
  // past the guard: flow backward until g returns to zero
  return run_to_level(eng, guard, -1.0, -cfg.max_time, false);
}

double time_to_impact(const HybridSystemDef& sys, const HybridState& s,
                      const IntegratorConfig& cfg) {
  return impact(sys, s, cfg).t;
}

HybridState project_to_guard(const HybridSystemDef& sys, const HybridState& s,
                             const IntegratorConfig& cfg) {
  return HybridState{s.mode, impact(sys, s, cfg).x};
}

HybridState hybrid_flow(const HybridSystemDef& sys, const HybridState& s, double t,
                        const IntegratorConfig& cfg) {
  if (t < 0.0) throw Error(ErrorCode::invalid_argument, "hybrid flow requires t >= 0");
  check_state(sys, s);
  if (t == 0.0) return s;
  HybridIntegrator it(sys, cfg, s);
  it.advance_to(t);
  return it.state();
}

Trajectory simulate(const HybridSystemDef& sys, const HybridState& s, double t_end,
                    double sample_dt, const IntegratorConfig& cfg) {
  if (t_end < 0.0) throw Error(ErrorCode::invalid_argument, "t_end must be non-negative");
  if (!(sample_dt > 0.0)) throw Error(ErrorCode::invalid_argument, "sample_dt must be positive");
  Trajectory traj;
  HybridIntegrator it(sys, cfg, s);
  traj.samples.push_back(TrajectorySample{0.0, s, false});
  std::size_t seen_jumps = 0;
  auto flush_jumps = [&](double t_sample) {
    const auto& jumps = it.jumps();
    for (; seen_jumps < jumps.size(); ++seen_jumps) {
      const JumpRecord& jr = jumps[seen_jumps];
      traj.jumps.push_back(jr);
      if (jr.t < t_sample && jr.t > traj.samples.back().t) {
        traj.samples.push_back(TrajectorySample{jr.t, jr.post, true});
      } else if (jr.t == traj.samples.back().t) {
        traj.samples.back().state = jr.post;
        traj.samples.back().jump = true;
      }
    }
  };
  try {
    for (long k = 1;; ++k) {
      double t_sample = static_cast<double>(k) * sample_dt;
      const bool last = t_sample >= t_end * (1.0 - 1e-14);
      if (last) t_sample = t_end;
      if (t_sample <= traj.samples.back().t) break;
      it.advance_to(t_sample);
      flush_jumps(t_sample);
      const bool jumped_here = !it.jumps().empty() && it.jumps().back().t == it.time();
      traj.samples.push_back(TrajectorySample{it.time(), it.state(), jumped_here});
      if (last) break;
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::zeno_suspected && e.code() != ErrorCode::escaped &&
        e.code() != ErrorCode::timeout) {
      throw;
    }
    flush_jumps(std::numeric_limits<double>::infinity());
    traj.escape_flag = true;
    traj.failure = e.code();
    traj.failure_message = e.what();
  }
  return traj;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj, int dim) {
  out << "t,mode";
  for (int i = 1; i <= dim; ++i) out << ",x" << i;
  out << ",jump\n";
  out << std::setprecision(17);
  for (const auto& sample : traj.samples) {
    out << sample.t << ',' << sample.state.mode;
    for (Eigen::Index i = 0; i < sample.state.x.size(); ++i) out << ',' << sample.state.x(i);
    out << ',' << (sample.jump ? 1 : 0) << '\n';
  }
}

}  // namespace hybridkoop
