#pragma once

// Event-driven integration of hybrid executions: in-mode flows, the
// time-to-impact map, the guard projection, the global hybrid flow and
// sampled trajectories.

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hybridkoop/system.hpp"

namespace hybridkoop {

struct IntegratorConfig {
  double rel_tol = 1e-12;
  double abs_tol = 1e-12;
  double guard_time_tol = 1e-12;  // event localisation, seconds
  double max_jumps_per_unit_time = 1e3;
  double max_time = 1e3;

  double max_step = 0.05;
  double guard_tol = kDefaultGuardTol;  // |g| accepted as "on the guard"
  double box_tol = 1e-9;                // relative slack on domain boxes
  double graze_tol = 1e-10;             // minimum dg/dt at a crossing
};

/// Throws Error(invalid_argument) unless every field is positive.
void check_config(const IntegratorConfig& cfg);

struct JumpRecord {
  double t = 0.0;
  HybridState pre;
  HybridState post;
};

struct TrajectorySample {
  double t = 0.0;
  HybridState state;
  bool jump = false;  // post-jump sample
};

struct Trajectory {
  std::vector<TrajectorySample> samples;
  std::vector<JumpRecord> jumps;
  bool escape_flag = false;
  std::optional<ErrorCode> failure;
  std::string failure_message;
};

/// Oriented level set used for section-crossing events. A crossing is
/// counted when direction * level(x) passes from negative to non-negative
/// along the flow of `mode`, or when a reset lands on the level set with the
/// flow pointing to the positive side.
struct SectionEvent {
  int mode = 0;
  ExprTree level;
  double direction = 1.0;
};

struct SectionHit {
  double t = 0.0;
  HybridState state;
};

/// Stateful hybrid integrator. Resets fire at localized guard crossings; a
/// state that starts on a guard with the flow pointing outward jumps as soon
/// as time advances.
class HybridIntegrator {
 public:
  HybridIntegrator(const HybridSystemDef& sys, const IntegratorConfig& cfg, HybridState start);
  ~HybridIntegrator();
  HybridIntegrator(HybridIntegrator&&) noexcept;
  HybridIntegrator& operator=(HybridIntegrator&&) noexcept;

  double time() const;
  HybridState state() const;
  const std::vector<JumpRecord>& jumps() const;

  /// Advances to absolute time t_target >= time(). At a jump time within
  /// tolerance the post-jump state is kept (right-continuity).
  void advance_to(double t_target);

  /// Advances to the next crossing of `section`, or to t_limit when no
  /// crossing occurs before it (returns nullopt). With include_current a
  /// state already on the section counts as a hit at the current time.
  std::optional<SectionHit> advance_to_section(const SectionEvent& section, double t_limit,
                                               bool include_current = false);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// In-mode flow phi_t^(j)(x); t may be negative. Throws guard_crossed (value
/// = crossing time) or escaped.
HybridState integrate_mode(const HybridSystemDef& sys, const HybridState& s, double t,
                           const IntegratorConfig& cfg);

/// sigma^(j)(x): first t >= 0 with g_j(phi_t(x)) = 0.
double time_to_impact(const HybridSystemDef& sys, const HybridState& s,
                      const IntegratorConfig& cfg);

/// h^(j)(x) = phi_{sigma(x)}(x).
HybridState project_to_guard(const HybridSystemDef& sys, const HybridState& s,
                             const IntegratorConfig& cfg);

HybridState hybrid_flow(const HybridSystemDef& sys, const HybridState& s, double t,
                        const IntegratorConfig& cfg);

/// Samples at multiples of sample_dt (and t_end) plus post-jump samples.
/// Zeno, escape and timeout failures return the partial trajectory with
/// escape_flag set instead of throwing.
Trajectory simulate(const HybridSystemDef& sys, const HybridState& s, double t_end,
                    double sample_dt, const IntegratorConfig& cfg);

/// `t,mode,x1,...,xn,jump` with 17 significant digits.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj, int dim);

// Analytic continuation helpers: no guard or box checks. Used inside
// finite-difference stencils that straddle a guard or a reset image.

/// In-mode flow without guard or box checks.
Vec flow_in_mode(const HybridSystemDef& sys, int mode, const Vec& x, double t,
                 const IntegratorConfig& cfg);

struct GuardHit {
  double t = 0.0;  // signed: negative when x lies past the guard
  Vec x;           // the guard point reached
};

/// Signed time to the guard along the mode's flow: forward when
/// g_j(x) <= 0, backward when x lies past the guard.
GuardHit signed_guard_hit(const HybridSystemDef& sys, int mode, const Vec& x,
                          const IntegratorConfig& cfg);

}  // namespace hybridkoop
