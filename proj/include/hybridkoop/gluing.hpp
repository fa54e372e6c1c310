#pragma once

// The gluing map Psi^(j) = phi^(j+1)_sigma o R o h^(j) from the collar of
// G^(j) onto a neighbourhood of R(G^(j)), its inverse and pushforwards,
// commuting frames and the collar chart eta straddling the seam.

#include <functional>
#include <string>
#include <vector>

#include "hybridkoop/flow.hpp"

namespace hybridkoop {

using FieldFn = std::function<Vec(const Vec&)>;

/// Vector field F^(j) of a mode as a callable.
FieldFn mode_field(const HybridSystemDef& sys, int mode);

/// Field given by n expressions.
FieldFn expr_field(std::vector<ExprTree> components);

/// Auxiliary fields F_2..F_n on the collar of one mode.
struct Frame {
  int mode = 0;
  std::vector<FieldFn> aux;
  std::string provenance;
};

/// The frame declared in the system document for `mode`.
Frame system_frame(const HybridSystemDef& sys, int mode);

struct FrameReport {
  int mode = 0;
  int samples = 0;
  double span_margin = 0.0;       // min smallest singular value in guard-tangent coordinates
  double normal_residual = 0.0;   // max |normal component| / |F_k| at guard samples
  double bracket_residual = 0.0;  // max Lie bracket norm over collar samples
  double tol = 0.0;
  bool span_pass = false;
  bool bracket_pass = false;
  bool pass() const { return span_pass && bracket_pass; }
};

/// Lie bracket [A, B] = DB A - DA B by central differences.
Vec lie_bracket(const FieldFn& a, const FieldFn& b, const Vec& x);

/// Guard samples plus collar samples flowed back from them by up to 90% of
/// collar_depth (points leaving the box are skipped).
std::vector<Vec> sample_collar(const HybridSystemDef& sys, int mode, int count,
                               std::uint64_t seed, const IntegratorConfig& cfg);

FrameReport check_frame(const HybridSystemDef& sys, const Frame& frame, int samples, double tol,
                        std::uint64_t seed = 0, const IntegratorConfig& cfg = IntegratorConfig{});

/// Parameterization zeta of a guard patch by n - 1 coordinates.
class GuardChart {
 public:
  /// Drops the first axis with a nonzero guard-gradient component at
  /// `anchor` and solves g = 0 along it.
  static GuardChart fitted(const HybridSystemDef& sys, int mode, const Vec& anchor);
  static GuardChart from_def(const GuardChartDef& def);
  /// The mode's declared chart if any, otherwise fitted at `anchor`.
  static GuardChart for_mode(const HybridSystemDef& sys, int mode, const Vec& anchor);

  Vec to_coords(const Vec& z) const;
  Vec from_coords(const Vec& c) const;

 private:
  std::function<Vec(const Vec&)> to_;
  std::function<Vec(const Vec&)> from_;
};

/// Psi^(j)(x) for x in the collar of mode j; the result lives in mode j + 1.
/// Throws collar_violation when sigma exceeds the collar depth.
HybridState gluing_map(const HybridSystemDef& sys, const HybridState& s,
                       const IntegratorConfig& cfg);

/// Analytic continuation of Psi^(j) with a signed time to impact, defined on
/// both sides of the guard. Used inside difference stencils.
Vec gluing_map_continued(const HybridSystemDef& sys, int mode, const Vec& x,
                         const IntegratorConfig& cfg);

/// Psi^-1: s lives in mode j + 1, the result in mode j. Damped Newton on
/// (t, c) for phi^(j+1)_{-t}(y) = R(zeta^-1(c)), then x = phi^(j)_{-t}(zeta^-1(c)).
HybridState gluing_map_inverse(const HybridSystemDef& sys, const HybridState& s,
                               const IntegratorConfig& cfg);

/// Psi^-1 without collar or box checks; accepts points slightly beyond
/// R(G^(j)) (negative flow time). Used inside difference stencils.
Vec gluing_map_inverse_continued(const HybridSystemDef& sys, int image_mode, const Vec& y,
                                 const IntegratorConfig& cfg);

struct MapKind {
  enum class Kind { gluing, mode_flow };
  Kind kind = Kind::gluing;
  double t = 0.0;  // for mode_flow

  static MapKind gluing() { return {Kind::gluing, 0.0}; }
  static MapKind mode_flow(double t) { return {Kind::mode_flow, t}; }
};

/// (D Phi F')(s) = D Phi(Phi^-1(s)) F'(Phi^-1(s)) for Phi = Psi^(j) (s in
/// mode j + 1, field on mode j) or Phi = phi_t of s's mode.
Vec pushforward(const HybridSystemDef& sys, MapKind map, const FieldFn& field,
                const HybridState& s, const IntegratorConfig& cfg);

/// Pushforward field as a callable on mode-j+1 coordinates.
FieldFn pushforward_field(const HybridSystemDef& sys, int mode, MapKind map, FieldFn field,
                          const IntegratorConfig& cfg);

/// Chart eta across the seam between G^(j) and R(G^(j)):
///   y1 = -sigma(x), (y2..yn) = zeta(h(x))                 on the collar of mode j,
///   y1 = sigma(Psi^-1 x), (y2..yn) = zeta(h(Psi^-1 x))    on the image in mode j + 1.
class CollarChart {
 public:
  enum class Side { collar, image };

  CollarChart(const HybridSystemDef& sys, int mode, GuardChart zeta, IntegratorConfig cfg);

  int mode() const { return mode_; }
  const GuardChart& zeta() const { return zeta_; }

  Vec eta(const HybridState& s, Side side) const;

  /// Collar branch for y1 < 0, image branch for y1 >= 0.
  HybridState eta_inverse(const Vec& y) const;

  /// One branch evaluated for any y1 (no checks), for one-sided stencils.
  Vec eta_inverse_branch(const Vec& y, Side side) const;

 private:
  const HybridSystemDef* sys_;
  int mode_;
  GuardChart zeta_;
  IntegratorConfig cfg_;
};

/// Builds the chart and verifies the zeta round trip on guard samples
/// (throws chart_failure beyond 1e-8).
CollarChart build_collar_chart(const HybridSystemDef& sys, int mode, const GuardChart& zeta,
                               const IntegratorConfig& cfg = IntegratorConfig{});

}  // namespace hybridkoop
