#pragma once

// Poincare sections and return maps, limit-cycle location, Floquet analysis,
// the principal Koopman eigenfunctions (asymptotic phase and amplitudes) and
// the linear embedding they generate.

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hybridkoop/flow.hpp"
#include "hybridkoop/observables.hpp"

namespace hybridkoop {

struct PoincareSection {
  int mode = 0;
  ExprTree level;
  Vec anchor;
  Mat tangent;             // n x (n-1), orthonormal
  double direction = 1.0;  // sign of grad(level).F at the anchor

  /// Tangent coordinates relative to the anchor.
  Vec to_local(const Vec& x) const;
  /// anchor + tangent * u moved back onto the level set along its normal.
  Vec from_local(const Vec& u) const;
  SectionEvent event() const;
};

/// Throws invalid_argument when the anchor is off the level set or the flow
/// is not transversal (|grad s . F| / (|grad s| |F|) <= tol) at a sampled
/// section point.
PoincareSection make_section(const HybridSystemDef& sys, int mode, const ExprTree& level,
                             const std::optional<Vec>& anchor = std::nullopt,
                             double tol = 1e-8, int samples = 64);

/// The guard of the successor of mode 0, translated so that it passes
/// through the reset image of the guard anchor of mode 0.
PoincareSection default_section(const HybridSystemDef& sys);

struct SectionReturn {
  Vec point;
  double time = 0.0;
};

/// First return to the section in the anchor's crossing direction. Throws
/// no_return when the trajectory fails or no return occurs by cfg.max_time.
SectionReturn poincare_return(const HybridSystemDef& sys, const PoincareSection& sec,
                              const Vec& p, const IntegratorConfig& cfg);

Vec poincare_map(const HybridSystemDef& sys, const PoincareSection& sec, const Vec& p,
                 const IntegratorConfig& cfg);

struct CycleOptions {
  double tol = 1e-10;  // on ||P(x*) - x*||
  int max_iterations = 500;
  double fd_scale = 100.0;  // multiplier on the default central step
};

struct LimitCycle {
  HybridState x_star;
  double tau = 0.0;
  double residual = 0.0;
  int newton_steps = 0;
  int fixed_point_steps = 0;
};

/// Damped Newton on P(p) - p with a finite-difference Jacobian, falling back
/// to fixed-point steps. Throws not_stable when the iteration does not
/// converge and no_return when the guess never returns.
LimitCycle find_limit_cycle(const HybridSystemDef& sys, const PoincareSection& sec,
                            const Vec& guess, const IntegratorConfig& cfg,
                            const CycleOptions& opt = {});

struct SpectralReport {
  PoincareSection section;
  HybridState x_star;
  double tau = 0.0;
  double omega = 0.0;
  Mat dp;  // DP(x*) in tangent coordinates
  std::vector<Complex> multipliers;  // |rho_2| >= ... >= |rho_n|
  std::vector<Complex> exponents;    // ln(rho_i) / tau
  std::vector<CVec> left_vectors;    // w_i with w_i^H DP = rho_i w_i^H
  int r = 2;
  bool nonresonant = true;
  double nonresonance_margin = 0.0;
  bool spectral_spread = true;
  bool degenerate = false;

  const CVec& dominant_left() const { return left_vectors.front(); }
};

/// Throws not_stable when some |rho_i| >= 1.
SpectralReport floquet(const HybridSystemDef& sys, const PoincareSection& sec,
                       const LimitCycle& cycle, const IntegratorConfig& cfg, int r = 2,
                       double tol = 1e-6, double fd_scale = 100.0);

/// `key = value` lines, full precision.
void write_spectral_report(std::ostream& out, const SpectralReport& report);

using StateFn = std::function<Complex(const HybridState&)>;

struct Eigenfunction {
  Complex eigenvalue;
  StateFn fn;
  std::string label;
};

struct EigenOptions {
  double tol = 1e-9;
  int max_returns = 200;
};

/// phi(x) = exp(i theta(x)), theta = omega * (asymptotic section-hit offset),
/// theta(x*) = 0. Satisfies U_t phi = exp(-i omega t) phi.
class PhaseEigenfunction {
 public:
  PhaseEigenfunction(const HybridSystemDef& sys, const SpectralReport& report,
                     const IntegratorConfig& cfg, const EigenOptions& opt = {});

  /// theta(x) in (-pi, pi].
  double phase(const HybridState& s) const;
  Complex operator()(const HybridState& s) const;
  Complex eigenvalue() const { return {0.0, -omega_}; }

 private:
  const HybridSystemDef* sys_;
  SectionEvent event_;
  double tau_;
  double omega_;
  IntegratorConfig cfg_;
  EigenOptions opt_;
};

/// psi(p) = lim rho^-m w^H (P^m(p) - x*) on the section, extended off it by
/// phi(x) = exp(-nu sigma_sec(x)) psi(first hit).
class AmplitudeEigenfunction {
 public:
  /// `index` selects rho_{index+2}; throws degenerate_spectrum when that
  /// multiplier's modulus is shared with a non-conjugate multiplier.
  AmplitudeEigenfunction(const HybridSystemDef& sys, const SpectralReport& report, int index,
                         const IntegratorConfig& cfg, const EigenOptions& opt = {});

  Complex on_section(const Vec& p) const;
  Complex operator()(const HybridState& s) const;
  Complex eigenvalue() const { return nu_; }

 private:
  const HybridSystemDef* sys_;
  PoincareSection section_;
  Vec u_star_;
  Complex rho_;
  Complex nu_;
  CVec w_;
  IntegratorConfig cfg_;
  EigenOptions opt_;
};

/// Tensor grid in one mode, first axis slowest. Text form
/// "n1,...,nd:lo1,hi1,...,lod,hid".
struct GridSpec {
  int mode = 0;
  std::vector<int> counts;
  std::vector<Interval> box;

  static GridSpec parse(std::string_view text, int mode = 0);
  std::string to_string() const;
  std::size_t size() const;
  Vec point(std::size_t index) const;
};

struct EigenfunctionGrid {
  Eigenfunction function;
  GridSpec grid;
  std::vector<Vec> points;
  std::vector<Complex> values;  // NaN where evaluation failed
  int failures = 0;
  std::string normalization;
};

/// Evaluates `fn` at every grid point on `threads` workers; results are
/// merged by grid index.
EigenfunctionGrid tabulate(const Eigenfunction& fn, const GridSpec& grid, int threads = 1);

/// Phase eigenfunction on a grid. The reported eigenvalue is whichever of
/// -i omega, +i omega has the smaller eigen-residual over one period.
EigenfunctionGrid phase_eigenfunction(const HybridSystemDef& sys, const SpectralReport& report,
                                      const GridSpec& grid, const IntegratorConfig& cfg,
                                      int threads = 1, const EigenOptions& opt = {});

EigenfunctionGrid amplitude_eigenfunction(const HybridSystemDef& sys,
                                          const SpectralReport& report, const GridSpec& grid,
                                          const IntegratorConfig& cfg, int index = 0,
                                          int threads = 1, const EigenOptions& opt = {});

/// `mode,x1,...,xn,re,im`, 17 significant digits.
void write_eigenfunction_csv(std::ostream& out, const EigenfunctionGrid& grid);

struct ResidualReport {
  double max_residual = 0.0;
  int evaluated = 0;
  int skipped = 0;
};

/// max over points and t_k = k T / time_samples (k = 1..time_samples) of
/// |phi(flow_t(x)) - exp(lambda t) phi(x)| / (1 + |phi(x)|). Points whose
/// trajectory or evaluation fails are skipped.
ResidualReport eigen_residual(const HybridSystemDef& sys, const StateFn& phi, Complex lambda,
                              const std::vector<HybridState>& points, double horizon,
                              const IntegratorConfig& cfg, int time_samples = 8);

ResidualReport eigen_residual(const HybridSystemDef& sys, const ObservableFn& phi,
                              Complex lambda, const std::vector<HybridState>& points,
                              double horizon, const IntegratorConfig& cfg,
                              int time_samples = 8);

/// Grid points of the grid, evaluated through its eigenfunction handle.
ResidualReport eigen_residual(const HybridSystemDef& sys, const EigenfunctionGrid& grid,
                              double horizon, const IntegratorConfig& cfg,
                              int time_samples = 8);

/// Scalar c minimising ||a - c b||; complex unless `real_only`.
Complex align_scalar(const std::vector<Complex>& a, const std::vector<Complex>& b,
                     bool real_only = false);

/// max |a - c b| / max |a| after alignment.
double aligned_deviation(const std::vector<Complex>& a, const std::vector<Complex>& b,
                         bool real_only = false);

struct Embedding {
  std::vector<Eigenfunction> components;  // phase first
  std::vector<std::string> labels;
  Mat a;

  Vec operator()(const HybridState& s) const;
  int dim() const { return static_cast<int>(a.rows()); }
};

/// Stacks [Re phi_phase, Im phi_phase, amplitudes...]; a real amplitude adds
/// one row, a complex one adds its real and imaginary parts. Throws
/// missing_eigenfunction when the phase or some exponent has no match.
Embedding build_embedding(const SpectralReport& report, const std::vector<Eigenfunction>& eigfns,
                          double tol = 1e-6);

/// max over points and times of ||E(flow_t x) - exp(A t) E(x)|| / (1 + ||E(x)||).
ResidualReport embedding_residual(const HybridSystemDef& sys, const Embedding& emb,
                                  const std::vector<HybridState>& points,
                                  const std::vector<double>& times, const IntegratorConfig& cfg);

}  // namespace hybridkoop
