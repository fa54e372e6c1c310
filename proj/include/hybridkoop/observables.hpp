#pragma once

// Observables f: M -> C, iterated Lie derivatives, the membership test for
// the glued smooth space (derivative stacks matched across each guard) and
// the seam-smoothness scan in the collar chart.

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hybridkoop/gluing.hpp"

namespace hybridkoop {

/// Values on a tensor grid over one mode, first axis slowest.
struct TabulatedGrid {
  std::vector<std::vector<double>> axes;
  std::vector<Complex> values;

  std::size_t index(const std::vector<std::size_t>& idx) const;
  /// Local tensor-product cubic interpolation (edge stencils near the boundary).
  Complex interpolate(const Vec& x) const;
};

class ObservableFn {
 public:
  enum class Kind { expression, tabulated, callable };
  using Callable = std::function<Complex(int mode, const Vec& x)>;

  /// The same (re, im) pair on every mode.
  static ObservableFn expression(ExprTree re, ExprTree im = ExprTree());
  /// One (re, im) pair per mode.
  static ObservableFn per_mode(std::vector<ExprTree> re, std::vector<ExprTree> im);
  static ObservableFn tabulated(std::vector<TabulatedGrid> grids);
  static ObservableFn callable(Callable fn);

  Kind kind() const { return kind_; }
  Complex operator()(int mode, const Vec& x) const;

  int smoothness = 2;  // declared budget k

 private:
  Kind kind_ = Kind::expression;
  std::vector<ExprTree> re_;
  std::vector<ExprTree> im_;
  std::vector<TabulatedGrid> grids_;
  Callable fn_;
};

/// L_{A1} L_{A2} ... L_{Am} f(x), innermost (last) applied first; m <= 2.
/// Fields are re-evaluated at every stencil node. Stencils are central for
/// expression observables; otherwise one-sided toward `inside` whenever a
/// central node would leave it.
Complex lie_derivative(const ObservableFn& f, int mode, const std::vector<FieldFn>& fields,
                       const Vec& x, const std::function<bool(const Vec&)>& inside = {});

/// System-aware overload: stencils stay inside the mode's box and guard.
Complex lie_derivative(const HybridSystemDef& sys, const ObservableFn& f,
                       const std::vector<FieldFn>& fields, const HybridState& s);

/// Multi-indices (l1..ln) with l1 + ... + ln <= k, lexicographic.
std::vector<std::vector<int>> multi_indices(int n, int k);

struct MembershipRow {
  int sample_index = 0;
  std::vector<int> multi_index;
  Complex lhs;
  Complex rhs;
  double residual = 0.0;
  std::string error;  // non-empty when the sample failed
};

struct MembershipReport {
  int mode = 0;
  int k = 0;
  double tol = 0.0;
  std::vector<MembershipRow> rows;
  double max_residual = 0.0;
  double max_lhs = 0.0;
  int failed_rows = 0;
  bool pass = false;
};

/// Default relative tolerance: 1e-5 for k <= 1, 1e-3 for k = 2, times 10
/// for tabulated observables.
double default_membership_tol(int k, ObservableFn::Kind kind);

/// Compares L_F^l1 L_F2^l2 ... f(z) with L_F^l1 L_{DPsi F2}^l2 ... f(R(z))
/// at each guard sample z of frame.mode. Pass iff every row evaluated and
/// max residual <= tol * (1 + max |lhs|).
MembershipReport check_membership(const HybridSystemDef& sys, const ObservableFn& f,
                                  const Frame& frame, int k, const std::vector<Vec>& guard_samples,
                                  double tol, const IntegratorConfig& cfg = IntegratorConfig{});

/// `sample_index,l1,...,ln,lhs,rhs,residual,lhs_im,rhs_im,error`
void write_membership_csv(std::ostream& out, const MembershipReport& report, int dim);

/// max |f(z) - f(R(z))| over guard samples of `mode`.
double quotient_residual(const HybridSystemDef& sys, const ObservableFn& f, int mode,
                         const std::vector<Vec>& guard_samples);

bool quotient_consistency(const HybridSystemDef& sys, const ObservableFn& f, int mode,
                          const std::vector<Vec>& guard_samples, double tol);

struct ScanRow {
  int grid_index = 0;
  Vec coords;                // y2..yn
  std::vector<int> orders;   // partial orders in y1..yn
  Complex left;              // y1 -> 0-
  Complex right;             // y1 -> 0+
  double jump = 0.0;
  std::string error;
};

struct ScanReport {
  int k = 0;
  double tol = 0.0;
  std::vector<ScanRow> rows;
  double max_jump = 0.0;
  double value_jump = 0.0;  // max jump of the order-0 rows
  int failed_rows = 0;
  bool pass = false;
};

/// One-sided partial derivatives of y -> f(eta^-1(y)) at y1 = 0 from both
/// sides, on chart coordinates `grid` (each a point (y2..yn)).
ScanReport seam_smoothness_scan(const HybridSystemDef& sys, const ObservableFn& f,
                                const CollarChart& chart, int k, const std::vector<Vec>& grid,
                                double tol);

/// `grid_index,y2,...,yn,a1,...,an,left,right,jump,left_im,right_im,error`
void write_scan_csv(std::ostream& out, const ScanReport& report, int dim);

}  // namespace hybridkoop
