#pragma once

// Numerical checks of the standing assumptions on a hybrid system: outward
// transversality of the flow on each guard (A1), the reset being a local
// diffeomorphism onto a transversal, inward-facing image (A2) and separation
// of guards from reset images (A3).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hybridkoop/flow.hpp"

namespace hybridkoop {

/// Moves p onto {level = 0} along the first axis with a nonzero gradient
/// component, staying inside the box; nullopt when that axis line misses it.
std::optional<Vec> level_point_along_axis(const std::vector<Interval>& box, const ExprTree& level,
                                          const Vec& p);

/// Latin-hypercube samples of the box moved onto {level = 0}.
std::vector<Vec> sample_level_set(const std::vector<Interval>& box, const ExprTree& level,
                                  int count, std::uint64_t seed);

/// The box centre moved onto {level = 0}.
Vec level_set_anchor(const std::vector<Interval>& box, const ExprTree& level);

Vec level_gradient(const ExprTree& level, const Vec& x);

/// Orthonormal tangent basis (n x (n-1)) of {level = 0} at z; each column's
/// largest entry is positive.
Mat level_tangent_basis(const ExprTree& level, const Vec& z);

/// Latin-hypercube samples of the mode's box pushed onto the guard by a 1-D
/// root solve along the first axis with a nonzero guard gradient component.
/// Samples whose axis line misses the guard are dropped. Throws
/// Error(sampling_failure) when nothing lands on the guard.
std::vector<Vec> sample_guard(const HybridSystemDef& sys, int mode, int count,
                              std::uint64_t seed);

/// Moves p onto the guard along the first axis with a nonzero guard
/// gradient component, staying inside the box; nullopt when that axis line
/// misses the guard.
std::optional<Vec> guard_point_along_axis(const HybridSystemDef& sys, int mode, const Vec& p);

/// The box centre moved onto the guard (falls back to the first guard sample).
Vec guard_anchor(const HybridSystemDef& sys, int mode);

/// Orthonormal basis (n x (n-1)) of the guard tangent space at z.
Mat guard_tangent_basis(const HybridSystemDef& sys, int mode, const Vec& z);

struct AssumptionCheck {
  std::string name;  // "A1", "A2", "A3"
  int mode = 0;
  bool pass = false;
  double margin = 0.0;  // worst case over samples; pass iff margin > tol
  std::string detail;
};

struct ValidationReport {
  std::vector<AssumptionCheck> checks;
  int samples = 0;
  double tol = 0.0;
  std::uint64_t seed = 0;

  bool pass(const std::string& name) const;
  bool all_pass() const;
};

ValidationReport validate_assumptions(const HybridSystemDef& sys, int samples, double tol,
                                      std::uint64_t seed = 0,
                                      const IntegratorConfig& cfg = IntegratorConfig{});

}  // namespace hybridkoop
