#pragma once

// Hybrid system data model H = (J, M, F, G, R).
//
// Mode j carries a vector field, a guard given as the zero level set of a
// scalar function (negative in the mode interior), a reset into mode j + 1
// (mod |J|) and a bounding box used for sampling and escape detection.

#include <optional>
#include <string>
#include <vector>

#include "hybridkoop/expr.hpp"
#include "hybridkoop/linalg.hpp"

namespace hybridkoop {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Explicit chart of a guard patch: to_coords maps a guard point to n - 1
/// coordinates, from_coords maps coordinates (read as x1..x_{n-1}) back to
/// the guard point.
struct GuardChartDef {
  std::vector<ExprTree> to_coords;
  std::vector<ExprTree> from_coords;
};

struct ModeDef {
  std::vector<ExprTree> vector_field;
  ExprTree guard_level;
  std::vector<ExprTree> reset;
  std::vector<Interval> domain_box;
  double collar_depth = 1.0;
  /// Auxiliary frame fields F_2..F_n, each n components (may be empty).
  std::vector<std::vector<ExprTree>> frame;
  std::optional<GuardChartDef> guard_chart;
};

struct HybridSystemDef {
  int num_modes = 0;
  int dim = 0;
  std::vector<ModeDef> modes;
  std::optional<double> period_hint;

  const ModeDef& mode(int j) const { return modes.at(static_cast<std::size_t>(j)); }
  int next_mode(int j) const { return (j + 1) % num_modes; }
  int prev_mode(int j) const { return (j + num_modes - 1) % num_modes; }
};

struct HybridState {
  int mode = 0;
  Vec x;
};

/// Throws Error(schema) when arities, dimensions or boxes are inconsistent.
void check_structure(const HybridSystemDef& sys);

/// Throws Error(invalid_argument) when the mode index or dimension is wrong.
void check_state(const HybridSystemDef& sys, const HybridState& s);

bool in_box(const HybridSystemDef& sys, int mode, const Vec& x, double tol);

Vec eval_vector_field(const HybridSystemDef& sys, const HybridState& s);
Vec eval_vector_field(const HybridSystemDef& sys, int mode, const Vec& x);

double guard_distance(const HybridSystemDef& sys, const HybridState& s);
double guard_level(const HybridSystemDef& sys, int mode, const Vec& x);

/// Gradient of the guard level function (central differences).
Vec guard_gradient(const HybridSystemDef& sys, int mode, const Vec& x);

/// Evaluates the reset expressions of `mode` without the on-guard check.
Vec reset_map(const HybridSystemDef& sys, int mode, const Vec& x);

constexpr double kDefaultGuardTol = 1e-9;

/// (j, x) -> (j + 1 mod |J|, R(x)); throws Error(not_on_guard) when
/// |g_j(x)| > guard_tol.
HybridState apply_reset(const HybridSystemDef& sys, const HybridState& s,
                        double guard_tol = kDefaultGuardTol);

/// Evaluates the frame field F_k (k = 2..n) of a mode.
Vec eval_frame_field(const HybridSystemDef& sys, int mode, int k, const Vec& x);

}  // namespace hybridkoop
