#include "hybridkoop/system.hpp"

#include <cmath>
#include <string>

#include "hybridkoop/numdiff.hpp"

namespace hybridkoop {

namespace {

std::string mode_path(std::size_t j) { return "/modes/" + std::to_string(j); }

}  // namespace

void check_structure(const HybridSystemDef& sys) {
  if (sys.num_modes < 1) throw Error(ErrorCode::schema, "/num_modes: must be positive");
  if (sys.dim < 1) throw Error(ErrorCode::schema, "/dim: must be positive");
  if (static_cast<int>(sys.modes.size()) != sys.num_modes) {
    throw Error(ErrorCode::schema, "/modes: expected " + std::to_string(sys.num_modes) +
                                       " modes, got " + std::to_string(sys.modes.size()));
  }
  const auto n = static_cast<std::size_t>(sys.dim);
  for (std::size_t j = 0; j < sys.modes.size(); ++j) {
    const ModeDef& m = sys.modes[j];
    if (m.vector_field.size() != n) {
      throw Error(ErrorCode::schema, mode_path(j) + "/vector_field: arity " +
                                         std::to_string(m.vector_field.size()) +
                                         " does not match dim " + std::to_string(n));
    }
    if (m.reset.size() != n) {
      throw Error(ErrorCode::schema, mode_path(j) + "/reset: arity " +
                                         std::to_string(m.reset.size()) +
                                         " does not match dim " + std::to_string(n));
    }
    if (m.domain_box.size() != n) {
      throw Error(ErrorCode::schema, mode_path(j) + "/domain_box: expected " +
                                         std::to_string(n) + " intervals");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!(m.domain_box[i].lo < m.domain_box[i].hi)) {
        throw Error(ErrorCode::schema,
                    mode_path(j) + "/domain_box/" + std::to_string(i) + ": empty interval");
      }
    }
    if (!(m.collar_depth > 0.0)) {
      throw Error(ErrorCode::schema, mode_path(j) + "/collar_depth: must be positive");
    }
    auto check_vars = [&](const ExprTree& e, const std::string& where) {
      if (e.max_variable() > sys.dim) {
        throw Error(ErrorCode::schema, where + ": references a variable beyond dim");
      }
    };
    for (std::size_t i = 0; i < n; ++i) {
      check_vars(m.vector_field[i], mode_path(j) + "/vector_field/" + std::to_string(i));
      check_vars(m.reset[i], mode_path(j) + "/reset/" + std::to_string(i));
    }
    check_vars(m.guard_level, mode_path(j) + "/guard_level");
    if (!m.frame.empty()) {
      if (m.frame.size() + 1 != n) {
        throw Error(ErrorCode::schema, mode_path(j) + "/frame: expected " +
                                           std::to_string(n - 1) + " auxiliary fields");
      }
      for (std::size_t k = 0; k < m.frame.size(); ++k) {
        if (m.frame[k].size() != n) {
          throw Error(ErrorCode::schema,
                      mode_path(j) + "/frame/" + std::to_string(k) + ": arity mismatch");
        }
      }
    }
    if (m.guard_chart) {
      if (m.guard_chart->to_coords.size() + 1 != n || m.guard_chart->from_coords.size() != n) {
        throw Error(ErrorCode::schema, mode_path(j) + "/guard_chart: arity mismatch");
      }
    }
  }
}

void check_state(const HybridSystemDef& sys, const HybridState& s) {
  if (s.mode < 0 || s.mode >= sys.num_modes) {
    throw Error(ErrorCode::invalid_argument, "mode index " + std::to_string(s.mode) +
                                                 " outside [0, " + std::to_string(sys.num_modes) +
                                                 ")");
  }
  if (s.x.size() != sys.dim) {
    throw Error(ErrorCode::invalid_argument, "state dimension " + std::to_string(s.x.size()) +
                                                 " does not match system dimension " +
                                                 std::to_string(sys.dim));
  }
}

bool in_box(const HybridSystemDef& sys, int mode, const Vec& x, double tol) {
  const auto& box = sys.mode(mode).domain_box;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Interval& iv = box[static_cast<std::size_t>(i)];
    const double slack = tol * (1.0 + std::max(std::abs(iv.lo), std::abs(iv.hi)));
    if (x(i) < iv.lo - slack || x(i) > iv.hi + slack) return false;
  }
  return true;
}

Vec eval_vector_field(const HybridSystemDef& sys, int mode, const Vec& x) {
  const auto& field = sys.mode(mode).vector_field;
  Vec out(static_cast<Eigen::Index>(field.size()));
  for (std::size_t i = 0; i < field.size(); ++i) {
    try {
      out(static_cast<Eigen::Index>(i)) = eval(field[i], x);
    } catch (const Error& e) {
      throw Error(e.code(), "vector field component " + std::to_string(i + 1) + ": " + e.what(),
                  static_cast<double>(i));
    }
  }
  return out;
}

Vec eval_vector_field(const HybridSystemDef& sys, const HybridState& s) {
  check_state(sys, s);
  return eval_vector_field(sys, s.mode, s.x);
}

double guard_level(const HybridSystemDef& sys, int mode, const Vec& x) {
  return eval(sys.mode(mode).guard_level, x);
}

double guard_distance(const HybridSystemDef& sys, const HybridState& s) {
  check_state(sys, s);
  return guard_level(sys, s.mode, s.x);
}

Vec guard_gradient(const HybridSystemDef& sys, int mode, const Vec& x) {
  const ExprTree& g = sys.mode(mode).guard_level;
  return numdiff::jacobian([&](const Vec& y) { return Vec::Constant(1, eval(g, y)); }, x)
      .row(0)
      .transpose();
}

Vec reset_map(const HybridSystemDef& sys, int mode, const Vec& x) {
  const auto& reset = sys.mode(mode).reset;
  Vec out(static_cast<Eigen::Index>(reset.size()));
  for (std::size_t i = 0; i < reset.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) = eval(reset[i], x);
  }
  return out;
}

HybridState apply_reset(const HybridSystemDef& sys, const HybridState& s, double guard_tol) {
  check_state(sys, s);
  const double g = guard_level(sys, s.mode, s.x);
  if (std::abs(g) > guard_tol) {
    throw Error(ErrorCode::not_on_guard,
                "state is not on the guard of mode " + std::to_string(s.mode) +
                    " (level " + std::to_string(g) + ")",
                g);
  }
  return HybridState{sys.next_mode(s.mode), reset_map(sys, s.mode, s.x)};
}

Vec eval_frame_field(const HybridSystemDef& sys, int mode, int k, const Vec& x) {
  const auto& frame = sys.mode(mode).frame;
  if (k < 2 || k - 2 >= static_cast<int>(frame.size())) {
    throw Error(ErrorCode::invalid_argument, "mode " + std::to_string(mode) +
                                                 " has no frame field F_" + std::to_string(k));
  }
  const auto& field = frame[static_cast<std::size_t>(k - 2)];
  Vec out(static_cast<Eigen::Index>(field.size()));
  for (std::size_t i = 0; i < field.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) = eval(field[i], x);
  }
  return out;
}

}  // namespace hybridkoop
