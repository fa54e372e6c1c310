#include "hybridkoop/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "hybridkoop/document.hpp"
#include "hybridkoop/gluing.hpp"
#include "hybridkoop/spectral.hpp"
#include "hybridkoop/validate.hpp"

#ifndef HYBRIDKOOP_VERSION
#define HYBRIDKOOP_VERSION "unknown"
#endif

namespace hybridkoop::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string system = "paper-example";
  std::uint64_t seed = 0;
  int threads = 1;
  std::string manifest_dir = ".";
  double rel_tol = 1e-12;
  double abs_tol = 1e-12;
  double max_time = 1e3;
};

struct SpectralArgs {
  std::string section_level;
  int section_mode = 0;
  std::string guess;
  int r = 2;
};

struct Args {
  // shared
  std::string x0;
  std::string out;
  int samples = 50;
  double tol = 0.0;  // 0 selects the command's default
  int mode = 0;
  // simulate
  double t_end = 0.0;
  double dt = 0.01;
  // poincare
  std::string p0;
  int iters = 5;
  // eigfn / embed
  std::string kind;
  std::string grid;
  int index = 0;
  bool check_residual = false;
  std::string t_checks = "0.25,0.5,1";
  // observables
  std::string re;
  std::string im = "0";
  int k = 1;
  int points = 20;
  // replay
  std::string manifest;
};

struct Context {
  HybridSystemDef sys;
  IntegratorConfig cfg;
  std::ostream& out;
  std::ostream& err;
  std::vector<std::string> outputs;
};

std::vector<double> parse_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
    if (item.empty() || used != item.size()) {
      throw UsageError(flag + ": cannot read '" + item + "' as a number");
    }
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(flag + ": empty list");
  return out;
}

HybridState parse_state(const Context& ctx, const std::string& text, const std::string& flag) {
  const auto v = parse_list(text, flag);
  if (static_cast<int>(v.size()) != ctx.sys.dim + 1) {
    throw UsageError(flag + " expects mode,x1,...,x" + std::to_string(ctx.sys.dim));
  }
  HybridState s;
  s.mode = static_cast<int>(v[0]);
  if (s.mode != v[0] || s.mode < 0 || s.mode >= ctx.sys.num_modes) {
    throw UsageError(flag + ": invalid mode index");
  }
  s.x = Eigen::Map<const Vec>(v.data() + 1, ctx.sys.dim);
  return s;
}

Vec parse_point(const Context& ctx, const std::string& text, const std::string& flag) {
  const auto v = parse_list(text, flag);
  if (static_cast<int>(v.size()) != ctx.sys.dim) {
    throw UsageError(flag + " expects x1,...,x" + std::to_string(ctx.sys.dim));
  }
  return Eigen::Map<const Vec>(v.data(), ctx.sys.dim);
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::string fmt(const Vec& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(v(i));
  return s;
}

std::string fmt(Complex c) {
  return fmt(c.real()) + (c.imag() < 0 ? " - " : " + ") + fmt(std::abs(c.imag())) + "i";
}

// Writes through `fn` to args.out, or to the context stream when no path is set.
template <class Fn>
void emit(Context& ctx, const std::string& path, Fn&& fn) {
  if (path.empty()) {
    fn(ctx.out);
    return;
  }
  std::ofstream file(path);
  if (!file) throw UsageError("cannot write '" + path + "'");
  fn(file);
  ctx.outputs.push_back(path);
}

SpectralReport spectral_report(const Context& ctx, const SpectralArgs& sa) {
  PoincareSection sec = sa.section_level.empty()
                            ? default_section(ctx.sys)
                            : make_section(ctx.sys, sa.section_mode,
                                           parse(sa.section_level, ctx.sys.dim));
  const Vec guess = sa.guess.empty() ? sec.anchor : parse_point(ctx, sa.guess, "--guess");
  const LimitCycle cycle = find_limit_cycle(ctx.sys, sec, sec.from_local(sec.to_local(guess)), ctx.cfg);
  return floquet(ctx.sys, sec, cycle, ctx.cfg, sa.r);
}

GridSpec grid_or_box(const Context& ctx, const std::string& text, int mode, int per_axis) {
  if (!text.empty()) {
    const std::size_t colon = text.find(':');
    if (colon != std::string::npos) return GridSpec::parse(text, mode);
    // counts only: span the mode's box
    GridSpec g;
    g.mode = mode;
    for (double c : parse_list(text, "--grid")) g.counts.push_back(static_cast<int>(c));
    g.box = ctx.sys.mode(mode).domain_box;
    if (g.counts.size() != g.box.size()) throw UsageError("--grid: one count per axis");
    return GridSpec::parse(g.to_string(), mode);
  }
  GridSpec g;
  g.mode = mode;
  g.box = ctx.sys.mode(mode).domain_box;
  g.counts.assign(g.box.size(), per_axis);
  return g;
}

ObservableFn observable(const Context& ctx, const Args& a) {
  if (a.re.empty()) throw UsageError("--re is required");
  auto f = ObservableFn::expression(parse(a.re, ctx.sys.dim), parse(a.im, ctx.sys.dim));
  f.smoothness = a.k;
  return f;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_validate(Context& ctx, const Globals& g, const Args& a) {
  const double tol = a.tol > 0.0 ? a.tol : 1e-8;
  const ValidationReport rep = validate_assumptions(ctx.sys, a.samples, tol, g.seed, ctx.cfg);
  emit(ctx, a.out, [&](std::ostream& os) {
    os << "check,mode,pass,margin,detail\n";
    for (const auto& c : rep.checks) {
      os << c.name << "," << c.mode << "," << (c.pass ? "true" : "false") << "," << fmt(c.margin)
         << ",\"" << c.detail << "\"\n";
    }
  });
  ctx.out << "all_pass = " << (rep.all_pass() ? "true" : "false") << "\n";
  return rep.all_pass() ? 0 : 1;
}

int cmd_simulate(Context& ctx, const Globals&, const Args& a) {
  if (a.x0.empty()) throw UsageError("--x0 is required");
  if (a.t_end < 0.0) throw UsageError("--t-end must be >= 0");
  if (!(a.dt > 0.0)) throw UsageError("--dt must be positive");
  const HybridState s = parse_state(ctx, a.x0, "--x0");
  check_state(ctx.sys, s);
  const Trajectory traj = simulate(ctx.sys, s, a.t_end, a.dt, ctx.cfg);
  emit(ctx, a.out, [&](std::ostream& os) { write_trajectory_csv(os, traj, ctx.sys.dim); });
  if (traj.escape_flag) {
    ctx.err << "trajectory stopped early: " << traj.failure_message << "\n";
    return 1;
  }
  return 0;
}

int cmd_sigma(Context& ctx, const Globals&, const Args& a) {
  if (a.x0.empty()) throw UsageError("--x0 is required");
  const HybridState s = parse_state(ctx, a.x0, "--x0");
  const double sigma = time_to_impact(ctx.sys, s, ctx.cfg);
  const HybridState h = project_to_guard(ctx.sys, s, ctx.cfg);
  emit(ctx, a.out, [&](std::ostream& os) {
    os << "sigma = " << fmt(sigma) << "\n";
    os << "h_mode = " << h.mode << "\n";
    os << "h = " << fmt(h.x) << "\n";
  });
  return 0;
}

int cmd_gluing(Context& ctx, const Globals&, const Args& a) {
  if (a.x0.empty()) throw UsageError("--x0 is required");
  const HybridState s = parse_state(ctx, a.x0, "--x0");
  const HybridState y = gluing_map(ctx.sys, s, ctx.cfg);
  emit(ctx, a.out, [&](std::ostream& os) {
    os << "psi_mode = " << y.mode << "\n";
    os << "psi = " << fmt(y.x) << "\n";
  });
  return 0;
}

int cmd_frame_check(Context& ctx, const Globals& g, const Args& a) {
  const double tol = a.tol > 0.0 ? a.tol : 1e-6;
  bool all = true;
  emit(ctx, a.out, [&](std::ostream& os) {
    os << "mode,samples,span_margin,normal_residual,bracket_residual,span_pass,bracket_pass\n";
    for (int j = 0; j < ctx.sys.num_modes; ++j) {
      const FrameReport rep =
          check_frame(ctx.sys, system_frame(ctx.sys, j), a.samples, tol, g.seed, ctx.cfg);
      all = all && rep.pass();
      os << j << "," << rep.samples << "," << fmt(rep.span_margin) << ","
         << fmt(rep.normal_residual) << "," << fmt(rep.bracket_residual) << ","
         << (rep.span_pass ? "true" : "false") << "," << (rep.bracket_pass ? "true" : "false")
         << "\n";
    }
  });
  ctx.out << "pass = " << (all ? "true" : "false") << "\n";
  return all ? 0 : 1;
}

int cmd_poincare(Context& ctx, const Globals&, const Args& a, const SpectralArgs& sa) {
  if (a.iters < 0) throw UsageError("--iters must be >= 0");
  const PoincareSection sec = sa.section_level.empty()
                                  ? default_section(ctx.sys)
                                  : make_section(ctx.sys, sa.section_mode,
                                                 parse(sa.section_level, ctx.sys.dim));
  Vec p = a.p0.empty() ? sec.anchor : parse_point(ctx, a.p0, "--p0");
  emit(ctx, a.out, [&](std::ostream& os) {
    os << "k,t";
    for (int i = 1; i <= ctx.sys.dim; ++i) os << ",x" << i;
    os << "\n" << std::setprecision(17);
    os << 0 << "," << 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) os << "," << p(i);
    os << "\n";
    for (int k = 1; k <= a.iters; ++k) {
      const SectionReturn ret = poincare_return(ctx.sys, sec, p, ctx.cfg);
      p = ret.point;
      os << k << "," << ret.time;
      for (Eigen::Index i = 0; i < p.size(); ++i) os << "," << p(i);
      os << "\n";
    }
  });
  return 0;
}

int cmd_floquet(Context& ctx, const Globals&, const Args& a, const SpectralArgs& sa) {
  const SpectralReport rep = spectral_report(ctx, sa);
  emit(ctx, a.out, [&](std::ostream& os) { write_spectral_report(os, rep); });
  const bool ok = rep.nonresonant && rep.spectral_spread && !rep.degenerate;
  if (!ok) ctx.err << "spectral conditions fail for r = " << rep.r << "\n";
  return ok ? 0 : 1;
}

int cmd_eigfn(Context& ctx, const Globals& g, const Args& a, const SpectralArgs& sa) {
  if (a.kind != "phase" && a.kind != "amplitude") {
    throw UsageError("eigfn expects 'phase' or 'amplitude'");
  }
  const SpectralReport rep = spectral_report(ctx, sa);
  const GridSpec grid = grid_or_box(ctx, a.grid, a.mode, 20);
  const EigenfunctionGrid eg =
      a.kind == "phase"
          ? phase_eigenfunction(ctx.sys, rep, grid, ctx.cfg, g.threads)
          : amplitude_eigenfunction(ctx.sys, rep, grid, ctx.cfg, a.index, g.threads);
  emit(ctx, a.out, [&](std::ostream& os) { write_eigenfunction_csv(os, eg); });
  int code = 0;
  if (!a.out.empty()) {
    ctx.out << "eigenvalue = " << fmt(eg.function.eigenvalue) << "\n";
    ctx.out << "normalization = " << eg.normalization << "\n";
    ctx.out << "points = " << eg.points.size() << "\n";
    ctx.out << "failures = " << eg.failures << "\n";
  }
  if (eg.failures > 0) {
    ctx.err << eg.failures << " grid point(s) could not be evaluated\n";
    code = 1;
  }
  if (a.check_residual) {
    const ResidualReport res = eigen_residual(ctx.sys, eg, 2.0 * rep.tau, ctx.cfg);
    const double tol = a.tol > 0.0 ? a.tol : 1e-3;
    (a.out.empty() ? ctx.err : ctx.out) << "residual = " << fmt(res.max_residual) << "\n";
    if (res.max_residual > tol || res.skipped > 0) code = 1;
  }
  return code;
}

int cmd_check_observable(Context& ctx, const Globals& g, const Args& a) {
  const ObservableFn f = observable(ctx, a);
  const double tol = a.tol > 0.0 ? a.tol : default_membership_tol(a.k, f.kind());
  const auto samples = sample_guard(ctx.sys, a.mode, a.samples, g.seed);
  const MembershipReport rep =
      check_membership(ctx.sys, f, system_frame(ctx.sys, a.mode), a.k, samples, tol, ctx.cfg);
  if (!a.out.empty()) {
    emit(ctx, a.out, [&](std::ostream& os) { write_membership_csv(os, rep, ctx.sys.dim); });
  }
  ctx.out << "k = " << rep.k << "\n";
  ctx.out << "samples = " << samples.size() << "\n";
  ctx.out << "max_residual = " << fmt(rep.max_residual) << "\n";
  ctx.out << "max_lhs = " << fmt(rep.max_lhs) << "\n";
  ctx.out << "tol = " << fmt(rep.tol) << "\n";
  ctx.out << "failed_rows = " << rep.failed_rows << "\n";
  ctx.out << "pass = " << (rep.pass ? "true" : "false") << "\n";
  return rep.pass ? 0 : 1;
}

int cmd_seam_scan(Context& ctx, const Globals& g, const Args& a) {
  const ObservableFn f = observable(ctx, a);
  const double tol = a.tol > 0.0 ? a.tol : 1e-4;
  const CollarChart chart = build_collar_chart(
      ctx.sys, a.mode, GuardChart::for_mode(ctx.sys, a.mode, guard_anchor(ctx.sys, a.mode)),
      ctx.cfg);
  std::vector<Vec> coords;
  for (const Vec& z : sample_guard(ctx.sys, a.mode, a.points, g.seed)) {
    coords.push_back(chart.zeta().to_coords(z));
  }
  const ScanReport rep = seam_smoothness_scan(ctx.sys, f, chart, a.k, coords, tol);
  if (!a.out.empty()) {
    emit(ctx, a.out, [&](std::ostream& os) { write_scan_csv(os, rep, ctx.sys.dim); });
  }
  ctx.out << "k = " << rep.k << "\n";
  ctx.out << "points = " << coords.size() << "\n";
  ctx.out << "max_jump = " << fmt(rep.max_jump) << "\n";
  ctx.out << "value_jump = " << fmt(rep.value_jump) << "\n";
  ctx.out << "failed_rows = " << rep.failed_rows << "\n";
  ctx.out << "pass = " << (rep.pass ? "true" : "false") << "\n";
  return rep.pass ? 0 : 1;
}

int cmd_embed(Context& ctx, const Globals&, const Args& a, const SpectralArgs& sa) {
  const SpectralReport rep = spectral_report(ctx, sa);
  const PhaseEigenfunction phase(ctx.sys, rep, ctx.cfg);
  std::vector<Eigenfunction> fns{
      {phase.eigenvalue(), [phase](const HybridState& s) { return phase(s); }, "phase"}};
  for (std::size_t i = 0; i < rep.multipliers.size(); ++i) {
    if (rep.multipliers[i].imag() < 0.0) continue;  // conjugate of an earlier one
    const AmplitudeEigenfunction amp(ctx.sys, rep, static_cast<int>(i), ctx.cfg);
    fns.push_back({amp.eigenvalue(), [amp](const HybridState& s) { return amp(s); },
                   "amplitude_" + std::to_string(i + 2)});
  }
  const Embedding emb = build_embedding(rep, fns);

  std::vector<double> times;
  for (double f : parse_list(a.t_checks, "--t-checks")) times.push_back(f * rep.tau);
  const GridSpec grid = grid_or_box(ctx, a.grid, a.mode, 10);
  std::vector<HybridState> pts;
  for (std::size_t i = 0; i < grid.size(); ++i) pts.push_back({grid.mode, grid.point(i)});
  const ResidualReport res = embedding_residual(ctx.sys, emb, pts, times, ctx.cfg);
  const double tol = a.tol > 0.0 ? a.tol : 1e-5;

  emit(ctx, a.out, [&](std::ostream& os) {
    os << "m = " << emb.dim() << "\n";
    os << "labels =";
    for (const auto& l : emb.labels) os << " " << l;
    os << "\n";
    for (Eigen::Index r = 0; r < emb.a.rows(); ++r) {
      os << "A_row_" << r + 1 << " = " << fmt(Vec(emb.a.row(r).transpose())) << "\n";
    }
    os << "E(x*) = " << fmt(emb(rep.x_star)) << "\n";
    os << "t_checks =";
    for (double t : times) os << " " << fmt(t);
    os << "\n";
    os << "points = " << res.evaluated << "\n";
    os << "skipped = " << res.skipped << "\n";
    os << "max_residual = " << fmt(res.max_residual) << "\n";
  });
  return res.max_residual <= tol && res.skipped == 0 ? 0 : 1;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::syntax:
    case ErrorCode::unknown_identifier:
    case ErrorCode::arity:
    case ErrorCode::schema:
    case ErrorCode::invalid_argument:
      return 2;
    default:
      return 1;
  }
}

json option_values(const CLI::App& app) {
  json obj = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_name();
    if (name.empty() || name == "--help" || name == "-h") continue;
    if (opt->count() > 0) {
      const auto& res = opt->results();
      obj[name] = res.size() == 1 ? json(res.front()) : json(res);
    } else {
      obj[name] = opt->get_default_str();
    }
  }
  return obj;
}

int run_impl(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
             const std::optional<std::string>& embedded_document);

int cmd_replay(const Args& a, std::ostream& out, std::ostream& err) {
  std::ifstream in(a.manifest);
  if (!in) throw UsageError("cannot read manifest '" + a.manifest + "'");
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw UsageError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!m.contains("argv") || !m["argv"].is_array()) throw UsageError("manifest lacks argv");
  const auto argv = m["argv"].get<std::vector<std::string>>();
  std::optional<std::string> doc;
  if (m.contains("system_document") && m["system_document"].is_string()) {
    doc = m["system_document"].get<std::string>();
  }
  return run_impl(argv, out, err, doc);
}

int run_impl(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
             const std::optional<std::string>& embedded_document) {
  const auto started = std::chrono::steady_clock::now();
  CLI::App app{"Koopman spectral analysis of hybrid limit-cycling systems", "hybridkoop"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", HYBRIDKOOP_VERSION);

  Globals g;
  Args a;
  SpectralArgs sa;
  app.add_option("--system", g.system, "fixture name or path to a JSON system document")
      ->capture_default_str();
  app.add_option("--seed", g.seed, "sampling seed")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads for grid evaluation")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  app.add_option("--manifest-dir", g.manifest_dir,
                 "directory for the run manifest when no --out is given")
      ->capture_default_str();
  app.add_option("--rel-tol", g.rel_tol, "integrator relative tolerance")->capture_default_str();
  app.add_option("--abs-tol", g.abs_tol, "integrator absolute tolerance")->capture_default_str();
  app.add_option("--max-time", g.max_time, "integration time limit")->capture_default_str();

  auto add_out = [&](CLI::App* sub, const std::string& what) {
    sub->add_option("--out", a.out, what);
  };
  auto add_spectral = [&](CLI::App* sub) {
    sub->add_option("--section-level", sa.section_level,
                    "section level-set expression (default: translated guard)");
    sub->add_option("--section-mode", sa.section_mode, "mode of the section")->capture_default_str();
    sub->add_option("--guess", sa.guess, "initial section point x1,...,xn");
    sub->add_option("--r", sa.r, "smoothness order for the spectral conditions")
        ->capture_default_str();
  };

  auto* validate = app.add_subcommand("validate", "check the standing assumptions");
  validate->add_option("--samples", a.samples, "guard samples per mode")->capture_default_str();
  validate->add_option("--tol", a.tol, "margin threshold (default 1e-8)");
  add_out(validate, "CSV report path");

  auto* sim = app.add_subcommand("simulate", "sample a hybrid trajectory");
  sim->add_option("--x0", a.x0, "initial state mode,x1,...,xn")->required();
  sim->add_option("--t-end", a.t_end, "final time")->required();
  sim->add_option("--dt", a.dt, "sampling interval")->capture_default_str();
  add_out(sim, "trajectory CSV path (default stdout)");

  auto* sig = app.add_subcommand("sigma", "time to impact and guard projection");
  sig->add_option("--x0", a.x0, "state mode,x1,...,xn")->required();
  add_out(sig, "report path");

  auto* glue = app.add_subcommand("gluing", "evaluate the gluing map");
  glue->add_option("--x0", a.x0, "collar state mode,x1,...,xn")->required();
  add_out(glue, "report path");

  auto* frame = app.add_subcommand("frame-check", "check the declared collar frames");
  frame->add_option("--samples", a.samples, "guard samples per mode")->capture_default_str();
  frame->add_option("--tol", a.tol, "threshold (default 1e-6)");
  add_out(frame, "CSV report path");

  auto* poin = app.add_subcommand("poincare", "iterate the Poincare return map");
  add_spectral(poin);
  poin->add_option("--p0", a.p0, "section point x1,...,xn (default: section anchor)");
  poin->add_option("--iters", a.iters, "number of returns")->capture_default_str();
  add_out(poin, "CSV path (default stdout)");

  auto* floq = app.add_subcommand("floquet", "period, multipliers and spectral conditions");
  add_spectral(floq);
  add_out(floq, "report path");

  auto* eig = app.add_subcommand("eigfn", "tabulate a principal eigenfunction");
  eig->add_option("kind", a.kind, "phase or amplitude")->required();
  add_spectral(eig);
  eig->add_option("--grid", a.grid, "grid n1,n2:lo1,hi1,lo2,hi2 (default 20 per axis over the box)");
  eig->add_option("--grid-mode", a.mode, "mode of the grid")->capture_default_str();
  eig->add_option("--index", a.index, "amplitude: 0 for rho_2, 1 for rho_3, ...")
      ->capture_default_str();
  eig->add_flag("--check-residual", a.check_residual, "also report the eigen-relation residual");
  eig->add_option("--tol", a.tol, "residual threshold (default 1e-3)");
  add_out(eig, "CSV path (default stdout)");

  auto* obs = app.add_subcommand("check-observable", "membership test at the guard");
  obs->add_option("--re", a.re, "real part expression")->required();
  obs->add_option("--im", a.im, "imaginary part expression")->capture_default_str();
  obs->add_option("--k", a.k, "smoothness order")->capture_default_str();
  obs->add_option("--samples", a.samples, "guard samples")->capture_default_str();
  obs->add_option("--mode", a.mode, "guard mode")->capture_default_str();
  obs->add_option("--tol", a.tol, "relative threshold (default by k)");
  add_out(obs, "CSV path for the per-row table");

  auto* seam = app.add_subcommand("seam-scan", "one-sided derivative jumps across the seam");
  seam->add_option("--re", a.re, "real part expression")->required();
  seam->add_option("--im", a.im, "imaginary part expression")->capture_default_str();
  seam->add_option("--k", a.k, "smoothness order")->capture_default_str();
  seam->add_option("--points", a.points, "chart points along the guard")->capture_default_str();
  seam->add_option("--mode", a.mode, "guard mode")->capture_default_str();
  seam->add_option("--tol", a.tol, "jump threshold (default 1e-4)");
  add_out(seam, "CSV path for the per-row table");

  auto* emb = app.add_subcommand("embed", "linear embedding and its residual");
  add_spectral(emb);
  emb->add_option("--t-checks", a.t_checks, "check times as multiples of the period")
      ->capture_default_str();
  emb->add_option("--grid", a.grid, "test grid (default 10 per axis over the box)");
  emb->add_option("--grid-mode", a.mode, "mode of the grid")->capture_default_str();
  emb->add_option("--tol", a.tol, "residual threshold (default 1e-5)");
  add_out(emb, "report path");

  auto* replay = app.add_subcommand("replay", "re-run the command recorded in a manifest");
  replay->add_option("manifest", a.manifest, "manifest path")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << HYBRIDKOOP_VERSION << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub == replay) {
    try {
      return cmd_replay(a, out, err);
    } catch (const UsageError& e) {
      err << "usage error: " << e.what() << "\n";
      return 2;
    }
  }

  int code = 0;
  std::optional<Context> ctx;
  std::string document;
  try {
    bool is_fixture = false;
    for (const auto& name : fixture_names()) is_fixture |= name == g.system;
    if (embedded_document && !is_fixture) {
      document = *embedded_document;
    } else if (is_fixture) {
      document = fixture_document(g.system);
    } else {
      std::ifstream in(g.system);
      if (!in) throw Error(ErrorCode::invalid_argument, "cannot read '" + g.system + "'");
      std::ostringstream text;
      text << in.rdbuf();
      document = text.str();
    }
    IntegratorConfig cfg;
    cfg.rel_tol = g.rel_tol;
    cfg.abs_tol = g.abs_tol;
    cfg.max_time = g.max_time;
    check_config(cfg);
    ctx.emplace(Context{parse_system_document(document), cfg, out, err, {}});

    const std::string name = sub->get_name();
    if (name == "validate") code = cmd_validate(*ctx, g, a);
    else if (name == "simulate") code = cmd_simulate(*ctx, g, a);
    else if (name == "sigma") code = cmd_sigma(*ctx, g, a);
    else if (name == "gluing") code = cmd_gluing(*ctx, g, a);
    else if (name == "frame-check") code = cmd_frame_check(*ctx, g, a);
    else if (name == "poincare") code = cmd_poincare(*ctx, g, a, sa);
    else if (name == "floquet") code = cmd_floquet(*ctx, g, a, sa);
    else if (name == "eigfn") code = cmd_eigfn(*ctx, g, a, sa);
    else if (name == "check-observable") code = cmd_check_observable(*ctx, g, a);
    else if (name == "seam-scan") code = cmd_seam_scan(*ctx, g, a);
    else if (name == "embed") code = cmd_embed(*ctx, g, a, sa);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    code = 2;
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    code = exit_code_for(e.code());
  }

  // manifest beside the output, or in --manifest-dir
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  json m;
  m["command"] = sub->get_name();
  m["argv"] = args;
  m["options"] = option_values(app);
  m["subcommand_options"] = option_values(*sub);
  m["system"] = g.system;
  if (!document.empty()) m["system_document"] = document;
  m["inputs"] = json::array();
  bool fixture = false;
  for (const auto& name : fixture_names()) fixture |= name == g.system;
  if (!fixture) m["inputs"].push_back(g.system);
  m["outputs"] = ctx ? json(ctx->outputs) : json::array();
  m["seed"] = g.seed;
  m["threads"] = g.threads;
  m["wall_clock_seconds"] = seconds;
  m["tool_version"] = HYBRIDKOOP_VERSION;
  m["exit_code"] = code;
  const fs::path manifest_path =
      a.out.empty() ? fs::path(g.manifest_dir) / (sub->get_name() + ".manifest.json")
                    : fs::path(a.out + ".manifest.json");
  std::ofstream mf(manifest_path);
  if (mf) {
    mf << m.dump(2) << "\n";
  } else {
    err << "warning: cannot write manifest " << manifest_path.string() << "\n";
  }
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  return run_impl(args, out, err, std::nullopt);
}

}  // namespace hybridkoop::cli
