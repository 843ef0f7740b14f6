// immunoctl: batch driver for solving, verifying and comparing scenarios.
#include "immuno/collocation.hpp"
#include "immuno/config.hpp"
#include "immuno/pmp.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <type_traits>
#include <variant>

namespace fs = std::filesystem;
using namespace immuno;
using Json = nlohmann::ordered_json;
using Eigen::Index;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kSolverFailure = 3;
constexpr int kVerificationFailure = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double round_to(double v, int digits) {
  const double scale = std::pow(10.0, digits);
  const double r = std::round(v * scale) / scale;
  return r == 0.0 ? 0.0 : r;
}

// Full value plus the value rounded to the published precision.
Json quantity(double v, int digits) { return {{"value", v}, {"rounded", round_to(v, digits)}}; }

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

template <class F>
void write_with(const fs::path& path, F&& fill) {
  std::ostringstream s;
  fill(s);
  write_file(path, s.str());
}

// Samples a trajectory at the given times by linear interpolation.
Trajectory sample(const Trajectory& traj, const Eigen::VectorXd& times) {
  Trajectory out;
  out.times = times;
  out.states.resize(4, times.size());
  out.controls.resize(2, times.size());
  Index j = 0;
  for (Index k = 0; k < times.size(); ++k) {
    const double t = times(k);
    while (j + 2 < traj.size() && traj.times(j + 1) <= t) ++j;
    const double t0 = traj.times(j), t1 = traj.times(j + 1);
    const double w = t1 > t0 ? std::clamp((t - t0) / (t1 - t0), 0.0, 1.0) : 0.0;
    out.states.col(k) = (1 - w) * traj.states.col(j) + w * traj.states.col(j + 1);
    out.controls.col(k) = (1 - w) * traj.controls.col(j) + w * traj.controls.col(j + 1);
  }
  return out;
}

Json state_json(const State& x) {
  return {{"P", quantity(x(kP), 4)}, {"N", quantity(x(kN), 4)}, {"D", quantity(x(kD), 4)},
          {"Ca", quantity(x(kCa), 4)}};
}

Json event(const std::string& name, double t) {
  Json e = {{"name", name}};
  e.update(quantity(t, 3));
  return e;
}

Json interval_json(const std::string& name, const pmp::Interval& iv) {
  return {{"name", name}, {"start", quantity(iv.start, 3)}, {"end", quantity(iv.end, 3)}};
}

// Switch and arc times of a solved scenario.
Json events_json(const collocation::OcpSolution& sol, const OcpSpec& ocp, const pmp::PmpReport& report) {
  const Trajectory& traj = sol.trajectory;
  Json events = Json::array();
  const char* names[2] = {"up", "ua"};
  for (int c = 0; c < 2; ++c) {
    const Eigen::VectorXd u = traj.controls.row(c).transpose();
    if (auto t = pmp::support_start(traj.times, u)) events.push_back(event(std::string(names[c]) + "_support_start", *t));
    if (auto t = pmp::support_end(traj.times, u)) events.push_back(event(std::string(names[c]) + "_support_end", *t));
  }
  if (report.switching) {
    for (double t : report.switching->roots1) events.push_back(event("phi1_root", t));
    for (double t : report.switching->roots2) events.push_back(event("phi2_root", t));
  }
  // End of the first run of u_a at its upper bound (the u_a phase boundary
  // before a boundary arc).
  const double ua_cap = control_upper_bounds(ocp.regime)(kUa);
  if (std::isfinite(ua_cap)) {
    std::vector<bool> at_cap(static_cast<std::size_t>(traj.size()));
    for (Index k = 0; k < traj.size(); ++k) at_cap[static_cast<std::size_t>(k)] = traj.controls(kUa, k) >= ua_cap - 1e-3;
    const auto runs = pmp::runs(traj.times, at_cap, 1);
    if (!runs.empty()) events.push_back(event("ua_cap_end", runs.front().end));
  }
  return events;
}

Json verdicts_json(const pmp::PmpReport& report) {
  Json out = Json::array();
  for (const auto& v : report.verdicts) {
    out.push_back({{"name", v.name},
                   {"status", v.informational ? "INFO" : v.pass ? "PASS" : "FAIL"},
                   {"detail", v.detail}});
  }
  return out;
}

std::string summary_text(const Json& s) {
  std::ostringstream out;
  out << "name " << s["name"].get<std::string>() << '\n';
  out << "status " << s["status"].get<std::string>() << '\n';
  if (s.contains("J") && !s["J"].is_null()) {
    out << "J " << s["J"]["rounded"].dump() << " (" << std::setprecision(12) << s["J"]["value"].get<double>() << ")\n";
  }
  out << "final";
  for (const auto& [k, v] : s["final_state"].items()) out << ' ' << k << '=' << v["rounded"].dump();
  out << '\n';
  if (s.contains("events")) {
    for (const auto& e : s["events"]) out << "event " << e["name"].get<std::string>() << " t=" << e["rounded"].dump() << '\n';
  }
  for (const char* key : {"singular_arcs", "active_intervals"}) {
    if (!s.contains(key)) continue;
    for (const auto& a : s[key]) {
      out << (std::string(key) == "singular_arcs" ? "singular " : "active ") << a["name"].get<std::string>()
          << " (" << a["start"]["rounded"].dump() << ", " << a["end"]["rounded"].dump() << ")\n";
    }
  }
  out << "outcome " << s["outcome"].get<std::string>() << '\n';
  if (s.contains("verdicts")) {
    for (const auto& v : s["verdicts"]) {
      out << v["status"].get<std::string>() << ' ' << v["name"].get<std::string>() << ": "
          << v["detail"].get<std::string>() << '\n';
    }
  }
  if (s.contains("approximation")) {
    const Json& a = s["approximation"];
    out << "approximation " << a["policy"].get<std::string>() << ": " << a["note"].get<std::string>()
        << ", outcome " << a["outcome"].get<std::string>() << ", max D " << a["max_damage"].dump()
        << " vs optimal " << a["max_damage_optimal"].dump() << '\n';
  }
  return out.str();
}

struct RunArgs {
  std::string scenario;
  std::string config;
  std::string patient;
  std::optional<Index> grid_n;
  std::string scheme;
  std::optional<double> tol;
  std::string out;
  bool open_loop = false;
  std::string approx;
};

config::RunConfig resolve(const RunArgs& a, const RawParams& reference) {
  if (!a.scenario.empty() && !a.config.empty()) throw UsageError("--scenario and --config are exclusive");
  config::RunConfig c;
  if (!a.config.empty()) {
    c = config::load(a.config, reference);
    if (c.name.empty()) c.name = fs::path(a.config).stem().string();
  } else if (!a.scenario.empty()) {
    try {
      c = config::scenario_config(a.scenario, reference);
    } catch (const std::out_of_range& e) {
      throw UsageError(e.what());
    }
  } else if (a.open_loop) {
    c = config::scenario_config("L1-full", reference);
    c.name = "open-loop";
  } else {
    throw UsageError("run needs --scenario, --config or --open-loop");
  }
  if (!a.patient.empty()) {
    try {
      c.ocp.patient = builtin_patient(a.patient, reference);
    } catch (const std::out_of_range& e) {
      throw UsageError(e.what());
    }
    if (a.open_loop && a.scenario.empty() && a.config.empty()) c.name = "open-loop-" + a.patient;
  }
  if (a.grid_n) {
    if (*a.grid_n < 2) throw UsageError("--grid-n must be >= 2");
    c.grid_n = *a.grid_n;
  }
  if (!a.scheme.empty()) {
    try {
      c.scheme = collocation::parse_scheme(a.scheme);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (a.tol) {
    if (!(*a.tol > 0)) throw UsageError("--tol must be > 0");
    c.tol = *a.tol;
  }
  return c;
}

int run_open_loop(const config::RunConfig& c, const fs::path& out) {
  IntegrateOptions io;
  io.report_step = c.ocp.t_f / static_cast<double>(c.grid_n - 1);
  const Trajectory traj = integrate(c.ocp.patient, ControlSchedule::zero(c.ocp.t_f), c.ocp.t_f, io);
  const auto tail = continue_to_equilibrium(c.ocp.patient, traj);
  write_with(out / "trajectory.csv", [&](std::ostream& s) { write_trajectory_csv(s, traj); });
  Json s;
  s["name"] = c.name;
  s["patient"] = c.ocp.patient.id;
  s["mode"] = "open-loop";
  s["status"] = "success";
  s["J"] = nullptr;
  s["final_state"] = state_json(traj.final_state());
  s["outcome"] = to_string(tail.outcome);
  write_file(out / "summary.json", s.dump(2) + "\n");
  write_file(out / "summary.txt", summary_text(s));
  std::cout << summary_text(s);
  return kOk;
}

double bound_complementarity(const collocation::OcpSolution& sol, const OcpSpec& ocp) {
  const auto& m = sol.multipliers;
  const Trajectory& t = sol.trajectory;
  const Eigen::Vector2d u_hi = control_upper_bounds(ocp.regime);
  const Eigen::Vector4d x_hi = state_upper_bounds(ocp.regime);
  double worst = 0;
  for (Index k = 0; k < t.size(); ++k) {
    for (int j = 0; j < 2; ++j) {
      worst = std::max(worst, std::abs(m.control_lower(j, k) * t.controls(j, k)));
      if (std::isfinite(u_hi(j))) worst = std::max(worst, std::abs(m.control_upper(j, k) * (u_hi(j) - t.controls(j, k))));
    }
    for (int i = 0; i < 4; ++i) {
      worst = std::max(worst, std::abs(m.state_lower(i, k) * t.states(i, k)));
      if (std::isfinite(x_hi(i))) worst = std::max(worst, std::abs(m.state_upper(i, k) * (x_hi(i) - t.states(i, k))));
    }
  }
  return worst;
}

int run(const RunArgs& args) {
  const RawParams reference = reference_params();
  const config::RunConfig c = resolve(args, reference);
  std::optional<pmp::ApproximationPolicy> policy;
  if (!args.approx.empty()) {
    try {
      policy = pmp::parse_approximation(args.approx);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  const fs::path out = args.out.empty() ? fs::path("out") / c.name : fs::path(args.out);
  fs::create_directories(out);
  if (args.open_loop || c.open_loop) return run_open_loop(c, out);

  const OcpSpec& ocp = c.ocp;
  collocation::OcpSolveOptions options;
  options.solver.tol = c.tol;
  options.solver.max_iter = c.max_iter;
  const collocation::Grid grid(ocp.t_f, c.grid_n);
  const collocation::OcpSolution sol = collocation::solve_ocp(ocp, grid, c.scheme, options);
  const bool solved = sol.nlp.status == nlp::Status::kSuccess;

  write_with(out / "trajectory.csv", [&](std::ostream& s) { write_trajectory_csv(s, sol.trajectory); });
  write_with(out / "iterations.csv", [&](std::ostream& s) {
    s << "iter,obj,primal_inf,dual_inf,complementarity,barrier_mu,step\n" << std::setprecision(12);
    for (const auto& r : sol.nlp.log) {
      s << r.iter << ',' << r.objective << ',' << r.primal_inf << ',' << r.dual_inf << ','
        << r.complementarity << ',' << r.barrier_mu << ',' << r.step << '\n';
    }
  });
  write_file(out / "config.json", config::serialize(c, reference));

  Json s;
  s["name"] = c.name;
  s["patient"] = ocp.patient.id;
  s["objective"] = ocp.objective.kind == ObjectiveKind::kL1 ? "L1" : "L2";
  s["regime"] = regime_name(ocp.regime);
  s["scheme"] = collocation::to_string(c.scheme);
  s["grid_n"] = c.grid_n;
  s["tol"] = c.tol;
  s["status"] = solved ? "success" : "solver-failure";
  s["partial"] = !solved;
  s["solver_status"] = nlp::to_string(sol.nlp.status);
  s["iterations"] = sol.nlp.iterations;
  s["J"] = quantity(sol.objective, 2);
  s["final_state"] = state_json(sol.trajectory.final_state());

  // Outcome of the solved schedule re-simulated and continued with zero control.
  auto outcome_of = [&](const pmp::ProtocolComparison& p) { return to_string(p.optimal_outcome); };
  int status = kOk;
  if (!solved) {
    s["outcome"] = "Indeterminate";
    status = kSolverFailure;
  } else {
    const pmp::PmpReport report = pmp::verify(sol, ocp);
    write_with(out / "adjoint.csv", [&](std::ostream& f) { pmp::write_adjoint_csv(f, report); });
    if (report.switching) {
      write_with(out / "switching.csv", [&](std::ostream& f) { pmp::write_switching_csv(f, *report.switching); });
    }
    if (report.constraints) {
      write_with(out / "multipliers.csv", [&](std::ostream& f) { pmp::write_multiplier_csv(f, *report.constraints); });
    }
    write_with(out / "verdicts.txt", [&](std::ostream& f) { pmp::write_verdicts(f, report); });

    s["events"] = events_json(sol, ocp, report);
    Json arcs = Json::array();
    for (const auto& a : report.arcs) {
      Json j = interval_json(a.control == kUp ? "up" : "ua", a.interval);
      j["legendre_clebsch_margin"] = a.margin;
      j["other_control_max"] = a.other_control_max;
      arcs.push_back(j);
    }
    s["singular_arcs"] = arcs;
    Json active = Json::array();
    if (report.constraints) {
      for (std::size_t c2 = 0; c2 < report.constraints->active.size(); ++c2) {
        for (const auto& iv : report.constraints->active[c2]) {
          active.push_back(interval_json(report.constraints->names[c2], iv));
        }
      }
    }
    s["active_intervals"] = active;
    // Largest nodewise multiplier * residual: path constraint densities and
    // raw box-bound multipliers of the NLP.
    if (report.constraints) s["complementarity"] = report.constraints->complementarity;
    s["bound_complementarity"] = bound_complementarity(sol, ocp);

    std::vector<pmp::Interval> ua_arcs;
    if (report.switching) ua_arcs = report.switching->singular2;
    const auto base = pmp::approximate_protocol(sol, ocp, ua_arcs, policy.value_or(pmp::ApproximationPolicy::kZeroSingular));
    s["outcome"] = outcome_of(base);
    s["verdicts"] = verdicts_json(report);
    s["pass"] = report.pass();
    if (policy) {
      Json a;
      a["policy"] = pmp::to_string(*policy);
      a["applied"] = base.applied;
      a["note"] = base.note;
      a["outcome"] = to_string(base.approximate_outcome);
      a["max_damage"] = base.max_damage_approximate;
      a["max_damage_optimal"] = base.max_damage_optimal;
      a["max_deviation"] = {base.max_deviation(0), base.max_deviation(1), base.max_deviation(2), base.max_deviation(3)};
      s["approximation"] = a;
      // The approximate run as its own artifact set on the solution grid.
      const fs::path dir = out / "approx";
      fs::create_directories(dir);
      Trajectory approx = sample(base.approximate, sol.trajectory.times);
      write_with(dir / "trajectory.csv", [&](std::ostream& f) { write_trajectory_csv(f, approx); });
      Json as;
      as["name"] = c.name + "-" + pmp::to_string(*policy);
      as["status"] = "success";
      as["J"] = nullptr;
      as["final_state"] = state_json(approx.final_state());
      as["outcome"] = to_string(base.approximate_outcome);
      write_file(dir / "summary.json", as.dump(2) + "\n");
      write_file(dir / "summary.txt", summary_text(as));
    }
    if (!report.pass()) status = kVerificationFailure;
  }
  write_file(out / "summary.json", s.dump(2) + "\n");
  write_file(out / "summary.txt", summary_text(s));
  std::cout << summary_text(s);
  if (status == kSolverFailure) std::cerr << "solver failure: " << sol.nlp.message << " (partial artifacts in " << out.string() << ")\n";
  return status;
}

struct RunData {
  Trajectory traj;
  Json summary;
};

RunData read_run(const fs::path& dir) {
  RunData d;
  std::ifstream csv(dir / "trajectory.csv");
  if (!csv) throw UsageError("cannot read " + (dir / "trajectory.csv").string());
  std::string line;
  std::getline(csv, line);
  if (line != "t,P,N,D,Ca,up,ua") throw UsageError((dir / "trajectory.csv").string() + ": unexpected header");
  std::vector<std::array<double, 7>> rows;
  int line_no = 1;
  while (std::getline(csv, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::array<double, 7> row{};
    std::stringstream ss(line);
    std::string cell;
    for (double& v : row) {
      if (!std::getline(ss, cell, ',')) {
        throw UsageError((dir / "trajectory.csv").string() + ":" + std::to_string(line_no) + ": expected 7 columns");
      }
      v = std::stod(cell);
    }
    rows.push_back(row);
  }
  const Index n = static_cast<Index>(rows.size());
  d.traj.times.resize(n);
  d.traj.states.resize(4, n);
  d.traj.controls.resize(2, n);
  for (Index k = 0; k < n; ++k) {
    const auto& r = rows[static_cast<std::size_t>(k)];
    d.traj.times(k) = r[0];
    for (int i = 0; i < 4; ++i) d.traj.states(i, k) = r[static_cast<std::size_t>(1 + i)];
    d.traj.controls(0, k) = r[5];
    d.traj.controls(1, k) = r[6];
  }
  std::ifstream js(dir / "summary.json");
  if (!js) throw UsageError("cannot read " + (dir / "summary.json").string());
  try {
    d.summary = Json::parse(js);
  } catch (const Json::parse_error& e) {
    throw UsageError((dir / "summary.json").string() + ": " + e.what());
  }
  return d;
}

int compare(const std::string& a_dir, const std::string& b_dir, const std::string& out) {
  const RunData a = read_run(a_dir), b = read_run(b_dir);
  if (a.traj.size() != b.traj.size() ||
      (a.traj.times - b.traj.times).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, a.traj.times.cwiseAbs().maxCoeff())) {
    throw UsageError("grid mismatch: " + std::to_string(a.traj.size()) + " vs " + std::to_string(b.traj.size()) +
                     " nodes or different node times");
  }
  std::ostringstream s;
  s << std::setprecision(12);
  s << "metric,value\n";
  const auto j_of = [](const Json& sum) -> std::optional<double> {
    if (!sum.contains("J") || sum["J"].is_null()) return std::nullopt;
    return sum["J"]["value"].get<double>();
  };
  const auto ja = j_of(a.summary), jb = j_of(b.summary);
  if (ja && jb) {
    s << "objective_a," << *ja << "\nobjective_b," << *jb << "\nobjective_delta," << *jb - *ja << '\n';
  } else {
    s << "objective_delta,n/a\n";
  }
  const char* names[4] = {"P", "N", "D", "Ca"};
  for (int i = 0; i < 4; ++i) {
    Index k = 0;
    const double dev = (b.traj.states.row(i) - a.traj.states.row(i)).cwiseAbs().maxCoeff(&k);
    s << "max_abs_delta_" << names[i] << ',' << dev << '\n';
    s << "argmax_t_" << names[i] << ',' << a.traj.times(k) << '\n';
  }
  for (int i = 0; i < 2; ++i) {
    s << "max_abs_delta_" << (i == 0 ? "up" : "ua") << ','
      << (b.traj.controls.row(i) - a.traj.controls.row(i)).cwiseAbs().maxCoeff() << '\n';
  }
  s << "max_D_a," << a.traj.states.row(kD).maxCoeff() << "\nmax_D_b," << b.traj.states.row(kD).maxCoeff() << '\n';
  const std::string oa = a.summary.value("outcome", "Indeterminate");
  const std::string ob = b.summary.value("outcome", "Indeterminate");
  s << "outcome_a," << oa << "\noutcome_b," << ob << "\noutcome_agreement," << (oa == ob ? "true" : "false") << '\n';
  if (!out.empty()) write_file(out, s.str());
  std::cout << s.str();
  return kOk;
}

int validate_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::cerr << "cannot read config " << path << '\n';
    return kConfigError;
  }
  std::ostringstream text;
  text << in.rdbuf();
  const auto violations = config::validate(text.str(), reference_params());
  if (violations.empty()) {
    std::cout << path << ": ok\n";
    return kOk;
  }
  for (const auto& v : violations) std::cout << path << ": " << config::to_string(v) << '\n';
  return kConfigError;
}

int list_scenarios() {
  const RawParams reference = reference_params();
  for (const auto& id : builtin_scenario_ids()) {
    const OcpSpec s = builtin_scenario(id, reference);
    std::cout << id << ' ' << (s.objective.kind == ObjectiveKind::kL1 ? "L1" : "L2") << ' '
              << regime_name(s.regime);
    std::visit(
        [](const auto& r) {
          using R = std::decay_t<decltype(r)>;
          if constexpr (std::is_same_v<R, MixedControlState>) {
            std::cout << " n_cap=" << r.n_cap << " ca_cap=" << r.ca_cap;
          } else if constexpr (std::is_same_v<R, ControlAndStateBounds>) {
            std::cout << " up_max=" << r.up_max << " ua_max=" << r.ua_max << " n_max=" << r.n_max
                      << " ca_max=" << r.ca_max;
          } else {
            std::cout << " up_max=" << r.up_max << " ua_max=" << r.ua_max;
          }
        },
        s.regime);
    std::cout << " patient=" << s.patient.id << '\n';
  }
  std::cout << "patients:";
  for (const auto& id : builtin_patient_ids()) std::cout << ' ' << id;
  std::cout << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optimal control of the inflammation model: solve, verify, compare"};
  app.require_subcommand(1);

  RunArgs run_args;
  double tol = 0;
  Index grid_n = 0;
  auto* run_cmd = app.add_subcommand("run", "Solve a scenario and verify it");
  run_cmd->add_option("--scenario", run_args.scenario, "Built-in scenario id");
  run_cmd->add_option("--config", run_args.config, "Scenario config file");
  run_cmd->add_option("--patient", run_args.patient, "Patient id (overrides the scenario's)");
  auto* grid_opt = run_cmd->add_option("--grid-n", grid_n, "Number of grid nodes");
  run_cmd->add_option("--scheme", run_args.scheme, "trapezoid or hs");
  auto* tol_opt = run_cmd->add_option("--tol", tol, "NLP tolerance");
  run_cmd->add_option("--out", run_args.out, "Output directory (default out/<name>)");
  run_cmd->add_flag("--open-loop", run_args.open_loop, "Simulate without control");
  run_cmd->add_option("--approx", run_args.approx, "Singular-arc approximation: zero or pw4");

  std::string cmp_a, cmp_b, cmp_out;
  auto* cmp_cmd = app.add_subcommand("compare", "Diff two run directories");
  cmp_cmd->add_option("run_a", cmp_a, "First run directory")->required();
  cmp_cmd->add_option("run_b", cmp_b, "Second run directory")->required();
  cmp_cmd->add_option("--out", cmp_out, "Also write the diff to this file");

  std::string cfg_path;
  auto* val_cmd = app.add_subcommand("validate-config", "Check a config file");
  auto* val_pos = val_cmd->add_option("path", cfg_path, "Config file");
  auto* val_flag = val_cmd->add_option("--config", cfg_path, "Config file");
  val_pos->excludes(val_flag);
  val_cmd->require_option(1);

  auto* list_cmd = app.add_subcommand("list-scenarios", "List built-in scenarios and patients");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run_cmd) {
      if (*grid_opt) run_args.grid_n = grid_n;
      if (*tol_opt) run_args.tol = tol;
      return run(run_args);
    }
    if (*cmp_cmd) return compare(cmp_a, cmp_b, cmp_out);
    if (*val_cmd) return validate_config(cfg_path);
    if (*list_cmd) return list_scenarios();
  } catch (const config::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return kConfigError;
  } catch (const ParamsError& e) {
    std::cerr << e.what() << '\n';
    return kConfigError;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const StiffnessError& e) {
    std::cerr << "integration failure: " << e.what() << '\n';
    return kSolverFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kSolverFailure;
  }
  return kOk;
}
