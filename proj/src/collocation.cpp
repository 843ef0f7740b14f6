#include "immuno/collocation.hpp"

#include <cmath>
#include <stdexcept>

namespace immuno::collocation {

std::string to_string(Scheme scheme) {
  return scheme == Scheme::kTrapezoid ? "trapezoid" : "hermite-simpson";
}

Scheme parse_scheme(std::string_view text) {
  if (text == "trapezoid" || text == "trap") return Scheme::kTrapezoid;
  if (text == "hs" || text == "hermite-simpson") return Scheme::kHermiteSimpson;
  throw std::invalid_argument("unknown collocation scheme '" + std::string(text) + "'");
}

std::string to_string(GuessStrategy strategy) {
  switch (strategy) {
    case GuessStrategy::kOpenLoop:
      return "open-loop";
    case GuessStrategy::kConstant:
      return "constant";
    case GuessStrategy::kLinearToHealthy:
      return "linear-to-healthy";
  }
  return "open-loop";
}

ImmuneModel::ImmuneModel(const OcpSpec& ocp)
    : params_(ocp.patient.raw),
      objective_(ocp.objective),
      x0_(ocp.patient.x0),
      state_upper_(state_upper_bounds(ocp.regime)),
      control_upper_(control_upper_bounds(ocp.regime)) {
  if (ocp.terminal_mode == TerminalStateMode::kPinned) target_ = params_.healthy_state();
  if (const auto* mixed = std::get_if<MixedControlState>(&ocp.regime)) {
    mixed_ = true;
    caps_ = Eigen::Vector2d(mixed->n_cap, mixed->ca_cap);
  }
}

ImmuneTranscription transcribe(const OcpSpec& ocp, const Grid& grid, Scheme scheme) {
  if (std::abs(grid.final_time() - ocp.t_f) > 1e-12 * std::max(1.0, ocp.t_f)) {
    throw std::invalid_argument("grid horizon differs from the problem horizon");
  }
  return ImmuneTranscription(ImmuneModel(ocp), grid, scheme);
}

Eigen::VectorXd initial_guess(const OcpSpec& ocp, const ImmuneTranscription& problem,
                              GuessStrategy strategy) {
  const Grid& grid = problem.grid();
  const Index n = grid.nodes();
  Eigen::Matrix4Xd x(4, n);
  Eigen::Matrix2Xd u = Eigen::Matrix2Xd::Zero(2, n);

  switch (strategy) {
    case GuessStrategy::kOpenLoop: {
      IntegrateOptions opts;
      opts.report_step = grid.step();
      const Trajectory traj =
          integrate(ocp.patient, ControlSchedule::zero(ocp.t_f), ocp.t_f, opts);
      // Sample the dense output at the grid times.
      Index j = 0;
      for (Index k = 0; k < n; ++k) {
        const double t = grid.time(k);
        while (j + 2 < traj.size() && traj.times(j + 1) < t) ++j;
        const double t0 = traj.times(j), t1 = traj.times(j + 1);
        const double w = std::clamp((t - t0) / (t1 - t0), 0.0, 1.0);
        x.col(k) = (1.0 - w) * traj.states.col(j) + w * traj.states.col(j + 1);
      }
      break;
    }
    case GuessStrategy::kConstant: {
      x.colwise() = ocp.patient.x0;
      const Control upper = control_upper_bounds(ocp.regime);
      for (int j = 0; j < 2; ++j) {
        u.row(j).setConstant(std::isfinite(upper(j)) ? 0.5 * upper(j) : 0.0);
      }
      break;
    }
    case GuessStrategy::kLinearToHealthy: {
      const State target = ModelParams(ocp.patient.raw).healthy_state();
      for (Index k = 0; k < n; ++k) {
        const double w = static_cast<double>(k) / static_cast<double>(n - 1);
        x.col(k) = (1.0 - w) * ocp.patient.x0 + w * target;
      }
      break;
    }
  }
  Eigen::Matrix2Xd u_mid(2, grid.intervals());
  for (Index k = 0; k < grid.intervals(); ++k) u_mid.col(k) = 0.5 * (u.col(k) + u.col(k + 1));
  return problem.pack(x, u, u_mid);
}

namespace {

// Quadrature weight attached to the control at node k (or midpoint k).
double node_weight(const ImmuneTranscription& p, Index k) {
  const double h = p.grid().step();
  const bool end = k == 0 || k == p.grid().nodes() - 1;
  if (p.hermite_simpson()) return end ? h / 6.0 : h / 3.0;
  return end ? h / 2.0 : h;
}

OcpSolution assemble(const nlp::Solution& solution, const ImmuneTranscription& problem) {
  OcpSolution out;
  out.nlp = solution;
  out.scheme = problem.scheme();
  out.objective = solution.objective;
  const Grid& grid = problem.grid();
  const Eigen::VectorXd& z = solution.z;

  Trajectory& traj = out.trajectory;
  traj.times = grid.times();
  traj.states = problem.states(z);
  traj.controls = problem.controls(z);
  traj.midpoint_controls = problem.midpoint_controls(z);

  Eigen::Matrix4Xd mid;
  out.adjoint.times = traj.times;
  out.adjoint.nodes = adjoint_from_defects(solution, problem, &mid);
  out.adjoint.midpoints = mid;
  out.adjoint.midpoint_times.resize(grid.intervals());
  for (Index k = 0; k < grid.intervals(); ++k) {
    out.adjoint.midpoint_times(k) = grid.time(k) + 0.5 * grid.step();
  }

  MultiplierEstimate& m = out.multipliers;
  const int np = problem.path_count();
  const Eigen::VectorXd y = solution.multipliers();
  m.node_density = Eigen::MatrixXd::Zero(np, grid.nodes());
  m.midpoint_density = Eigen::MatrixXd::Zero(np, problem.hermite_simpson() ? grid.intervals() : 0);
  for (int p = 0; p < np; ++p) {
    for (Index k = 0; k < grid.nodes(); ++k) {
      m.node_density(p, k) = y(problem.node_path_row(k, p)) / node_weight(problem, k);
    }
    for (Index k = 0; k < m.midpoint_density.cols(); ++k) {
      m.midpoint_density(p, k) = y(problem.midpoint_path_row(k, p)) / (2.0 * grid.step() / 3.0);
    }
  }
  m.state_upper.resize(4, grid.nodes());
  m.state_lower.resize(4, grid.nodes());
  m.control_lower.resize(2, grid.nodes());
  m.control_upper.resize(2, grid.nodes());
  for (Index k = 0; k < grid.nodes(); ++k) {
    m.state_upper.col(k) = solution.bound_upper.segment<4>(problem.state_index(k));
    m.state_lower.col(k) = solution.bound_lower.segment<4>(problem.state_index(k));
    m.control_lower.col(k) = solution.bound_lower.segment<2>(problem.control_index(k));
    m.control_upper.col(k) = solution.bound_upper.segment<2>(problem.control_index(k));
  }
  return out;
}

}  // namespace

OcpSolution extract_solution(const nlp::Solution& solution, const ImmuneTranscription& problem) {
  if (!solution.ok()) {
    throw std::runtime_error("cannot extract an unsuccessful solve (" +
                             nlp::to_string(solution.status) + ")");
  }
  return assemble(solution, problem);
}

Eigen::VectorXd interpolate_guess(const ImmuneTranscription& coarse, const Eigen::VectorXd& z,
                                  const ImmuneTranscription& fine) {
  const Grid& gc = coarse.grid();
  const Grid& gf = fine.grid();
  const Eigen::Matrix4Xd xc = coarse.states(z);
  const Eigen::Matrix2Xd uc = coarse.controls(z);
  Eigen::Matrix4Xd x(4, gf.nodes());
  Eigen::Matrix2Xd u(2, gf.nodes());
  for (Index k = 0; k < gf.nodes(); ++k) {
    const double t = gf.time(k);
    const Index j = std::clamp<Index>(static_cast<Index>((t - gc.time(0)) / gc.step()), 0,
                                      gc.intervals() - 1);
    const double w = std::clamp((t - gc.time(j)) / gc.step(), 0.0, 1.0);
    x.col(k) = (1.0 - w) * xc.col(j) + w * xc.col(j + 1);
    u.col(k) = (1.0 - w) * uc.col(j) + w * uc.col(j + 1);
  }
  return fine.pack(x, u);
}

OcpSolution solve_ocp(const OcpSpec& ocp, const Grid& grid, Scheme scheme,
                      const OcpSolveOptions& options) {
  const ImmuneTranscription problem = transcribe(ocp, grid, scheme);
  Eigen::VectorXd guess = initial_guess(ocp, problem, options.guess);
  if (options.coarse_nodes >= 2 && grid.nodes() > options.coarse_nodes) {
    const ImmuneTranscription coarse =
        transcribe(ocp, Grid(ocp.t_f, options.coarse_nodes, grid.start()), scheme);
    nlp::SolverOptions coarse_options = options.solver;
    coarse_options.on_iteration = nullptr;
    const nlp::Solution first =
        nlp::solve(coarse, initial_guess(ocp, coarse, options.guess), coarse_options);
    if (first.ok()) guess = interpolate_guess(coarse, first.z, problem);
  }
  const nlp::Solution solution = nlp::solve(problem, guess, options.solver);
  return assemble(solution, problem);
}

}  // namespace immuno::collocation
