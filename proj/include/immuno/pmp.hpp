// Verification of discrete optimal controls against Pontryagin's necessary
// conditions.
//
// The Hamiltonian is H = L(x, u) + lambda^T (f(x) + G u). Every derivative of
// H is assembled from the analytic drift Jacobian and the objective
// gradients; second derivatives come from forward-mode differentiation of the
// drift Jacobian. Because G is constant, the coefficient of u_j in the second
// time derivative of the switching function dH/du_c is
//
//   theta_cj = -d^2 H / dx_c dx_j
//
// where x_c is the state driven by control c (N for u_p, Ca for u_a).
#ifndef IMMUNO_PMP_HPP
#define IMMUNO_PMP_HPP

#include "immuno/collocation.hpp"
#include "immuno/model.hpp"
#include "immuno/ocp.hpp"
#include "immuno/simulate.hpp"

#include <Eigen/Core>

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace immuno::pmp {

using Index = Eigen::Index;
using AdjointState = Eigen::Vector4d;

/// State driven by each control: N for u_p, Ca for u_a.
inline constexpr int kDrivenState[2] = {kN, kCa};

double hamiltonian(const AdjointState& lambda, const State& x, const Control& u,
                   const ObjectiveSpec& obj, const ModelParams& params);

/// dH/dx.
Eigen::Vector4d hamiltonian_state_gradient(const AdjointState& lambda, const State& x,
                                           const Control& u, const ObjectiveSpec& obj,
                                           const ModelParams& params);

/// d^2 H / dx^2 (independent of u for control-affine dynamics with a
/// separable running cost).
Eigen::Matrix4d hamiltonian_state_hessian(const AdjointState& lambda, const State& x,
                                          const ObjectiveSpec& obj, const ModelParams& params);

/// lambda' = -dH/dx - forcing. The forcing carries constraint multiplier
/// terms: mu_1 e_N + mu_2 e_Ca for mixed constraints, lambda_sa e_Ca for the
/// pure state constraint on Ca.
AdjointState adjoint_rhs(const AdjointState& lambda, const State& x, const Control& u,
                         const ObjectiveSpec& obj, const ModelParams& params,
                         const Eigen::Vector4d& forcing = Eigen::Vector4d::Zero());

/// Transversality value lambda(t_f) = d(terminal cost)/dx.
AdjointState transversality(const State& x_final, const ObjectiveSpec& obj);

/// dH/du: (b1 + lambda_2, b2 + lambda_4) for L1, (2 b1 u_p + lambda_2, ...) for L2.
Eigen::Vector2d switching_functions(const AdjointState& lambda, const Control& u,
                                    const ObjectiveSpec& obj);

/// First time derivative of dH/du_c along the extremal: -dH/dx_c.
double switching_derivative(int control, const AdjointState& lambda, const State& x,
                            const Control& u, const ObjectiveSpec& obj,
                            const ModelParams& params);

/// Second time derivative of dH/du_c for an L1 objective (d/dt of the
/// expression above along x' = f + G u and the adjoint flow).
double switching_second_derivative(int control, const AdjointState& lambda, const State& x,
                                   const Control& u, const ObjectiveSpec& obj,
                                   const ModelParams& params);

/// theta_cj, the coefficient of u_j in the second derivative above.
double theta(int control, int other, const AdjointState& lambda, const State& x,
             const ObjectiveSpec& obj, const ModelParams& params);

/// theta_cc obtained by differencing switching_derivative along the flow in
/// time and then in u_c. Independent of the Hessian used by theta().
double theta_finite_difference(int control, const AdjointState& lambda, const State& x,
                               const Control& u, const ObjectiveSpec& obj,
                               const ModelParams& params, double dt = 1e-4, double du = 1e-3);

struct BackwardAdjoint {
  Eigen::VectorXd times;
  /// Left limits lambda(t_k-) at the grid nodes.
  Eigen::Matrix4Xd values;
  /// Right limits lambda(t_k+); differ from the left limits only where a
  /// state bound carries an impulse.
  Eigen::Matrix4Xd right;
};

/// Integrates adjoint_rhs backward from the transversality value with four
/// RK4 substeps per grid interval. States follow the cubic Hermite
/// interpolant of the collocation solution and controls the collocation
/// control interpolant. Mixed-constraint multiplier densities enter as
/// forcing; state-bound multipliers as node impulses
/// lambda(t_k-) = lambda(t_k+) + z_k.
BackwardAdjoint integrate_adjoint_backward(const collocation::OcpSolution& solution,
                                           const OcpSpec& ocp, int substeps = 4);

struct Interval {
  double start = 0;
  double end = 0;
  Index first = 0;
  Index last = 0;
  double length() const { return end - start; }
};

struct SwitchingOptions {
  /// |phi_c| < eps_scale * (1 + |b_c|) counts as vanishing.
  double eps_scale = 1e-3;
  int min_nodes = 5;
  /// The control must stay this far inside its bounds on a singular arc.
  double interior_margin = 1e-3;
};

struct SwitchingProfile {
  Eigen::VectorXd times;
  Eigen::VectorXd phi1;
  Eigen::VectorXd phi2;
  /// Sign changes located by linear interpolation between nodes.
  std::vector<double> roots1;
  std::vector<double> roots2;
  std::vector<Interval> singular1;
  std::vector<Interval> singular2;
};

/// Requires an L1 objective. `control_upper` may hold +infinity.
SwitchingProfile switching_profile(const Eigen::VectorXd& times, const Eigen::Matrix4Xd& lambda,
                                   const Eigen::Matrix2Xd& controls, const ObjectiveSpec& obj,
                                   const Eigen::Vector2d& control_upper,
                                   const SwitchingOptions& options = {});

class InsufficientData : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SingularArcReport {
  int control = kUa;
  Interval interval;
  Eigen::VectorXd times;
  Eigen::VectorXd theta_own;
  Eigen::VectorXd theta_cross;
  Eigen::VectorXd theta_fd;
  /// Control solving the second-derivative condition with the other
  /// control held at its solved value.
  Eigen::VectorXd singular_control;
  Eigen::VectorXd solved_control;
  /// min(-theta_own) over the arc.
  double margin = 0;
  /// max |theta_own - theta_fd| / max(1, |theta_own|).
  double fd_error = 0;
  /// Largest value of the other control on the arc.
  double other_control_max = 0;
  bool pass = false;
};

/// Throws InsufficientData for arcs shorter than three nodes.
SingularArcReport singular_arc_analysis(const Trajectory& trajectory, const Eigen::Matrix4Xd& lambda,
                                        const Interval& interval, int control, const OcpSpec& ocp);

struct Jump {
  double time = 0;
  /// beta_s: the adjoint jump at the entry node in excess of the
  /// multiplier density, i.e. the second difference of the node jumps
  /// lambda(t_k-) - lambda(t_k+) over the entry node and the next two.
  double magnitude = 0;
  /// Jump at the entry node, for scale.
  double entry_jump = 0;
};

struct ConstraintMultiplierReport {
  std::vector<std::string> names;
  Eigen::VectorXd times;
  /// Multipliers from the optimality conditions (zero off the active arcs).
  Eigen::MatrixXd multipliers;
  /// Multiplier densities recovered from the NLP.
  Eigen::MatrixXd nlp_multipliers;
  /// Constraint values in the <= 0 convention.
  Eigen::MatrixXd residuals;
  std::vector<std::vector<Interval>> active;
  std::vector<Jump> jumps;
  /// max over nodes of |nlp multiplier * residual|.
  double complementarity = 0;
  /// Smallest NLP multiplier density (should be >= -tol).
  double min_multiplier = 0;
  /// Largest deviation of the solved control from the boundary control on
  /// active arcs.
  double boundary_control_error = 0;
  /// Largest deviation from the unconstrained minimizer off the arcs.
  double free_control_error = 0;
  bool pass = false;
};

struct ConstraintReportOptions {
  double active_tol = 1e-4;
  double complementarity_tol = 1e-4;
  double multiplier_tol = 1e-6;
  double control_tol = 2e-2;
  /// beta_s >= -jump_tol * max(1, entry jump).
  double jump_tol = 1e-2;
};

/// Mixed regime with an L2 objective.
ConstraintMultiplierReport mixed_constraint_report(const collocation::OcpSolution& solution,
                                                   const OcpSpec& ocp,
                                                   const ConstraintReportOptions& options = {});

/// Pure state regime; reports the Ca constraint (and N when it is active).
ConstraintMultiplierReport pure_constraint_report(const collocation::OcpSolution& solution,
                                                  const OcpSpec& ocp,
                                                  const BackwardAdjoint& backward,
                                                  const ConstraintReportOptions& options = {});

/// Boundary control keeping Ca on its cap: u_ab = -f_Ca(x).
double boundary_control_ca(const State& x, const ModelParams& params);

enum class ApproximationPolicy { kZeroSingular, kPiecewiseConstant };

std::string to_string(ApproximationPolicy policy);
/// Accepts "zero" and "pw4".
ApproximationPolicy parse_approximation(std::string_view text);

struct ProtocolComparison {
  bool applied = false;
  std::string note;
  ControlSchedule schedule = ControlSchedule::zero(1.0);
  Trajectory optimal;
  Trajectory approximate;
  Outcome optimal_outcome = Outcome::kIndeterminate;
  Outcome approximate_outcome = Outcome::kIndeterminate;
  Eigen::Vector4d max_deviation = Eigen::Vector4d::Zero();
  double max_damage_optimal = 0;
  double max_damage_approximate = 0;
};

/// Replaces the singular part of u_a on each arc by zero or by a
/// piecewise-constant schedule whose pieces are arc averages, re-simulates
/// both the optimal and the approximate schedule and classifies each after
/// continue_to_equilibrium.
ProtocolComparison approximate_protocol(const collocation::OcpSolution& solution,
                                        const OcpSpec& ocp, const std::vector<Interval>& arcs,
                                        ApproximationPolicy policy, int pieces = 4);

/// Time at which v first rises above the threshold and time at which it
/// last falls below it, interpolated linearly between nodes; empty when v
/// never exceeds the threshold.
std::optional<double> support_start(const Eigen::VectorXd& times, const Eigen::VectorXd& values,
                                    double threshold = 1e-3);
std::optional<double> support_end(const Eigen::VectorXd& times, const Eigen::VectorXd& values,
                                  double threshold = 1e-3);

/// Maximal runs of consecutive true entries with at least min_nodes nodes.
std::vector<Interval> runs(const Eigen::VectorXd& times, const std::vector<bool>& mask,
                           int min_nodes = 1);

struct Verdict {
  std::string name;
  bool pass = false;
  std::string detail;
  /// Reported only; does not enter PmpReport::pass.
  bool informational = false;
};

struct VerifyOptions {
  SwitchingOptions switching;
  ConstraintReportOptions constraints;
  /// Adjoint cross-validation tolerance relative to the range of each
  /// component.
  double adjoint_tol = 5e-2;
  /// Nodes excluded on each side of a constraint junction.
  int junction_margin = 3;
  double bang_bang_tol = 1e-2;
  /// Largest deviation of an L2 control from the pointwise minimizer of H.
  double minimum_tol = 1e-3;
};

struct PmpReport {
  Eigen::VectorXd times;
  Eigen::Matrix4Xd adjoint;
  BackwardAdjoint backward;
  Eigen::VectorXd hamiltonian;
  double adjoint_deviation = 0;
  std::optional<SwitchingProfile> switching;
  std::vector<SingularArcReport> arcs;
  std::optional<ConstraintMultiplierReport> constraints;
  std::vector<Verdict> verdicts;

  bool pass() const;
};

/// Runs every check that applies to the scenario's objective and regime.
PmpReport verify(const collocation::OcpSolution& solution, const OcpSpec& ocp,
                 const VerifyOptions& options = {});

/// CSV t,lambda1,lambda2,lambda3,lambda4 (NLP estimate) followed by the
/// backward-integrated columns bw_lambda1..4.
void write_adjoint_csv(std::ostream& out, const PmpReport& report);
/// CSV t,phi1,phi2.
void write_switching_csv(std::ostream& out, const SwitchingProfile& profile);
/// CSV t,<names...> with the NLP multiplier densities, e.g. t,mu1,mu2 or t,lambda_sa.
void write_multiplier_csv(std::ostream& out, const ConstraintMultiplierReport& report);
/// Plain-text verdict list, one PASS/FAIL/INFO line per verdict.
void write_verdicts(std::ostream& out, const PmpReport& report);

}  // namespace immuno::pmp

#endif  // IMMUNO_PMP_HPP
