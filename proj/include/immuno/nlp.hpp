// Sparse constrained nonlinear programming:
//
//   minimize f(z)  subject to  c_E(z) = 0,  c_I(z) <= 0,  lower <= z <= upper
//
// solved by a primal-dual interior-point method with slack variables for the
// inequalities, fraction-to-the-boundary steps and a filter line search with
// second-order corrections and a feasibility restoration phase. Multipliers follow the convention
//
//   grad f + J_E^T y_E + J_I^T y_I - z_L + z_U = 0,   y_I >= 0, z_L >= 0, z_U >= 0.
#ifndef IMMUNO_NLP_HPP
#define IMMUNO_NLP_HPP

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace immuno::nlp {

using Index = Eigen::Index;
using SparseMatrix = Eigen::SparseMatrix<double>;

class Problem {
 public:
  virtual ~Problem() = default;

  virtual Index variable_count() const = 0;
  virtual Index equality_count() const = 0;
  virtual Index inequality_count() const = 0;
  Index constraint_count() const { return equality_count() + inequality_count(); }

  /// Infinite entries mean unbounded.
  virtual Eigen::VectorXd lower_bounds() const = 0;
  virtual Eigen::VectorXd upper_bounds() const = 0;

  virtual double objective(const Eigen::VectorXd& z) const = 0;
  virtual Eigen::VectorXd gradient(const Eigen::VectorXd& z) const = 0;
  /// Equalities first, then inequalities.
  virtual Eigen::VectorXd constraints(const Eigen::VectorXd& z) const = 0;
  /// Constraint Jacobian; the sparsity pattern must not depend on z.
  virtual SparseMatrix jacobian(const Eigen::VectorXd& z) const = 0;
  /// Lower triangle of obj_factor * hess f + sum_i y_i hess c_i, with a
  /// z-independent pattern.
  virtual SparseMatrix hessian(const Eigen::VectorXd& z, double obj_factor,
                               const Eigen::VectorXd& y) const = 0;
};

struct IterationRecord {
  int iter = 0;
  double objective = 0;
  double primal_inf = 0;
  double dual_inf = 0;
  double complementarity = 0;
  double barrier_mu = 0;
  double step = 0;
  /// Barrier objective and l1 constraint violation before and after the
  /// step; filter acceptance requires one of the two to decrease.
  double barrier_objective = 0;
  double barrier_objective_prev = 0;
  double violation = 0;
  double violation_prev = 0;
  /// 'f' objective-decrease step, 'h' filter step, 'r' restoration step.
  char kind = 'f';
};

enum class Status {
  kSuccess,
  kMaxIterations,
  kLinearSolverFailure,
  kLineSearchFailure,
  kNonFiniteEvaluation,
};

std::string to_string(Status status);

struct SolverOptions {
  double tol = 1e-6;
  int max_iter = 3000;
  double mu_init = 0.1;
  /// Monotone barrier reduction factor.
  double mu_linear_decrease = 0.2;
  double mu_superlinear_power = 1.5;
  double tau_min = 0.99;
  double bound_push = 1e-2;
  /// Least-squares initial multipliers larger than this are replaced by zero.
  double multiplier_init_max = 1e3;
  /// Largest gradient entry allowed before rows and the objective are scaled down.
  double scaling_max_gradient = 100.0;
  /// Also run derivative_check on the starting point and fail on mismatch.
  bool check_derivatives = false;
  double derivative_check_tol = 1e-4;
  /// Called after every accepted iteration.
  std::function<void(const IterationRecord&)> on_iteration;
};

struct Solution {
  Eigen::VectorXd z;
  Eigen::VectorXd y_eq;
  Eigen::VectorXd y_ineq;
  Eigen::VectorXd bound_lower;
  Eigen::VectorXd bound_upper;
  double objective = 0;
  Status status = Status::kMaxIterations;
  int iterations = 0;
  std::string message;
  std::vector<IterationRecord> log;

  bool ok() const { return status == Status::kSuccess; }
  /// All constraint multipliers stacked like Problem::constraints.
  Eigen::VectorXd multipliers() const;
};

/// The guess is projected into the bounds before use.
Solution solve(const Problem& problem, const Eigen::VectorXd& guess,
               const SolverOptions& options = {});

struct KktReport {
  double stationarity = 0;
  double primal_feasibility = 0;
  double complementarity = 0;
  bool dual_feasible = true;
};

/// Unscaled KKT residual norms (infinity norms) recomputed from the problem.
KktReport kkt_check(const Problem& problem, const Solution& solution, double dual_tol = 1e-8);

enum class DerivativeKind { kGradient, kJacobian, kHessian };

struct DerivativeCheckReport {
  double max_error = 0;
  DerivativeKind worst_kind = DerivativeKind::kGradient;
  Index worst_row = -1;
  Index worst_col = -1;
};

/// Compares the gradient and constraint Jacobian to central differences.
/// Errors are |analytic - fd| / max(1, |fd|).
DerivativeCheckReport derivative_check(const Problem& problem, const Eigen::VectorXd& z,
                                       double h = 1e-6);

/// Compares the Lagrangian Hessian to central differences of the Lagrangian
/// gradient for multipliers y.
DerivativeCheckReport hessian_check(const Problem& problem, const Eigen::VectorXd& z,
                                    const Eigen::VectorXd& y, double h = 1e-6);

/// CSV: iter,obj,primal_inf,dual_inf,complementarity,barrier_mu,step
void write_iteration_log(std::ostream& out, const std::vector<IterationRecord>& log);

}  // namespace immuno::nlp

#endif  // IMMUNO_NLP_HPP
