#include "immuno/nlp.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <sstream>

namespace immuno::nlp {

using Eigen::VectorXd;

std::string to_string(Status status) {
  switch (status) {
    case Status::kSuccess:
      return "success";
    case Status::kMaxIterations:
      return "max-iterations";
    case Status::kLinearSolverFailure:
      return "linear-solver-failure";
    case Status::kLineSearchFailure:
      return "line-search-failure";
    case Status::kNonFiniteEvaluation:
      return "non-finite-evaluation";
  }
  return "unknown";
}

VectorXd Solution::multipliers() const {
  VectorXd y(y_eq.size() + y_ineq.size());
  y << y_eq, y_ineq;
  return y;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kappa_sigma = 1e10;
constexpr double kappa_eps = 10.0;
constexpr double gamma_theta = 1e-5;
constexpr double gamma_phi = 1e-8;
constexpr double gamma_alpha = 0.05;
constexpr double eta_phi = 1e-8;
constexpr double switch_delta = 1.0;
constexpr double s_theta = 1.1;
constexpr double s_phi = 2.3;
constexpr double s_max = 100.0;
constexpr double delta_c = 1e-9;

double inf_norm(const VectorXd& v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }

// Elastic feasibility problem around a reference point z_r:
//
//   minimize rho (sum p + sum n) + zeta/2 |D (z - z_r)|^2
//   subject to  c_E(z) - p_E + n_E = 0,  c_I(z) - p_I <= 0,  p, n >= 0
//
// with the constraints row-scaled as in the outer iteration.
// Variables are [z, p (all rows), n (equality rows)].
class RestorationProblem final : public Problem {
 public:
  RestorationProblem(const Problem& base, const VectorXd& row_scale, const VectorXd& z_ref,
                     double zeta)
      : base_(base),
        row_scale_(row_scale),
        z_ref_(z_ref),
        zeta_(zeta),
        nz_(base.variable_count()),
        me_(base.equality_count()),
        m_(base.constraint_count()) {
    d2_ = z_ref.cwiseAbs().cwiseMax(1.0).cwiseInverse().cwiseAbs2();
  }

  Index variable_count() const override { return nz_ + m_ + me_; }
  Index equality_count() const override { return me_; }
  Index inequality_count() const override { return m_ - me_; }

  VectorXd lower_bounds() const override {
    VectorXd lo = VectorXd::Zero(variable_count());
    lo.head(nz_) = base_.lower_bounds();
    return lo;
  }
  VectorXd upper_bounds() const override {
    VectorXd hi = VectorXd::Constant(variable_count(), kInf);
    hi.head(nz_) = base_.upper_bounds();
    return hi;
  }

  double objective(const VectorXd& x) const override {
    const VectorXd dz = x.head(nz_) - z_ref_;
    return rho * x.tail(m_ + me_).sum() + 0.5 * zeta_ * d2_.dot(dz.cwiseAbs2());
  }
  VectorXd gradient(const VectorXd& x) const override {
    VectorXd g(variable_count());
    g.head(nz_) = zeta_ * d2_.cwiseProduct(x.head(nz_) - z_ref_);
    g.tail(m_ + me_).setConstant(rho);
    return g;
  }
  VectorXd constraints(const VectorXd& x) const override {
    VectorXd c = row_scale_.cwiseProduct(base_.constraints(x.head(nz_)));
    c -= x.segment(nz_, m_);
    c.head(me_) += x.tail(me_);
    return c;
  }
  SparseMatrix jacobian(const VectorXd& x) const override {
    const SparseMatrix jz = base_.jacobian(x.head(nz_));
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(jz.nonZeros() + m_ + me_));
    for (Index col = 0; col < jz.outerSize(); ++col) {
      for (SparseMatrix::InnerIterator it(jz, col); it; ++it) {
        trips.emplace_back(it.row(), it.col(), row_scale_(it.row()) * it.value());
      }
    }
    for (Index j = 0; j < m_; ++j) trips.emplace_back(j, nz_ + j, -1.0);
    for (Index j = 0; j < me_; ++j) trips.emplace_back(j, nz_ + m_ + j, 1.0);
    SparseMatrix jac(m_, variable_count());
    jac.setFromTriplets(trips.begin(), trips.end());
    return jac;
  }
  SparseMatrix hessian(const VectorXd& x, double obj_factor, const VectorXd& y) const override {
    const SparseMatrix hz = base_.hessian(x.head(nz_), 0.0, row_scale_.cwiseProduct(y));
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(hz.nonZeros() + nz_));
    for (Index col = 0; col < hz.outerSize(); ++col) {
      for (SparseMatrix::InnerIterator it(hz, col); it; ++it) {
        trips.emplace_back(it.row(), it.col(), it.value());
      }
    }
    for (Index i = 0; i < nz_; ++i) trips.emplace_back(i, i, obj_factor * zeta_ * d2_(i));
    SparseMatrix h(variable_count(), variable_count());
    h.setFromTriplets(trips.begin(), trips.end());
    return h;
  }

  static constexpr double rho = 1000.0;

 private:
  const Problem& base_;
  const VectorXd& row_scale_;
  VectorXd z_ref_;
  VectorXd d2_;
  double zeta_;
  Index nz_, me_, m_;
};

class InteriorPoint {
 public:
  InteriorPoint(const Problem& problem, const SolverOptions& options)
      : problem_(problem),
        opt_(options),
        nz_(problem.variable_count()),
        me_(problem.equality_count()),
        mi_(problem.inequality_count()),
        n_(nz_ + mi_),
        m_(me_ + mi_) {
    lo_ = VectorXd::Constant(n_, 0.0);
    hi_ = VectorXd::Constant(n_, kInf);
    lo_.head(nz_) = problem.lower_bounds();
    hi_.head(nz_) = problem.upper_bounds();
    has_lo_.resize(n_);
    has_hi_.resize(n_);
    for (Index i = 0; i < n_; ++i) {
      has_lo_[i] = std::isfinite(lo_(i));
      has_hi_[i] = std::isfinite(hi_(i));
      if (has_lo_[i] && has_hi_[i] && lo_(i) > hi_(i)) {
        throw std::invalid_argument("inconsistent bounds on variable " + std::to_string(i));
      }
    }
  }

  Solution run(const VectorXd& guess);

  /// Checked after every accepted iteration; returning true ends the run
  /// successfully.
  void set_stop_test(std::function<bool(const VectorXd&)> stop) { stop_ = std::move(stop); }
  /// Use Newton projection instead of the elastic subproblem when the line
  /// search fails (for the elastic subproblem itself).
  void set_nested(bool nested) { nested_ = nested; }

 private:
  struct Eval {
    double f = 0;
    VectorXd r;  // scaled constraints including slacks
    bool finite = true;
  };

  Eval evaluate(const VectorXd& x) const;
  void evaluate_derivatives();
  double barrier(const VectorXd& x) const;
  VectorXd barrier_gradient() const;
  double optimality_error(double mu) const;
  bool factor(const SparseMatrix& hess);
  VectorXd solve_kkt(const VectorXd& rhs) const;
  double max_step(const VectorXd& v, const VectorXd& dv, const VectorXd& lo, const VectorXd& hi,
                  const std::vector<bool>& has_lo, const std::vector<bool>& has_hi,
                  double tau) const;
  void initialize(const VectorXd& guess);
  SparseMatrix lagrangian_hessian() const;
  void safeguard_bound_multipliers();
  void least_squares_multipliers();
  bool restore();
  bool project_feasibility();
  void compute_scaling(const VectorXd& z);
  Solution make_solution(const VectorXd& x, const VectorXd& y, const VectorXd& zl,
                         const VectorXd& zu) const;

  const Problem& problem_;
  SolverOptions opt_;
  std::function<bool(const VectorXd&)> stop_;
  bool nested_ = false;
  Index nz_, me_, mi_, n_, m_;
  VectorXd lo_, hi_;
  std::vector<bool> has_lo_, has_hi_;

  double obj_scale_ = 1.0;
  VectorXd row_scale_;

  VectorXd x_, y_, zl_, zu_;
  double mu_ = 0.1;
  double theta_min_ = 0.0;
  double theta_max_ = kInf;
  std::vector<std::pair<double, double>> filter_;
  double delta_w_last_ = 0.0;
  double delta_w_ = 0.0;

  Eval cur_;
  VectorXd grad_;   // size n_
  SparseMatrix jac_;  // m_ x n_

  SparseMatrix kkt_;          // lower triangle, regularized
  SparseMatrix kkt_exact_;    // lower triangle without delta_c
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
  bool analyzed_ = false;
  Index kkt_nnz_ = -1;
};

void InteriorPoint::compute_scaling(const VectorXd& z) {
  const double gmax = inf_norm(problem_.gradient(z));
  obj_scale_ = gmax > opt_.scaling_max_gradient ? opt_.scaling_max_gradient / gmax : 1.0;
  row_scale_ = VectorXd::Ones(m_);
  const SparseMatrix jac = problem_.jacobian(z);
  VectorXd row_max = VectorXd::Zero(m_);
  for (Index col = 0; col < jac.outerSize(); ++col) {
    for (SparseMatrix::InnerIterator it(jac, col); it; ++it) {
      row_max(it.row()) = std::max(row_max(it.row()), std::abs(it.value()));
    }
  }
  for (Index j = 0; j < m_; ++j) {
    if (row_max(j) > opt_.scaling_max_gradient) row_scale_(j) = opt_.scaling_max_gradient / row_max(j);
  }
}

InteriorPoint::Eval InteriorPoint::evaluate(const VectorXd& x) const {
  Eval e;
  const VectorXd z = x.head(nz_);
  e.f = obj_scale_ * problem_.objective(z);
  e.r = row_scale_.cwiseProduct(problem_.constraints(z));
  e.r.tail(mi_) += x.tail(mi_);
  e.finite = std::isfinite(e.f) && e.r.allFinite();
  return e;
}

void InteriorPoint::evaluate_derivatives() {
  const VectorXd z = x_.head(nz_);
  grad_ = VectorXd::Zero(n_);
  grad_.head(nz_) = obj_scale_ * problem_.gradient(z);
  const SparseMatrix jz = problem_.jacobian(z);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(jz.nonZeros() + mi_));
  for (Index col = 0; col < jz.outerSize(); ++col) {
    for (SparseMatrix::InnerIterator it(jz, col); it; ++it) {
      trips.emplace_back(it.row(), it.col(), row_scale_(it.row()) * it.value());
    }
  }
  for (Index k = 0; k < mi_; ++k) trips.emplace_back(me_ + k, nz_ + k, 1.0);
  jac_.resize(m_, n_);
  jac_.setFromTriplets(trips.begin(), trips.end());
}

double InteriorPoint::barrier(const VectorXd& x) const {
  double b = 0;
  for (Index i = 0; i < n_; ++i) {
    if (has_lo_[i]) b -= std::log(x(i) - lo_(i));
    if (has_hi_[i]) b -= std::log(hi_(i) - x(i));
  }
  return mu_ * b;
}

VectorXd InteriorPoint::barrier_gradient() const {
  VectorXd g = grad_;
  for (Index i = 0; i < n_; ++i) {
    if (has_lo_[i]) g(i) -= mu_ / (x_(i) - lo_(i));
    if (has_hi_[i]) g(i) += mu_ / (hi_(i) - x_(i));
  }
  return g;
}

double InteriorPoint::optimality_error(double mu) const {
  const VectorXd dual = grad_ + jac_.transpose() * y_ - zl_ + zu_;
  double compl_max = 0;
  Index bound_count = 0;
  for (Index i = 0; i < n_; ++i) {
    if (has_lo_[i]) {
      compl_max = std::max(compl_max, std::abs((x_(i) - lo_(i)) * zl_(i) - mu));
      ++bound_count;
    }
    if (has_hi_[i]) {
      compl_max = std::max(compl_max, std::abs((hi_(i) - x_(i)) * zu_(i) - mu));
      ++bound_count;
    }
  }
  const double z_sum = zl_.lpNorm<1>() + zu_.lpNorm<1>();
  const double s_d =
      std::max(s_max, (y_.lpNorm<1>() + z_sum) / std::max<double>(1.0, double(m_ + bound_count))) /
      s_max;
  const double s_c = std::max(s_max, z_sum / std::max<double>(1.0, double(bound_count))) / s_max;
  return std::max({inf_norm(dual) / s_d, inf_norm(cur_.r), compl_max / s_c});
}

bool InteriorPoint::factor(const SparseMatrix& hess) {
  // Assemble the lower triangle of
  //   [ W + Sigma + delta_w I   J^T        ]
  //   [ J                       -delta_c I ]
  const Index dim = n_ + m_;
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(hess.nonZeros() + jac_.nonZeros() + dim));
  for (Index col = 0; col < hess.outerSize(); ++col) {
    for (SparseMatrix::InnerIterator it(hess, col); it; ++it) {
      if (it.row() >= it.col()) trips.emplace_back(it.row(), it.col(), it.value());
    }
  }
  VectorXd sigma = VectorXd::Zero(n_);
  for (Index i = 0; i < n_; ++i) {
    if (has_lo_[i]) sigma(i) += zl_(i) / (x_(i) - lo_(i));
    if (has_hi_[i]) sigma(i) += zu_(i) / (hi_(i) - x_(i));
  }
  for (Index col = 0; col < jac_.outerSize(); ++col) {
    for (SparseMatrix::InnerIterator it(jac_, col); it; ++it) {
      trips.emplace_back(n_ + it.row(), it.col(), it.value());
    }
  }
  std::vector<Eigen::Triplet<double>> diag_trips;
  for (Index i = 0; i < n_; ++i) trips.emplace_back(i, i, sigma(i));
  for (Index j = 0; j < m_; ++j) trips.emplace_back(n_ + j, n_ + j, 0.0);
  kkt_exact_.resize(dim, dim);
  kkt_exact_.setFromTriplets(trips.begin(), trips.end());

  auto try_factor = [&](double dw) {
    kkt_ = kkt_exact_;
    for (Index i = 0; i < n_; ++i) kkt_.coeffRef(i, i) += dw;
    for (Index j = 0; j < m_; ++j) kkt_.coeffRef(n_ + j, n_ + j) -= delta_c;
    if (!analyzed_ || kkt_.nonZeros() != kkt_nnz_) {
      ldlt_.analyzePattern(kkt_);
      analyzed_ = true;
      kkt_nnz_ = kkt_.nonZeros();
    }
    ldlt_.factorize(kkt_);
    if (ldlt_.info() != Eigen::Success) return false;
    const VectorXd& d = ldlt_.vectorD();
    if (!d.allFinite()) return false;
    Index pos = 0, neg = 0;
    for (Index i = 0; i < dim; ++i) {
      if (d(i) > 0) {
        ++pos;
      } else if (d(i) < 0) {
        ++neg;
      }
    }
    return pos == n_ && neg == m_;
  };

  double dw = delta_w_;
  if (try_factor(dw)) {
    delta_w_ = dw;
    if (dw > 0) delta_w_last_ = dw;
    return true;
  }
  dw = delta_w_last_ == 0 ? 1e-4 : std::max(1e-20, std::max(dw, delta_w_last_ / 3.0));
  const double growth = delta_w_last_ == 0 ? 100.0 : 8.0;
  while (dw < 1e40) {
    if (try_factor(dw)) {
      delta_w_ = dw;
      delta_w_last_ = dw;
      return true;
    }
    dw *= growth;
  }
  return false;
}

VectorXd InteriorPoint::solve_kkt(const VectorXd& rhs) const {
  VectorXd sol = ldlt_.solve(rhs);
  // Refine against the system without the dual regularization.
  SparseMatrix target = kkt_exact_;
  for (Index i = 0; i < n_; ++i) target.coeffRef(i, i) += delta_w_;
  for (int pass = 0; pass < 3; ++pass) {
    const VectorXd res = rhs - target.selfadjointView<Eigen::Lower>() * sol;
    if (inf_norm(res) <= 1e-14 * (1.0 + inf_norm(rhs))) break;
    sol += ldlt_.solve(res);
  }
  return sol;
}

double InteriorPoint::max_step(const VectorXd& v, const VectorXd& dv, const VectorXd& lo,
                               const VectorXd& hi, const std::vector<bool>& has_lo,
                               const std::vector<bool>& has_hi, double tau) const {
  double alpha = 1.0;
  for (Index i = 0; i < v.size(); ++i) {
    if (has_lo[i] && dv(i) < 0) alpha = std::min(alpha, -tau * (v(i) - lo(i)) / dv(i));
    if (has_hi[i] && dv(i) > 0) alpha = std::min(alpha, tau * (hi(i) - v(i)) / dv(i));
  }
  return alpha;
}

void InteriorPoint::initialize(const VectorXd& guess) {
  if (guess.size() != nz_) throw std::invalid_argument("initial guess has wrong size");
  compute_scaling(guess.cwiseMax(lo_.head(nz_)).cwiseMin(hi_.head(nz_)));

  x_ = VectorXd::Zero(n_);
  const double k1 = opt_.bound_push;
  for (Index i = 0; i < nz_; ++i) {
    double v = guess(i);
    const double l = lo_(i), u = hi_(i);
    if (has_lo_[i] && has_hi_[i]) {
      const double pl = std::min(k1 * std::max(1.0, std::abs(l)), k1 * (u - l));
      const double pu = std::min(k1 * std::max(1.0, std::abs(u)), k1 * (u - l));
      v = std::clamp(v, l + pl, u - pu);
    } else if (has_lo_[i]) {
      v = std::max(v, l + k1 * std::max(1.0, std::abs(l)));
    } else if (has_hi_[i]) {
      v = std::min(v, u - k1 * std::max(1.0, std::abs(u)));
    }
    x_(i) = v;
  }
  const VectorXd c = row_scale_.cwiseProduct(problem_.constraints(x_.head(nz_)));
  for (Index k = 0; k < mi_; ++k) x_(nz_ + k) = std::max(-c(me_ + k), k1);

  y_ = VectorXd::Zero(m_);
  zl_ = VectorXd::Zero(n_);
  zu_ = VectorXd::Zero(n_);
  for (Index i = 0; i < n_; ++i) {
    if (has_lo_[i]) zl_(i) = 1.0;
    if (has_hi_[i]) zu_(i) = 1.0;
  }
  mu_ = opt_.mu_init;
}

// Constraint multipliers minimizing the dual infeasibility at the starting point;
// discarded when they come out large.
void InteriorPoint::least_squares_multipliers() {
  if (m_ == 0) return;
  const Index dim = n_ + m_;
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(jac_.nonZeros() + dim));
  for (Index i = 0; i < n_; ++i) trips.emplace_back(i, i, 1.0);
  for (Index j = 0; j < m_; ++j) trips.emplace_back(n_ + j, n_ + j, -1e-8);
  for (Index col = 0; col < jac_.outerSize(); ++col) {
    for (SparseMatrix::InnerIterator it(jac_, col); it; ++it) {
      trips.emplace_back(n_ + it.row(), it.col(), it.value());
    }
  }
  SparseMatrix a(dim, dim);
  a.setFromTriplets(trips.begin(), trips.end());
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt(a);
  if (ldlt.info() != Eigen::Success) return;
  VectorXd rhs = VectorXd::Zero(dim);
  rhs.head(n_) = -(grad_ - zl_ + zu_);
  const VectorXd sol = ldlt.solve(rhs);
  const VectorXd y = sol.tail(m_);
  if (!y.allFinite() || inf_norm(y) > opt_.multiplier_init_max) return;
  y_ = y;
}

Solution InteriorPoint::make_solution(const VectorXd& x, const VectorXd& y, const VectorXd& zl,
                                      const VectorXd& zu) const {
  Solution sol;
  sol.z = x.head(nz_);
  const VectorXd y_unscaled = row_scale_.cwiseProduct(y) / obj_scale_;
  sol.y_eq = y_unscaled.head(me_);
  sol.y_ineq = y_unscaled.tail(mi_);
  sol.bound_lower = zl.head(nz_) / obj_scale_;
  sol.bound_upper = zu.head(nz_) / obj_scale_;
  sol.objective = problem_.objective(sol.z);
  return sol;
}

Solution InteriorPoint::run(const VectorXd& guess) {
  initialize(guess);
  cur_ = evaluate(x_);
  if (!cur_.finite) {
    Solution sol = make_solution(x_, y_, zl_, zu_);
    sol.status = Status::kNonFiniteEvaluation;
    sol.message = "non-finite objective or constraints at the initial point";
    return sol;
  }
  evaluate_derivatives();
  least_squares_multipliers();
  const double theta0 = cur_.r.lpNorm<1>();
  theta_max_ = 1e4 * std::max(1.0, theta0);
  theta_min_ = 1e-4 * std::max(1.0, theta0);
  filter_.clear();

  std::vector<IterationRecord> log;
  double best_error = kInf;
  VectorXd best_x = x_, best_y = y_, best_zl = zl_, best_zu = zu_;
  double tau = std::max(opt_.tau_min, 1.0 - mu_);
  const double mu_floor = opt_.tol / 10.0;
  int stalls = 0;

  auto finish = [&](Status status, int iter, std::string message, bool use_best) {
    Solution sol = use_best ? make_solution(best_x, best_y, best_zl, best_zu)
                            : make_solution(x_, y_, zl_, zu_);
    sol.status = status;
    sol.iterations = iter;
    sol.log = std::move(log);
    sol.message = std::move(message);
    return sol;
  };

  for (int iter = 0;; ++iter) {
    const double error0 = optimality_error(0.0);
    if (error0 < best_error) {
      best_error = error0;
      best_x = x_;
      best_y = y_;
      best_zl = zl_;
      best_zu = zu_;
    }
    if (error0 <= opt_.tol) return finish(Status::kSuccess, iter, "converged", false);
    if (iter >= opt_.max_iter) {
      std::ostringstream msg;
      msg << "iteration limit reached; best optimality error " << best_error;
      return finish(Status::kMaxIterations, iter, msg.str(), true);
    }

    while (mu_ > mu_floor && optimality_error(mu_) <= kappa_eps * mu_) {
      mu_ = std::max(mu_floor,
                     std::min(opt_.mu_linear_decrease * mu_, std::pow(mu_, opt_.mu_superlinear_power)));
      tau = std::max(opt_.tau_min, 1.0 - mu_);
      filter_.clear();
    }

    delta_w_ = 0.0;
    if (!factor(lagrangian_hessian())) {
      return finish(Status::kLinearSolverFailure, iter,
                    "KKT factorization failed at iteration " + std::to_string(iter), false);
    }

    const VectorXd grad_barrier = barrier_gradient();
    VectorXd rhs(n_ + m_);
    rhs.head(n_) = -(grad_barrier + jac_.transpose() * y_);
    rhs.tail(m_) = -cur_.r;
    const VectorXd step = solve_kkt(rhs);
    const VectorXd dx = step.head(n_);
    VectorXd dy = step.tail(m_);

    const double theta = cur_.r.lpNorm<1>();
    const double phi = cur_.f + barrier(x_);
    const double gd = grad_barrier.dot(dx);
    const double alpha_max = max_step(x_, dx, lo_, hi_, has_lo_, has_hi_, tau);

    double alpha_min = gamma_theta;
    if (gd < 0) {
      alpha_min = std::min(gamma_theta, gamma_phi * theta / -gd);
      if (theta <= theta_min_) {
        alpha_min = std::min(alpha_min, switch_delta * std::pow(theta, s_theta) / std::pow(-gd, s_phi));
      }
    }
    alpha_min *= gamma_alpha;

    // Returns 'f' (Armijo on the barrier objective), 'h' (filter) or 0.
    auto acceptable = [&](const Eval& t, const VectorXd& xt, double alpha) -> char {
      if (!t.finite) return 0;
      const double th = t.r.lpNorm<1>();
      const double ph = t.f + barrier(xt);
      if (!std::isfinite(ph) || th > theta_max_) return 0;
      const double noise = 10.0 * std::numeric_limits<double>::epsilon() * std::abs(phi);
      for (const auto& [ft, fp] : filter_) {
        if (th >= ft && ph >= fp) return 0;
      }
      const bool switching =
          gd < 0 && alpha * std::pow(-gd, s_phi) > switch_delta * std::pow(theta, s_theta);
      if (theta <= theta_min_ && switching) {
        return ph - phi - eta_phi * alpha * gd <= noise ? 'f' : 0;
      }
      if (th <= (1.0 - gamma_theta) * theta || ph - (phi - gamma_phi * theta) <= noise) return 'h';
      return 0;
    };

    const bool tiny = (dx.array().abs() / (1.0 + x_.array().abs())).maxCoeff() <
                      10.0 * std::numeric_limits<double>::epsilon();

    double alpha = alpha_max;
    double alpha_primal = alpha_max;
    VectorXd dx_used = dx;
    char kind = 0;
    VectorXd x_new;
    Eval trial;
    if (tiny) {
      x_new = x_ + alpha * dx;
      trial = evaluate(x_new);
      kind = trial.finite ? 'f' : 0;
    }
    for (int backtrack = 0; !kind && backtrack < 60 && alpha >= alpha_min; ++backtrack) {
      x_new = x_ + alpha * dx;
      trial = evaluate(x_new);
      kind = acceptable(trial, x_new, alpha);
      if (kind) {
        alpha_primal = alpha;
        break;
      }
      if (backtrack == 0 && trial.finite && trial.r.lpNorm<1>() >= theta && theta > 0) {
        // Second-order corrections.
        VectorXd c_soc = alpha * cur_.r + trial.r;
        double theta_prev = trial.r.lpNorm<1>();
        for (int p = 0; p < 4; ++p) {
          VectorXd rhs_soc = rhs;
          rhs_soc.tail(m_) = -c_soc;
          const VectorXd soc = solve_kkt(rhs_soc);
          const VectorXd dx_soc = soc.head(n_);
          const double alpha_soc = max_step(x_, dx_soc, lo_, hi_, has_lo_, has_hi_, tau);
          const VectorXd x_soc = x_ + alpha_soc * dx_soc;
          const Eval soc_eval = evaluate(x_soc);
          kind = acceptable(soc_eval, x_soc, alpha);
          if (kind) {
            x_new = x_soc;
            trial = soc_eval;
            alpha_primal = alpha_soc;
            dx_used = dx_soc;
            dy = soc.tail(m_);
            break;
          }
          if (!soc_eval.finite) break;
          const double theta_soc = soc_eval.r.lpNorm<1>();
          if (theta_soc > 0.99 * theta_prev) break;
          theta_prev = theta_soc;
          c_soc = alpha_soc * c_soc + soc_eval.r;
        }
        if (kind) break;
      }
      alpha *= 0.5;
    }

    IterationRecord rec;
    rec.barrier_objective_prev = phi;
    rec.violation_prev = theta;

    if (!kind) {
      filter_.emplace_back((1.0 - gamma_theta) * theta, phi - gamma_phi * theta);
      // Cheap projection first; the elastic subproblem when it stalls.
      if (!project_feasibility() && (nested_ || !restore())) {
        ++stalls;
        if (mu_ > mu_floor && stalls < 20) {
          // Nothing reduces the violation further: move on to the next
          // barrier subproblem.
          mu_ = std::max(mu_floor, opt_.mu_linear_decrease * mu_);
          tau = std::max(opt_.tau_min, 1.0 - mu_);
          filter_.clear();
          continue;
        }
        return finish(Status::kLineSearchFailure, iter,
                      "line search and restoration failed at iteration " + std::to_string(iter),
                      true);
      }
      rec.kind = 'r';
      rec.step = 0.0;
    } else {
      stalls = 0;
      if (kind == 'h') filter_.emplace_back((1.0 - gamma_theta) * theta, phi - gamma_phi * theta);

      VectorXd dzl = VectorXd::Zero(n_), dzu = VectorXd::Zero(n_);
      for (Index i = 0; i < n_; ++i) {
        if (has_lo_[i]) {
          const double gap = x_(i) - lo_(i);
          dzl(i) = mu_ / gap - zl_(i) - zl_(i) / gap * dx_used(i);
        }
        if (has_hi_[i]) {
          const double gap = hi_(i) - x_(i);
          dzu(i) = mu_ / gap - zu_(i) + zu_(i) / gap * dx_used(i);
        }
      }
      const VectorXd zero = VectorXd::Zero(n_);
      const VectorXd inf = VectorXd::Constant(n_, kInf);
      const std::vector<bool> none(static_cast<std::size_t>(n_), false);
      const double alpha_dual = std::min(max_step(zl_, dzl, zero, inf, has_lo_, none, tau),
                                         max_step(zu_, dzu, zero, inf, has_hi_, none, tau));
      x_ = x_new;
      cur_ = trial;
      y_ += alpha_primal * dy;
      zl_ += alpha_dual * dzl;
      zu_ += alpha_dual * dzu;
      rec.kind = kind;
      rec.step = alpha_primal;
    }
    safeguard_bound_multipliers();
    evaluate_derivatives();


    rec.iter = iter + 1;
    rec.objective = cur_.f / obj_scale_;
    rec.primal_inf = inf_norm(cur_.r);
    rec.dual_inf = inf_norm(grad_ + jac_.transpose() * y_ - zl_ + zu_);
    double compl_max = 0;
    for (Index i = 0; i < n_; ++i) {
      if (has_lo_[i]) compl_max = std::max(compl_max, (x_(i) - lo_(i)) * zl_(i));
      if (has_hi_[i]) compl_max = std::max(compl_max, (hi_(i) - x_(i)) * zu_(i));
    }
    rec.complementarity = compl_max;
    rec.barrier_mu = mu_;
    rec.barrier_objective = cur_.f + barrier(x_);
    rec.violation = cur_.r.lpNorm<1>();
    log.push_back(rec);
    if (opt_.on_iteration) opt_.on_iteration(rec);
    if (stop_ && stop_(x_.head(nz_))) return finish(Status::kSuccess, iter + 1, "stopped", false);
  }
}

SparseMatrix InteriorPoint::lagrangian_hessian() const {
  const SparseMatrix hess_z =
      problem_.hessian(x_.head(nz_), obj_scale_, row_scale_.cwiseProduct(y_));
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(hess_z.nonZeros()));
  for (Index col = 0; col < hess_z.outerSize(); ++col) {
    for (SparseMatrix::InnerIterator it(hess_z, col); it; ++it) {
      trips.emplace_back(it.row(), it.col(), it.value());
    }
  }
  SparseMatrix hess(n_, n_);
  hess.setFromTriplets(trips.begin(), trips.end());
  return hess;
}

void InteriorPoint::safeguard_bound_multipliers() {
  for (Index i = 0; i < n_; ++i) {
    if (has_lo_[i]) {
      const double gap = x_(i) - lo_(i);
      zl_(i) = std::clamp(zl_(i), mu_ / (kappa_sigma * gap), kappa_sigma * mu_ / gap);
    }
    if (has_hi_[i]) {
      const double gap = hi_(i) - x_(i);
      zu_(i) = std::clamp(zu_(i), mu_ / (kappa_sigma * gap), kappa_sigma * mu_ / gap);
    }
  }
}

// Newton steps on the constraints alone, measured in the barrier metric, until
// the point is acceptable to the filter again.
bool InteriorPoint::project_feasibility() {
  const double theta_start = cur_.r.lpNorm<1>();
  const double tau = std::max(opt_.tau_min, 1.0 - mu_);
  const SparseMatrix no_curvature(n_, n_);
  for (int it = 0; it < 50; ++it) {
    const double theta = cur_.r.lpNorm<1>();
    if (theta == 0.0) return false;
    delta_w_ = 0.0;
    if (!factor(no_curvature)) return false;
    VectorXd rhs = VectorXd::Zero(n_ + m_);
    rhs.tail(m_) = -cur_.r;
    const VectorXd dx = solve_kkt(rhs).head(n_);
    double alpha = max_step(x_, dx, lo_, hi_, has_lo_, has_hi_, tau);
    bool moved = false;
    for (int backtrack = 0; backtrack < 30; ++backtrack) {
      const VectorXd xt = x_ + alpha * dx;
      const Eval t = evaluate(xt);
      if (t.finite && t.r.lpNorm<1>() <= (1.0 - gamma_theta) * theta) {
        x_ = xt;
        cur_ = t;
        moved = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!moved) return false;
    safeguard_bound_multipliers();
    const double th = cur_.r.lpNorm<1>();
    const double ph = cur_.f + barrier(x_);
    bool in_filter = false;
    for (const auto& [ft, fp] : filter_) {
      if (th >= ft && ph >= fp) in_filter = true;
    }
    if (!in_filter && th <= 0.9 * theta_start) break;
  }
  evaluate_derivatives();
  return cur_.r.lpNorm<1>() < theta_start;
}

// Feasibility restoration: approximately solve the elastic problem around the
// current point until the original filter accepts the iterate.
bool InteriorPoint::restore() {
  const double theta_start = cur_.r.lpNorm<1>();
  if (theta_start == 0.0) return false;
  const double phi_start = cur_.f + barrier(x_);
  const VectorXd z_ref = x_.head(nz_);
  RestorationProblem resto(problem_, row_scale_, z_ref, std::sqrt(mu_));

  // Start p and n at the minimizers of the elastic barrier terms.
  const VectorXd c = row_scale_.cwiseProduct(problem_.constraints(z_ref));
  const double mu_r = std::max(mu_, inf_norm(cur_.r));
  const double rho = RestorationProblem::rho;
  VectorXd guess = VectorXd::Zero(resto.variable_count());
  guess.head(nz_) = z_ref;
  for (Index j = 0; j < m_; ++j) {
    if (j < me_) {
      const double a = (mu_r - rho * c(j)) / (2.0 * rho);
      const double nj = a + std::sqrt(a * a + mu_r * c(j) / (2.0 * rho));
      guess(nz_ + m_ + j) = nj;
      guess(nz_ + j) = c(j) + nj;
    } else {
      guess(nz_ + j) = std::max(c(j), 0.0) + mu_r / rho;
    }
  }

  // Outer slacks implied by a restoration point.
  auto lift = [&](const VectorXd& z) {
    VectorXd x(n_);
    x.head(nz_) = z;
    const VectorXd ci = row_scale_.tail(mi_).cwiseProduct(problem_.constraints(z).tail(mi_));
    for (Index k = 0; k < mi_; ++k) {
      x(nz_ + k) = std::max(-ci(k), std::max(mu_, 1e-8));
    }
    return x;
  };
  auto accepted = [&](const VectorXd& z) {
    const VectorXd x = lift(z);
    const Eval e = evaluate(x);
    if (!e.finite) return false;
    const double th = e.r.lpNorm<1>();
    const double ph = e.f + barrier(x);
    if (!std::isfinite(ph) || th > 0.9 * theta_start) return false;
    if (th >= (1.0 - gamma_theta) * theta_start && ph >= phi_start - gamma_phi * theta_start) {
      return false;
    }
    for (const auto& [ft, fp] : filter_) {
      if (th >= ft && ph >= fp) return false;
    }
    return true;
  };

  SolverOptions inner_opt;
  inner_opt.tol = opt_.tol;
  inner_opt.max_iter = 1000;
  inner_opt.mu_init = mu_r;
  inner_opt.scaling_max_gradient = kInf;
  InteriorPoint inner(resto, inner_opt);
  inner.set_nested(true);
  inner.set_stop_test([&](const VectorXd& x) { return accepted(x.head(nz_)); });
  const Solution sol = inner.run(guess);
  const VectorXd z = sol.z.head(nz_);
  if (!accepted(z)) return false;

  x_ = lift(z);
  cur_ = evaluate(x_);
  // Bound multipliers from the elastic solve, reset to the central value
  // when large; constraint multipliers restart from zero.
  const bool reset = inf_norm(sol.bound_lower.head(nz_)) > 1e3 || inf_norm(sol.bound_upper.head(nz_)) > 1e3;
  zl_.setZero();
  zu_.setZero();
  for (Index i = 0; i < n_; ++i) {
    const bool slack = i >= nz_;
    if (has_lo_[i]) zl_(i) = reset || slack ? std::min(1.0, mu_ / (x_(i) - lo_(i))) : sol.bound_lower(i);
    if (has_hi_[i]) zu_(i) = reset || slack ? std::min(1.0, mu_ / (hi_(i) - x_(i))) : sol.bound_upper(i);
  }
  safeguard_bound_multipliers();
  evaluate_derivatives();
  return true;
}

}  // namespace

Solution solve(const Problem& problem, const VectorXd& guess, const SolverOptions& options) {
  if (!(options.tol > 0)) throw std::invalid_argument("solver tolerance must be positive");
  if (options.check_derivatives) {
    const VectorXd z = guess.cwiseMax(problem.lower_bounds()).cwiseMin(problem.upper_bounds());
    const DerivativeCheckReport report = derivative_check(problem, z);
    if (report.max_error > options.derivative_check_tol) {
      Solution sol;
      sol.z = z;
      sol.status = Status::kNonFiniteEvaluation;
      std::ostringstream msg;
      msg << "derivative check failed: error " << report.max_error << " at (" << report.worst_row
          << ", " << report.worst_col << ")";
      sol.message = msg.str();
      return sol;
    }
  }
  InteriorPoint ip(problem, options);
  return ip.run(guess);
}

KktReport kkt_check(const Problem& problem, const Solution& solution, double dual_tol) {
  KktReport report;
  const VectorXd& z = solution.z;
  const Index me = problem.equality_count();
  const Index mi = problem.inequality_count();
  const VectorXd c = problem.constraints(z);
  const SparseMatrix jac = problem.jacobian(z);
  const VectorXd y = solution.multipliers();
  const VectorXd stat = problem.gradient(z) + jac.transpose() * y - solution.bound_lower +
                        solution.bound_upper;
  report.stationarity = inf_norm(stat);

  const VectorXd lo = problem.lower_bounds();
  const VectorXd hi = problem.upper_bounds();
  double feas = me > 0 ? c.head(me).lpNorm<Eigen::Infinity>() : 0.0;
  for (Index k = 0; k < mi; ++k) feas = std::max(feas, c(me + k));
  for (Index i = 0; i < z.size(); ++i) {
    feas = std::max({feas, lo(i) - z(i), z(i) - hi(i)});
  }
  report.primal_feasibility = std::max(0.0, feas);

  double compl_max = 0;
  bool dual_ok = true;
  for (Index k = 0; k < mi; ++k) {
    compl_max = std::max(compl_max, std::abs(solution.y_ineq(k) * c(me + k)));
    if (solution.y_ineq(k) < -dual_tol) dual_ok = false;
  }
  for (Index i = 0; i < z.size(); ++i) {
    if (std::isfinite(lo(i))) {
      compl_max = std::max(compl_max, std::abs(solution.bound_lower(i) * (z(i) - lo(i))));
    }
    if (std::isfinite(hi(i))) {
      compl_max = std::max(compl_max, std::abs(solution.bound_upper(i) * (hi(i) - z(i))));
    }
    if (solution.bound_lower(i) < -dual_tol || solution.bound_upper(i) < -dual_tol) {
      dual_ok = false;
    }
  }
  report.complementarity = compl_max;
  report.dual_feasible = dual_ok;
  return report;
}

namespace {

void track(DerivativeCheckReport& report, double analytic, double fd, DerivativeKind kind,
           Index row, Index col) {
  const double err = std::abs(analytic - fd) / std::max(1.0, std::abs(fd));
  if (err > report.max_error || report.worst_row < 0) {
    if (err >= report.max_error) {
      report.max_error = err;
      report.worst_kind = kind;
      report.worst_row = row;
      report.worst_col = col;
    }
  }
}

}  // namespace

DerivativeCheckReport derivative_check(const Problem& problem, const VectorXd& z, double h) {
  DerivativeCheckReport report;
  const VectorXd grad = problem.gradient(z);
  const Eigen::MatrixXd jac = Eigen::MatrixXd(problem.jacobian(z));
  const Index m = problem.constraint_count();
  VectorXd zp = z, zm = z;
  for (Index i = 0; i < z.size(); ++i) {
    zp(i) = z(i) + h;
    zm(i) = z(i) - h;
    const double fd = (problem.objective(zp) - problem.objective(zm)) / (2 * h);
    track(report, grad(i), fd, DerivativeKind::kGradient, 0, i);
    if (m > 0) {
      const VectorXd dc = (problem.constraints(zp) - problem.constraints(zm)) / (2 * h);
      for (Index j = 0; j < m; ++j) track(report, jac(j, i), dc(j), DerivativeKind::kJacobian, j, i);
    }
    zp(i) = z(i);
    zm(i) = z(i);
  }
  return report;
}

DerivativeCheckReport hessian_check(const Problem& problem, const VectorXd& z, const VectorXd& y,
                                    double h) {
  DerivativeCheckReport report;
  const Eigen::MatrixXd lower = Eigen::MatrixXd(problem.hessian(z, 1.0, y));
  auto lagrangian_gradient = [&](const VectorXd& v) -> VectorXd {
    return problem.gradient(v) + problem.jacobian(v).transpose() * y;
  };
  VectorXd zp = z, zm = z;
  for (Index i = 0; i < z.size(); ++i) {
    zp(i) = z(i) + h;
    zm(i) = z(i) - h;
    const VectorXd column = (lagrangian_gradient(zp) - lagrangian_gradient(zm)) / (2 * h);
    for (Index r = i; r < z.size(); ++r) {
      track(report, lower(r, i), column(r), DerivativeKind::kHessian, r, i);
    }
    zp(i) = z(i);
    zm(i) = z(i);
  }
  return report;
}

void write_iteration_log(std::ostream& out, const std::vector<IterationRecord>& log) {
  const auto old = out.precision(12);
  out << "iter,obj,primal_inf,dual_inf,complementarity,barrier_mu,step\n";
  for (const auto& r : log) {
    out << r.iter << ',' << r.objective << ',' << r.primal_inf << ',' << r.dual_inf << ','
        << r.complementarity << ',' << r.barrier_mu << ',' << r.step << '\n';
  }
  out.precision(old);
}

}  // namespace immuno::nlp
