// Direct collocation (trapezoid and Hermite-Simpson) of a fixed-horizon
// optimal control problem into an nlp::Problem.
//
// A Model supplies, for scalar types S (double and forward-mode AutoDiff):
//
//   static constexpr int kStates, kControls;
//   Matrix<S,kStates,1>                  dynamics(x, u)
//   Matrix<S,kStates,kStates+kControls>  dynamics_jacobian(x, u)
//   S                                    running_cost(x, u)
//   Matrix<S,kStates+kControls,1>        running_cost_gradient(x, u)
//   S                                    terminal_cost(x)
//   Matrix<S,kStates,1>                  terminal_cost_gradient(x)
//   Matrix<S,Dynamic,1>                  path(x, u)           (<= 0)
//   Matrix<S,Dynamic,kStates+kControls>  path_jacobian(x, u)
//
// plus path_count(), initial_state(), terminal_target() (optional pin) and
// state/control lower and upper bounds. Second derivatives are obtained by
// differentiating the first-order element code with AutoDiff.
#ifndef IMMUNO_COLLOCATION_HPP
#define IMMUNO_COLLOCATION_HPP

#include "immuno/nlp.hpp"
#include "immuno/ocp.hpp"
#include "immuno/simulate.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/AutoDiff>

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace immuno::collocation {

using Index = Eigen::Index;

enum class Scheme { kTrapezoid, kHermiteSimpson };

std::string to_string(Scheme scheme);
/// Accepts "trapezoid", "hs" and "hermite-simpson".
Scheme parse_scheme(std::string_view text);

/// Uniform node grid on [t0, t_f].
class Grid {
 public:
  Grid(double t_f, Index nodes, double t0 = 0.0) : t0_(t0), t_f_(t_f), nodes_(nodes) {
    if (nodes < 2) throw std::invalid_argument("grid needs at least two nodes");
    if (!(t_f > t0)) throw std::invalid_argument("grid horizon must be positive");
  }
  Index nodes() const { return nodes_; }
  Index intervals() const { return nodes_ - 1; }
  double step() const { return (t_f_ - t0_) / static_cast<double>(nodes_ - 1); }
  double start() const { return t0_; }
  double final_time() const { return t_f_; }
  double time(Index k) const { return k == nodes_ - 1 ? t_f_ : t0_ + static_cast<double>(k) * step(); }
  Eigen::VectorXd times() const {
    Eigen::VectorXd t(nodes_);
    for (Index k = 0; k < nodes_; ++k) t(k) = time(k);
    return t;
  }

 private:
  double t0_;
  double t_f_;
  Index nodes_;
};

template <class Model>
class Transcription final : public nlp::Problem {
 public:
  static constexpr int NX = Model::kStates;
  static constexpr int NU = Model::kControls;
  static constexpr int NXU = NX + NU;
  static constexpr int kTrapWidth = 2 * NX + 2 * NU;
  static constexpr int kHsWidth = 2 * NX + 3 * NU;

  using StateVec = Eigen::Matrix<double, NX, 1>;
  using ControlVec = Eigen::Matrix<double, NU, 1>;
  using StateTraj = Eigen::Matrix<double, NX, Eigen::Dynamic>;
  using ControlTraj = Eigen::Matrix<double, NU, Eigen::Dynamic>;

  Transcription(Model model, Grid grid, Scheme scheme)
      : model_(std::move(model)), grid_(grid), scheme_(scheme), np_(model_.path_count()) {}

  const Model& model() const { return model_; }
  const Grid& grid() const { return grid_; }
  Scheme scheme() const { return scheme_; }
  bool hermite_simpson() const { return scheme_ == Scheme::kHermiteSimpson; }
  int path_count() const { return np_; }
  bool pinned() const { return model_.terminal_target().has_value(); }

  // Node-major layout: [x_0 u_0 (m_0) x_1 u_1 (m_1) ... x_N u_N].
  Index stride() const { return hermite_simpson() ? NX + 2 * NU : NX + NU; }
  Index state_index(Index k, int i = 0) const { return k * stride() + i; }
  Index control_index(Index k, int j = 0) const { return k * stride() + NX + j; }
  Index midpoint_control_index(Index k, int j = 0) const { return k * stride() + NX + NU + j; }

  Index defect_row(Index k, int i = 0) const { return NX + k * NX + i; }
  Index terminal_row(int i = 0) const { return NX + grid_.intervals() * NX + i; }
  /// Rows in the stacked constraint vector.
  Index node_path_row(Index k, int p = 0) const { return equality_count() + k * np_ + p; }
  Index midpoint_path_row(Index k, int p = 0) const {
    return equality_count() + grid_.nodes() * np_ + k * np_ + p;
  }

  Index variable_count() const override {
    return grid_.nodes() * (NX + NU) + (hermite_simpson() ? grid_.intervals() * NU : 0);
  }
  Index equality_count() const override {
    return NX + grid_.intervals() * NX + (pinned() ? NX : 0);
  }
  Index inequality_count() const override {
    return np_ * (grid_.nodes() + (hermite_simpson() ? grid_.intervals() : 0));
  }

  Eigen::VectorXd lower_bounds() const override {
    return bounds(model_.state_lower(), model_.control_lower());
  }
  Eigen::VectorXd upper_bounds() const override {
    return bounds(model_.state_upper(), model_.control_upper());
  }

  Eigen::VectorXd pack(const StateTraj& x, const ControlTraj& u,
                       const ControlTraj& u_mid = ControlTraj()) const {
    if (x.cols() != grid_.nodes() || u.cols() != grid_.nodes()) {
      throw std::invalid_argument("trajectory does not match the grid");
    }
    Eigen::VectorXd z(variable_count());
    for (Index k = 0; k < grid_.nodes(); ++k) {
      z.segment<NX>(state_index(k)) = x.col(k);
      z.segment<NU>(control_index(k)) = u.col(k);
      if (hermite_simpson() && k + 1 < grid_.nodes()) {
        z.segment<NU>(midpoint_control_index(k)) =
            u_mid.cols() == grid_.intervals() ? ControlVec(u_mid.col(k))
                                              : ControlVec(0.5 * (u.col(k) + u.col(k + 1)));
      }
    }
    return z;
  }

  StateTraj states(const Eigen::VectorXd& z) const {
    StateTraj x(NX, grid_.nodes());
    for (Index k = 0; k < grid_.nodes(); ++k) x.col(k) = z.segment<NX>(state_index(k));
    return x;
  }
  ControlTraj controls(const Eigen::VectorXd& z) const {
    ControlTraj u(NU, grid_.nodes());
    for (Index k = 0; k < grid_.nodes(); ++k) u.col(k) = z.segment<NU>(control_index(k));
    return u;
  }
  /// Midpoint controls; for trapezoid the node average.
  ControlTraj midpoint_controls(const Eigen::VectorXd& z) const {
    ControlTraj u(NU, grid_.intervals());
    for (Index k = 0; k < grid_.intervals(); ++k) {
      u.col(k) = hermite_simpson()
                     ? ControlVec(z.segment<NU>(midpoint_control_index(k)))
                     : ControlVec(0.5 * (z.segment<NU>(control_index(k)) +
                                         z.segment<NU>(control_index(k + 1))));
    }
    return u;
  }
  /// Hermite interpolated midpoint states; for trapezoid the node average.
  StateTraj midpoint_states(const Eigen::VectorXd& z) const {
    StateTraj x(NX, grid_.intervals());
    const double h = grid_.step();
    for (Index k = 0; k < grid_.intervals(); ++k) {
      const StateVec xk = z.segment<NX>(state_index(k));
      const StateVec x1 = z.segment<NX>(state_index(k + 1));
      if (hermite_simpson()) {
        const StateVec fk = model_.template dynamics<double>(xk, z.segment<NU>(control_index(k)));
        const StateVec f1 =
            model_.template dynamics<double>(x1, z.segment<NU>(control_index(k + 1)));
        x.col(k) = 0.5 * (xk + x1) + h / 8.0 * (fk - f1);
      } else {
        x.col(k) = 0.5 * (xk + x1);
      }
    }
    return x;
  }

  double objective(const Eigen::VectorXd& z) const override {
    double total = 0;
    for (Index k = 0; k < grid_.intervals(); ++k) total += element(z, k).cost;
    return total + model_.template terminal_cost<double>(final_state(z));
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& z) const override {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(variable_count());
    for (Index k = 0; k < grid_.intervals(); ++k) {
      const Element<double> e = element(z, k);
      g.segment(element_offset(k), e.width()) += e.cost_grad;
    }
    g.segment<NX>(state_index(grid_.intervals())) +=
        model_.template terminal_cost_gradient<double>(final_state(z));
    return g;
  }

  Eigen::VectorXd constraints(const Eigen::VectorXd& z) const override {
    Eigen::VectorXd c(constraint_count());
    c.head<NX>() = z.segment<NX>(state_index(0)) - model_.initial_state();
    for (Index k = 0; k < grid_.intervals(); ++k) {
      const Element<double> e = element(z, k);
      c.segment<NX>(defect_row(k)) = e.defect;
      if (np_ > 0 && hermite_simpson()) c.segment(midpoint_path_row(k), np_) = e.path;
    }
    if (pinned()) c.segment<NX>(terminal_row()) = final_state(z) - *model_.terminal_target();
    if (np_ > 0) {
      for (Index k = 0; k < grid_.nodes(); ++k) {
        c.segment(node_path_row(k), np_) =
            model_.template path<double>(z.segment<NX>(state_index(k)),
                                         z.segment<NU>(control_index(k)));
      }
    }
    return c;
  }

  nlp::SparseMatrix jacobian(const Eigen::VectorXd& z) const override {
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(grid_.intervals() * (NX + np_) * kHsWidth + 2 * NX +
                                       grid_.nodes() * np_ * NXU));
    for (int i = 0; i < NX; ++i) t.emplace_back(i, state_index(0, i), 1.0);
    for (Index k = 0; k < grid_.intervals(); ++k) {
      const Element<double> e = element(z, k);
      const Index off = element_offset(k);
      for (Index c = 0; c < e.width(); ++c) {
        for (int i = 0; i < NX; ++i) t.emplace_back(defect_row(k, i), off + c, e.defect_jac(i, c));
        if (hermite_simpson()) {
          for (int p = 0; p < np_; ++p) {
            t.emplace_back(midpoint_path_row(k, p), off + c, e.path_jac(p, c));
          }
        }
      }
    }
    if (pinned()) {
      for (int i = 0; i < NX; ++i) {
        t.emplace_back(terminal_row(i), state_index(grid_.intervals(), i), 1.0);
      }
    }
    if (np_ > 0) {
      for (Index k = 0; k < grid_.nodes(); ++k) {
        const Eigen::Matrix<double, Eigen::Dynamic, NXU> pj = model_.template path_jacobian<double>(
            z.segment<NX>(state_index(k)), z.segment<NU>(control_index(k)));
        for (int c = 0; c < NXU; ++c) {
          for (int p = 0; p < np_; ++p) t.emplace_back(node_path_row(k, p), state_index(k) + c, pj(p, c));
        }
      }
    }
    nlp::SparseMatrix jac(constraint_count(), variable_count());
    jac.setFromTriplets(t.begin(), t.end());
    return jac;
  }

  nlp::SparseMatrix hessian(const Eigen::VectorXd& z, double obj_factor,
                            const Eigen::VectorXd& y) const override {
    std::vector<Eigen::Triplet<double>> t;
    for (Index k = 0; k < grid_.intervals(); ++k) {
      if (hermite_simpson()) {
        element_hessian<kHsWidth>(z, k, obj_factor, y, t);
      } else {
        element_hessian<kTrapWidth>(z, k, obj_factor, y, t);
      }
    }
    if (np_ > 0) {
      for (Index k = 0; k < grid_.nodes(); ++k) node_path_hessian(z, k, y, t);
    }
    {
      using AD = Eigen::AutoDiffScalar<Eigen::Matrix<double, NX, 1>>;
      Eigen::Matrix<AD, NX, 1> x;
      const StateVec xf = final_state(z);
      for (int i = 0; i < NX; ++i) x(i) = AD(xf(i), NX, i);
      const Eigen::Matrix<AD, NX, 1> g = model_.template terminal_cost_gradient<AD>(x);
      const Index off = state_index(grid_.intervals());
      for (int c = 0; c < NX; ++c) {
        for (int r = c; r < NX; ++r) {
          t.emplace_back(off + r, off + c,
                         obj_factor * 0.5 * (g(r).derivatives()(c) + g(c).derivatives()(r)));
        }
      }
    }
    nlp::SparseMatrix hess(variable_count(), variable_count());
    hess.setFromTriplets(t.begin(), t.end());
    return hess;
  }

  /// Running-cost quadrature of interval k (trapezoid or Simpson rule).
  double interval_cost(const Eigen::VectorXd& z, Index k) const { return element(z, k).cost; }

 private:
  template <class S>
  struct Element {
    Eigen::Matrix<S, NX, 1> defect;
    Eigen::Matrix<S, NX, Eigen::Dynamic> defect_jac;
    S cost;
    Eigen::Matrix<S, Eigen::Dynamic, 1> cost_grad;
    Eigen::Matrix<S, Eigen::Dynamic, 1> path;
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> path_jac;
    Index width() const { return cost_grad.size(); }
  };

  Eigen::VectorXd bounds(const StateVec& xb, const ControlVec& ub) const {
    Eigen::VectorXd b(variable_count());
    for (Index k = 0; k < grid_.nodes(); ++k) {
      b.segment<NX>(state_index(k)) = xb;
      b.segment<NU>(control_index(k)) = ub;
      if (hermite_simpson() && k + 1 < grid_.nodes()) b.segment<NU>(midpoint_control_index(k)) = ub;
    }
    return b;
  }

  StateVec final_state(const Eigen::VectorXd& z) const {
    return z.segment<NX>(state_index(grid_.intervals()));
  }

  Index element_offset(Index k) const { return state_index(k); }

  Element<double> element(const Eigen::VectorXd& z, Index k) const {
    if (hermite_simpson()) {
      return element_eval<double, kHsWidth>(z.segment<kHsWidth>(element_offset(k)));
    }
    return element_eval<double, kTrapWidth>(z.segment<kTrapWidth>(element_offset(k)));
  }

  // Values and first derivatives of one interval with respect to its local
  // variables [x_k u_k (m_k) x_k+1 u_k+1].
  template <class S, int W>
  Element<S> element_eval(const Eigen::Matrix<S, W, 1>& w) const {
    using SX = Eigen::Matrix<S, NX, 1>;
    using SU = Eigen::Matrix<S, NU, 1>;
    using SJ = Eigen::Matrix<S, NX, W>;
    constexpr bool hs = W == kHsWidth;
    constexpr int i1 = hs ? NX + 2 * NU : NX + NU;
    const S h(grid_.step());

    const SX xk = w.template segment<NX>(0);
    const SU uk = w.template segment<NU>(NX);
    const SX x1 = w.template segment<NX>(i1);
    const SU u1 = w.template segment<NU>(i1 + NX);

    const SX fk = model_.template dynamics<S>(xk, uk);
    const SX f1 = model_.template dynamics<S>(x1, u1);
    const Eigen::Matrix<S, NX, NXU> Ak = model_.template dynamics_jacobian<S>(xk, uk);
    const Eigen::Matrix<S, NX, NXU> A1 = model_.template dynamics_jacobian<S>(x1, u1);
    const Eigen::Matrix<S, NXU, 1> gk = model_.template running_cost_gradient<S>(xk, uk);
    const Eigen::Matrix<S, NXU, 1> g1 = model_.template running_cost_gradient<S>(x1, u1);

    // d f_k / dw and d f_k+1 / dw
    SJ dfk = SJ::Zero();
    SJ df1 = SJ::Zero();
    dfk.template leftCols<NXU>() = Ak;
    df1.template rightCols<NXU>() = A1;
    Eigen::Matrix<S, W, 1> dLk = Eigen::Matrix<S, W, 1>::Zero();
    Eigen::Matrix<S, W, 1> dL1 = Eigen::Matrix<S, W, 1>::Zero();
    dLk.template head<NXU>() = gk;
    dL1.template tail<NXU>() = g1;

    Element<S> e;
    SJ dd = SJ::Zero();
    dd.template leftCols<NX>() = -SJ::Identity().template leftCols<NX>();
    for (int i = 0; i < NX; ++i) dd(i, i1 + i) = S(1.0);

    if constexpr (!hs) {
      e.defect = x1 - xk - h / 2.0 * (fk + f1);
      dd -= h / 2.0 * (dfk + df1);
      e.cost = h / 2.0 * (model_.template running_cost<S>(xk, uk) +
                          model_.template running_cost<S>(x1, u1));
      e.cost_grad = h / 2.0 * (dLk + dL1);
      e.path.resize(0);
      e.path_jac.resize(0, W);
    } else {
      const SU um = w.template segment<NU>(NX + NU);
      const SX xm = (xk + x1) / 2.0 + h / 8.0 * (fk - f1);
      SJ dxm = SJ::Zero();
      for (int i = 0; i < NX; ++i) {
        dxm(i, i) = S(0.5);
        dxm(i, i1 + i) = S(0.5);
      }
      dxm += h / 8.0 * (dfk - df1);
      const SX fm = model_.template dynamics<S>(xm, um);
      const Eigen::Matrix<S, NX, NXU> Am = model_.template dynamics_jacobian<S>(xm, um);
      SJ dfm = Am.template leftCols<NX>() * dxm;
      dfm.template middleCols<NU>(NX + NU) += Am.template rightCols<NU>();

      e.defect = x1 - xk - h / 6.0 * (fk + 4.0 * fm + f1);
      dd -= h / 6.0 * (dfk + 4.0 * dfm + df1);

      const Eigen::Matrix<S, NXU, 1> gm = model_.template running_cost_gradient<S>(xm, um);
      Eigen::Matrix<S, W, 1> dLm = dxm.transpose() * gm.template head<NX>();
      dLm.template segment<NU>(NX + NU) += gm.template tail<NU>();
      e.cost = h / 6.0 *
               (model_.template running_cost<S>(xk, uk) + 4.0 * model_.template running_cost<S>(xm, um) +
                model_.template running_cost<S>(x1, u1));
      e.cost_grad = h / 6.0 * (dLk + 4.0 * dLm + dL1);

      if (np_ > 0) {
        e.path = model_.template path<S>(xm, um);
        const Eigen::Matrix<S, Eigen::Dynamic, NXU> pj = model_.template path_jacobian<S>(xm, um);
        e.path_jac = pj.leftCols(NX) * dxm;
        e.path_jac.middleCols(NX + NU, NU) += pj.rightCols(NU);
      } else {
        e.path.resize(0);
        e.path_jac.resize(0, W);
      }
    }
    e.defect_jac = dd;
    return e;
  }

  template <int W>
  void element_hessian(const Eigen::VectorXd& z, Index k, double obj_factor, const Eigen::VectorXd& y,
                       std::vector<Eigen::Triplet<double>>& t) const {
    using AD = Eigen::AutoDiffScalar<Eigen::Matrix<double, W, 1>>;
    const Index off = element_offset(k);
    Eigen::Matrix<AD, W, 1> w;
    for (int i = 0; i < W; ++i) w(i) = AD(z(off + i), W, i);
    const Element<AD> e = element_eval<AD, W>(w);

    Eigen::Matrix<AD, W, 1> gl = e.cost_grad * AD(obj_factor);
    for (int i = 0; i < NX; ++i) {
      const double yi = y(defect_row(k, i));
      if (yi != 0.0) gl += e.defect_jac.row(i).transpose() * AD(yi);
    }
    if (W == kHsWidth) {
      for (int p = 0; p < np_; ++p) {
        const double yp = y(midpoint_path_row(k, p));
        if (yp != 0.0) gl += e.path_jac.row(p).transpose() * AD(yp);
      }
    }
    for (int c = 0; c < W; ++c) {
      for (int r = c; r < W; ++r) {
        const double v = 0.5 * (derivative(gl(r), c) + derivative(gl(c), r));
        t.emplace_back(off + r, off + c, v);
      }
    }
  }

  void node_path_hessian(const Eigen::VectorXd& z, Index k, const Eigen::VectorXd& y,
                         std::vector<Eigen::Triplet<double>>& t) const {
    using AD = Eigen::AutoDiffScalar<Eigen::Matrix<double, NXU, 1>>;
    const Index off = state_index(k);
    Eigen::Matrix<AD, NX, 1> x;
    Eigen::Matrix<AD, NU, 1> u;
    for (int i = 0; i < NX; ++i) x(i) = AD(z(off + i), NXU, i);
    for (int j = 0; j < NU; ++j) u(j) = AD(z(off + NX + j), NXU, NX + j);
    const Eigen::Matrix<AD, Eigen::Dynamic, NXU> pj = model_.template path_jacobian<AD>(x, u);
    Eigen::Matrix<AD, NXU, 1> gl = Eigen::Matrix<AD, NXU, 1>::Constant(AD(0.0));
    for (int p = 0; p < np_; ++p) gl += pj.row(p).transpose() * AD(y(node_path_row(k, p)));
    for (int c = 0; c < NXU; ++c) {
      for (int r = c; r < NXU; ++r) {
        t.emplace_back(off + r, off + c, 0.5 * (derivative(gl(r), c) + derivative(gl(c), r)));
      }
    }
  }

  template <class AD>
  static double derivative(const AD& v, int i) {
    return v.derivatives().size() == 0 ? 0.0 : v.derivatives()(i);
  }

  Model model_;
  Grid grid_;
  Scheme scheme_;
  int np_;
};

// ---------------------------------------------------------------------------
// The inflammation model as a collocation Model.

class ImmuneModel {
 public:
  static constexpr int kStates = 4;
  static constexpr int kControls = 2;

  explicit ImmuneModel(const OcpSpec& ocp);

  template <class S>
  StateVector<S> dynamics(const StateVector<S>& x, const ControlVector<S>& u) const {
    return rhs<S>(x, u, params_);
  }
  template <class S>
  Eigen::Matrix<S, 4, 6> dynamics_jacobian(const StateVector<S>& x, const ControlVector<S>&) const {
    Eigen::Matrix<S, 4, 6> j;
    j.template leftCols<4>() = drift_jacobian<S>(x, params_);
    j.template rightCols<2>() = control_matrix().template cast<S>();
    return j;
  }
  template <class S>
  S running_cost(const StateVector<S>& x, const ControlVector<S>& u) const {
    return immuno::running_cost<S>(x, u, objective_);
  }
  template <class S>
  Eigen::Matrix<S, 6, 1> running_cost_gradient(const StateVector<S>& x,
                                               const ControlVector<S>& u) const {
    Eigen::Matrix<S, 6, 1> g;
    g.template head<4>() = running_cost_state_gradient<S>(x, objective_);
    g.template tail<2>() = running_cost_control_gradient<S>(u, objective_);
    return g;
  }
  template <class S>
  S terminal_cost(const StateVector<S>& x) const {
    return immuno::terminal_cost<S>(x, objective_);
  }
  template <class S>
  StateVector<S> terminal_cost_gradient(const StateVector<S>& x) const {
    return immuno::terminal_cost_gradient<S>(x, objective_);
  }

  /// Mixed regime: u_p + N - n_cap <= 0, u_a + Ca - ca_cap <= 0.
  int path_count() const { return mixed_ ? 2 : 0; }
  template <class S>
  Eigen::Matrix<S, Eigen::Dynamic, 1> path(const StateVector<S>& x, const ControlVector<S>& u) const {
    Eigen::Matrix<S, Eigen::Dynamic, 1> c(path_count());
    if (mixed_) {
      c(0) = u(kUp) + x(kN) - caps_(0);
      c(1) = u(kUa) + x(kCa) - caps_(1);
    }
    return c;
  }
  template <class S>
  Eigen::Matrix<S, Eigen::Dynamic, 6> path_jacobian(const StateVector<S>&,
                                                    const ControlVector<S>&) const {
    Eigen::Matrix<S, Eigen::Dynamic, 6> j =
        Eigen::Matrix<S, Eigen::Dynamic, 6>::Constant(path_count(), 6, S(0.0));
    if (mixed_) {
      j(0, kN) = S(1.0);
      j(0, 4 + kUp) = S(1.0);
      j(1, kCa) = S(1.0);
      j(1, 4 + kUa) = S(1.0);
    }
    return j;
  }

  State initial_state() const { return x0_; }
  std::optional<State> terminal_target() const { return target_; }
  State state_lower() const { return State::Zero(); }
  State state_upper() const { return state_upper_; }
  Control control_lower() const { return Control::Zero(); }
  Control control_upper() const { return control_upper_; }

  const ModelParams& params() const { return params_; }
  const ObjectiveSpec& objective() const { return objective_; }

 private:
  ModelParams params_;
  ObjectiveSpec objective_;
  State x0_;
  std::optional<State> target_;
  State state_upper_;
  Control control_upper_;
  bool mixed_ = false;
  Eigen::Vector2d caps_ = Eigen::Vector2d::Zero();
};

using ImmuneTranscription = Transcription<ImmuneModel>;

ImmuneTranscription transcribe(const OcpSpec& ocp, const Grid& grid, Scheme scheme);

enum class GuessStrategy { kOpenLoop, kConstant, kLinearToHealthy };

std::string to_string(GuessStrategy strategy);

/// open-loop: zero-control simulation sampled on the grid with zero controls;
/// constant: x0 held with midpoint-of-bounds controls (0 if unbounded);
/// linear-to-healthy: straight line from x0 to the healthy state.
Eigen::VectorXd initial_guess(const OcpSpec& ocp, const ImmuneTranscription& problem,
                              GuessStrategy strategy);

/// Costate estimate from the defect multipliers: lambda = -nu, with nu the
/// multiplier of the defect x_k+1 - x_k - h(...) = 0. The raw estimate lives
/// at interval midpoints and is averaged (extrapolated at the ends) to nodes.
struct AdjointEstimate {
  Eigen::VectorXd times;
  Eigen::Matrix4Xd nodes;
  Eigen::VectorXd midpoint_times;
  Eigen::Matrix4Xd midpoints;
};

/// Constraint multipliers mapped back to the time axis.
struct MultiplierEstimate {
  /// Mixed/path constraint multiplier densities (multiplier divided by the
  /// quadrature weight of the control at that point), path_count x nodes.
  Eigen::MatrixXd node_density;
  /// Midpoint densities for Hermite-Simpson, path_count x intervals.
  Eigen::MatrixXd midpoint_density;
  /// Raw multipliers of the state bounds (impulse weights), 4 x nodes.
  Eigen::Matrix4Xd state_upper;
  Eigen::Matrix4Xd state_lower;
  /// Raw multipliers of the control bounds, 2 x nodes.
  Eigen::Matrix2Xd control_lower;
  Eigen::Matrix2Xd control_upper;
};

struct OcpSolution {
  nlp::Solution nlp;
  Trajectory trajectory;
  AdjointEstimate adjoint;
  MultiplierEstimate multipliers;
  Scheme scheme = Scheme::kHermiteSimpson;
  double objective = 0;
};

/// Throws std::runtime_error for an unsuccessful solve.
OcpSolution extract_solution(const nlp::Solution& solution, const ImmuneTranscription& problem);

/// Adjoint estimate for any transcription (midpoint multipliers to nodes).
template <class Model>
Eigen::Matrix<double, Model::kStates, Eigen::Dynamic> adjoint_from_defects(
    const nlp::Solution& solution, const Transcription<Model>& problem,
    Eigen::Matrix<double, Model::kStates, Eigen::Dynamic>* midpoints = nullptr) {
  constexpr int NX = Model::kStates;
  const Index intervals = problem.grid().intervals();
  const Eigen::VectorXd y = solution.multipliers();
  Eigen::Matrix<double, NX, Eigen::Dynamic> mid(NX, intervals);
  for (Index k = 0; k < intervals; ++k) mid.col(k) = -y.template segment<NX>(problem.defect_row(k));
  Eigen::Matrix<double, NX, Eigen::Dynamic> node(NX, intervals + 1);
  if (intervals == 1) {
    node.col(0) = mid.col(0);
    node.col(1) = mid.col(0);
  } else {
    node.col(0) = 1.5 * mid.col(0) - 0.5 * mid.col(1);
    node.col(intervals) = 1.5 * mid.col(intervals - 1) - 0.5 * mid.col(intervals - 2);
    for (Index k = 1; k < intervals; ++k) node.col(k) = 0.5 * (mid.col(k - 1) + mid.col(k));
  }
  if (midpoints) *midpoints = mid;
  return node;
}

struct OcpSolveOptions {
  nlp::SolverOptions solver;
  GuessStrategy guess = GuessStrategy::kConstant;
  /// Grids finer than this are warm started from a solve on this many nodes;
  /// 0 disables the coarse stage.
  Index coarse_nodes = 200;
};

/// Linear interpolation of a solution on one grid onto another grid over the
/// same horizon, packed as a guess for `fine`.
Eigen::VectorXd interpolate_guess(const ImmuneTranscription& coarse, const Eigen::VectorXd& z,
                                  const ImmuneTranscription& fine);

/// Transcribe, solve and extract. The nlp status is reported in the result;
/// trajectory and adjoint are filled from the returned iterate either way.
/// When the coarse stage fails the fine grid is solved from the guess directly.
OcpSolution solve_ocp(const OcpSpec& ocp, const Grid& grid, Scheme scheme,
                      const OcpSolveOptions& options = {});

/// Plain-text problem manifest: sizes, bound summary and sparsity counts.
template <class Model>
void write_manifest(std::ostream& out, const Transcription<Model>& problem);

}  // namespace immuno::collocation

#include <ostream>

namespace immuno::collocation {

template <class Model>
void write_manifest(std::ostream& out, const Transcription<Model>& problem) {
  const Eigen::VectorXd lo = problem.lower_bounds();
  const Eigen::VectorXd hi = problem.upper_bounds();
  Index lower = 0, upper = 0, both = 0, fixed = 0;
  for (Index i = 0; i < lo.size(); ++i) {
    const bool l = std::isfinite(lo(i));
    const bool u = std::isfinite(hi(i));
    lower += l;
    upper += u;
    both += l && u;
    fixed += l && u && lo(i) == hi(i);
  }
  const Eigen::VectorXd z = (lo.array().isFinite()).select(lo, 0.0);
  const auto jac = problem.jacobian(z);
  const auto hess = problem.hessian(z, 1.0, Eigen::VectorXd::Zero(problem.constraint_count()));
  out << "scheme " << to_string(problem.scheme()) << '\n'
      << "nodes " << problem.grid().nodes() << '\n'
      << "step " << problem.grid().step() << '\n'
      << "variables " << problem.variable_count() << '\n'
      << "equalities " << problem.equality_count() << '\n'
      << "inequalities " << problem.inequality_count() << '\n'
      << "bounded_below " << lower << '\n'
      << "bounded_above " << upper << '\n'
      << "bounded_both " << both << '\n'
      << "fixed " << fixed << '\n'
      << "jacobian_nnz " << jac.nonZeros() << '\n'
      << "hessian_nnz " << hess.nonZeros() << '\n';
}

}  // namespace immuno::collocation

#endif  // IMMUNO_COLLOCATION_HPP
