#include "immuno/collocation.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace immuno::collocation {
namespace {

using testing::ScalarLqr;

TEST(Grid, UniformNodes) {
  const Grid g(168.0, 1001);
  EXPECT_EQ(g.intervals(), 1000);
  EXPECT_DOUBLE_EQ(g.step(), 0.168);
  EXPECT_EQ(g.time(1000), 168.0);
  EXPECT_EQ(g.times()(0), 0.0);
  EXPECT_THROW(Grid(1.0, 1), std::invalid_argument);
  EXPECT_THROW(Grid(0.0, 10), std::invalid_argument);
}

TEST(Scheme, Names) {
  EXPECT_EQ(parse_scheme("hs"), Scheme::kHermiteSimpson);
  EXPECT_EQ(parse_scheme("hermite-simpson"), Scheme::kHermiteSimpson);
  EXPECT_EQ(parse_scheme("trapezoid"), Scheme::kTrapezoid);
  EXPECT_THROW(parse_scheme("rk4"), std::invalid_argument);
  EXPECT_EQ(to_string(Scheme::kTrapezoid), "trapezoid");
}

TEST(Transcription, SizesAndLayout) {
  const OcpSpec ocp = builtin_scenario("L2-mixed", reference_params());
  const auto hs = transcribe(ocp, Grid(ocp.t_f, 11), Scheme::kHermiteSimpson);
  EXPECT_EQ(hs.variable_count(), 11 * 6 + 10 * 2);
  EXPECT_EQ(hs.equality_count(), 4 + 10 * 4);
  EXPECT_EQ(hs.inequality_count(), 2 * (11 + 10));
  const auto tr = transcribe(ocp, Grid(ocp.t_f, 11), Scheme::kTrapezoid);
  EXPECT_EQ(tr.variable_count(), 11 * 6);
  EXPECT_EQ(tr.inequality_count(), 2 * 11);

  Eigen::Matrix4Xd x = Eigen::Matrix4Xd::Random(4, 11);
  Eigen::Matrix2Xd u = Eigen::Matrix2Xd::Random(2, 11);
  Eigen::Matrix2Xd m = Eigen::Matrix2Xd::Random(2, 10);
  const Eigen::VectorXd z = hs.pack(x, u, m);
  EXPECT_EQ(hs.states(z), x);
  EXPECT_EQ(hs.controls(z), u);
  EXPECT_EQ(hs.midpoint_controls(z), m);
  EXPECT_TRUE(tr.midpoint_controls(tr.pack(x, u)).isApprox(0.5 * (u.leftCols(10) + u.rightCols(10))));
}

TEST(Transcription, BoundsFollowRegime) {
  const OcpSpec ocp = builtin_scenario("L1-state", reference_params());
  const auto p = transcribe(ocp, Grid(ocp.t_f, 5), Scheme::kHermiteSimpson);
  const Eigen::VectorXd hi = p.upper_bounds();
  const Eigen::VectorXd lo = p.lower_bounds();
  EXPECT_EQ(hi(p.state_index(2, kN)), 0.5);
  EXPECT_EQ(hi(p.state_index(2, kCa)), 0.62);
  EXPECT_TRUE(std::isinf(hi(p.state_index(2, kP))));
  EXPECT_EQ(hi(p.control_index(3, kUa)), 0.62);
  EXPECT_EQ(hi(p.midpoint_control_index(1, kUp)), 0.5);
  EXPECT_EQ(lo.minCoeff(), 0.0);
}

// Analytic gradient, Jacobian and Lagrangian Hessian of every scenario's
// transcription against central differences. The step balances truncation
// against roundoff on objectives of order 1e3.
TEST(Transcription, DerivativesMatchFiniteDifferences) {
  const RawParams ref = reference_params();
  for (const auto& id : builtin_scenario_ids()) {
    const OcpSpec ocp = builtin_scenario(id, ref);
    for (Scheme scheme : {Scheme::kTrapezoid, Scheme::kHermiteSimpson}) {
      const auto p = transcribe(ocp, Grid(ocp.t_f, 41), scheme);
      Eigen::VectorXd z = initial_guess(ocp, p, GuessStrategy::kOpenLoop);
      z.array() += 0.05;
      const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(p.constraint_count(), -1.0, 1.0);
      EXPECT_LT(nlp::derivative_check(p, z, 1e-5).max_error, 1e-5) << id << ' ' << to_string(scheme);
      EXPECT_LT(nlp::hessian_check(p, z, y, 1e-5).max_error, 1e-4) << id << ' ' << to_string(scheme);
    }
  }
}

TEST(Transcription, HermiteMidpointState) {
  const OcpSpec ocp = builtin_scenario("L1-full", reference_params());
  const auto p = transcribe(ocp, Grid(ocp.t_f, 3), Scheme::kHermiteSimpson);
  const Eigen::VectorXd z = initial_guess(ocp, p, GuessStrategy::kOpenLoop);
  const State x0 = p.states(z).col(0), x1 = p.states(z).col(1);
  const ModelParams params(ocp.patient.raw);
  const State f0 = rhs<double>(x0, p.controls(z).col(0), params);
  const State f1 = rhs<double>(x1, p.controls(z).col(1), params);
  const State expected = 0.5 * (x0 + x1) + p.grid().step() / 8.0 * (f0 - f1);
  EXPECT_TRUE(p.midpoint_states(z).col(0).isApprox(expected, 1e-14));
}

// Objective and state errors against the Riccati solution across h-halvings.
struct OrderResult {
  std::vector<double> objective_orders;
  std::vector<double> state_orders;
};

OrderResult lqr_orders(Scheme scheme) {
  const ScalarLqr lqr;
  std::vector<double> ej, ex;
  for (Eigen::Index n : {21, 41, 81, 161}) {
    const auto s = testing::solve_lqr(lqr, n, scheme);
    EXPECT_TRUE(s.solution.ok());
    const auto ref = testing::lqr_reference(lqr, s.problem.grid().times());
    const auto x = s.problem.states(s.solution.z);
    double e = 0;
    for (Eigen::Index k = 0; k < n; ++k) e = std::max(e, std::abs(x(0, k) - ref.state[static_cast<std::size_t>(k)]));
    ej.push_back(std::abs(s.solution.objective - ref.value));
    ex.push_back(e);
  }
  return {testing::convergence_orders(ej), testing::convergence_orders(ex)};
}

TEST(Convergence, TrapezoidIsSecondOrder) {
  const OrderResult r = lqr_orders(Scheme::kTrapezoid);
  for (double o : r.objective_orders) EXPECT_GE(o, 1.9);
  for (double o : r.state_orders) EXPECT_GE(o, 1.9);
}

TEST(Convergence, HermiteSimpsonIsFourthOrder) {
  const OrderResult r = lqr_orders(Scheme::kHermiteSimpson);
  for (double o : r.objective_orders) EXPECT_GE(o, 3.5);
  for (double o : r.state_orders) EXPECT_GE(o, 3.5);
}

// Negated defect multipliers reproduce the costate lambda = 2 P x.
TEST(Duality, DefectMultipliersMatchCostate) {
  const ScalarLqr lqr;
  for (Scheme scheme : {Scheme::kTrapezoid, Scheme::kHermiteSimpson}) {
    const auto s = testing::solve_lqr(lqr, 161, scheme);
    ASSERT_TRUE(s.solution.ok());
    const auto ref = testing::lqr_reference(lqr, s.problem.grid().times());
    const auto lambda = adjoint_from_defects(s.solution, s.problem);
    double worst = 0;
    for (Eigen::Index k = 0; k < lambda.cols(); ++k) {
      worst = std::max(worst, std::abs(lambda(0, k) - ref.costate[static_cast<std::size_t>(k)]));
    }
    EXPECT_LT(worst, 1e-3) << to_string(scheme);
  }
}

TEST(Guess, Strategies) {
  const OcpSpec ocp = builtin_scenario("L1-full", reference_params());
  const auto p = transcribe(ocp, Grid(ocp.t_f, 21), Scheme::kHermiteSimpson);
  const Eigen::VectorXd c = initial_guess(ocp, p, GuessStrategy::kConstant);
  EXPECT_EQ(p.states(c).col(20), ocp.patient.x0);
  EXPECT_TRUE(p.controls(c).col(5).isApprox(Control(0.25, 0.31)));
  const Eigen::VectorXd l = initial_guess(ocp, p, GuessStrategy::kLinearToHealthy);
  EXPECT_TRUE(p.states(l).col(20).isApprox(ModelParams(ocp.patient.raw).healthy_state()));
  const Eigen::VectorXd o = initial_guess(ocp, p, GuessStrategy::kOpenLoop);
  EXPECT_EQ(p.controls(o).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(p.states(o).col(0), ocp.patient.x0);
}

TEST(Guess, InterpolationBetweenGrids) {
  const OcpSpec ocp = builtin_scenario("L1-full", reference_params());
  const auto coarse = transcribe(ocp, Grid(ocp.t_f, 11), Scheme::kHermiteSimpson);
  const auto fine = transcribe(ocp, Grid(ocp.t_f, 21), Scheme::kHermiteSimpson);
  const Eigen::VectorXd zc = initial_guess(ocp, coarse, GuessStrategy::kOpenLoop);
  const Eigen::VectorXd zf = interpolate_guess(coarse, zc, fine);
  ASSERT_EQ(zf.size(), fine.variable_count());
  EXPECT_TRUE(fine.states(zf).col(4).isApprox(coarse.states(zc).col(2)));
  EXPECT_TRUE(fine.states(zf).col(3).isApprox(0.5 * (coarse.states(zc).col(1) + coarse.states(zc).col(2))));
}

// A 201-node solve of every scenario (the size of the warm-start stage)
// converges and satisfies the KKT conditions to the solver tolerance.
TEST(Solve, WarmStartScenariosConverge) {
  const RawParams ref = reference_params();
  for (const auto& id : builtin_scenario_ids()) {
    const OcpSpec ocp = builtin_scenario(id, ref);
    OcpSolveOptions o;
    o.coarse_nodes = 0;
    const OcpSolution s = solve_ocp(ocp, Grid(ocp.t_f, 201), Scheme::kHermiteSimpson, o);
    ASSERT_TRUE(s.nlp.ok()) << id << ": " << s.nlp.message;
    const auto p = transcribe(ocp, Grid(ocp.t_f, 201), Scheme::kHermiteSimpson);
    const nlp::KktReport k = nlp::kkt_check(p, s.nlp);
    EXPECT_LT(k.primal_feasibility, 1e-6) << id;
    EXPECT_LT(k.complementarity, 1e-5) << id;
    EXPECT_TRUE(k.dual_feasible) << id << " stationarity " << k.stationarity;
    EXPECT_NEAR(s.objective, p.objective(s.nlp.z), 1e-9 * std::abs(s.objective)) << id;
    EXPECT_EQ(s.trajectory.size(), 201);
    EXPECT_EQ(s.trajectory.midpoint_controls.cols(), 200);
  }
}

TEST(Manifest, ListsSizes) {
  const OcpSpec ocp = builtin_scenario("L2-mixed", reference_params());
  const auto p = transcribe(ocp, Grid(ocp.t_f, 11), Scheme::kHermiteSimpson);
  std::ostringstream out;
  write_manifest(out, p);
  EXPECT_NE(out.str().find(std::to_string(p.variable_count())), std::string::npos);
}

}  // namespace
}  // namespace immuno::collocation
