#include "immuno/nlp.hpp"

#include "oracles.hpp"
#include "toy_problems.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

namespace immuno::nlp {
namespace {

using testing::DenseProblem;

SolverOptions tight() {
  SolverOptions o;
  o.tol = 1e-10;
  return o;
}

void expect_kkt(const Problem& p, const Solution& s, double tol = 1e-8) {
  const KktReport k = kkt_check(p, s);
  EXPECT_LT(k.stationarity, tol);
  EXPECT_LT(k.primal_feasibility, tol);
  EXPECT_LT(k.complementarity, tol);
  EXPECT_TRUE(k.dual_feasible);
}

TEST(Toy, Inequality) {
  const DenseProblem p = testing::toy_inequality();
  const Solution s = solve(p, Eigen::VectorXd::Constant(1, -3.0), tight());
  ASSERT_TRUE(s.ok()) << s.message;
  EXPECT_NEAR(s.z(0), 0.0, 1e-8);
  EXPECT_NEAR(s.y_ineq(0), 2.0, 1e-8);
  expect_kkt(p, s);
}

TEST(Toy, Equality) {
  const DenseProblem p = testing::toy_equality();
  const Solution s = solve(p, Eigen::Vector2d(3.0, -1.0), tight());
  ASSERT_TRUE(s.ok()) << s.message;
  EXPECT_NEAR(s.z(0), 0.5, 1e-9);
  EXPECT_NEAR(s.z(1), 0.5, 1e-9);
  EXPECT_NEAR(s.y_eq(0), -1.0, 1e-8);
  expect_kkt(p, s);
}

TEST(Toy, VariableBound) {
  const DenseProblem p = testing::toy_bound();
  const Solution s = solve(p, Eigen::VectorXd::Constant(1, 0.0), tight());
  ASSERT_TRUE(s.ok()) << s.message;
  EXPECT_NEAR(s.z(0), 1.0, 1e-8);
  EXPECT_NEAR(s.bound_upper(0), 2.0, 1e-7);
  expect_kkt(p, s);
}

TEST(Toy, Hs071) {
  const DenseProblem p = testing::hs071();
  const Solution s = solve(p, Eigen::Vector4d(1, 5, 5, 1), tight());
  ASSERT_TRUE(s.ok()) << s.message;
  EXPECT_NEAR(s.objective, 17.0140173, 1e-6);
  EXPECT_NEAR(s.z(0), 1.0, 1e-7);
  EXPECT_NEAR(s.z(1), 4.7429994, 1e-6);
  EXPECT_NEAR(s.z(2), 3.8211503, 1e-6);
  EXPECT_NEAR(s.z(3), 1.3794082, 1e-6);
  expect_kkt(p, s);
}

// Every line-search step is acceptable to the filter: either the barrier
// objective or the constraint violation decreases.
TEST(Filter, AcceptedStepsDecreaseObjectiveOrViolation) {
  const DenseProblem p = testing::hs071();
  const Solution s = solve(p, Eigen::Vector4d(1, 5, 5, 1), tight());
  ASSERT_TRUE(s.ok());
  ASSERT_FALSE(s.log.empty());
  for (const IterationRecord& r : s.log) {
    if (r.kind == 'r') continue;
    const bool objective_down = r.barrier_objective < r.barrier_objective_prev;
    const bool violation_down = r.violation < r.violation_prev;
    const bool unchanged_feasible = r.violation == 0 && r.violation_prev == 0 && r.barrier_objective <= r.barrier_objective_prev;
    EXPECT_TRUE(objective_down || violation_down || unchanged_feasible) << "iteration " << r.iter;
  }
}

TEST(Filter, IterationCallbackSeesEveryRecord) {
  SolverOptions o = tight();
  int calls = 0;
  o.on_iteration = [&](const IterationRecord&) { ++calls; };
  const Solution s = solve(testing::hs071(), Eigen::Vector4d(1, 5, 5, 1), o);
  EXPECT_EQ(calls, static_cast<int>(s.log.size()));
  EXPECT_EQ(s.iterations, static_cast<int>(s.log.size()));
}

TEST(Solver, MaxIterationsReported) {
  SolverOptions o = tight();
  o.max_iter = 2;
  const Solution s = solve(testing::hs071(), Eigen::Vector4d(1, 5, 5, 1), o);
  EXPECT_EQ(s.status, Status::kMaxIterations);
  EXPECT_FALSE(s.ok());
}

TEST(Solver, NonFiniteObjectiveReported) {
  DenseProblem p = testing::toy_equality();
  p.f = [](const auto&) { return std::nan(""); };
  const Solution s = solve(p, Eigen::Vector2d(3.0, -1.0));
  EXPECT_EQ(s.status, Status::kNonFiniteEvaluation);
}

TEST(Derivatives, CheckDetectsWrongGradient) {
  DenseProblem p = testing::hs071();
  const Eigen::Vector4d z(1.5, 4, 3.5, 1.5);
  EXPECT_LT(derivative_check(p, z).max_error, 1e-6);
  EXPECT_LT(hessian_check(p, z, Eigen::Vector2d(0.3, 0.7)).max_error, 1e-5);
  const auto good = p.grad;
  p.grad = [good](const Eigen::VectorXd& x) {
    Eigen::VectorXd g = good(x);
    g(2) += 0.1;
    return g;
  };
  const DerivativeCheckReport bad = derivative_check(p, z);
  EXPECT_GT(bad.max_error, 1e-2);
  EXPECT_EQ(bad.worst_kind, DerivativeKind::kGradient);
  EXPECT_EQ(bad.worst_col, 2);
}

TEST(Log, CsvHeaderAndRows) {
  const Solution s = solve(testing::toy_equality(), Eigen::Vector2d(3.0, -1.0), tight());
  std::ostringstream out;
  write_iteration_log(out, s.log);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "iter,obj,primal_inf,dual_inf,complementarity,barrier_mu,step");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, static_cast<int>(s.log.size()));
}

// The transcribed scalar LQR against the Riccati value function.
TEST(Oracle, LqrMatchesRiccatiValue) {
  const testing::ScalarLqr lqr;
  const auto solved = testing::solve_lqr(lqr, 101, collocation::Scheme::kHermiteSimpson);
  ASSERT_TRUE(solved.solution.ok()) << solved.solution.message;
  const auto ref = testing::lqr_reference(lqr, solved.problem.grid().times());
  EXPECT_NEAR(solved.solution.objective, ref.value, 1e-6);
  expect_kkt(solved.problem, solved.solution);
}

}  // namespace
}  // namespace immuno::nlp
