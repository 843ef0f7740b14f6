#include "immuno/model.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <random>
#include <sstream>

namespace immuno {
namespace {

using testing::random_control;
using testing::random_params;
using testing::random_state;

TEST(ReferenceParams, ShippedFileParses) {
  const RawParams raw = load_reference_params(std::filesystem::path(IMMUNO_DATA_DIR) / "reference_params");
  EXPECT_DOUBLE_EQ(raw.k_pg, 0.6);
  EXPECT_DOUBLE_EQ(raw.c_inf, 0.28);
  EXPECT_DOUBLE_EQ(raw.k_cnd, 48.0);
  EXPECT_DOUBLE_EQ(raw.mu_c, 0.1);
}

TEST(ReferenceParams, WriteParseRoundTrip) {
  const RawParams raw = reference_params();
  std::stringstream text;
  write_reference_params(text, raw);
  EXPECT_EQ(parse_reference_params(text), raw);
}

std::string with_line_replaced(const std::string& name, const std::string& replacement) {
  std::stringstream in, out;
  write_reference_params(in, reference_params());
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(name + " ", 0) == 0) {
      out << replacement << '\n';
    } else {
      out << line << '\n';
    }
  }
  return out.str();
}

void expect_params_error(const std::string& text, const std::string& fragment) {
  std::istringstream in(text);
  try {
    parse_reference_params(in, "t");
    FAIL() << "accepted: " << text;
  } catch (const ParamsError& e) {
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

TEST(ReferenceParams, RejectsMalformedInput) {
  expect_params_error(with_line_replaced("k_pg", "k_pg 0.6"), "t:1: expected 'name = value'");
  expect_params_error(with_line_replaced("k_pg", "k_xx = 0.6"), "t:1: unknown parameter 'k_xx'");
  expect_params_error(with_line_replaced("k_pg", "k_pg = abc"), "invalid value 'abc'");
  expect_params_error(with_line_replaced("k_pg", "k_pg = -1"), "must be nonnegative");
  expect_params_error(with_line_replaced("k_pg", ""), "missing parameters: k_pg");
  expect_params_error(with_line_replaced("k_pm", "k_pm = 1\nk_pm = 2"), "duplicate parameter 'k_pm'");
}

TEST(ModelParams, RejectsNonpositiveScales) {
  RawParams raw = reference_params();
  raw.p_inf = 0;
  EXPECT_THROW(ModelParams{raw}, std::domain_error);
  raw = reference_params();
  raw.c_inf = -1;
  EXPECT_THROW(ModelParams{raw}, std::domain_error);
}

TEST(Patients, BuiltinTable) {
  const auto ids = builtin_patient_ids();
  ASSERT_EQ(ids.size(), 3u);
  const PatientSpec p1 = builtin_patient("patient1");
  EXPECT_DOUBLE_EQ(p1.x0(kP), 0.536);
  EXPECT_DOUBLE_EQ(p1.raw.k_pg, 0.5846);
  EXPECT_DOUBLE_EQ(p1.raw.mu_c, reference_params().mu_c);
  EXPECT_THROW(builtin_patient("nobody"), std::out_of_range);
}

// Every rearranged coefficient against its definition in the rate constants.
TEST(Coefficients, MatchRateConstants) {
  const RawParams r = reference_params();
  const Coefficients k = ModelParams(r).coeffs();
  const double c2 = r.c_inf * r.c_inf;
  EXPECT_DOUBLE_EQ(k.a, r.k_pg);
  EXPECT_DOUBLE_EQ(k.b, r.k_pg / r.p_inf);
  EXPECT_DOUBLE_EQ(k.c, r.k_pm * r.s_m);
  EXPECT_DOUBLE_EQ(k.z, r.k_pn * c2);
  EXPECT_DOUBLE_EQ(k.g, c2);
  EXPECT_DOUBLE_EQ(k.h, c2 * r.s_nr * r.k_np);
  EXPECT_DOUBLE_EQ(k.o, c2 * r.mu_nr);
  EXPECT_DOUBLE_EQ(k.q, std::pow(c2, 6) * r.k_dn);
  EXPECT_DOUBLE_EQ(k.t, std::pow(c2, 6));
  EXPECT_DOUBLE_EQ(k.u, c2 * r.k_cn);
  EXPECT_DOUBLE_EQ(k.v, c2 * r.k_cn * r.k_cnd);
  EXPECT_DOUBLE_EQ(k.w, c2 * r.k_cnd);
}

TEST(Dynamics, HealthyStateIsEquilibrium) {
  const ModelParams params(reference_params());
  const State f = drift<double>(params.healthy_state(), params);
  EXPECT_LT(f.cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_DOUBLE_EQ(params.healthy_ca(), 0.125);
}

TEST(Dynamics, ControlsEnterAffinely) {
  const ModelParams params(reference_params());
  const State x(1.0, 0.5, 2.0, 0.3);
  const Control u(0.2, 0.4);
  const State delta = rhs<double>(x, u, params) - drift<double>(x, params);
  EXPECT_TRUE(delta.isApprox(control_matrix() * u));
}

// Rearranged and raw forms on 1000 random positive-octant points with
// random parameters and controls.
TEST(Dynamics, RearrangementEquivalence) {
  std::mt19937 rng(20240101);
  const RawParams base = reference_params();
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const ModelParams params(random_params(rng, base));
    const State x = random_state(rng);
    const Control u = random_control(rng);
    const State a = rhs<double>(x, u, params);
    const State b = rhs_raw<double>(x, u, params.raw());
    for (int i = 0; i < 4; ++i) worst = std::max(worst, std::abs(a(i) - b(i)) / std::max(1e-12, std::abs(b(i))));
  }
  EXPECT_LT(worst, 1e-10);
}

// Analytic drift Jacobian against central differences on 200 random points.
TEST(Dynamics, JacobianMatchesFiniteDifferences) {
  std::mt19937 rng(7);
  const RawParams base = reference_params();
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const ModelParams params(random_params(rng, base));
    const State x = random_state(rng) + State::Constant(0.01);
    const Eigen::Matrix4d jac = drift_jacobian<double>(x, params);
    for (int j = 0; j < 4; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(x(j)));
      State xp = x, xm = x;
      xp(j) += h;
      xm(j) -= h;
      const State fd = (drift<double>(xp, params) - drift<double>(xm, params)) / (2 * h);
      for (int i = 0; i < 4; ++i) worst = std::max(worst, std::abs(jac(i, j) - fd(i)) / std::max(1.0, std::abs(fd(i))));
    }
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Dynamics, JacobiansBundle) {
  const ModelParams params(reference_params());
  const State x(1.0, 0.5, 2.0, 0.3);
  const Jacobians j = jacobians(x, Control(0.1, 0.1), params);
  EXPECT_TRUE(j.state.isApprox(drift_jacobian<double>(x, params)));
  EXPECT_EQ(j.control(kN, kUp), 1.0);
  EXPECT_EQ(j.control(kCa, kUa), 1.0);
  EXPECT_EQ(j.control.cwiseAbs().sum(), 2.0);
}

}  // namespace
}  // namespace immuno
