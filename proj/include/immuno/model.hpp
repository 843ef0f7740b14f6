// Four-state acute inflammation model: pathogen P, pro-inflammatory
// mediators N, tissue damage D and anti-inflammatory mediators Ca, driven by
// a pro-inflammatory dose u_p (enters dN/dt) and an anti-inflammatory dose
// u_a (enters dCa/dt).
//
// The dynamics are available in two algebraically equivalent forms: the raw
// form written directly in the rate constants (rhs_raw) and the rearranged
// control-affine form f(x) + G u written in the derived coefficients a..w
// (rhs). Everything is templated on the scalar type so the same code runs
// with double and with Eigen::AutoDiffScalar.
#ifndef IMMUNO_MODEL_HPP
#define IMMUNO_MODEL_HPP

#include <Eigen/Core>

#include <array>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace immuno {

template <typename Scalar>
using StateVector = Eigen::Matrix<Scalar, 4, 1>;
template <typename Scalar>
using ControlVector = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using StateMatrix = Eigen::Matrix<Scalar, 4, 4>;

using State = StateVector<double>;
using Control = ControlVector<double>;

/// Component indices of State.
enum StateIndex : int { kP = 0, kN = 1, kD = 2, kCa = 3 };
/// Component indices of Control.
enum ControlIndex : int { kUp = 0, kUa = 1 };

class ParamsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rate constants of the raw model.
struct RawParams {
  double k_pg = 0;
  double k_pm = 0;
  double s_m = 0;
  double mu_m = 0;
  double k_mp = 0;
  double p_inf = 0;
  double k_pn = 0;
  double s_nr = 0;
  double mu_nr = 0;
  double mu_n = 0;
  double k_dn = 0;
  double x_dn = 0;
  double mu_d = 0;
  double s_c = 0;
  double k_cn = 0;
  double k_cnd = 0;
  double mu_c = 0;
  double c_inf = 0;
  double k_np = 0;
  double k_nn = 0;
  double k_nd = 0;

  bool operator==(const RawParams&) const = default;
};

struct RawParamField {
  std::string_view name;
  double RawParams::*member;
};

/// Every raw parameter with its canonical name, in declaration order.
const std::array<RawParamField, 21>& raw_param_fields();

/// Coefficients of the rearranged control-affine form.
struct Coefficients {
  double a, b, c, d, e, z, g, h, i, j, k, l, m, n, o, p, q, r, s, t, u, v, w;
  double mu_d, mu_c, s_c;
};

/// Derived parameter set. Only constructible from RawParams, so the two
/// model forms can never drift apart.
class ModelParams {
 public:
  /// Throws std::domain_error for nonpositive p_inf or c_inf.
  explicit ModelParams(const RawParams& raw);

  const RawParams& raw() const { return raw_; }
  const Coefficients& coeffs() const { return coeffs_; }

  /// Background anti-inflammatory level of the healthy equilibrium.
  double healthy_ca() const { return raw_.s_c / raw_.mu_c; }
  State healthy_state() const { return State(0, 0, 0, healthy_ca()); }

 private:
  RawParams raw_;
  Coefficients coeffs_;
};

inline ModelParams derive_params(const RawParams& raw) { return ModelParams(raw); }

struct PatientSpec {
  std::string id;
  RawParams raw;
  State x0;
};

template <typename Scalar>
Scalar pow6(const Scalar& x) {
  const Scalar x3 = x * x * x;
  return x3 * x3;
}

/// Inhibition by anti-inflammatory mediators: x / (1 + (Ca / c_inf)^2).
template <typename Scalar>
Scalar hill_inhibit(const Scalar& x, const Scalar& ca, double c_inf) {
  const Scalar ratio = ca / c_inf;
  return x / (1.0 + ratio * ratio);
}

/// Raw-form vector field.
template <typename Scalar>
StateVector<Scalar> rhs_raw(const StateVector<Scalar>& x, const ControlVector<Scalar>& u,
                            const RawParams& p) {
  const Scalar& P = x(kP);
  const Scalar& N = x(kN);
  const Scalar& D = x(kD);
  const Scalar& Ca = x(kCa);

  const Scalar fn = hill_inhibit<Scalar>(N, Ca, p.c_inf);
  const Scalar recruit =
      hill_inhibit<Scalar>(p.k_np * P + p.k_nn * N + p.k_nd * D, Ca, p.c_inf);
  const Scalar fn6 = pow6(fn);
  const Scalar damage_drive = hill_inhibit<Scalar>(N + p.k_cnd * D, Ca, p.c_inf);

  StateVector<Scalar> dx;
  dx(kP) = p.k_pg * P * (1.0 - P / p.p_inf) - p.k_pm * p.s_m * P / (p.mu_m + p.k_mp * P) -
           p.k_pn * fn * P;
  dx(kN) = p.s_nr * recruit / (p.mu_nr + recruit) - p.mu_n * N + u(kUp);
  dx(kD) = p.k_dn * fn6 / (pow6(p.x_dn) + fn6) - p.mu_d * D;
  dx(kCa) = p.s_c + p.k_cn * damage_drive / (1.0 + damage_drive) - p.mu_c * Ca + u(kUa);
  return dx;
}

/// Drift f(x) of the rearranged form.
template <typename Scalar>
StateVector<Scalar> drift(const StateVector<Scalar>& x, const ModelParams& params) {
  const Coefficients& k = params.coeffs();
  const Scalar& P = x(kP);
  const Scalar& N = x(kN);
  const Scalar& D = x(kD);
  const Scalar& Ca = x(kCa);
  const Scalar ca2 = Ca * Ca;

  const Scalar recruit_den = k.k * P + k.l * N + k.m * D + k.n * ca2 + k.o;
  const Scalar damage_base = k.r + k.s * ca2;
  const Scalar n6 = pow6(N);
  const Scalar anti_den = k.g + ca2 + k.g * N + k.w * D;

  StateVector<Scalar> f;
  f(kP) = k.a * P - k.b * P * P - k.c * P / (k.d + k.e * P) - k.z * P * N / (k.g + ca2);
  f(kN) = (k.h * P + k.i * N + k.j * D) / recruit_den - k.p * N;
  f(kD) = k.q * n6 / (pow6(damage_base) + k.t * n6) - k.mu_d * D;
  f(kCa) = k.s_c + (k.u * N + k.v * D) / anti_den - k.mu_c * Ca;
  return f;
}

/// Constant control matrix G: u_p drives N, u_a drives Ca.
inline Eigen::Matrix<double, 4, 2> control_matrix() {
  Eigen::Matrix<double, 4, 2> g = Eigen::Matrix<double, 4, 2>::Zero();
  g(kN, kUp) = 1.0;
  g(kCa, kUa) = 1.0;
  return g;
}

/// Rearranged vector field f(x) + G u.
template <typename Scalar>
StateVector<Scalar> rhs(const StateVector<Scalar>& x, const ControlVector<Scalar>& u,
                        const ModelParams& params) {
  StateVector<Scalar> dx = drift<Scalar>(x, params);
  dx(kN) += u(kUp);
  dx(kCa) += u(kUa);
  return dx;
}

/// Analytic df/dx of the drift (the control enters affinely, so this is
/// also the state Jacobian of rhs).
template <typename Scalar>
StateMatrix<Scalar> drift_jacobian(const StateVector<Scalar>& x, const ModelParams& params) {
  const Coefficients& k = params.coeffs();
  const Scalar& P = x(kP);
  const Scalar& N = x(kN);
  const Scalar& D = x(kD);
  const Scalar& Ca = x(kCa);
  const Scalar ca2 = Ca * Ca;

  StateMatrix<Scalar> jac = StateMatrix<Scalar>::Zero();

  const Scalar kill_den = k.g + ca2;
  const Scalar clear_den = k.d + k.e * P;
  jac(kP, kP) = k.a - 2.0 * k.b * P - k.c * k.d / (clear_den * clear_den) - k.z * N / kill_den;
  jac(kP, kN) = -k.z * P / kill_den;
  jac(kP, kCa) = 2.0 * k.z * P * N * Ca / (kill_den * kill_den);

  const Scalar num = k.h * P + k.i * N + k.j * D;
  const Scalar den = k.k * P + k.l * N + k.m * D + k.n * ca2 + k.o;
  const Scalar den2 = den * den;
  jac(kN, kP) = (k.h * den - k.k * num) / den2;
  jac(kN, kN) = (k.i * den - k.l * num) / den2 - k.p;
  jac(kN, kD) = (k.j * den - k.m * num) / den2;
  jac(kN, kCa) = -2.0 * k.n * Ca * num / den2;

  const Scalar base = k.r + k.s * ca2;
  const Scalar base5 = base * base * base * base * base;
  const Scalar base6 = base5 * base;
  const Scalar n5 = N * N * N * N * N;
  const Scalar n6 = n5 * N;
  const Scalar hill_den = base6 + k.t * n6;
  const Scalar hill_den2 = hill_den * hill_den;
  jac(kD, kN) = 6.0 * k.q * n5 * base6 / hill_den2;
  jac(kD, kD) = Scalar(-k.mu_d);
  jac(kD, kCa) = -12.0 * k.q * k.s * Ca * n6 * base5 / hill_den2;

  const Scalar drive = k.u * N + k.v * D;
  const Scalar anti = k.g + ca2 + k.g * N + k.w * D;
  const Scalar anti2 = anti * anti;
  jac(kCa, kN) = (k.u * anti - k.g * drive) / anti2;
  jac(kCa, kD) = (k.v * anti - k.w * drive) / anti2;
  jac(kCa, kCa) = -2.0 * Ca * drive / anti2 - k.mu_c;
  return jac;
}

struct Jacobians {
  Eigen::Matrix4d state;
  Eigen::Matrix<double, 4, 2> control;
};

inline Jacobians jacobians(const State& x, const Control& /*u*/, const ModelParams& params) {
  return {drift_jacobian<double>(x, params), control_matrix()};
}

/// Parses the line-oriented `name = value` reference parameter format.
/// Unknown, duplicate or missing names and malformed lines are rejected with
/// the offending line number.
RawParams parse_reference_params(std::istream& in, const std::string& source = "<stream>");
RawParams load_reference_params(const std::filesystem::path& path);
void write_reference_params(std::ostream& out, const RawParams& raw);

/// $IMMUNOCTL_PARAMS if set, otherwise the file shipped with the project.
std::filesystem::path default_params_path();
/// Loads the reference set from default_params_path().
RawParams reference_params();

/// Built-in virtual patients: "baseline", "patient1", "patient2".
/// Throws std::out_of_range for an unknown id.
PatientSpec builtin_patient(std::string_view id, const RawParams& reference);
PatientSpec builtin_patient(std::string_view id);
std::vector<std::string> builtin_patient_ids();

}  // namespace immuno

#endif  // IMMUNO_MODEL_HPP
