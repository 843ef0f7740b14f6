// Optimal control problem declarations: objectives, constraint regimes,
// horizon, boundary data and the built-in scenarios.
#ifndef IMMUNO_OCP_HPP
#define IMMUNO_OCP_HPP

#include "immuno/model.hpp"

#include <Eigen/Core>

#include <limits>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace immuno {

enum class ObjectiveKind { kL1, kL2 };
enum class TerminalCost { kLinearSum, kQuadraticSum, kNone };

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::kL1;
  Eigen::Vector4d state_weights = Eigen::Vector4d::Zero();
  Eigen::Vector2d control_weights = Eigen::Vector2d::Zero();
  TerminalCost terminal = TerminalCost::kLinearSum;

  bool operator==(const ObjectiveSpec& o) const {
    return kind == o.kind && state_weights == o.state_weights &&
           control_weights == o.control_weights && terminal == o.terminal;
  }
};

/// 0 <= u_p <= up_max, 0 <= u_a <= ua_max.
struct ControlBounds {
  double up_max = 0.5;
  double ua_max = 0.62;
  bool operator==(const ControlBounds&) const = default;
};

/// Control bounds plus the pure state constraints N <= n_max, Ca <= ca_max.
struct ControlAndStateBounds {
  double up_max = 0.5;
  double ua_max = 0.62;
  double n_max = 0.5;
  double ca_max = 0.62;
  bool operator==(const ControlAndStateBounds&) const = default;
};

/// Mixed constraints u_p + N - n_cap <= 0 and u_a + Ca - ca_cap <= 0.
struct MixedControlState {
  double n_cap = 0.5;
  double ca_cap = 0.62;
  bool operator==(const MixedControlState&) const = default;
};

using ConstraintRegime = std::variant<ControlBounds, ControlAndStateBounds, MixedControlState>;

enum class TerminalStateMode { kFreeWithTerminalCost, kPinned };

struct OcpSpec {
  PatientSpec patient;
  ObjectiveSpec objective;
  ConstraintRegime regime = ControlBounds{};
  double t_f = 168.0;
  TerminalStateMode terminal_mode = TerminalStateMode::kFreeWithTerminalCost;
};

template <typename Scalar>
Scalar running_cost(const StateVector<Scalar>& x, const ControlVector<Scalar>& u,
                    const ObjectiveSpec& obj) {
  Scalar cost(0.0);
  if (obj.kind == ObjectiveKind::kL1) {
    for (int i = 0; i < 4; ++i) cost += obj.state_weights(i) * x(i);
    for (int i = 0; i < 2; ++i) cost += obj.control_weights(i) * u(i);
  } else {
    for (int i = 0; i < 4; ++i) cost += obj.state_weights(i) * x(i) * x(i);
    for (int i = 0; i < 2; ++i) cost += obj.control_weights(i) * u(i) * u(i);
  }
  return cost;
}

template <typename Scalar>
StateVector<Scalar> running_cost_state_gradient(const StateVector<Scalar>& x,
                                                const ObjectiveSpec& obj) {
  StateVector<Scalar> grad;
  for (int i = 0; i < 4; ++i) {
    grad(i) = obj.kind == ObjectiveKind::kL1 ? Scalar(obj.state_weights(i))
                                             : Scalar(2.0 * obj.state_weights(i) * x(i));
  }
  return grad;
}

template <typename Scalar>
ControlVector<Scalar> running_cost_control_gradient(const ControlVector<Scalar>& u,
                                                    const ObjectiveSpec& obj) {
  ControlVector<Scalar> grad;
  for (int i = 0; i < 2; ++i) {
    grad(i) = obj.kind == ObjectiveKind::kL1 ? Scalar(obj.control_weights(i))
                                             : Scalar(2.0 * obj.control_weights(i) * u(i));
  }
  return grad;
}

template <typename Scalar>
Scalar terminal_cost(const StateVector<Scalar>& x, const ObjectiveSpec& obj) {
  switch (obj.terminal) {
    case TerminalCost::kLinearSum:
      return x.sum();
    case TerminalCost::kQuadraticSum:
      return x.squaredNorm();
    case TerminalCost::kNone:
      break;
  }
  return Scalar(0.0);
}

template <typename Scalar>
StateVector<Scalar> terminal_cost_gradient(const StateVector<Scalar>& x, const ObjectiveSpec& obj) {
  switch (obj.terminal) {
    case TerminalCost::kLinearSum:
      return StateVector<Scalar>::Constant(Scalar(1.0));
    case TerminalCost::kQuadraticSum:
      return 2.0 * x;
    case TerminalCost::kNone:
      break;
  }
  return StateVector<Scalar>::Constant(Scalar(0.0));
}

enum class ResidualKind { kBound, kPath, kMixed };

/// A path or mixed constraint value in the `<= 0` convention.
struct PathResidual {
  std::string name;
  ResidualKind kind;
  double value;
};

/// Box interval on a single state or control component.
struct BoxBound {
  std::string name;
  double lower;
  double upper;
  double value;
  bool violated(double tol = 0.0) const { return value < lower - tol || value > upper + tol; }
};

struct ConstraintEvaluation {
  std::vector<PathResidual> residuals;
  std::vector<BoxBound> boxes;
};

ConstraintEvaluation constraint_residuals(const State& x, const Control& u,
                                          const ConstraintRegime& regime);

inline constexpr double kUnbounded = std::numeric_limits<double>::infinity();

/// Box limits implied by a regime; unbounded entries are +infinity.
Eigen::Vector2d control_upper_bounds(const ConstraintRegime& regime);
Eigen::Vector4d state_upper_bounds(const ConstraintRegime& regime);

/// Built-in scenarios: L1-full, L1-half, L1-state, L2-mixed, L2-pure.
/// Throws std::out_of_range for an unknown id.
OcpSpec builtin_scenario(std::string_view id, const RawParams& reference);
std::vector<std::string> builtin_scenario_ids();

ObjectiveSpec l1_objective();
ObjectiveSpec l2_objective();

std::string regime_name(const ConstraintRegime& regime);

}  // namespace immuno

#endif  // IMMUNO_OCP_HPP
