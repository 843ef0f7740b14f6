#include "immuno/ocp.hpp"

#include <array>
#include <stdexcept>

namespace immuno {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

ConstraintEvaluation constraint_residuals(const State& x, const Control& u,
                                          const ConstraintRegime& regime) {
  ConstraintEvaluation eval;
  const Eigen::Vector2d u_max = control_upper_bounds(regime);
  eval.boxes.push_back({"up", 0.0, u_max(kUp), u(kUp)});
  eval.boxes.push_back({"ua", 0.0, u_max(kUa), u(kUa)});

  std::visit(Overloaded{
                 [](const ControlBounds&) {},
                 [&](const ControlAndStateBounds& r) {
                   eval.residuals.push_back({"S1", ResidualKind::kPath, x(kN) - r.n_max});
                   eval.residuals.push_back({"S2", ResidualKind::kPath, x(kCa) - r.ca_max});
                 },
                 [&](const MixedControlState& r) {
                   eval.residuals.push_back(
                       {"C1", ResidualKind::kMixed, u(kUp) + x(kN) - r.n_cap});
                   eval.residuals.push_back(
                       {"C2", ResidualKind::kMixed, u(kUa) + x(kCa) - r.ca_cap});
                 },
             },
             regime);
  return eval;
}

Eigen::Vector2d control_upper_bounds(const ConstraintRegime& regime) {
  return std::visit(
      Overloaded{
          [](const ControlBounds& r) { return Eigen::Vector2d(r.up_max, r.ua_max); },
          [](const ControlAndStateBounds& r) { return Eigen::Vector2d(r.up_max, r.ua_max); },
          [](const MixedControlState&) { return Eigen::Vector2d(kUnbounded, kUnbounded); },
      },
      regime);
}

Eigen::Vector4d state_upper_bounds(const ConstraintRegime& regime) {
  Eigen::Vector4d upper = Eigen::Vector4d::Constant(kUnbounded);
  if (const auto* r = std::get_if<ControlAndStateBounds>(&regime)) {
    upper(kN) = r->n_max;
    upper(kCa) = r->ca_max;
  }
  return upper;
}

ObjectiveSpec l1_objective() {
  return {ObjectiveKind::kL1, Eigen::Vector4d(100, 5, 30, 10), Eigen::Vector2d(1, 50),
          TerminalCost::kLinearSum};
}

ObjectiveSpec l2_objective() {
  return {ObjectiveKind::kL2, Eigen::Vector4d(10, 1, 10, 10), Eigen::Vector2d(1, 20),
          TerminalCost::kQuadraticSum};
}

std::vector<std::string> builtin_scenario_ids() {
  return {"L1-full", "L1-half", "L1-state", "L2-mixed", "L2-pure"};
}

OcpSpec builtin_scenario(std::string_view id, const RawParams& reference) {
  OcpSpec spec;
  spec.patient = builtin_patient("patient1", reference);
  if (id == "L1-full") {
    spec.objective = l1_objective();
    spec.regime = ControlBounds{0.5, 0.62};
  } else if (id == "L1-half") {
    spec.objective = l1_objective();
    spec.regime = ControlBounds{0.25, 0.31};
  } else if (id == "L1-state") {
    spec.objective = l1_objective();
    spec.regime = ControlAndStateBounds{0.5, 0.62, 0.5, 0.62};
  } else if (id == "L2-mixed") {
    spec.objective = l2_objective();
    spec.regime = MixedControlState{0.5, 0.62};
  } else if (id == "L2-pure") {
    spec.objective = l2_objective();
    spec.regime = ControlAndStateBounds{0.5, 0.62, 0.5, 0.62};
  } else {
    throw std::out_of_range("unknown scenario '" + std::string(id) + "'");
  }
  return spec;
}

std::string regime_name(const ConstraintRegime& regime) {
  return std::visit(Overloaded{
                        [](const ControlBounds&) { return std::string("control-bounds"); },
                        [](const ControlAndStateBounds&) {
                          return std::string("control-and-state-bounds");
                        },
                        [](const MixedControlState&) { return std::string("mixed"); },
                    },
                    regime);
}

}  // namespace immuno
