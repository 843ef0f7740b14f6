// Forward simulation of the inflammation model under a control schedule and
// classification of the response outcome.
#ifndef IMMUNO_SIMULATE_HPP
#define IMMUNO_SIMULATE_HPP

#include "immuno/model.hpp"

#include <Eigen/Core>

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace immuno {

enum class Interpolation { kPiecewiseConstant, kPiecewiseLinear };

/// Time-indexed dose schedule on [0, t_f]. For piecewise-constant schedules
/// the value at times[k] holds on [times[k], times[k+1]).
class ControlSchedule {
 public:
  /// Throws std::invalid_argument unless times start at 0, increase
  /// strictly and all doses are nonnegative.
  ControlSchedule(Eigen::VectorXd times, Eigen::Matrix2Xd values, Interpolation interpolation);

  static ControlSchedule zero(double t_f);

  Control at(double t) const;
  double final_time() const { return times_(times_.size() - 1); }
  const Eigen::VectorXd& times() const { return times_; }
  const Eigen::Matrix2Xd& values() const { return values_; }
  Interpolation interpolation() const { return interpolation_; }

 private:
  Eigen::VectorXd times_;
  Eigen::Matrix2Xd values_;
  Interpolation interpolation_;
};

struct Trajectory {
  Eigen::VectorXd times;
  Eigen::Matrix4Xd states;
  Eigen::Matrix2Xd controls;
  /// Hermite-Simpson midpoint controls (one column per interval), empty otherwise.
  Eigen::Matrix2Xd midpoint_controls;
  /// Times at which a state component fell below -1e-10.
  std::vector<double> positivity_violations;

  Eigen::Index size() const { return times.size(); }
  State state(Eigen::Index k) const { return states.col(k); }
  Control control(Eigen::Index k) const { return controls.col(k); }
  State final_state() const { return states.col(states.cols() - 1); }
};

class StiffnessError : public std::runtime_error {
 public:
  StiffnessError(const std::string& what, double time)
      : std::runtime_error(what), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

struct IntegrateOptions {
  /// Relative tolerance.
  double tol = 1e-8;
  /// Absolute tolerance. Kept far below the positivity threshold so that
  /// components decaying to zero are not allowed to undershoot it.
  double abs_tol = 1e-13;
  /// Reporting step; breakpoints of the schedule are always reported too.
  double report_step = 0.168;
  double min_step = 1e-12;
};

/// Adaptive Dormand-Prince 5(4) integration restarted at every schedule
/// breakpoint. Throws StiffnessError on step-size underflow.
Trajectory integrate(const PatientSpec& patient, const ControlSchedule& schedule, double t_f,
                     const IntegrateOptions& options = {});

enum class Outcome { kHealthy, kAsepticDeath, kSepticDeath, kIndeterminate };

std::string to_string(Outcome outcome);

struct OutcomeThresholds {
  double eps_low = 1e-3;
  double eps_sep = 0.05;
  double eps_ca = 0.05;
  double ca_background = 0.125;
};

Outcome classify_outcome(const State& endpoint, const OutcomeThresholds& thresholds = {});
Outcome classify_outcome(const Trajectory& trajectory, const OutcomeThresholds& thresholds = {});

struct ContinuationResult {
  Trajectory trajectory;
  Outcome outcome;
};

/// Integrates on from the final state with zero control for extra_hours and
/// classifies the extended endpoint against the patient's healthy level.
ContinuationResult continue_to_equilibrium(const PatientSpec& patient, const Trajectory& trajectory,
                                           double extra_hours = 500.0,
                                           const IntegrateOptions& options = {});

/// CSV with header t,P,N,D,Ca,up,ua and 12 significant digits.
void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory);

}  // namespace immuno

#endif  // IMMUNO_SIMULATE_HPP
