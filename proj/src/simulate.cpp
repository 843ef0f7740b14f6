#include "immuno/simulate.hpp"

#include <boost/numeric/odeint.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace immuno {

namespace odeint = boost::numeric::odeint;

ControlSchedule::ControlSchedule(Eigen::VectorXd times, Eigen::Matrix2Xd values,
                                 Interpolation interpolation)
    : times_(std::move(times)), values_(std::move(values)), interpolation_(interpolation) {
  if (times_.size() < 2) throw std::invalid_argument("schedule needs at least two times");
  if (values_.cols() != times_.size()) {
    throw std::invalid_argument("schedule times and values differ in length");
  }
  if (times_(0) != 0.0) throw std::invalid_argument("schedule must start at t = 0");
  for (Eigen::Index k = 1; k < times_.size(); ++k) {
    if (!(times_(k) > times_(k - 1))) {
      throw std::invalid_argument("schedule times must be strictly increasing");
    }
  }
  if (!values_.allFinite() || (values_.array() < 0.0).any()) {
    throw std::invalid_argument("schedule doses must be finite and nonnegative");
  }
}

ControlSchedule ControlSchedule::zero(double t_f) {
  return ControlSchedule(Eigen::Vector2d(0.0, t_f), Eigen::Matrix2Xd::Zero(2, 2),
                         Interpolation::kPiecewiseConstant);
}

Control ControlSchedule::at(double t) const {
  const Eigen::Index last = times_.size() - 1;
  if (t <= times_(0)) return values_.col(0);
  if (t >= times_(last)) return values_.col(last);
  const auto* begin = times_.data();
  const auto* it = std::upper_bound(begin, begin + times_.size(), t);
  const Eigen::Index k = (it - begin) - 1;
  if (interpolation_ == Interpolation::kPiecewiseConstant) return values_.col(k);
  const double w = (t - times_(k)) / (times_(k + 1) - times_(k));
  return (1.0 - w) * values_.col(k) + w * values_.col(k + 1);
}

namespace {

using OdeState = std::array<double, 4>;

State to_state(const OdeState& s) { return State(s[0], s[1], s[2], s[3]); }
OdeState to_ode(const State& x) { return {x(0), x(1), x(2), x(3)}; }

// Times at which the reported trajectory is sampled: a uniform grid plus
// every breakpoint.
std::vector<double> reporting_times(const std::vector<double>& breakpoints, double t_f,
                                    double step) {
  std::vector<double> out = breakpoints;
  const auto count = static_cast<long>(std::floor(t_f / step + 1e-9));
  for (long k = 0; k <= count; ++k) out.push_back(std::min(t_f, static_cast<double>(k) * step));
  out.push_back(t_f);
  std::sort(out.begin(), out.end());
  const double merge = 1e-9 * std::max(1.0, t_f);
  std::vector<double> unique;
  for (double t : out) {
    if (unique.empty() || t - unique.back() > merge) unique.push_back(t);
  }
  unique.back() = t_f;
  return unique;
}

struct Sample {
  double t;
  State x;
};

}  // namespace

Trajectory integrate(const PatientSpec& patient, const ControlSchedule& schedule, double t_f,
                     const IntegrateOptions& options) {
  if (!(options.tol > 0) || !(options.abs_tol > 0)) {
    throw std::invalid_argument("integration tolerances must be positive");
  }
  if (!(t_f > 0)) throw std::invalid_argument("final time must be positive");
  if (schedule.final_time() < t_f * (1.0 - 1e-12)) {
    throw std::invalid_argument("schedule does not span [0, t_f]");
  }
  const ModelParams params(patient.raw);

  std::vector<double> breakpoints;
  for (Eigen::Index k = 0; k < schedule.times().size(); ++k) {
    if (schedule.times()(k) < t_f) breakpoints.push_back(schedule.times()(k));
  }
  breakpoints.push_back(t_f);
  const std::vector<double> report = reporting_times(breakpoints, t_f, options.report_step);

  Trajectory traj;
  std::vector<Sample> samples;
  samples.reserve(report.size());
  State x = patient.x0;
  samples.push_back({0.0, x});
  std::size_t next_report = 1;

  auto clamp = [&traj](State& s, double t) {
    for (int i = 0; i < 4; ++i) {
      if (s(i) < -1e-10) {
        traj.positivity_violations.push_back(t);
      } else if (s(i) < 0.0) {
        s(i) = 0.0;
      }
    }
  };

  for (std::size_t seg = 0; seg + 1 < breakpoints.size(); ++seg) {
    const double t0 = breakpoints[seg];
    const double t1 = breakpoints[seg + 1];
    const Control u0 = schedule.at(t0);
    const Control u1 = schedule.interpolation() == Interpolation::kPiecewiseLinear
                           ? schedule.at(t1)
                           : u0;
    auto system = [&](const OdeState& s, OdeState& ds, double t) {
      const double w = (t - t0) / (t1 - t0);
      const Control u = (1.0 - w) * u0 + w * u1;
      const State dx = rhs<double>(to_state(s), u, params);
      for (int i = 0; i < 4; ++i) ds[i] = dx(i);
    };

    auto stepper = odeint::make_dense_output(options.abs_tol, options.tol,
                                             odeint::runge_kutta_dopri5<OdeState>());
    stepper.initialize(to_ode(x), t0, std::min(0.01, t1 - t0));
    OdeState buffer{};
    try {
      while (stepper.current_time() < t1) {
        stepper.do_step(system);
        if (stepper.current_time_step() < options.min_step &&
            stepper.current_time() < t1) {
          throw StiffnessError("step size underflow at t = " +
                                   std::to_string(stepper.current_time()),
                               stepper.current_time());
        }
        while (next_report < report.size() && report[next_report] < t1 &&
               report[next_report] <= stepper.current_time()) {
          stepper.calc_state(report[next_report], buffer);
          State xs = to_state(buffer);
          clamp(xs, report[next_report]);
          samples.push_back({report[next_report], xs});
          ++next_report;
        }
      }
    } catch (const odeint::step_adjustment_error&) {
      throw StiffnessError("step size underflow at t = " + std::to_string(stepper.current_time()),
                           stepper.current_time());
    }
    stepper.calc_state(t1, buffer);
    x = to_state(buffer);
    clamp(x, t1);
    if (next_report < report.size() && std::abs(report[next_report] - t1) <= 1e-9 * t_f) {
      samples.push_back({report[next_report], x});
      ++next_report;
    }
  }

  const auto n = static_cast<Eigen::Index>(samples.size());
  traj.times.resize(n);
  traj.states.resize(4, n);
  traj.controls.resize(2, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    traj.times(k) = samples[k].t;
    traj.states.col(k) = samples[k].x;
    traj.controls.col(k) = schedule.at(samples[k].t);
  }
  return traj;
}

std::string to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::kHealthy:
      return "Healthy";
    case Outcome::kAsepticDeath:
      return "AsepticDeath";
    case Outcome::kSepticDeath:
      return "SepticDeath";
    case Outcome::kIndeterminate:
      return "Indeterminate";
  }
  return "Indeterminate";
}

Outcome classify_outcome(const State& x, const OutcomeThresholds& th) {
  const bool n_elevated = x(kN) > th.eps_low;
  const bool d_elevated = x(kD) > th.eps_low;
  const bool ca_elevated = x(kCa) > th.ca_background + th.eps_ca;
  if (x(kP) < th.eps_low && x(kN) < th.eps_low && x(kD) < th.eps_low &&
      std::abs(x(kCa) - th.ca_background) < th.eps_ca) {
    return Outcome::kHealthy;
  }
  if (x(kP) > th.eps_sep && d_elevated) return Outcome::kSepticDeath;
  if (x(kP) < th.eps_low && n_elevated && d_elevated && ca_elevated) {
    return Outcome::kAsepticDeath;
  }
  return Outcome::kIndeterminate;
}

Outcome classify_outcome(const Trajectory& trajectory, const OutcomeThresholds& thresholds) {
  if (trajectory.size() == 0) throw std::invalid_argument("empty trajectory");
  return classify_outcome(trajectory.final_state(), thresholds);
}

ContinuationResult continue_to_equilibrium(const PatientSpec& patient, const Trajectory& trajectory,
                                           double extra_hours, const IntegrateOptions& options) {
  if (trajectory.size() == 0) throw std::invalid_argument("empty trajectory");
  PatientSpec continued = patient;
  continued.x0 = trajectory.final_state();
  IntegrateOptions opts = options;
  opts.report_step = std::max(options.report_step, extra_hours / 1000.0);
  Trajectory tail = integrate(continued, ControlSchedule::zero(extra_hours), extra_hours, opts);
  tail.times.array() += trajectory.times(trajectory.size() - 1);

  OutcomeThresholds thresholds;
  thresholds.ca_background = ModelParams(patient.raw).healthy_ca();
  const Outcome outcome = classify_outcome(tail, thresholds);
  return {std::move(tail), outcome};
}

void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory) {
  const auto old = out.precision(12);
  out << "t,P,N,D,Ca,up,ua\n";
  for (Eigen::Index k = 0; k < trajectory.size(); ++k) {
    out << trajectory.times(k);
    for (int i = 0; i < 4; ++i) out << ',' << trajectory.states(i, k);
    out << ',' << trajectory.controls(0, k) << ',' << trajectory.controls(1, k) << '\n';
  }
  out.precision(old);
}

}  // namespace immuno
