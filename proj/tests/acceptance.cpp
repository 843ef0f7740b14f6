// Acceptance suite: one PASS/FAIL line per criterion.
//
// Criteria 1-9 and 16 run the shipped scenario configs through immunoctl and
// read the summaries; they depend on the reference parameter file. Criteria
// 10-15 are property checks run in-process.
//
// --expect-red lists criteria known to fail. The exit status is 0 exactly
// when the failing set equals the declared set, so a regression and an
// unexpected fix both surface.
#include "immuno/collocation.hpp"
#include "immuno/nlp.hpp"
#include "immuno/pmp.hpp"
#include "immuno/simulate.hpp"

#include "oracles.hpp"
#include "toy_problems.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace immuno;

struct Verdict {
  bool pass = false;
  std::string detail;
};

class Detail {
 public:
  Detail() { s_ << std::setprecision(6); }
  template <class T>
  Detail& operator<<(const T& v) {
    s_ << v;
    return *this;
  }
  std::string str() const { return s_.str(); }

 private:
  std::ostringstream s_;
};

bool within(double value, double target, double tol) { return std::abs(value - target) <= tol; }

// ---------------------------------------------------------------------------
// Scenario runs through the CLI.

struct Run {
  int code = -1;
  double seconds = 0;
  json summary;
  std::string error;
  bool ok() const { return error.empty() && summary.value("status", "") == "success"; }
};

class Runner {
 public:
  explicit Runner(fs::path work) : work_(std::move(work)) { fs::create_directories(work_); }

  const Run& get(const std::string& config, const std::string& extra = "") {
    const std::string key = config + extra;
    if (auto it = runs_.find(key); it != runs_.end()) return it->second;
    Run r;
    const fs::path out = work_ / (fs::path(config).stem().string() + (extra.empty() ? "" : "_approx"));
    fs::remove_all(out);
    const std::string cmd = std::string("\"") + IMMUNOCTL_PATH + "\" run --config \"" + IMMUNO_CONFIG_DIR + "/" + config +
                            "\" --out \"" + out.string() + "\" " + extra + " > \"" + out.string() + ".log\" 2>&1";
    const auto t0 = std::chrono::steady_clock::now();
    const int status = std::system(cmd.c_str());
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out / "summary.json");
    if (!in) {
      r.error = "no summary (exit " + std::to_string(r.code) + ", see " + out.string() + ".log)";
    } else {
      try {
        r.summary = json::parse(in);
      } catch (const json::exception& e) {
        r.error = std::string("unreadable summary: ") + e.what();
      }
    }
    if (r.error.empty() && r.code != 0 && r.code != 4) r.error = "exit " + std::to_string(r.code);
    return runs_.emplace(key, std::move(r)).first->second;
  }

 private:
  fs::path work_;
  std::map<std::string, Run> runs_;
};

std::optional<double> event(const json& s, const std::string& name) {
  for (const auto& e : s.value("events", json::array())) {
    if (e["name"] == name) return e["value"].get<double>();
  }
  return std::nullopt;
}

std::optional<std::pair<double, double>> interval(const json& list, const std::string& name) {
  for (const auto& a : list) {
    if (a["name"] == name) return std::pair{a["start"]["value"].get<double>(), a["end"]["value"].get<double>()};
  }
  return std::nullopt;
}

struct Finals {
  double p, n, d, ca;
};

bool check_finals(const json& s, const Finals& target, Detail& d) {
  const json& f = s["final_state"];
  const double v[4] = {f["P"]["value"], f["N"]["value"], f["D"]["value"], f["Ca"]["value"]};
  const double t[4] = {target.p, target.n, target.d, target.ca};
  bool ok = true;
  for (int i = 0; i < 4; ++i) ok = ok && within(v[i], t[i], 0.01);
  d << "; finals (" << v[0] << ", " << v[1] << ", " << v[2] << ", " << v[3] << ") vs (" << t[0] << ", " << t[1] << ", "
    << t[2] << ", " << t[3] << ") +-0.01";
  return ok;
}

bool check_objective(const json& s, double target, Detail& d) {
  const double j = s["J"]["value"];
  const double rel = (j - target) / target;
  d << "J " << j << " vs " << target << " (" << std::showpos << 100 * rel << std::noshowpos << "%, limit 3%)";
  return std::abs(rel) <= 0.03;
}

bool check_interval(const std::optional<std::pair<double, double>>& got, double a, double b, double tol,
                    const std::string& label, Detail& d) {
  if (!got) {
    d << "; " << label << " not found";
    return false;
  }
  d << "; " << label << " (" << got->first << ", " << got->second << ") vs (" << a << ", " << b << ") +-" << tol;
  return within(got->first, a, tol) && within(got->second, b, tol);
}

Verdict not_run(const Run& r) { return {false, r.error.empty() ? "run status " + r.summary.value("status", "?") : r.error}; }

Verdict open_loop(Runner& runner) {
  const Run& a = runner.get("open-loop-patient1.json");
  const Run& b = runner.get("open-loop-patient2.json");
  if (!a.ok()) return not_run(a);
  if (!b.ok()) return not_run(b);
  const std::string oa = a.summary["outcome"], ob = b.summary["outcome"];
  return {oa == "SepticDeath" && ob == "AsepticDeath", "patient1 " + oa + ", patient2 " + ob};
}

// L1 scenarios: objective, singular interval of u_a, finals. Under the
// Ca state bound the u_a singular arc is replaced by a boundary arc, whose
// active interval stands in for it when no singular arc is detected.
Verdict l1_scenario(Runner& runner, const std::string& config, const std::string& approx, double j, double a, double b,
                    const Finals& finals) {
  const Run& r = runner.get(config, approx);
  if (!r.ok()) return not_run(r);
  Detail d;
  bool ok = check_objective(r.summary, j, d);
  auto arc = interval(r.summary["singular_arcs"], "ua");
  std::string label = "singular u_a arc";
  if (!arc) {
    arc = interval(r.summary["active_intervals"], "lambda_sa");
    if (arc) label = "Ca boundary arc";
  }
  ok = check_interval(arc, a, b, 0.5, label, d) && ok;
  ok = check_finals(r.summary, finals, d) && ok;
  d << "; " << r.seconds << " s";
  return {ok, d.str()};
}

Verdict l2_mixed(Runner& runner) {
  const Run& r = runner.get("L2-mixed.json");
  if (!r.ok()) return not_run(r);
  Detail d;
  bool ok = check_objective(r.summary, 602.67, d);
  const auto up_end = event(r.summary, "up_support_end");
  const auto ua_end = event(r.summary, "ua_support_end");
  d << "; u_p support end " << up_end.value_or(NAN) << " vs 1.009 +-0.3";
  d << "; u_a support end " << ua_end.value_or(NAN) << " vs 19 +-1";
  ok = up_end && within(*up_end, 1.009, 0.3) && ok;
  ok = ua_end && within(*ua_end, 19.0, 1.0) && ok;
  ok = check_finals(r.summary, {0, 0.0082, 0.0376, 0.3216}, d) && ok;
  d << "; " << r.seconds << " s";
  return {ok, d.str()};
}

// u_a phases under the pure state bound: off, on its cap, on the Ca boundary
// (boundary control), interior, off. The breakpoints are the support start,
// the end of the cap, the end of the boundary arc and the support end.
Verdict l2_pure(Runner& runner) {
  const Run& r = runner.get("L2-pure.json");
  if (!r.ok()) return not_run(r);
  Detail d;
  bool ok = check_objective(r.summary, 513.77, d);
  const auto active = interval(r.summary["active_intervals"], "lambda_sa");
  ok = check_interval(active, 2.186, 17.32, 0.5, "Ca active interval", d) && ok;
  const std::optional<double> got[4] = {event(r.summary, "ua_support_start"), event(r.summary, "ua_cap_end"),
                                        active ? std::optional(active->second) : std::nullopt,
                                        event(r.summary, "ua_support_end")};
  const double want[4] = {1.009, 2.186, 17.32, 17.66};
  d << "; u_a breakpoints (";
  for (int i = 0; i < 4; ++i) {
    d << (i ? ", " : "") << got[i].value_or(NAN);
    ok = got[i] && within(*got[i], want[i], 0.5) && ok;
  }
  d << ") vs (1.009, 2.186, 17.32, 17.66) +-0.5";
  ok = check_finals(r.summary, {0, 0.0071, 0.0306, 0.3065}, d) && ok;
  d << "; " << r.seconds << " s";
  return {ok, d.str()};
}

const std::vector<std::string> kScenarios = {"L1-full.json", "L1-half.json", "L1-state.json", "L2-mixed.json",
                                             "L2-pure.json"};

// Runs shared with criteria 2-3 carry the zero approximation.
std::string extra_for(const std::string& config) {
  return config == "L1-full.json" || config == "L1-half.json" ? "--approx zero" : "";
}

Verdict legendre_clebsch(Runner& runner) {
  Detail d;
  bool ok = true;
  int arcs = 0;
  for (const std::string c : {"L1-full.json", "L1-half.json", "L1-state.json"}) {
    const Run& r = runner.get(c, extra_for(c));
    if (!r.ok()) return not_run(r);
    for (const auto& a : r.summary["singular_arcs"]) {
      const double m = a["legendre_clebsch_margin"];
      ++arcs;
      ok = ok && m > 0;
      d << (arcs > 1 ? "; " : "") << fs::path(c).stem().string() << ' ' << a["name"].get<std::string>() << " arc min(-theta) "
        << m;
    }
  }
  if (arcs == 0) return {false, "no singular arc detected"};
  return {ok, d.str()};
}

Verdict approximation(Runner& runner) {
  Detail d;
  bool ok = true;
  for (const std::string c : {"L1-full.json", "L1-half.json"}) {
    const Run& r = runner.get(c, extra_for(c));
    if (!r.ok()) return not_run(r);
    const json& a = r.summary.value("approximation", json::object());
    if (!a.value("applied", false)) return {false, fs::path(c).stem().string() + ": approximation not applied"};
    const std::string outcome = a["outcome"];
    const double approx = a["max_damage"], optimal = a["max_damage_optimal"];
    ok = ok && outcome == "Healthy" && approx > optimal;
    d << (c == "L1-full.json" ? "" : "; ") << fs::path(c).stem().string() << ' ' << outcome << ", max D " << approx
      << (approx > optimal ? " > " : " <= ") << optimal << " optimal";
  }
  return {ok, d.str()};
}

Verdict bolus_order(Runner& runner) {
  Detail d;
  bool ok = true;
  int counted = 0;
  for (const auto& c : kScenarios) {
    const Run& r = runner.get(c, extra_for(c));
    if (!r.ok()) continue;
    ++counted;
    const auto up = event(r.summary, "up_support_start"), ua = event(r.summary, "ua_support_start");
    ok = ok && up && ua && *up < *ua;
    d << (counted > 1 ? "; " : "") << fs::path(c).stem().string() << " u_p " << up.value_or(NAN) << " u_a "
      << ua.value_or(NAN);
  }
  if (counted == 0) return {false, "no successful scenario"};
  return {ok, d.str()};
}

Verdict complementarity(Runner& runner) {
  Detail d;
  bool ok = true;
  for (const auto& c : kScenarios) {
    const Run& r = runner.get(c, extra_for(c));
    if (!r.ok()) return not_run(r);
    double worst = r.summary.value("bound_complementarity", NAN);
    if (r.summary.contains("complementarity")) worst = std::max(worst, r.summary["complementarity"].get<double>());
    ok = ok && worst < 1e-4;
    d << (c == kScenarios.front() ? "" : "; ") << fs::path(c).stem().string() << ' ' << worst;
  }
  d << " (limit 1e-4)";
  return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// In-process property checks.

Verdict rearrangement() {
  std::mt19937 rng(20240101);
  const RawParams base = reference_params();
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const ModelParams params(testing::random_params(rng, base));
    const State x = testing::random_state(rng);
    const Control u = testing::random_control(rng);
    const State a = rhs<double>(x, u, params);
    const State b = rhs_raw<double>(x, u, params.raw());
    for (int i = 0; i < 4; ++i) worst = std::max(worst, std::abs(a(i) - b(i)) / std::max(1e-12, std::abs(b(i))));
  }
  return {worst < 1e-10, (Detail() << "max relative difference " << worst << " over 1000 points (limit 1e-10)").str()};
}

Verdict gradients() {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> lam(-50.0, 50.0);
  const RawParams base = reference_params();
  double jac_err = 0, adj_err = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const ModelParams params(testing::random_params(rng, base));
    const State x = testing::random_state(rng) + State::Constant(0.01);
    const Control u = testing::random_control(rng);
    const pmp::AdjointState lambda(lam(rng), lam(rng), lam(rng), lam(rng));
    const ObjectiveSpec obj = trial % 2 ? l1_objective() : l2_objective();
    const Eigen::Matrix4d jac = drift_jacobian<double>(x, params);
    const Eigen::Vector4d grad = pmp::hamiltonian_state_gradient(lambda, x, u, obj, params);
    for (int j = 0; j < 4; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(x(j)));
      State xp = x, xm = x;
      xp(j) += h;
      xm(j) -= h;
      const State fd = (drift<double>(xp, params) - drift<double>(xm, params)) / (2 * h);
      for (int i = 0; i < 4; ++i) jac_err = std::max(jac_err, std::abs(jac(i, j) - fd(i)) / std::max(1.0, std::abs(fd(i))));
      const double hfd = (pmp::hamiltonian(lambda, xp, u, obj, params) - pmp::hamiltonian(lambda, xm, u, obj, params)) / (2 * h);
      adj_err = std::max(adj_err, std::abs(grad(j) - hfd) / std::max(1.0, std::abs(hfd)));
    }
  }
  return {jac_err < 1e-5 && adj_err < 1e-5,
          (Detail() << "Jacobian " << jac_err << ", adjoint gradient " << adj_err << " over 200 points (limit 1e-5)").str()};
}

Verdict positivity() {
  std::mt19937 rng(12345);
  std::uniform_real_distribution<double> dose(0.0, 1.0), x0(0.0, 2.0), unit(0.0, 1.0);
  const RawParams base = reference_params();
  double min_state = 0;
  std::size_t violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const PatientSpec p{"random", testing::random_params(rng, base), State(x0(rng), x0(rng), x0(rng), x0(rng))};
    const int pieces = 1 + trial % 8;
    Eigen::VectorXd times(pieces + 1);
    Eigen::Matrix2Xd values(2, pieces + 1);
    times(0) = 0;
    for (int i = 1; i <= pieces; ++i) times(i) = times(i - 1) + 1.0 + 40.0 * unit(rng);
    for (int i = 0; i <= pieces; ++i) values.col(i) = Control(dose(rng), dose(rng)) * (unit(rng) < 0.3 ? 0.0 : 1.0);
    const auto interp = trial % 2 ? Interpolation::kPiecewiseLinear : Interpolation::kPiecewiseConstant;
    const Trajectory t = integrate(p, ControlSchedule(times, values, interp), times(pieces));
    violations += t.positivity_violations.size();
    min_state = std::min(min_state, t.states.minCoeff());
  }
  return {violations == 0 && min_state >= -1e-10,
          (Detail() << "min state " << min_state << ", " << violations << " violation(s) over 100 runs (limit -1e-10)").str()};
}

Verdict nlp_oracles() {
  const testing::ScalarLqr lqr;
  const auto solved = testing::solve_lqr(lqr, 101, collocation::Scheme::kHermiteSimpson);
  if (!solved.solution.ok()) return {false, "LQR solve failed: " + solved.solution.message};
  const auto ref = testing::lqr_reference(lqr, solved.problem.grid().times());
  const double lqr_err = std::abs(solved.solution.objective - ref.value);

  nlp::SolverOptions o;
  o.tol = 1e-10;
  double kkt = 0;
  const std::pair<testing::DenseProblem, Eigen::VectorXd> toys[] = {
      {testing::toy_inequality(), Eigen::VectorXd::Constant(1, -3.0)},
      {testing::toy_equality(), Eigen::Vector2d(3.0, -1.0)},
      {testing::toy_bound(), Eigen::VectorXd::Constant(1, 0.0)},
      {testing::hs071(), Eigen::Vector4d(1, 5, 5, 1)}};
  bool dual = true;
  for (const auto& [problem, start] : toys) {
    const nlp::Solution s = nlp::solve(problem, start, o);
    if (!s.ok()) return {false, "toy solve failed: " + s.message};
    const nlp::KktReport k = nlp::kkt_check(problem, s);
    kkt = std::max({kkt, k.stationarity, k.primal_feasibility, k.complementarity});
    dual = dual && k.dual_feasible;
  }
  return {lqr_err < 1e-6 && kkt < 1e-8 && dual,
          (Detail() << "LQR |J - V| " << lqr_err << " (limit 1e-6); toy KKT " << kkt << " (limit 1e-8)").str()};
}

std::vector<double> lqr_orders(collocation::Scheme scheme) {
  const testing::ScalarLqr lqr;
  std::vector<double> errors;
  for (Eigen::Index n : {21, 41, 81, 161}) {
    const auto s = testing::solve_lqr(lqr, n, scheme);
    if (!s.solution.ok()) return {};
    const auto ref = testing::lqr_reference(lqr, s.problem.grid().times());
    const auto x = s.problem.states(s.solution.z);
    double e = 0;
    for (Eigen::Index k = 0; k < n; ++k) e = std::max(e, std::abs(x(0, k) - ref.state[static_cast<std::size_t>(k)]));
    errors.push_back(e);
  }
  return testing::convergence_orders(errors);
}

Verdict collocation_order() {
  const auto tr = lqr_orders(collocation::Scheme::kTrapezoid);
  const auto hs = lqr_orders(collocation::Scheme::kHermiteSimpson);
  if (tr.empty() || hs.empty()) return {false, "LQR solve failed"};
  const double tr_min = *std::min_element(tr.begin(), tr.end());
  const double hs_min = *std::min_element(hs.begin(), hs.end());
  return {tr_min >= 1.9 && hs_min >= 3.5,
          (Detail() << "min state order trapezoid " << tr_min << " (limit 1.9), Hermite-Simpson " << hs_min << " (limit 3.5)")
              .str()};
}

Verdict duality() {
  const testing::ScalarLqr lqr;
  Detail d;
  bool ok = true;
  for (auto scheme : {collocation::Scheme::kTrapezoid, collocation::Scheme::kHermiteSimpson}) {
    const auto s = testing::solve_lqr(lqr, 161, scheme);
    if (!s.solution.ok()) return {false, "LQR solve failed"};
    const auto ref = testing::lqr_reference(lqr, s.problem.grid().times());
    const auto lambda = collocation::adjoint_from_defects(s.solution, s.problem);
    double worst = 0;
    for (Eigen::Index k = 0; k < lambda.cols(); ++k) {
      worst = std::max(worst, std::abs(lambda(0, k) - ref.costate[static_cast<std::size_t>(k)]));
    }
    ok = ok && worst < 1e-3;
    d << (scheme == collocation::Scheme::kTrapezoid ? "" : ", ") << collocation::to_string(scheme) << ' ' << worst;
  }
  d << " max |lambda - 2Px| (limit 1e-3)";
  return {ok, d.str()};
}

std::set<int> parse_list(const std::string& text) {
  std::set<int> out;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    if (!item.empty()) out.insert(std::stoi(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string expect_red, only;
  std::string work = (fs::temp_directory_path() / "immuno_acceptance").string();
  app.add_option("--expect-red", expect_red, "Comma-separated criteria known to fail");
  app.add_option("--only", only, "Comma-separated criteria to run");
  app.add_option("--work", work, "Directory for scenario runs");
  CLI11_PARSE(app, argc, argv);

  std::set<int> expected, selected;
  try {
    expected = parse_list(expect_red);
    selected = parse_list(only);
  } catch (const std::exception&) {
    std::cerr << "criterion lists must be comma-separated integers\n";
    return 2;
  }

  bool params_ok = true;
  std::string params_error;
  try {
    reference_params();
  } catch (const std::exception& e) {
    params_ok = false;
    params_error = e.what();
  }

  Runner runner(work);
  const std::vector<std::pair<int, std::function<Verdict()>>> criteria = {
      {1, [&] { return open_loop(runner); }},
      {2, [&] { return l1_scenario(runner, "L1-full.json", "--approx zero", 2104.78, 2.354, 23.88, {0, 0.0061, 0.025, 0.29}); }},
      {3, [&] { return l1_scenario(runner, "L1-half.json", "--approx zero", 2469.904, 3.363, 21.02, {0, 0.0074, 0.0326, 0.311}); }},
      {4, [&] { return l1_scenario(runner, "L1-state.json", "", 2393.339, 2.186, 4.036, {0, 0.0073, 0.0318, 0.3093}); }},
      {5, [&] { return l2_mixed(runner); }},
      {6, [&] { return l2_pure(runner); }},
      {7, [&] { return legendre_clebsch(runner); }},
      {8, [&] { return approximation(runner); }},
      {9, [&] { return bolus_order(runner); }},
      {10, rearrangement},
      {11, gradients},
      {12, positivity},
      {13, nlp_oracles},
      {14, collocation_order},
      {15, duality},
      {16, [&] { return complementarity(runner); }},
  };
  const std::set<int> needs_params = {1, 2, 3, 4, 5, 6, 7, 8, 9, 16};

  std::set<int> failed;
  for (const auto& [id, check] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    Verdict o;
    if (needs_params.count(id) && !params_ok) {
      o = {false, "reference parameter file unavailable: " + params_error};
    } else {
      try {
        o = check();
      } catch (const std::exception& e) {
        o = {false, std::string("error: ") + e.what()};
      }
    }
    if (!o.pass) failed.insert(id);
    std::cout << (o.pass ? "PASS " : "FAIL ") << std::setw(2) << id << "  " << o.detail << std::endl;
  }

  std::set<int> declared;
  for (int id : expected) {
    if (selected.empty() || selected.count(id)) declared.insert(id);
  }
  const auto join = [](const std::set<int>& s) {
    std::string out;
    for (int id : s) out += (out.empty() ? "" : ",") + std::to_string(id);
    return out.empty() ? std::string("none") : out;
  };
  std::cout << "failing: " << join(failed) << "; declared known-red: " << join(declared) << "; runs in " << work << '\n';
  if (failed != declared) {
    std::cout << "failing set differs from the declared known-red set\n";
    return 1;
  }
  return 0;
}
