#include "immuno/config.hpp"

#include <gtest/gtest.h>

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace immuno::config {
namespace {

using nlohmann::json;

const RawParams& ref() {
  static const RawParams r = reference_params();
  return r;
}

json document(std::string_view id) { return json::parse(serialize(scenario_config(id, ref()), ref())); }

bool mentions(const std::vector<Violation>& v, std::string_view field) {
  return std::any_of(v.begin(), v.end(), [&](const Violation& x) { return x.field == field; });
}

TEST(Config, SerializeRoundTrip) {
  for (const auto& id : builtin_scenario_ids()) {
    const RunConfig c = scenario_config(id, ref());
    const std::string text = serialize(c, ref());
    EXPECT_TRUE(validate(text, ref()).empty()) << id;
    EXPECT_EQ(parse(text, ref()), c) << id;
  }
}

TEST(Config, RoundTripKeepsPatientOverrides) {
  RunConfig c = scenario_config("L2-pure", ref());
  c.ocp.patient.raw.k_pg *= 1.5;
  c.ocp.patient.x0(kD) = 0.25;
  c.grid_n = 301;
  c.scheme = collocation::Scheme::kTrapezoid;
  c.tol = 1e-8;
  EXPECT_EQ(parse(serialize(c, ref()), ref()), c);
}

TEST(Config, UnknownKeysAreViolations) {
  json d = document("L1-full");
  d["grid"] = 10;
  d["regime"]["caps"]["up_maximum"] = 0.5;
  const auto v = validate(d.dump(), ref());
  EXPECT_TRUE(mentions(v, "grid"));
  EXPECT_TRUE(mentions(v, "regime.caps.up_maximum"));
}

TEST(Config, ReportsEveryViolation) {
  json d = document("L1-full");
  d["t_f"] = "one week";
  d["grid_n"] = 1;
  d["objective"]["a"][2] = -1.0;
  d["objective"]["b"] = json::array({1.0});
  d["scheme"] = "rk4";
  d["solver"]["tol"] = 0.0;
  const auto v = validate(d.dump(), ref());
  for (const char* f : {"t_f", "grid_n", "objective.a[2]", "objective.b", "scheme", "solver.tol"}) {
    EXPECT_TRUE(mentions(v, f)) << f;
  }
  try {
    parse(d.dump(), ref(), "doc.json");
    FAIL() << "parse accepted an invalid document";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.violations().size(), v.size());
    EXPECT_EQ(e.source(), "doc.json");
  }
}

TEST(Config, RegimeTypeAndCaps) {
  json d = document("L1-state");
  d["regime"]["type"] = "box";
  EXPECT_TRUE(mentions(validate(d.dump(), ref()), "regime.type"));
  d = document("L1-state");
  d["regime"]["caps"].erase("n_max");
  EXPECT_TRUE(mentions(validate(d.dump(), ref()), "regime.caps.n_max"));
  d = document("L2-mixed");
  d["regime"]["caps"]["n_cap"] = -0.5;
  EXPECT_TRUE(mentions(validate(d.dump(), ref()), "regime.caps.n_cap"));
}

TEST(Config, PatientForms) {
  json d = document("L1-full");
  d["patient"] = "patient9";
  EXPECT_TRUE(mentions(validate(d.dump(), ref()), "patient"));
  d["patient"] = {{"id", "patient2"}, {"x0", {0.1, 0, 0, 0.2}}, {"params", {{"k_pg", 0.4}}}};
  const RunConfig c = parse(d.dump(), ref());
  EXPECT_EQ(c.ocp.patient.id, "patient2");
  EXPECT_EQ(c.ocp.patient.x0, State(0.1, 0, 0, 0.2));
  EXPECT_EQ(c.ocp.patient.raw.k_pg, 0.4);
  d["patient"]["params"]["k_xx"] = 1.0;
  d["patient"]["x0"] = {0.1, -1, 0, 0.2};
  const auto v = validate(d.dump(), ref());
  EXPECT_TRUE(mentions(v, "patient.params.k_xx"));
  EXPECT_TRUE(mentions(v, "patient.x0[1]"));
}

TEST(Config, SyntaxErrorCarriesLine) {
  const auto v = validate("{\n  \"name\": \"x\",\n  \"t_f\": ,\n}", ref());
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].line, 3);
  EXPECT_NE(to_string(v[0]).find("3"), std::string::npos);
}

TEST(Config, ViolationLinesPointIntoDocument) {
  json d = document("L1-full");
  d["grid_n"] = 0;
  const auto v = validate(d.dump(2), ref());
  ASSERT_TRUE(mentions(v, "grid_n"));
  for (const auto& x : v) {
    if (x.field == "grid_n") EXPECT_GT(x.line, 1);
  }
}

TEST(Config, OpenLoopNeedsNoObjective) {
  const std::string text = R"({"name": "ol", "patient": "patient2", "t_f": 100, "grid_n": 101, "open_loop": true})";
  EXPECT_TRUE(validate(text, ref()).empty());
  const RunConfig c = parse(text, ref());
  EXPECT_TRUE(c.open_loop);
  EXPECT_EQ(c.ocp.patient.id, "patient2");
  EXPECT_FALSE(validate(R"({"name": "x", "patient": "patient1", "t_f": 100, "grid_n": 101})", ref()).empty());
}

TEST(Config, ShippedConfigsAreValid) {
  const std::filesystem::path dir = IMMUNO_CONFIG_DIR;
  int count = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    ++count;
    std::ifstream in(entry.path());
    std::stringstream text;
    text << in.rdbuf();
    const auto v = validate(text.str(), ref());
    EXPECT_TRUE(v.empty()) << entry.path() << ": " << (v.empty() ? "" : to_string(v[0]));
    const RunConfig c = load(entry.path(), ref());
    EXPECT_EQ(c.name, entry.path().stem().string());
    const auto& ids = builtin_scenario_ids();
    if (std::find(ids.begin(), ids.end(), c.name) != ids.end()) {
      EXPECT_EQ(c, scenario_config(c.name, ref())) << c.name;
    } else {
      EXPECT_TRUE(c.open_loop) << c.name;
    }
  }
  EXPECT_EQ(count, 7);
  EXPECT_THROW(load(dir / "missing.json", ref()), std::runtime_error);
}

}  // namespace
}  // namespace immuno::config
