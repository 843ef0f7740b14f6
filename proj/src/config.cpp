#include "immuno/config.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

namespace immuno::config {

using Json = nlohmann::ordered_json;

namespace {

struct RegimeType {
  std::string_view name;
  std::vector<std::string_view> caps;
};

const std::vector<RegimeType>& regime_types() {
  static const std::vector<RegimeType> types{
      {"control-bounds", {"up_max", "ua_max"}},
      {"control-and-state-bounds", {"up_max", "ua_max", "n_max", "ca_max"}},
      {"mixed", {"n_cap", "ca_cap"}},
  };
  return types;
}

std::string kind_name(ObjectiveKind kind) { return kind == ObjectiveKind::kL1 ? "L1" : "L2"; }

std::string terminal_name(TerminalCost t) {
  switch (t) {
    case TerminalCost::kLinearSum:
      return "linear-sum";
    case TerminalCost::kQuadraticSum:
      return "quadratic-sum";
    case TerminalCost::kNone:
      break;
  }
  return "none";
}

std::optional<TerminalCost> parse_terminal(const std::string& s) {
  if (s == "linear-sum") return TerminalCost::kLinearSum;
  if (s == "quadratic-sum") return TerminalCost::kQuadraticSum;
  if (s == "none") return TerminalCost::kNone;
  return std::nullopt;
}

std::string join(const std::vector<std::string_view>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += i + 1 == items.size() ? " or " : ", ";
    out += items[i];
  }
  return out;
}

// Line of the field by scanning for its keys in order; 0 when not found.
int line_of(std::string_view text, const std::string& field) {
  std::size_t pos = 0;
  std::size_t start = 0;
  bool found = false;
  while (start < field.size()) {
    std::size_t end = field.find('.', start);
    if (end == std::string::npos) end = field.size();
    std::string key = field.substr(start, end - start);
    key = key.substr(0, key.find('['));
    const std::size_t at = text.find('"' + key + '"', pos);
    if (at == std::string_view::npos) break;
    pos = at;
    found = true;
    start = end + 1;
  }
  if (!found) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

// Collects violations while reading a document into a RunConfig.
class Reader {
 public:
  Reader(std::string_view text, const RawParams& reference) : text_(text), reference_(reference) {}

  std::vector<Violation> read(RunConfig& out) {
    Json doc;
    try {
      doc = Json::parse(text_.begin(), text_.end());
    } catch (const Json::parse_error& e) {
      const std::size_t byte = std::min(e.byte, text_.size());
      const int line = 1 + static_cast<int>(std::count(text_.begin(), text_.begin() + static_cast<long>(byte), '\n'));
      violations_.push_back({"", std::string("syntax error: ") + e.what(), line});
      return violations_;
    }
    if (!doc.is_object()) {
      fail("", "document must be a JSON object");
      return violations_;
    }
    allow_keys(doc, "", {"name", "patient", "objective", "regime", "t_f", "terminal_mode", "grid_n",
                         "scheme", "solver", "open_loop"});
    if (doc.contains("open_loop")) {
      if (doc["open_loop"].is_boolean()) {
        out.open_loop = doc["open_loop"].get<bool>();
      } else {
        fail("open_loop", "open_loop must be true or false");
      }
    }
    if (doc.contains("name")) {
      if (doc["name"].is_string()) {
        out.name = doc["name"].get<std::string>();
      } else {
        fail("name", "name must be a string");
      }
    }
    read_patient(doc, out.ocp);
    if (!out.open_loop || doc.contains("objective")) read_objective(doc, out.ocp.objective);
    if (!out.open_loop || doc.contains("regime")) read_regime(doc, out.ocp.regime);
    if (doc.contains("t_f")) {
      if (auto v = number(doc["t_f"], "t_f"); v && positive(*v, "t_f", "t_f must be > 0")) out.ocp.t_f = *v;
    }
    if (doc.contains("terminal_mode")) {
      const Json& m = doc["terminal_mode"];
      if (m == "free") {
        out.ocp.terminal_mode = TerminalStateMode::kFreeWithTerminalCost;
      } else if (m == "pinned") {
        out.ocp.terminal_mode = TerminalStateMode::kPinned;
      } else {
        fail("terminal_mode", "terminal_mode must be \"free\" or \"pinned\"");
      }
    }
    if (doc.contains("grid_n")) {
      if (auto v = integer(doc["grid_n"], "grid_n")) {
        if (*v < 2) {
          fail("grid_n", "grid_n must be >= 2");
        } else {
          out.grid_n = *v;
        }
      }
    }
    if (doc.contains("scheme")) {
      try {
        if (!doc["scheme"].is_string()) throw std::invalid_argument("");
        out.scheme = collocation::parse_scheme(doc["scheme"].get<std::string>());
      } catch (const std::invalid_argument&) {
        fail("scheme", "scheme must be \"hs\" or \"trapezoid\"");
      }
    }
    if (doc.contains("solver")) read_solver(doc["solver"], out);
    return violations_;
  }

 private:
  void fail(const std::string& field, const std::string& message) {
    violations_.push_back({field, message, line_of(text_, field)});
  }

  void allow_keys(const Json& obj, const std::string& prefix, std::set<std::string> allowed) {
    for (const auto& [key, value] : obj.items()) {
      if (!allowed.count(key)) {
        const std::string field = prefix.empty() ? key : prefix + "." + key;
        fail(field, "unknown field '" + field + "'");
      }
    }
  }

  std::optional<double> number(const Json& v, const std::string& field) {
    if (!v.is_number()) {
      fail(field, field + " must be a number");
      return std::nullopt;
    }
    const double d = v.get<double>();
    if (!std::isfinite(d)) {
      fail(field, field + " must be finite");
      return std::nullopt;
    }
    return d;
  }

  std::optional<long long> integer(const Json& v, const std::string& field) {
    if (!v.is_number_integer()) {
      fail(field, field + " must be an integer");
      return std::nullopt;
    }
    return v.get<long long>();
  }

  bool positive(double v, const std::string& field, const std::string& message) {
    if (v > 0) return true;
    fail(field, message);
    return false;
  }

  template <int N>
  std::optional<Eigen::Matrix<double, N, 1>> vector(const Json& v, const std::string& field,
                                                    const std::string& label) {
    if (!v.is_array() || v.size() != N) {
      fail(field, field + " must be an array of " + std::to_string(N) + " numbers");
      return std::nullopt;
    }
    Eigen::Matrix<double, N, 1> out;
    bool ok = true;
    for (int i = 0; i < N; ++i) {
      const std::string item = field + "[" + std::to_string(i) + "]";
      const auto d = number(v[static_cast<std::size_t>(i)], item);
      if (!d) {
        ok = false;
      } else if (*d < 0) {
        fail(item, label + " must be ≥ 0");
        ok = false;
      } else {
        out(i) = *d;
      }
    }
    if (!ok) return std::nullopt;
    return out;
  }

  void read_patient(const Json& doc, OcpSpec& ocp) {
    if (!doc.contains("patient")) {
      fail("patient", "missing required field 'patient'");
      return;
    }
    const Json& p = doc["patient"];
    auto builtin = [&](const Json& id, const std::string& field) -> bool {
      if (!id.is_string()) {
        fail(field, field + " must be a string");
        return false;
      }
      try {
        ocp.patient = builtin_patient(id.get<std::string>(), reference_);
        return true;
      } catch (const std::out_of_range&) {
        std::string known;
        for (const auto& name : builtin_patient_ids()) known += (known.empty() ? "" : ", ") + name;
        fail(field, "unknown patient '" + id.get<std::string>() + "' (known: " + known + ")");
        return false;
      }
    };
    if (p.is_string()) {
      builtin(p, "patient");
      return;
    }
    if (!p.is_object()) {
      fail("patient", "patient must be a patient id or an object");
      return;
    }
    allow_keys(p, "patient", {"id", "x0", "params"});
    if (!p.contains("id")) {
      fail("patient.id", "missing required field 'patient.id'");
      return;
    }
    if (!builtin(p["id"], "patient.id")) return;
    if (p.contains("x0")) {
      if (auto x0 = vector<4>(p["x0"], "patient.x0", "initial states")) ocp.patient.x0 = *x0;
    }
    if (p.contains("params")) {
      const Json& params = p["params"];
      if (!params.is_object()) {
        fail("patient.params", "patient.params must be an object");
        return;
      }
      for (const auto& [key, value] : params.items()) {
        const std::string field = "patient.params." + key;
        const auto& fields = raw_param_fields();
        const auto it = std::find_if(fields.begin(), fields.end(),
                                     [&](const RawParamField& f) { return f.name == key; });
        if (it == fields.end()) {
          fail(field, "unknown parameter '" + key + "'");
          continue;
        }
        const auto v = number(value, field);
        if (!v) continue;
        if (*v < 0) {
          fail(field, "parameters must be ≥ 0");
          continue;
        }
        if ((key == "p_inf" || key == "c_inf") && *v == 0) {
          fail(field, key + " must be > 0");
          continue;
        }
        ocp.patient.raw.*(it->member) = *v;
      }
    }
  }

  void read_objective(const Json& doc, ObjectiveSpec& obj) {
    if (!doc.contains("objective")) {
      fail("objective", "missing required field 'objective'");
      return;
    }
    const Json& o = doc["objective"];
    if (!o.is_object()) {
      fail("objective", "objective must be an object");
      return;
    }
    allow_keys(o, "objective", {"kind", "a", "b", "terminal"});
    bool kind_ok = false;
    if (!o.contains("kind")) {
      fail("objective.kind", "missing required field 'objective.kind'");
    } else if (o["kind"] == "L1") {
      obj.kind = ObjectiveKind::kL1;
      kind_ok = true;
    } else if (o["kind"] == "L2") {
      obj.kind = ObjectiveKind::kL2;
      kind_ok = true;
    } else {
      fail("objective.kind", "objective.kind must be \"L1\" or \"L2\"");
    }
    if (!o.contains("a")) {
      fail("objective.a", "missing required field 'objective.a'");
    } else if (auto a = vector<4>(o["a"], "objective.a", "state_weights")) {
      obj.state_weights = *a;
    }
    if (!o.contains("b")) {
      fail("objective.b", "missing required field 'objective.b'");
    } else if (auto b = vector<2>(o["b"], "objective.b", "control_weights")) {
      obj.control_weights = *b;
    }
    obj.terminal = obj.kind == ObjectiveKind::kL1 ? TerminalCost::kLinearSum : TerminalCost::kQuadraticSum;
    if (o.contains("terminal")) {
      const auto t = o["terminal"].is_string() ? parse_terminal(o["terminal"].get<std::string>())
                                               : std::nullopt;
      if (!t) {
        fail("objective.terminal",
             "objective.terminal must be \"linear-sum\", \"quadratic-sum\" or \"none\"");
      } else if (kind_ok && *t != TerminalCost::kNone &&
                 (*t == TerminalCost::kLinearSum) != (obj.kind == ObjectiveKind::kL1)) {
        fail("objective.terminal", "terminal '" + terminal_name(*t) + "' does not pair with kind " +
                                       kind_name(obj.kind));
      } else {
        obj.terminal = *t;
      }
    }
  }

  void read_regime(const Json& doc, ConstraintRegime& regime) {
    if (!doc.contains("regime")) {
      fail("regime", "missing required field 'regime'");
      return;
    }
    const Json& r = doc["regime"];
    if (!r.is_object()) {
      fail("regime", "regime must be an object");
      return;
    }
    allow_keys(r, "regime", {"type", "caps"});
    if (!r.contains("type")) {
      fail("regime.type", "missing required field 'regime.type'");
      return;
    }
    const auto& types = regime_types();
    const auto type = std::find_if(types.begin(), types.end(), [&](const RegimeType& t) {
      return r["type"].is_string() && r["type"].get<std::string>() == t.name;
    });
    if (type == types.end()) {
      std::vector<std::string_view> names;
      for (const auto& t : types) names.push_back(t.name);
      fail("regime.type", "unknown regime type " + r["type"].dump() + " in field 'regime.type' (expected " +
                              join(names) + ")");
      return;
    }
    if (!r.contains("caps")) {
      fail("regime.caps", "missing required field 'regime.caps'");
      return;
    }
    const Json& caps = r["caps"];
    if (!caps.is_object()) {
      fail("regime.caps", "regime.caps must be an object");
      return;
    }
    allow_keys(caps, "regime.caps", std::set<std::string>(type->caps.begin(), type->caps.end()));
    std::vector<double> values;
    for (const std::string_view name : type->caps) {
      const std::string field = "regime.caps." + std::string(name);
      if (!caps.contains(std::string(name))) {
        fail(field, "missing required field '" + field + "'");
        continue;
      }
      if (auto v = number(caps[std::string(name)], field); v && positive(*v, field, "caps must be > 0")) {
        values.push_back(*v);
      }
    }
    if (values.size() != type->caps.size()) return;
    if (type->name == "control-bounds") {
      regime = ControlBounds{values[0], values[1]};
    } else if (type->name == "control-and-state-bounds") {
      regime = ControlAndStateBounds{values[0], values[1], values[2], values[3]};
    } else {
      regime = MixedControlState{values[0], values[1]};
    }
  }

  void read_solver(const Json& s, RunConfig& out) {
    if (!s.is_object()) {
      fail("solver", "solver must be an object");
      return;
    }
    allow_keys(s, "solver", {"tol", "max_iter"});
    if (s.contains("tol")) {
      if (auto v = number(s["tol"], "solver.tol"); v && positive(*v, "solver.tol", "solver.tol must be > 0")) {
        out.tol = *v;
      }
    }
    if (s.contains("max_iter")) {
      if (auto v = integer(s["max_iter"], "solver.max_iter")) {
        if (*v < 1 || *v > 1000000) {
          fail("solver.max_iter", "solver.max_iter must be between 1 and 1000000");
        } else {
          out.max_iter = static_cast<int>(*v);
        }
      }
    }
  }

  std::string_view text_;
  const RawParams& reference_;
  std::vector<Violation> violations_;
};

}  // namespace

bool RunConfig::operator==(const RunConfig& o) const {
  return name == o.name && ocp.patient.id == o.ocp.patient.id && ocp.patient.raw == o.ocp.patient.raw &&
         ocp.patient.x0 == o.ocp.patient.x0 && ocp.objective == o.ocp.objective &&
         ocp.regime == o.ocp.regime && ocp.t_f == o.ocp.t_f &&
         ocp.terminal_mode == o.ocp.terminal_mode && grid_n == o.grid_n && scheme == o.scheme &&
         tol == o.tol && max_iter == o.max_iter && open_loop == o.open_loop;
}

std::string to_string(const Violation& v) {
  std::string out;
  if (v.line > 0) out += "line " + std::to_string(v.line) + ": ";
  if (!v.field.empty()) out += v.field + ": ";
  return out + v.message;
}

namespace {

std::string error_text(const std::string& source, const std::vector<Violation>& violations) {
  std::string out = source + ": " + std::to_string(violations.size()) + " violation(s)";
  for (const Violation& v : violations) out += "\n  " + to_string(v);
  return out;
}

}  // namespace

ConfigError::ConfigError(std::string source, std::vector<Violation> violations)
    : std::runtime_error(error_text(source, violations)),
      source_(std::move(source)),
      violations_(std::move(violations)) {}

std::vector<Violation> validate(std::string_view text, const RawParams& reference) {
  RunConfig scratch;
  return Reader(text, reference).read(scratch);
}

RunConfig parse(std::string_view text, const RawParams& reference, const std::string& source) {
  RunConfig out;
  auto violations = Reader(text, reference).read(out);
  if (!violations.empty()) throw ConfigError(source, std::move(violations));
  return out;
}

RunConfig load(const std::filesystem::path& path, const RawParams& reference) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str(), reference, path.string());
}

std::string serialize(const RunConfig& config, const RawParams& reference) {
  const OcpSpec& ocp = config.ocp;
  Json doc;
  if (!config.name.empty()) doc["name"] = config.name;
  const PatientSpec base = builtin_patient(ocp.patient.id, reference);
  Json params = Json::object();
  for (const auto& field : raw_param_fields()) {
    if (ocp.patient.raw.*(field.member) != base.raw.*(field.member)) {
      params[std::string(field.name)] = ocp.patient.raw.*(field.member);
    }
  }
  if (params.empty() && ocp.patient.x0 == base.x0) {
    doc["patient"] = ocp.patient.id;
  } else {
    Json p;
    p["id"] = ocp.patient.id;
    p["x0"] = {ocp.patient.x0(0), ocp.patient.x0(1), ocp.patient.x0(2), ocp.patient.x0(3)};
    if (!params.empty()) p["params"] = params;
    doc["patient"] = p;
  }
  const ObjectiveSpec& obj = ocp.objective;
  doc["objective"] = {
      {"kind", kind_name(obj.kind)},
      {"a", {obj.state_weights(0), obj.state_weights(1), obj.state_weights(2), obj.state_weights(3)}},
      {"b", {obj.control_weights(0), obj.control_weights(1)}},
      {"terminal", terminal_name(obj.terminal)}};
  Json caps;
  std::visit(
      [&](const auto& r) {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, ControlBounds>) {
          caps = {{"up_max", r.up_max}, {"ua_max", r.ua_max}};
        } else if constexpr (std::is_same_v<T, ControlAndStateBounds>) {
          caps = {{"up_max", r.up_max}, {"ua_max", r.ua_max}, {"n_max", r.n_max}, {"ca_max", r.ca_max}};
        } else {
          caps = {{"n_cap", r.n_cap}, {"ca_cap", r.ca_cap}};
        }
      },
      ocp.regime);
  doc["regime"] = {{"type", regime_name(ocp.regime)}, {"caps", caps}};
  doc["t_f"] = ocp.t_f;
  doc["terminal_mode"] = ocp.terminal_mode == TerminalStateMode::kPinned ? "pinned" : "free";
  doc["grid_n"] = config.grid_n;
  doc["scheme"] = config.scheme == collocation::Scheme::kTrapezoid ? "trapezoid" : "hs";
  doc["solver"] = {{"tol", config.tol}, {"max_iter", config.max_iter}};
  if (config.open_loop) doc["open_loop"] = true;
  return doc.dump(2) + "\n";
}

RunConfig scenario_config(std::string_view id, const RawParams& reference) {
  RunConfig c;
  c.name = std::string(id);
  c.ocp = builtin_scenario(id, reference);
  return c;
}

}  // namespace immuno::config
