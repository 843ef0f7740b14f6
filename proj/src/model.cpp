#include "immuno/model.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#ifndef IMMUNO_DATA_DIR
#define IMMUNO_DATA_DIR "data"
#endif

namespace immuno {

const std::array<RawParamField, 21>& raw_param_fields() {
  static const std::array<RawParamField, 21> fields{{
      {"k_pg", &RawParams::k_pg},   {"k_pm", &RawParams::k_pm},   {"s_m", &RawParams::s_m},
      {"mu_m", &RawParams::mu_m},   {"k_mp", &RawParams::k_mp},   {"p_inf", &RawParams::p_inf},
      {"k_pn", &RawParams::k_pn},   {"s_nr", &RawParams::s_nr},   {"mu_nr", &RawParams::mu_nr},
      {"mu_n", &RawParams::mu_n},   {"k_dn", &RawParams::k_dn},   {"x_dn", &RawParams::x_dn},
      {"mu_d", &RawParams::mu_d},   {"s_c", &RawParams::s_c},     {"k_cn", &RawParams::k_cn},
      {"k_cnd", &RawParams::k_cnd}, {"mu_c", &RawParams::mu_c},   {"c_inf", &RawParams::c_inf},
      {"k_np", &RawParams::k_np},   {"k_nn", &RawParams::k_nn},   {"k_nd", &RawParams::k_nd},
  }};
  return fields;
}

ModelParams::ModelParams(const RawParams& raw) : raw_(raw) {
  if (!(raw.p_inf > 0)) throw std::domain_error("p_inf must be positive");
  if (!(raw.c_inf > 0)) throw std::domain_error("c_inf must be positive");

  const double c2 = raw.c_inf * raw.c_inf;
  const double c12 = std::pow(c2, 6);
  Coefficients& k = coeffs_;
  k.a = raw.k_pg;
  k.b = raw.k_pg / raw.p_inf;
  k.c = raw.k_pm * raw.s_m;
  k.d = raw.mu_m;
  k.e = raw.k_mp;
  k.z = raw.k_pn * c2;
  k.g = c2;
  k.h = c2 * raw.s_nr * raw.k_np;
  k.i = c2 * raw.s_nr * raw.k_nn;
  k.j = c2 * raw.s_nr * raw.k_nd;
  k.k = c2 * raw.k_np;
  k.l = c2 * raw.k_nn;
  k.m = c2 * raw.k_nd;
  k.n = raw.mu_nr;
  k.o = c2 * raw.mu_nr;
  k.p = raw.mu_n;
  k.q = c12 * raw.k_dn;
  // The damage Hill threshold scales with x_dn: (x_dn (c_inf^2 + Ca^2))^6.
  k.r = c2 * raw.x_dn;
  k.s = raw.x_dn;
  k.t = c12;
  k.u = c2 * raw.k_cn;
  k.v = c2 * raw.k_cn * raw.k_cnd;
  k.w = c2 * raw.k_cnd;
  k.mu_d = raw.mu_d;
  k.mu_c = raw.mu_c;
  k.s_c = raw.s_c;
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

RawParams parse_reference_params(std::istream& in, const std::string& source) {
  std::map<std::string, double RawParams::*, std::less<>> by_name;
  for (const auto& field : raw_param_fields()) by_name.emplace(field.name, field.member);

  RawParams raw;
  std::map<std::string, int> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;

    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ParamsError(source + ":" + std::to_string(line_no) + ": expected 'name = value'");
    }
    const std::string name = trim(std::string_view(body).substr(0, eq));
    const std::string value_text = trim(std::string_view(body).substr(eq + 1));

    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw ParamsError(source + ":" + std::to_string(line_no) + ": unknown parameter '" + name +
                        "'");
    }
    if (const auto prev = seen.find(name); prev != seen.end()) {
      throw ParamsError(source + ":" + std::to_string(line_no) + ": duplicate parameter '" + name +
                        "' (first set on line " + std::to_string(prev->second) + ")");
    }
    std::istringstream value_stream(value_text);
    double value = 0;
    value_stream >> value;
    if (value_stream.fail() || !(value_stream >> std::ws).eof() || !std::isfinite(value)) {
      throw ParamsError(source + ":" + std::to_string(line_no) + ": invalid value '" + value_text +
                        "' for '" + name + "'");
    }
    if (value < 0) {
      throw ParamsError(source + ":" + std::to_string(line_no) + ": parameter '" + name +
                        "' must be nonnegative");
    }
    raw.*(it->second) = value;
    seen.emplace(name, line_no);
  }

  std::string missing;
  for (const auto& field : raw_param_fields()) {
    if (!seen.contains(std::string(field.name))) {
      if (!missing.empty()) missing += ", ";
      missing += field.name;
    }
  }
  if (!missing.empty()) throw ParamsError(source + ": missing parameters: " + missing);
  return raw;
}

RawParams load_reference_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParamsError("cannot open parameter file " + path.string());
  return parse_reference_params(in, path.string());
}

void write_reference_params(std::ostream& out, const RawParams& raw) {
  const auto old_precision = out.precision(17);
  for (const auto& field : raw_param_fields()) {
    out << field.name << " = " << raw.*(field.member) << '\n';
  }
  out.precision(old_precision);
}

std::filesystem::path default_params_path() {
  if (const char* env = std::getenv("IMMUNOCTL_PARAMS"); env != nullptr && *env != '\0') {
    return env;
  }
  return std::filesystem::path(IMMUNO_DATA_DIR) / "reference_params";
}

RawParams reference_params() { return load_reference_params(default_params_path()); }

namespace {

struct PatientOverrides {
  std::string_view id;
  State x0;
  double k_pg, k_cn, k_nd, k_np, k_cnd, k_nn;
};

const std::array<PatientOverrides, 3>& patient_table() {
  static const std::array<PatientOverrides, 3> table{{
      {"baseline", State(0.0, 0.0, 0.0, 0.125), 0.6, 0.04, 0.02, 0.1, 48.0, 0.01},
      {"patient1", State(0.5360, 0.0660, 0.0477, 0.1635), 0.5846, 0.0409, 0.0242, 0.1211,
       49.1243, 0.012},
      {"patient2", State(1.0017, 0.0711, 0.0732, 0.1314), 0.4746, 0.0386, 0.0223, 0.1116,
       46.3367, 0.0112},
  }};
  return table;
}

}  // namespace

PatientSpec builtin_patient(std::string_view id, const RawParams& reference) {
  for (const auto& entry : patient_table()) {
    if (entry.id != id) continue;
    PatientSpec patient{std::string(id), reference, entry.x0};
    patient.raw.k_pg = entry.k_pg;
    patient.raw.k_cn = entry.k_cn;
    patient.raw.k_nd = entry.k_nd;
    patient.raw.k_np = entry.k_np;
    patient.raw.k_cnd = entry.k_cnd;
    patient.raw.k_nn = entry.k_nn;
    return patient;
  }
  throw std::out_of_range("unknown patient '" + std::string(id) + "'");
}

PatientSpec builtin_patient(std::string_view id) {
  return builtin_patient(id, reference_params());
}

std::vector<std::string> builtin_patient_ids() {
  std::vector<std::string> ids;
  for (const auto& entry : patient_table()) ids.emplace_back(entry.id);
  return ids;
}

}  // namespace immuno
