// Scenario configuration documents (JSON): parsing, exhaustive validation
// and serialization.
//
//   {
//     "name": "L1-full",
//     "patient": "patient1" | {"id": "patient1", "x0": [P, N, D, Ca], "params": {"k_pg": ...}},
//     "objective": {"kind": "L1", "a": [a1, a2, a3, a4], "b": [b1, b2],
//                   "terminal": "linear-sum" | "quadratic-sum" | "none"},
//     "regime": {"type": "control-bounds" | "control-and-state-bounds" | "mixed",
//                "caps": {...}},
//     "t_f": 168,
//     "terminal_mode": "free" | "pinned",
//     "grid_n": 1000,
//     "scheme": "hs" | "trapezoid",
//     "solver": {"tol": 1e-6, "max_iter": 3000},
//     "open_loop": false
//   }
//
// With "open_loop": true the patient is simulated without control and
// objective and regime may be omitted.
//
// Caps per regime type: control-bounds {up_max, ua_max};
// control-and-state-bounds {up_max, ua_max, n_max, ca_max}; mixed {n_cap, ca_cap}.
#ifndef IMMUNO_CONFIG_HPP
#define IMMUNO_CONFIG_HPP

#include "immuno/collocation.hpp"
#include "immuno/ocp.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace immuno::config {

struct RunConfig {
  std::string name;
  OcpSpec ocp;
  Eigen::Index grid_n = 1000;
  collocation::Scheme scheme = collocation::Scheme::kHermiteSimpson;
  double tol = 1e-6;
  int max_iter = 3000;
  bool open_loop = false;

  bool operator==(const RunConfig& o) const;
};

struct Violation {
  /// Dotted path of the offending field, e.g. "objective.a[0]".
  std::string field;
  std::string message;
  /// 1-based line of the document, 0 when unknown.
  int line = 0;
};

std::string to_string(const Violation& v);

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string source, std::vector<Violation> violations);
  const std::vector<Violation>& violations() const { return violations_; }
  const std::string& source() const { return source_; }

 private:
  std::string source_;
  std::vector<Violation> violations_;
};

/// Every violation in the document; empty when it is valid. Unknown keys
/// are violations too. Syntax errors yield a single violation with its line.
std::vector<Violation> validate(std::string_view text, const RawParams& reference);

/// Throws ConfigError listing every violation; nothing is partially accepted.
RunConfig parse(std::string_view text, const RawParams& reference,
                const std::string& source = "<string>");
/// Throws std::runtime_error when the file cannot be read.
RunConfig load(const std::filesystem::path& path, const RawParams& reference);

/// Serialized document; parse(serialize(c, ref), ref) == c. Patient
/// parameters are written as overrides of the built-in patient derived from
/// `reference`.
std::string serialize(const RunConfig& config, const RawParams& reference);

/// Built-in scenario with the default grid, scheme and solver settings.
RunConfig scenario_config(std::string_view id, const RawParams& reference);

}  // namespace immuno::config

#endif  // IMMUNO_CONFIG_HPP
