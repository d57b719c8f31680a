#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "xover/simulator.hpp"
#include "xover/trial_design.hpp"

namespace xover::cli {

inline constexpr const char* kToolVersion = "1.0.0";

// Validation failure with a JSON-pointer-style location, so a bad field is
// reported as e.g. "config error at /test/alpha: expected a number in (0,1)".
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct MethodSpec {
  Method method = Method::unblinded;
  std::vector<int> n_int;  // overrides the global list when nonempty
  std::vector<int> n_B;    // block lengths; block method only
};

struct CalibrationSpec {
  std::vector<double> sigma_e2;  // grid axes; Cartesian product
  std::vector<double> sigma_b2;
  double target_alpha = 0.0;     // 0 = use test alpha
  long reps = 0;                 // 0 = use top-level replications
  int scenario_index = 0;        // which expanded scenario to calibrate
};

struct CliConfig {
  std::string label;
  TrialDesign design;
  std::string design_example;  // set when design came from a built-in
  ModelParams model;
  std::vector<double> tau_observed;
  std::vector<double> tau_custom;
  HypothesisSpec hyp;
  long n_max = 0;
  bool inflation = false;
  std::vector<int> n_int;
  std::vector<MethodSpec> methods;
  std::vector<TauScenario> tau_scenarios;
  std::vector<double> sigma_e2_grid;
  std::vector<double> sigma_b2_grid;
  std::vector<double> delta_grid;
  double random_period_sd = 0.0;
  long replications = 10000;
  std::uint64_t master_seed = 1;
  CalibrationSpec calibration;
};

// Everything a run needs, resolved and validated up front.
struct RunManifest {
  CliConfig config;
  std::vector<ScenarioConfig> scenarios;
  std::string version = kToolVersion;
  std::string config_hash;  // 16 hex digits over the canonical config JSON
  std::string timestamp;    // informational; never written into result files
};

Method method_from_name(const std::string& name);
TauScenario tau_scenario_from_name(const std::string& name);
Direction direction_from_name(const std::string& name);

CliConfig parse_config(const nlohmann::json& doc);
CliConfig load_config_file(const std::string& path);
nlohmann::json config_to_json(const CliConfig& config);

// Built-in example studies, ready for cmd_examples and --example.
CliConfig example_config(const std::string& name);

// Cartesian expansion of the scenario grid; every scenario is validated and
// gets a sequential scenario_id (the RNG stream offset).
std::vector<ScenarioConfig> expand_scenarios(const CliConfig& config);

std::string config_hash_hex(const nlohmann::json& canonical);

RunManifest make_manifest(const CliConfig& config);

}  // namespace xover::cli
