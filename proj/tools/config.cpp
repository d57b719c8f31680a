#include "config.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace xover::cli {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& where, const std::string& why) {
  throw ConfigError("config error at " + where + ": " + why);
}

const json& require(const json& obj, const std::string& where,
                    const std::string& key) {
  if (!obj.is_object() || !obj.contains(key))
    fail(where + "/" + key, "missing required field");
  return obj.at(key);
}

double require_number(const json& obj, const std::string& where,
                      const std::string& key) {
  const json& v = require(obj, where, key);
  if (!v.is_number()) fail(where + "/" + key, "expected a number");
  return v.get<double>();
}

long get_integer(const json& v, const std::string& where) {
  if (!v.is_number_integer()) fail(where, "expected an integer");
  return v.get<long>();
}

std::vector<double> number_list(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty()) fail(where, "expected a nonempty array of numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) fail(where, "expected numbers only");
    out.push_back(x.get<double>());
  }
  return out;
}

std::vector<int> integer_list(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty()) fail(where, "expected a nonempty array of integers");
  std::vector<int> out;
  for (const auto& x : v)
    out.push_back(static_cast<int>(get_integer(x, where)));
  return out;
}

}  // namespace

Method method_from_name(const std::string& name) {
  if (name == "unblinded") return Method::unblinded;
  if (name == "adjusted_null") return Method::adjusted_null;
  if (name == "adjusted_alternative") return Method::adjusted_alternative;
  if (name == "adjusted_custom") return Method::adjusted_custom;
  if (name == "block") return Method::block;
  throw ConfigError("config error: unknown method '" + name + "'");
}

TauScenario tau_scenario_from_name(const std::string& name) {
  if (name == "global_null") return TauScenario::global_null;
  if (name == "tau1_only") return TauScenario::tau1_only;
  if (name == "tau12_only") return TauScenario::tau12_only;
  if (name == "global_alt") return TauScenario::global_alt;
  if (name == "observed") return TauScenario::observed;
  if (name == "custom") return TauScenario::custom;
  throw ConfigError("config error: unknown tau scenario '" + name + "'");
}

Direction direction_from_name(const std::string& name) {
  if (name == "greater") return Direction::greater;
  if (name == "less") return Direction::less;
  if (name == "two_sided") return Direction::two_sided;
  throw ConfigError("config error: unknown direction '" + name + "'");
}

namespace {

const char* direction_name(Direction d) {
  switch (d) {
    case Direction::greater: return "greater";
    case Direction::less: return "less";
    default: return "two_sided";
  }
}

TrialDesign parse_design(const json& doc, CliConfig& out) {
  const json& d = require(doc, "", "design");
  if (d.contains("example")) {
    out.design_example = d.at("example").get<std::string>();
    return builtin_design(out.design_example).design;
  }
  if (!d.contains("sequences")) fail("/design", "need either 'example' or 'sequences'");
  const json& seqs = d.at("sequences");
  if (!seqs.is_array() || seqs.empty()) fail("/design/sequences", "expected an array of sequences");
  std::vector<std::vector<int>> rows;
  int max_treat = 0;
  for (const auto& row : seqs) {
    std::vector<int> r = integer_list(row, "/design/sequences");
    for (int t : r) max_treat = std::max(max_treat, t);
    rows.push_back(std::move(r));
  }
  int D = max_treat + 1;
  if (d.contains("treatments"))
    D = static_cast<int>(get_integer(d.at("treatments"), "/design/treatments"));
  try {
    return make_design(rows, D);
  } catch (const std::exception& e) {
    fail("/design", e.what());
  }
}

}  // namespace

CliConfig parse_config(const json& doc) {
  CliConfig out;
  if (!doc.is_object()) fail("", "top level must be an object");
  out.label = doc.value("label", std::string{});
  out.design = parse_design(doc, out);
  const int D = out.design.D, P = out.design.P;

  const json& model = require(doc, "", "model");
  out.model.mu0 = require_number(model, "/model", "mu0");
  out.model.pi = number_list(require(model, "/model", "pi"), "/model/pi");
  if (static_cast<int>(out.model.pi.size()) != P)
    fail("/model/pi", "need one entry per period (first entry 0)");
  if (out.model.pi[0] != 0.0) fail("/model/pi", "first period effect must be 0");
  out.model.sigma_e2 = require_number(model, "/model", "sigma_e2");
  out.model.sigma_b2 = require_number(model, "/model", "sigma_b2");
  if (!(out.model.sigma_e2 > 0.0)) fail("/model/sigma_e2", "must be positive");
  if (out.model.sigma_b2 < 0.0) fail("/model/sigma_b2", "must be nonnegative");
  if (model.contains("tau_observed")) {
    out.tau_observed = number_list(model.at("tau_observed"), "/model/tau_observed");
    if (static_cast<int>(out.tau_observed.size()) != D)
      fail("/model/tau_observed", "need one entry per treatment");
    if (out.tau_observed[0] != 0.0)
      fail("/model/tau_observed", "control entry must be 0");
  }
  out.model.tau.assign(D, 0.0);

  const json& test = require(doc, "", "test");
  out.hyp.direction = direction_from_name(
      require(test, "/test", "direction").get<std::string>());
  out.hyp.delta = require_number(test, "/test", "delta");
  if (out.hyp.delta == 0.0) fail("/test/delta", "must be nonzero");
  out.hyp.alpha = require_number(test, "/test", "alpha");
  out.hyp.beta = require_number(test, "/test", "beta");
  if (!(out.hyp.alpha > 0.0 && out.hyp.alpha < 1.0)) fail("/test/alpha", "must be in (0,1)");
  if (!(out.hyp.beta > 0.0 && out.hyp.beta < 1.0)) fail("/test/beta", "must be in (0,1)");
  const std::string power = test.value("power", std::string("pairwise"));
  if (power == "pairwise") out.hyp.power_kind = PowerKind::pairwise;
  else if (power == "familywise") out.hyp.power_kind = PowerKind::familywise;
  else fail("/test/power", "expected 'pairwise' or 'familywise'");

  const json& policy = require(doc, "", "policy");
  out.n_max = get_integer(require(policy, "/policy", "n_max"), "/policy/n_max");
  if (out.n_max < 1) fail("/policy/n_max", "must be positive");
  out.inflation = policy.value("inflation", false);

  const json& sc = require(doc, "", "scenarios");
  out.n_int = integer_list(require(sc, "/scenarios", "n_int"), "/scenarios/n_int");
  for (int n : out.n_int)
    if (n < 2 || n > out.n_max) fail("/scenarios/n_int", "entries must be in [2, n_max]");

  const json& methods = require(sc, "/scenarios", "methods");
  if (!methods.is_array() || methods.empty())
    fail("/scenarios/methods", "expected a nonempty array");
  for (const auto& entry : methods) {
    MethodSpec spec;
    if (entry.is_string()) {
      spec.method = method_from_name(entry.get<std::string>());
    } else if (entry.is_object()) {
      spec.method = method_from_name(
          require(entry, "/scenarios/methods", "name").get<std::string>());
      if (entry.contains("n_int"))
        spec.n_int = integer_list(entry.at("n_int"), "/scenarios/methods/n_int");
      if (entry.contains("n_B"))
        spec.n_B = integer_list(entry.at("n_B"), "/scenarios/methods/n_B");
    } else {
      fail("/scenarios/methods", "entries must be names or objects");
    }
    if (spec.method == Method::block && spec.n_B.empty())
      fail("/scenarios/methods", "block entries need an n_B list");
    if (spec.method != Method::block && !spec.n_B.empty())
      fail("/scenarios/methods", "n_B only applies to the block method");
    out.methods.push_back(std::move(spec));
  }

  if (sc.contains("tau")) {
    for (const auto& t : sc.at("tau")) {
      if (!t.is_string()) fail("/scenarios/tau", "expected scenario names");
      out.tau_scenarios.push_back(tau_scenario_from_name(t.get<std::string>()));
    }
  }
  if (out.tau_scenarios.empty())
    out.tau_scenarios.push_back(TauScenario::global_null);

  out.sigma_e2_grid = sc.contains("sigma_e2")
                          ? number_list(sc.at("sigma_e2"), "/scenarios/sigma_e2")
                          : std::vector<double>{out.model.sigma_e2};
  out.sigma_b2_grid = sc.contains("sigma_b2")
                          ? number_list(sc.at("sigma_b2"), "/scenarios/sigma_b2")
                          : std::vector<double>{out.model.sigma_b2};
  out.delta_grid = sc.contains("delta")
                       ? number_list(sc.at("delta"), "/scenarios/delta")
                       : std::vector<double>{out.hyp.delta};
  for (double v : out.sigma_e2_grid)
    if (!(v > 0.0)) fail("/scenarios/sigma_e2", "entries must be positive");
  for (double v : out.sigma_b2_grid)
    if (v < 0.0) fail("/scenarios/sigma_b2", "entries must be nonnegative");
  for (double v : out.delta_grid)
    if (v == 0.0) fail("/scenarios/delta", "entries must be nonzero");
  out.random_period_sd = sc.value("random_period_sd", 0.0);
  if (out.random_period_sd < 0.0) fail("/scenarios/random_period_sd", "must be >= 0");

  if (doc.contains("tau_custom")) {
    out.tau_custom = number_list(doc.at("tau_custom"), "/tau_custom");
    if (static_cast<int>(out.tau_custom.size()) != D || out.tau_custom[0] != 0.0)
      fail("/tau_custom", "need D entries with control fixed at 0");
  }

  out.replications = doc.contains("replications")
                         ? get_integer(doc.at("replications"), "/replications")
                         : 10000;
  if (out.replications < 1) fail("/replications", "must be >= 1");
  if (doc.contains("master_seed")) {
    const json& s = doc.at("master_seed");
    if (!s.is_number_unsigned() && !s.is_number_integer())
      fail("/master_seed", "expected an unsigned integer");
    out.master_seed = s.get<std::uint64_t>();
  }

  if (doc.contains("calibration")) {
    const json& cal = doc.at("calibration");
    out.calibration.sigma_e2 =
        cal.contains("sigma_e2")
            ? number_list(cal.at("sigma_e2"), "/calibration/sigma_e2")
            : std::vector<double>{out.model.sigma_e2};
    out.calibration.sigma_b2 =
        cal.contains("sigma_b2")
            ? number_list(cal.at("sigma_b2"), "/calibration/sigma_b2")
            : std::vector<double>{out.model.sigma_b2};
    out.calibration.target_alpha = cal.value("target_alpha", 0.0);
    out.calibration.reps =
        cal.contains("reps") ? get_integer(cal.at("reps"), "/calibration/reps") : 0;
    out.calibration.scenario_index = static_cast<int>(
        cal.contains("scenario_index")
            ? get_integer(cal.at("scenario_index"), "/calibration/scenario_index")
            : 0);
  } else {
    out.calibration.sigma_e2 = {out.model.sigma_e2};
    out.calibration.sigma_b2 = {out.model.sigma_b2};
  }
  return out;
}

CliConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config error: cannot open '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config error in '") + path + "': " + e.what());
  }
  return parse_config(doc);
}

nlohmann::json config_to_json(const CliConfig& config) {
  json doc;
  if (!config.label.empty()) doc["label"] = config.label;
  if (!config.design_example.empty()) {
    doc["design"] = {{"example", config.design_example}};
  } else {
    doc["design"] = {{"sequences", config.design.sequences},
                     {"treatments", config.design.D}};
  }
  doc["model"] = {{"mu0", config.model.mu0},
                  {"pi", config.model.pi},
                  {"sigma_e2", config.model.sigma_e2},
                  {"sigma_b2", config.model.sigma_b2}};
  if (!config.tau_observed.empty()) doc["model"]["tau_observed"] = config.tau_observed;
  doc["test"] = {{"direction", direction_name(config.hyp.direction)},
                 {"delta", config.hyp.delta},
                 {"alpha", config.hyp.alpha},
                 {"beta", config.hyp.beta},
                 {"power", config.hyp.power_kind == PowerKind::familywise
                               ? "familywise"
                               : "pairwise"}};
  doc["policy"] = {{"n_max", config.n_max}, {"inflation", config.inflation}};
  json methods = json::array();
  for (const MethodSpec& m : config.methods) {
    if (m.n_int.empty() && m.n_B.empty()) {
      methods.push_back(method_name(m.method));
    } else {
      json entry = {{"name", method_name(m.method)}};
      if (!m.n_int.empty()) entry["n_int"] = m.n_int;
      if (!m.n_B.empty()) entry["n_B"] = m.n_B;
      methods.push_back(std::move(entry));
    }
  }
  json tau = json::array();
  for (TauScenario s : config.tau_scenarios) tau.push_back(tau_scenario_name(s));
  doc["scenarios"] = {{"n_int", config.n_int},
                      {"methods", std::move(methods)},
                      {"tau", std::move(tau)},
                      {"sigma_e2", config.sigma_e2_grid},
                      {"sigma_b2", config.sigma_b2_grid},
                      {"delta", config.delta_grid},
                      {"random_period_sd", config.random_period_sd}};
  if (!config.tau_custom.empty()) doc["tau_custom"] = config.tau_custom;
  doc["replications"] = config.replications;
  doc["master_seed"] = config.master_seed;
  doc["calibration"] = {{"sigma_e2", config.calibration.sigma_e2},
                        {"sigma_b2", config.calibration.sigma_b2},
                        {"target_alpha", config.calibration.target_alpha},
                        {"reps", config.calibration.reps},
                        {"scenario_index", config.calibration.scenario_index}};
  return doc;
}

CliConfig example_config(const std::string& name) {
  const BuiltinExample ex = builtin_design(name);
  CliConfig out;
  out.label = name;
  out.design = ex.design;
  out.design_example = name;
  out.model = ex.params;
  out.tau_observed = ex.tau_observed;
  out.hyp = ex.hyp;
  out.n_max = ex.n_max;
  out.inflation = false;
  out.n_int = ex.n_int_values;
  out.methods.push_back({Method::unblinded, {}, {}});
  out.methods.push_back({Method::adjusted_null, {}, {}});
  out.methods.push_back({Method::adjusted_alternative, {}, {}});
  // block sweeps: the four-period study runs length-2 blocks at every interim
  // size but length-4 blocks only at the sizes that spread evenly over the
  // sequences; the other studies keep every divisible combination
  if (name == "example1") {
    out.methods.push_back({Method::block, {}, {2}});
    out.methods.push_back({Method::block, {16, 32}, {4}});
    out.tau_scenarios = {TauScenario::global_null, TauScenario::tau1_only,
                         TauScenario::tau12_only, TauScenario::global_alt};
  } else if (name == "example2") {
    out.methods.push_back({Method::block, {}, {3}});
    out.tau_scenarios = {TauScenario::global_null, TauScenario::tau1_only,
                         TauScenario::global_alt};
  } else {
    out.methods.push_back({Method::block, {}, {4}});
    out.methods.push_back({Method::block, {}, {8}});
    out.tau_scenarios = {TauScenario::global_null, TauScenario::global_alt};
  }
  out.sigma_e2_grid = {ex.params.sigma_e2};
  out.sigma_b2_grid = {ex.params.sigma_b2};
  out.delta_grid = {ex.hyp.delta};
  out.replications = 10000;
  out.master_seed = 20260817;
  out.calibration.sigma_e2 = {ex.params.sigma_e2};
  out.calibration.sigma_b2 = {ex.params.sigma_b2};
  return out;
}

std::vector<ScenarioConfig> expand_scenarios(const CliConfig& config) {
  std::vector<ScenarioConfig> out;
  std::uint64_t id = 0;
  for (const MethodSpec& m : config.methods) {
    const std::vector<int>& n_ints = m.n_int.empty() ? config.n_int : m.n_int;
    const std::vector<int> blocks =
        m.method == Method::block ? m.n_B : std::vector<int>{0};
    for (int n_int : n_ints) {
      for (int n_B : blocks) {
        for (TauScenario tau : config.tau_scenarios) {
          for (double se2 : config.sigma_e2_grid) {
            for (double sb2 : config.sigma_b2_grid) {
              for (double delta : config.delta_grid) {
                ScenarioConfig sc;
                sc.design = config.design;
                sc.true_params = config.model;
                sc.true_params.sigma_e2 = se2;
                sc.true_params.sigma_b2 = sb2;
                sc.tau_scenario = tau;
                sc.hyp = config.hyp;
                sc.hyp.delta = delta;
                sc.policy.n_int = n_int;
                sc.policy.n_max = config.n_max;
                sc.policy.n_B = n_B;
                sc.policy.rounding = m.method == Method::block
                                         ? RoundingRule::multiple_of_nB
                                         : RoundingRule::multiple_of_K;
                sc.policy.use_inflation_factor = config.inflation;
                sc.method = m.method;
                sc.tau_custom = config.tau_custom;
                sc.tau_observed = config.tau_observed;
                sc.replications = config.replications;
                sc.master_seed = config.master_seed;
                sc.scenario_id = id++;
                sc.random_period_sd = config.random_period_sd;
                std::ostringstream label;
                label << (config.label.empty() ? "scenario" : config.label)
                      << "/" << method_name(m.method);
                if (m.method == Method::block) label << "(n_B=" << n_B << ")";
                label << "/n_int=" << n_int << "/" << tau_scenario_name(tau);
                sc.label = label.str();
                out.push_back(std::move(sc));
              }
            }
          }
        }
      }
    }
  }
  return out;
}

std::string config_hash_hex(const nlohmann::json& canonical) {
  const std::string dump = canonical.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << h;
  return hex.str();
}

RunManifest make_manifest(const CliConfig& config) {
  RunManifest manifest;
  manifest.config = config;
  manifest.scenarios = expand_scenarios(config);
  if (manifest.scenarios.empty())
    throw ConfigError("config error: scenario grid expands to nothing");
  for (const ScenarioConfig& sc : manifest.scenarios) {
    try {
      validate_scenario(sc);
    } catch (const std::exception& e) {
      throw ConfigError("config error in scenario '" + sc.label + "': " + e.what());
    }
  }
  manifest.config_hash = config_hash_hex(config_to_json(config));
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  manifest.timestamp = buf;
  return manifest;
}

}  // namespace xover::cli
