#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "config.hpp"
#include "xover/sample_size.hpp"
#include "xover/simulator.hpp"

namespace xover::cli {

namespace {

namespace fs = std::filesystem;

std::string fmt4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// full-precision, locale-independent CSV number
std::string fmt_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

CliConfig resolve_config(const CommonOptions& opt) {
  CliConfig config;
  if (!opt.example.empty())
    config = example_config(opt.example);
  else if (!opt.config_path.empty())
    config = load_config_file(opt.config_path);
  else
    throw ConfigError("config error: pass --config FILE or --example NAME");
  if (opt.reps > 0) config.replications = opt.reps;
  if (opt.seed_set) config.master_seed = opt.seed;
  if (opt.inflation >= 0) config.inflation = opt.inflation == 1;
  return config;
}

fs::path ensure_out_dir(const std::string& dir) {
  fs::path p = dir.empty() ? fs::path(".") : fs::path(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + p.string());
  return p;
}

long nearest_multiple(double n, int k) {
  const long lower = static_cast<long>(std::floor(n / k)) * k;
  const long upper = lower + k;
  return (n - lower < upper - n) ? lower : upper;
}

}  // namespace

int cmd_design(const CommonOptions& opt) {
  const CliConfig config = resolve_config(opt);
  const TrialDesign& design = config.design;
  const ModelParams& model = config.model;
  const HypothesisSpec& hyp = config.hyp;

  const DesignInformation di =
      unit_information(design, model.sigma_e2, model.sigma_b2);
  const CriticalValue cv =
      design_critical_value(di.q_corr, hyp.alpha, hyp.direction);
  const double n_pair =
      required_n_pairwise(design, model.sigma_e2, model.sigma_b2, hyp);
  const long n_fam =
      required_n_familywise(design, model.sigma_e2, model.sigma_b2, hyp);
  const long n_design = nearest_multiple(n_pair, design.K);
  const long nu_design = analysis_df(n_design, design.P, design.D);

  std::cout << "design report"
            << (config.label.empty() ? "" : ": " + config.label) << "\n";
  std::cout << "  design: D=" << design.D << " treatments, P=" << design.P
            << " periods, K=" << design.K << " sequences"
            << (design.complete_block ? " (complete block)" : "") << "\n";
  std::cout << "  test: direction "
            << (hyp.direction == Direction::greater ? "greater"
                : hyp.direction == Direction::less  ? "less"
                                                    : "two_sided")
            << ", delta " << fmt4(hyp.delta) << ", alpha " << fmt4(hyp.alpha)
            << ", beta " << fmt4(hyp.beta) << "\n";
  std::cout << "  variances: sigma_e2 " << fmt4(model.sigma_e2) << ", sigma_b2 "
            << fmt4(model.sigma_b2) << "\n\n";
  std::cout << "  critical value e (design): " << fmt4(cv.e) << "\n";
  std::cout << "  alpha*: " << fmt4(cv.alpha_star) << "\n";
  std::cout << "  unit information i_d:";
  for (int d = 0; d < design.D - 1; ++d) std::cout << " " << fmt4(di.unit_info[d]);
  std::cout << "\n";
  if (design.D > 2)
    std::cout << "  Q correlation (1,2): " << fmt4(di.q_corr(0, 1)) << "\n";
  std::cout << "  pairwise N: " << fmt4(n_pair) << " -> " << n_design
            << " (nearest multiple of K=" << design.K << ")\n";
  std::cout << "  familywise N: " << n_fam << "\n";
  std::cout << "  nu at N=" << n_design << ": " << nu_design << "\n";
  std::cout << "  inflation factor at n_int:\n";
  for (int n_int : config.n_int) {
    const long nu = analysis_df(n_int, design.P, design.D);
    if (nu < 1) {
      std::cout << "    n_int=" << n_int << ": nu < 1, not defined\n";
      continue;
    }
    std::cout << "    n_int=" << n_int << ": nu=" << nu << ", factor="
              << fmt4(inflation_factor(hyp.alpha, hyp.beta,
                                       static_cast<double>(nu)))
              << "\n";
  }

  if (!opt.out_dir.empty()) {
    const fs::path dir = ensure_out_dir(opt.out_dir);
    nlohmann::json report;
    report["label"] = config.label;
    report["e_design"] = cv.e;
    report["alpha_star"] = cv.alpha_star;
    for (int d = 0; d < design.D - 1; ++d)
      report["unit_info"].push_back(di.unit_info[d]);
    report["n_pairwise_real"] = n_pair;
    report["n_pairwise"] = n_design;
    report["n_familywise"] = n_fam;
    report["nu_at_n"] = nu_design;
    std::ofstream out(dir / "design.json");
    if (!out) throw std::runtime_error("cannot write design.json");
    out << report.dump(2) << "\n";
    std::cout << "\nwrote " << (dir / "design.json").string() << "\n";
  }
  return 0;
}

namespace {

void write_summary_header(std::ostream& os) {
  os << "scenario_id,method,n_int,n_B,tau_scenario,sigma_e2,sigma_b2,delta,"
        "reps,fwer,fwer_se,power_pairwise,power_familywise,"
        "sigma_e2_hat_q25,sigma_e2_hat_q50,sigma_e2_hat_q75,"
        "sigma_b2_hat_q25,sigma_b2_hat_q50,sigma_b2_hat_q75,"
        "N_hat_q25,N_hat_q50,N_hat_q75,mean_realised_N,nonconverged_count,"
        "seed,version,config_hash\n";
}

void write_summary_row(std::ostream& os, const ScenarioConfig& sc,
                       const SummaryStats& stats, const RunManifest& manifest) {
  os << sc.scenario_id << ',' << method_name(sc.method) << ','
     << sc.policy.n_int << ',' << sc.policy.n_B << ','
     << tau_scenario_name(sc.tau_scenario) << ','
     << fmt_full(sc.true_params.sigma_e2) << ','
     << fmt_full(sc.true_params.sigma_b2) << ',' << fmt_full(sc.hyp.delta)
     << ',' << stats.reps << ',';
  if (stats.fwer.has_value())
    os << fmt_full(*stats.fwer) << ',' << fmt_full(stats.fwer_se) << ',';
  else
    os << ",,";  // no true nulls in this scenario: FWER undefined
  os << fmt_full(stats.power_pairwise) << ','
     << fmt_full(stats.power_familywise) << ','
     << fmt_full(stats.sigma_e2_hat.q25) << ','
     << fmt_full(stats.sigma_e2_hat.q50) << ','
     << fmt_full(stats.sigma_e2_hat.q75) << ','
     << fmt_full(stats.sigma_b2_hat.q25) << ','
     << fmt_full(stats.sigma_b2_hat.q50) << ','
     << fmt_full(stats.sigma_b2_hat.q75) << ',' << fmt_full(stats.n_hat.q25)
     << ',' << fmt_full(stats.n_hat.q50) << ',' << fmt_full(stats.n_hat.q75)
     << ',' << fmt_full(stats.mean_realised_n) << ',' << stats.nonconverged
     << ',' << manifest.config.master_seed << ',' << manifest.version << ','
     << manifest.config_hash << "\n";
}

void write_raw_dump(const fs::path& dir, const ScenarioConfig& sc,
                    const std::vector<TrialResult>& raw) {
  char name[64];
  std::snprintf(name, sizeof name, "raw_scenario%04llu.csv",
                static_cast<unsigned long long>(sc.scenario_id));
  std::ofstream os(dir / name);
  if (!os) throw std::runtime_error("cannot write raw dump for a scenario");
  os << "scenario_id,replicate,sigma_e2_hat,sigma_b2_raw,sigma_b2_trunc,"
        "n_hat,realised_n";
  for (int d = 1; d < sc.design.D; ++d) os << ",rejected_" << d;
  os << ",any_rejection,converged,uneven_block\n";
  for (std::size_t r = 0; r < raw.size(); ++r) {
    const TrialResult& t = raw[r];
    os << sc.scenario_id << ',' << r << ',' << fmt_full(t.interim.sigma_e2_hat)
       << ',' << fmt_full(t.interim.sigma_b2_raw) << ','
       << fmt_full(t.interim.sigma_b2_trunc) << ',' << t.n_hat << ','
       << t.realised_n;
    for (bool rej : t.rejected) os << ',' << (rej ? 1 : 0);
    os << ',' << (t.any_rejection ? 1 : 0) << ','
       << (t.final_fit_converged ? 1 : 0) << ','
       << (t.uneven_block_allocation ? 1 : 0) << "\n";
  }
}

}  // namespace

int cmd_simulate(const CommonOptions& opt) {
  const CliConfig config = resolve_config(opt);
  const RunManifest manifest = make_manifest(config);
  const fs::path dir = ensure_out_dir(opt.out_dir);

  std::cout << "simulate: " << manifest.scenarios.size() << " scenario(s), "
            << config.replications << " replicates each, seed "
            << config.master_seed << ", threads " << opt.threads << "\n";
  std::cout << "  version " << manifest.version << ", config hash "
            << manifest.config_hash << ", started " << manifest.timestamp
            << "\n";

  std::ofstream csv(dir / "summary.csv");
  if (!csv) throw std::runtime_error("cannot write summary.csv");
  write_summary_header(csv);

  std::size_t done = 0;
  for (const ScenarioConfig& sc : manifest.scenarios) {
    std::vector<TrialResult> raw;
    const SummaryStats stats =
        run_monte_carlo(sc, opt.threads, opt.raw ? &raw : nullptr);
    write_summary_row(csv, sc, stats, manifest);
    csv.flush();
    if (opt.raw) write_raw_dump(dir, sc, raw);
    ++done;
    std::cout << "[" << done << "/" << manifest.scenarios.size() << "] "
              << sc.label << "  fwer "
              << (stats.fwer ? fmt4(*stats.fwer) : std::string("--"))
              << "  power " << fmt4(stats.power_pairwise) << "  familywise "
              << fmt4(stats.power_familywise) << "  median N "
              << fmt4(stats.n_hat.q50) << "\n";
  }
  std::cout << "wrote " << (dir / "summary.csv").string() << "\n";
  return 0;
}

int cmd_calibrate(const CommonOptions& opt) {
  const CliConfig config = resolve_config(opt);
  const RunManifest manifest = make_manifest(config);
  const CalibrationSpec& cal = config.calibration;
  if (cal.scenario_index < 0 ||
      cal.scenario_index >= static_cast<int>(manifest.scenarios.size()))
    throw ConfigError("config error at /calibration/scenario_index: out of range");
  const ScenarioConfig& base = manifest.scenarios[cal.scenario_index];
  const double target = cal.target_alpha > 0.0 ? cal.target_alpha : config.hyp.alpha;
  const long reps = opt.reps > 0      ? opt.reps
                    : cal.reps > 0    ? cal.reps
                                      : config.replications;

  std::vector<std::pair<double, double>> grid;
  for (double se2 : cal.sigma_e2)
    for (double sb2 : cal.sigma_b2) grid.emplace_back(se2, sb2);

  std::cout << "calibrate: scenario '" << base.label << "', target alpha "
            << fmt4(target) << ", " << grid.size() << " grid point(s), "
            << reps << " replicates per evaluation\n";

  const CalibrationResult res =
      calibrate_alpha(base, grid, target, reps, opt.threads);

  std::cout << "  grid FWER (sigma_e2, sigma_b2 -> fwer):\n";
  for (const auto& [se2, sb2, f] : res.grid_fwer)
    std::cout << "    " << fmt4(se2) << ", " << fmt4(sb2) << " -> " << fmt4(f)
              << "\n";
  std::cout << "  worst point: sigma_e2 " << fmt4(res.worst_sigma_e2)
            << ", sigma_b2 " << fmt4(res.worst_sigma_b2) << ", fwer "
            << fmt4(res.worst_fwer) << "\n";
  if (res.trace.empty()) {
    std::cout << "  no adjustment needed\n";
  } else {
    std::cout << "  bisection trace (alpha -> fwer):\n";
    for (const auto& [a, f] : res.trace)
      std::cout << "    " << fmt4(a) << " -> " << fmt4(f) << "\n";
  }
  std::cout << "  alpha_adj: " << fmt4(res.alpha_adj) << "\n";

  if (!opt.out_dir.empty()) {
    const fs::path dir = ensure_out_dir(opt.out_dir);
    nlohmann::json report;
    report["target_alpha"] = target;
    report["alpha_adj"] = res.alpha_adj;
    report["worst_sigma_e2"] = res.worst_sigma_e2;
    report["worst_sigma_b2"] = res.worst_sigma_b2;
    report["worst_fwer"] = res.worst_fwer;
    for (const auto& [se2, sb2, f] : res.grid_fwer)
      report["grid"].push_back({{"sigma_e2", se2}, {"sigma_b2", sb2}, {"fwer", f}});
    for (const auto& [a, f] : res.trace)
      report["trace"].push_back({{"alpha", a}, {"fwer", f}});
    std::ofstream out(dir / "calibration.json");
    if (!out) throw std::runtime_error("cannot write calibration.json");
    out << report.dump(2) << "\n";
    std::cout << "wrote " << (dir / "calibration.json").string() << "\n";
  }
  return 0;
}

int cmd_examples(const std::string& name, const std::string& out_path) {
  const CliConfig config = example_config(name);  // throws on unknown name
  const std::string path = out_path.empty() ? name + ".json" : out_path;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << config_to_json(config).dump(2) << "\n";
  std::cout << "wrote " << path << "\n";
  return 0;
}

}  // namespace xover::cli
