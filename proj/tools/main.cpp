#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "commands.hpp"
#include "config.hpp"

namespace {

using xover::cli::CommonOptions;

void add_common_flags(CLI::App* sub, CommonOptions& opt, bool with_raw) {
  sub->add_option("--config", opt.config_path, "scenario configuration file (JSON)");
  sub->add_option("--example", opt.example,
                  "built-in study: example1, example2 or example3");
  sub->add_option("--reps", opt.reps, "override the replication count");
  auto* seed = sub->add_option("--seed", opt.seed, "override the master seed");
  seed->each([&opt](const std::string&) { opt.seed_set = true; });
  sub->add_option("--threads", opt.threads, "worker threads (default 1, or XOVER_THREADS)")
      ->envname("XOVER_THREADS");
  sub->add_option("--out", opt.out_dir, "output directory");
  if (with_raw)
    sub->add_flag("--raw", opt.raw, "also dump one CSV row per replicate");
  sub->add_option("--inflation", [&opt](const std::vector<std::string>& vals) {
        if (vals.empty()) return false;
        if (vals[0] == "on") opt.inflation = 1;
        else if (vals[0] == "off") opt.inflation = 0;
        else return false;
        return true;
      },
      "force the re-estimation inflation factor on or off")
      ->expected(1)
      ->check(CLI::IsMember({"on", "off"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crossover trial design and blinded sample size re-estimation"};
  app.require_subcommand(1);

  CommonOptions opt;
  std::string example_name, example_out;

  CLI::App* design = app.add_subcommand("design", "design-stage report: e, alpha*, N");
  add_common_flags(design, opt, false);
  CLI::App* simulate = app.add_subcommand("simulate", "Monte Carlo operating characteristics");
  add_common_flags(simulate, opt, true);
  CLI::App* calibrate = app.add_subcommand("calibrate", "alpha adjustment search");
  add_common_flags(calibrate, opt, false);
  CLI::App* examples = app.add_subcommand("examples", "write a ready-to-run example config");
  examples->add_option("name", example_name, "example1, example2 or example3")->required();
  examples->add_option("--out", example_out, "output file (default <name>.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (design->parsed()) return xover::cli::cmd_design(opt);
    if (simulate->parsed()) return xover::cli::cmd_simulate(opt);
    if (calibrate->parsed()) return xover::cli::cmd_calibrate(opt);
    if (examples->parsed()) return xover::cli::cmd_examples(example_name, example_out);
  } catch (const xover::cli::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
