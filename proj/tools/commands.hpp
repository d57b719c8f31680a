#pragma once

#include <cstdint>
#include <string>

namespace xover::cli {

struct CommonOptions {
  std::string config_path;
  std::string example;
  long reps = 0;            // 0: keep the config's value
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
  std::string out_dir;      // empty: print-only for design/calibrate
  bool raw = false;
  int inflation = -1;       // -1 unset, 0 forced off, 1 forced on
};

int cmd_design(const CommonOptions& opt);
int cmd_simulate(const CommonOptions& opt);
int cmd_calibrate(const CommonOptions& opt);
int cmd_examples(const std::string& name, const std::string& out_path);

}  // namespace xover::cli
