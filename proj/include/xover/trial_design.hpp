#pragma once

#include <string>
#include <vector>

namespace xover {

// Treatment sequence set for a crossover trial. Row k of `sequences` is the
// treatment index (0 = control) administered in each of the P periods to
// patients randomised to sequence k.
struct TrialDesign {
  std::vector<std::vector<int>> sequences;  // K rows, P columns, entries in 0..D-1
  int D = 0;                                // number of treatments
  int P = 0;                                // number of periods
  int K = 0;                                // number of sequences
  bool period_balanced = false;
  bool complete_block = false;

  int treatment(int period, int seq) const { return sequences[seq][period]; }
};

// Construct a TrialDesign from a sequence set, validating entries and
// computing the balance flags.
TrialDesign make_design(std::vector<std::vector<int>> sequences, int D);

struct ModelParams {
  double mu0 = 0.0;
  std::vector<double> pi;   // size P, pi[0] == 0
  std::vector<double> tau;  // size D, tau[0] == 0
  double sigma_e2 = 1.0;    // within-person variance
  double sigma_b2 = 0.0;    // between-person variance
};

enum class Direction { greater, less, two_sided };
enum class PowerKind { pairwise, familywise };

struct HypothesisSpec {
  Direction direction = Direction::greater;
  double delta = 0.0;  // signed clinically relevant difference
  double alpha = 0.05;
  double beta = 0.2;
  PowerKind power_kind = PowerKind::pairwise;
};

struct BalanceReport {
  bool balanced = false;
  // counts[j][d] = number of sequences administering treatment d in period j
  std::vector<std::vector<int>> counts;
  // The two identities the blinded estimators rely on, checked symbolically
  // on the counts: per-period treatment totals equal across periods, hence
  // sum_k (tau_{d(j,k)} - tau_{d(j-1,k)}) = 0 for any tau.
  bool adjacent_difference_identity = false;
  bool constant_period_total_identity = false;
};

BalanceReport check_period_balance(const TrialDesign& design);

// Williams square: K=D complete-block period-balanced design. Even D gives a
// single D x D square. Odd D has no single square; the standard construction
// pairs the cyclic square with its reversal (2D sequences) unless the caller
// insists on a single square, which is an error.
TrialDesign williams_square(int D, bool require_single_square = false);

struct BuiltinExample {
  std::string name;
  TrialDesign design;
  ModelParams params;
  HypothesisSpec hyp;
  std::vector<double> tau_observed;  // fitted effects reported for the trial
  // values the motivating analyses used for n_int / n_B sweeps
  std::vector<int> n_int_values;
  std::vector<int> n_B_values;
  int n_max = 1000;
};

// example1: four-treatment four-period complete-block trial (sleep apnoea
// devices); example2: three-treatment two-period incomplete-block trial
// (formoterol doses); example3: two-treatment three-period extra-period
// trial (hypertension).
BuiltinExample builtin_design(const std::string& name);

}  // namespace xover
