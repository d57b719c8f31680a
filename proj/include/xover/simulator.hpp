#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xover/estimators.hpp"
#include "xover/rng.hpp"
#include "xover/sample_size.hpp"
#include "xover/trial_design.hpp"

namespace xover {

enum class Method {
  unblinded,
  adjusted_null,
  adjusted_alternative,
  adjusted_custom,
  block
};

std::string method_name(Method m);

enum class TauScenario { global_null, tau1_only, tau12_only, global_alt, observed, custom };

std::string tau_scenario_name(TauScenario s);

// Expands a scenario label into the tau vector it stands for; `observed`
// uses the example's fitted effects, the others place delta in the leading
// entries.
std::vector<double> tau_for_scenario(TauScenario s, int D, double delta,
                                     const std::vector<double>& tau_observed,
                                     const std::vector<double>& tau_custom);

struct ScenarioConfig {
  TrialDesign design;
  ModelParams true_params;       // tau filled per tau_scenario
  TauScenario tau_scenario = TauScenario::global_null;
  HypothesisSpec hyp;
  ReestimationPolicy policy;
  Method method = Method::unblinded;
  std::vector<double> tau_custom;     // adjusted_custom tau*
  std::vector<double> tau_observed;   // example's fitted effects
  long replications = 1;
  std::uint64_t master_seed = 1;
  std::uint64_t scenario_id = 0;      // offsets the replicate RNG streams
  double random_period_sd = 0.0;      // sigma_pi for per-replicate period draws
  std::string label;
};

struct TrialResult {
  long n_hat = 0;          // clamped ceil of N(.)
  long realised_n = 0;     // after rounding; actual patients analysed
  VarianceEstimate interim;
  std::vector<bool> rejected;  // per hypothesis d = 1..D-1
  bool any_rejection = false;
  bool final_fit_converged = true;
  bool uneven_block_allocation = false;
};

struct Quartiles {
  double q25 = 0.0, q50 = 0.0, q75 = 0.0;
};

struct SummaryStats {
  long reps = 0;
  // FWER = P(reject at least one TRUE null); absent when the scenario leaves
  // no true nulls (global alternative).
  std::optional<double> fwer;
  double fwer_se = 0.0;
  double power_pairwise = 0.0;    // P(reject H01)
  double power_familywise = 0.0;  // P(reject any hypothesis)
  Quartiles sigma_e2_hat, sigma_b2_hat, n_hat;
  double mean_realised_n = 0.0;
  long nonconverged = 0;
  long uneven_allocation_count = 0;
};

// Rejects inconsistent scenarios (divisibility of n_int, method/policy
// mismatches, bad test levels) before any replicate runs.
void validate_scenario(const ScenarioConfig& config);

// Simple randomisation: exactly n/K patients per sequence, order shuffled.
PatientAllocation allocate_simple(const TrialDesign& design, int n, Rng& rng);

// Block randomisation: n/n_B sequence-homogeneous blocks; block-to-sequence
// assignment cycles through the K sequences in randomly permuted rounds.
// Equal sequence counts whenever the block count divides by K; otherwise as
// even as possible (flagged by the caller via block_counts_even).
PatientAllocation allocate_block(const TrialDesign& design, int n, int n_B,
                                 Rng& rng);

bool block_counts_even(const PatientAllocation& alloc, int K);

// Stateful variant used by run_trial so the second stage continues the
// rotation where stage 1 left off.
class BlockScheme {
 public:
  BlockScheme(const TrialDesign& design, int n_B);
  // Appends n patients (n divisible by n_B) to alloc.
  void take(int n, PatientAllocation& alloc, Rng& rng);

 private:
  const TrialDesign* design_;
  int n_B_;
  std::vector<int> round_;  // current permuted round of sequences
  std::size_t pos_ = 0;
  int next_block_ = 0;
};

// y_ij = mu0 + pi_j + tau_{d(j,k(i))} + s_i + eps_ij. If random_period_sd > 0
// the period effects are drawn once per call as N(pi_j, sd^2) for j >= 2.
std::vector<std::vector<double>> simulate_responses(
    const PatientAllocation& alloc, const TrialDesign& design,
    const ModelParams& params, Rng& rng, double random_period_sd = 0.0);

// One replicate of the two-stage pipeline: simulate the internal pilot,
// estimate variances by the configured method, re-estimate N, recruit the
// remainder, REML-fit everything and apply the Dunnett-type test.
TrialResult run_trial(const ScenarioConfig& config, Rng& rng);

// All replicates of one scenario, deterministically parallel: replicate r
// always uses Rng::for_replicate(master_seed, scenario_id, r), results land
// in replicate order and are reduced sequentially, so the summary is
// bit-identical for any thread count.
SummaryStats run_monte_carlo(const ScenarioConfig& config, int threads = 1,
                             std::vector<TrialResult>* raw = nullptr);

SummaryStats summarize(const std::vector<TrialResult>& results,
                       const ScenarioConfig& config);

struct CalibrationResult {
  double alpha_adj = 0.0;
  double worst_sigma_e2 = 0.0;
  double worst_sigma_b2 = 0.0;
  double worst_fwer = 0.0;   // at the nominal alpha
  std::vector<std::tuple<double, double, double>> grid_fwer;  // (se2, sb2, fwer)
  std::vector<std::pair<double, double>> trace;               // (alpha, fwer)
};

// Two-stage calibration: find the (sigma_e2, sigma_b2) grid point maximising
// the simulated FWER under the global null, then bisect on
// the nominal alpha until the simulated FWER at that point is within one
// Monte Carlo SE of target_alpha. If the FWER at the target alpha is already
// within tolerance (no inflation), returns target_alpha unchanged.
CalibrationResult calibrate_alpha(const ScenarioConfig& config,
                                  const std::vector<std::pair<double, double>>& sigma_grid,
                                  double target_alpha, long reps, int threads = 1);

}  // namespace xover
