#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "xover/rng.hpp"
#include "xover/simulator.hpp"
#include "xover/trial_design.hpp"

using namespace xover;

namespace {

ScenarioConfig base_scenario(const char* example, Method method) {
  BuiltinExample ex = builtin_design(example);
  ScenarioConfig config;
  config.design = ex.design;
  config.true_params = ex.params;
  config.hyp = ex.hyp;
  config.tau_observed = ex.tau_observed;
  config.method = method;
  config.policy.n_int = 2 * ex.design.K;
  config.policy.n_max = ex.n_max;
  config.policy.rounding = RoundingRule::multiple_of_K;
  config.replications = 50;
  config.master_seed = 97;
  return config;
}

}  // namespace

TEST_CASE("tau scenarios expand to the intended effect vectors") {
  const std::vector<double> observed = {0.0, -1.51, -2.15, -2.37};
  const double delta = -1.24;
  CHECK(tau_for_scenario(TauScenario::global_null, 4, delta, observed, {}) ==
        std::vector<double>{0, 0, 0, 0});
  CHECK(tau_for_scenario(TauScenario::tau1_only, 4, delta, observed, {}) ==
        std::vector<double>{0, delta, 0, 0});
  CHECK(tau_for_scenario(TauScenario::tau12_only, 4, delta, observed, {}) ==
        std::vector<double>{0, delta, delta, 0});
  CHECK(tau_for_scenario(TauScenario::global_alt, 4, delta, observed, {}) ==
        std::vector<double>{0, delta, delta, delta});
  CHECK(tau_for_scenario(TauScenario::observed, 4, delta, observed, {}) == observed);
  const std::vector<double> custom = {0.0, 1.0, 2.0, 3.0};
  CHECK(tau_for_scenario(TauScenario::custom, 4, delta, observed, custom) == custom);
}

TEST_CASE("simple randomisation balances sequences exactly") {
  TrialDesign d = builtin_design("example1").design;
  Rng rng(1);
  PatientAllocation alloc = allocate_simple(d, 12, rng);
  CHECK(alloc.N() == 12);
  CHECK_FALSE(alloc.has_blocks());
  std::vector<int> counts(d.K, 0);
  for (int k : alloc.sequence) ++counts[k];
  for (int c : counts) CHECK(c == 3);
  CHECK(block_counts_even(alloc, d.K));
  CHECK_THROWS_AS(allocate_simple(d, 13, rng), std::invalid_argument);

  Rng other(2);
  PatientAllocation again = allocate_simple(d, 12, other);
  CHECK(again.sequence != alloc.sequence);  // the order is a real shuffle
}

TEST_CASE("block randomisation keeps blocks on one sequence") {
  TrialDesign d = builtin_design("example1").design;
  Rng rng(5);
  PatientAllocation alloc = allocate_block(d, 48, 8, rng);
  CHECK(alloc.N() == 48);
  REQUIRE(alloc.has_blocks());
  // every block holds n_B patients of a single sequence
  std::set<int> labels(alloc.block.begin(), alloc.block.end());
  CHECK(static_cast<int>(labels.size()) == 6);
  for (int label : labels) {
    std::set<int> seqs;
    int members = 0;
    for (int i = 0; i < alloc.N(); ++i) {
      if (alloc.block[i] == label) {
        seqs.insert(alloc.sequence[i]);
        ++members;
      }
    }
    CHECK(members == 8);
    CHECK(seqs.size() == 1);
  }
  // 6 blocks cannot split evenly over 4 sequences
  CHECK_FALSE(block_counts_even(alloc, d.K));

  Rng rng2(6);
  PatientAllocation even = allocate_block(d, 32, 8, rng2);
  CHECK(block_counts_even(even, d.K));
}

TEST_CASE("block rotation never leaves a sequence two blocks behind") {
  TrialDesign d = builtin_design("example1").design;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    PatientAllocation alloc = allocate_block(d, 20, 4, rng);  // 5 blocks
    std::vector<int> counts(d.K, 0);
    for (int k : alloc.sequence) ++counts[k];
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    CHECK(*hi - *lo == 4);  // one sequence opens the second rotation round
  }
}

TEST_CASE("block scheme continues its rotation across stages") {
  TrialDesign d = builtin_design("example1").design;
  Rng rng(11);
  BlockScheme scheme(d, 4);
  PatientAllocation alloc;
  scheme.take(8, alloc, rng);
  CHECK(alloc.N() == 8);
  scheme.take(8, alloc, rng);
  CHECK(alloc.N() == 16);
  // four blocks, distinct labels, one full rotation round of the sequences
  std::set<int> labels(alloc.block.begin(), alloc.block.end());
  CHECK(labels.size() == 4);
  CHECK(block_counts_even(alloc, d.K));
}

TEST_CASE("simulated responses have the model moments") {
  BuiltinExample ex = builtin_design("example1");
  const int n = 4000;
  PatientAllocation alloc;
  for (int i = 0; i < n; ++i) alloc.sequence.push_back(i % ex.design.K);
  Rng rng(321);
  auto y = simulate_responses(alloc, ex.design, ex.params, rng);

  // within one sequence the adjacent differences share their mean and are
  // free of the random intercept, leaving variance 2 sigma_e2
  std::vector<double> p0;
  for (int i = 0; i < n; i += ex.design.K) p0.push_back(y[i][1] - y[i][0]);
  const int n0 = static_cast<int>(p0.size());
  double mean_p = 0.0, var_p = 0.0;
  for (double p : p0) mean_p += p;
  mean_p /= n0;
  for (double p : p0) var_p += (p - mean_p) * (p - mean_p);
  var_p /= (n0 - 1);
  const double want_var_p = 2.0 * ex.params.sigma_e2;
  CHECK(std::fabs(var_p - want_var_p) < 4.0 * want_var_p * std::sqrt(2.0 / n0));

  // per-patient means carry sigma_b2 + sigma_e2 / P
  double mean_m = 0.0, var_m = 0.0;
  std::vector<double> m(n);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < ex.design.P; ++j) s += y[i][j];
    m[i] = s / ex.design.P;
    mean_m += m[i];
  }
  mean_m /= n;
  for (int i = 0; i < n; ++i) var_m += (m[i] - mean_m) * (m[i] - mean_m);
  var_m /= (n - 1);
  const double want_var_m = ex.params.sigma_b2 + ex.params.sigma_e2 / ex.design.P;
  // patient means also differ through their sequences' effect averages, a
  // small fixed spread; stay within a generous band
  CHECK(std::fabs(var_m - want_var_m) < 5.0 * want_var_m * std::sqrt(2.0 / n) + 0.5);

  // grand mean of first-period responses across sequences
  double mean1 = 0.0;
  for (int i = 0; i < n; ++i) mean1 += y[i][0];
  mean1 /= n;
  double want1 = ex.params.mu0;
  for (int k = 0; k < ex.design.K; ++k)
    want1 += ex.params.tau[ex.design.treatment(0, k)] / ex.design.K;
  const double sd1 = std::sqrt(ex.params.sigma_b2 + ex.params.sigma_e2);
  CHECK(std::fabs(mean1 - want1) < 4.0 * sd1 / std::sqrt(double(n)));
}

TEST_CASE("random period effects vary between replicates when enabled") {
  BuiltinExample ex = builtin_design("example2");
  ScenarioConfig config = base_scenario("example2", Method::adjusted_null);
  config.policy.n_int = 18;
  config.policy.n_max = 36;
  config.random_period_sd = 3.0;
  config.replications = 1;
  Rng a = Rng::for_replicate(1, 0, 0);
  Rng b = Rng::for_replicate(1, 0, 1);
  TrialResult ra = run_trial(config, a);
  TrialResult rb = run_trial(config, b);
  // different period draws push the blinded estimates apart almost surely
  CHECK(ra.interim.sigma_e2_hat != rb.interim.sigma_e2_hat);
}

TEST_CASE("one replicate respects the clamp and rounding contract") {
  for (Method method : {Method::unblinded, Method::adjusted_null, Method::block}) {
    ScenarioConfig config = base_scenario("example1", method);
    config.policy.n_int = 16;
    config.policy.n_max = 120;
    if (method == Method::block) {
      config.policy.rounding = RoundingRule::multiple_of_nB;
      config.policy.n_B = 4;
    }
    for (std::uint64_t r = 0; r < 25; ++r) {
      Rng rng = Rng::for_replicate(13, 1, r);
      TrialResult res = run_trial(config, rng);
      CHECK(res.n_hat >= 16);
      CHECK(res.n_hat <= 120);
      CHECK(res.realised_n >= res.n_hat);
      const int mult = method == Method::block ? 4 : config.design.K;
      CHECK(res.realised_n % mult == 0);
      CHECK(res.rejected.size() == 3);
      CHECK(res.interim.sigma_e2_hat >= 0.0);
    }
  }
}

TEST_CASE("summary quartiles interpolate like the reference quantile") {
  ScenarioConfig config = base_scenario("example3", Method::unblinded);
  std::vector<TrialResult> results(4);
  for (int i = 0; i < 4; ++i) {
    results[i].n_hat = i + 1;
    results[i].realised_n = 4 * (i + 1);
    results[i].rejected = {false};
    results[i].interim.sigma_e2_hat = 10.0 * (i + 1);
    results[i].interim.sigma_b2_trunc = 2.0 * (i + 1);
  }
  SummaryStats stats = summarize(results, config);
  CHECK(stats.n_hat.q25 == doctest::Approx(1.75));
  CHECK(stats.n_hat.q50 == doctest::Approx(2.5));
  CHECK(stats.n_hat.q75 == doctest::Approx(3.25));
  CHECK(stats.n_hat.q50 ==
        doctest::Approx(oracle::quantile_type7({1, 2, 3, 4}, 0.5)));
  CHECK(stats.sigma_e2_hat.q25 == doctest::Approx(17.5));
  CHECK(stats.mean_realised_n == doctest::Approx(10.0));
}

TEST_CASE("family-wise error is only reported when a true null exists") {
  ScenarioConfig config = base_scenario("example2", Method::adjusted_null);
  config.policy.n_int = 18;
  config.policy.n_max = 36;
  config.replications = 60;

  config.tau_scenario = TauScenario::global_alt;
  SummaryStats alt = run_monte_carlo(config);
  CHECK_FALSE(alt.fwer.has_value());
  CHECK(alt.power_familywise > 0.0);

  config.tau_scenario = TauScenario::tau1_only;
  SummaryStats partial = run_monte_carlo(config);
  CHECK(partial.fwer.has_value());

  config.tau_scenario = TauScenario::global_null;
  SummaryStats null_case = run_monte_carlo(config);
  CHECK(null_case.fwer.has_value());
  CHECK(*null_case.fwer <= null_case.power_familywise);
}

TEST_CASE("scenario validation rejects inconsistent requests") {
  ScenarioConfig ok = base_scenario("example1", Method::unblinded);
  CHECK_NOTHROW(validate_scenario(ok));

  ScenarioConfig bad = ok;
  bad.policy.n_int = 10;  // not a multiple of K = 4
  CHECK_THROWS_AS(validate_scenario(bad), std::invalid_argument);

  bad = ok;
  bad.policy.n_max = 4;  // below n_int
  CHECK_THROWS_AS(validate_scenario(bad), std::invalid_argument);

  bad = ok;
  bad.method = Method::block;  // no block length, wrong rounding
  CHECK_THROWS_AS(validate_scenario(bad), std::invalid_argument);
  bad.policy.n_B = 4;
  CHECK_THROWS_AS(validate_scenario(bad), std::invalid_argument);
  bad.policy.rounding = RoundingRule::multiple_of_nB;
  CHECK_NOTHROW(validate_scenario(bad));

  bad = ok;
  bad.hyp.alpha = 0.0;
  CHECK_THROWS_AS(validate_scenario(bad), std::invalid_argument);

  bad = ok;
  bad.hyp.delta = 0.0;
  CHECK_THROWS_AS(validate_scenario(bad), std::invalid_argument);

  bad = ok;
  bad.replications = 0;
  CHECK_THROWS_AS(validate_scenario(bad), std::invalid_argument);

  bad = ok;
  bad.method = Method::adjusted_custom;  // needs a D-entry tau vector
  CHECK_THROWS_AS(validate_scenario(bad), std::invalid_argument);
  bad.tau_custom = {0.0, -1.0, -1.0, -1.0};
  CHECK_NOTHROW(validate_scenario(bad));
}

TEST_CASE("monte carlo summaries are identical at any thread count") {
  ScenarioConfig config = base_scenario("example2", Method::adjusted_alternative);
  config.policy.n_int = 18;
  config.policy.n_max = 60;
  config.replications = 150;
  config.master_seed = 31337;
  config.scenario_id = 9;
  SummaryStats one = run_monte_carlo(config, 1);
  SummaryStats eight = run_monte_carlo(config, 8);
  CHECK(one.power_pairwise == eight.power_pairwise);
  CHECK(one.power_familywise == eight.power_familywise);
  CHECK(one.fwer.has_value() == eight.fwer.has_value());
  CHECK(one.sigma_e2_hat.q25 == eight.sigma_e2_hat.q25);
  CHECK(one.sigma_e2_hat.q50 == eight.sigma_e2_hat.q50);
  CHECK(one.sigma_e2_hat.q75 == eight.sigma_e2_hat.q75);
  CHECK(one.sigma_b2_hat.q50 == eight.sigma_b2_hat.q50);
  CHECK(one.n_hat.q50 == eight.n_hat.q50);
  CHECK(one.mean_realised_n == eight.mean_realised_n);
  CHECK(one.nonconverged == eight.nonconverged);
}

TEST_CASE("fixed-size trials reject a true null at the nominal rate") {
  // with n_int = n_max the re-estimation cannot move the sample size, so the
  // final test is a plain Dunnett procedure and FWER should sit at alpha
  ScenarioConfig config = base_scenario("example1", Method::unblinded);
  config.policy.n_int = 72;
  config.policy.n_max = 72;
  config.tau_scenario = TauScenario::global_null;
  config.replications = 1500;
  config.master_seed = 2718;
  SummaryStats stats = run_monte_carlo(config);
  REQUIRE(stats.fwer.has_value());
  const double se = std::sqrt(0.05 * 0.95 / 1500.0);
  CHECK(std::fabs(*stats.fwer - 0.05) < 3.0 * se);

  // the complete-block design makes the rate insensitive to sigma_b2
  ScenarioConfig noisy = config;
  noisy.true_params.sigma_b2 = 40.48;
  noisy.master_seed = 2719;
  SummaryStats stats2 = run_monte_carlo(noisy);
  CHECK(std::fabs(*stats2.fwer - 0.05) < 3.0 * se);
}
