#include "xover/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "xover/mixed_model.hpp"

namespace xover {

std::string method_name(Method m) {
  switch (m) {
    case Method::unblinded: return "unblinded";
    case Method::adjusted_null: return "adjusted_null";
    case Method::adjusted_alternative: return "adjusted_alternative";
    case Method::adjusted_custom: return "adjusted_custom";
    case Method::block: return "block";
  }
  return "unknown";
}

std::string tau_scenario_name(TauScenario s) {
  switch (s) {
    case TauScenario::global_null: return "global_null";
    case TauScenario::tau1_only: return "tau1_only";
    case TauScenario::tau12_only: return "tau12_only";
    case TauScenario::global_alt: return "global_alt";
    case TauScenario::observed: return "observed";
    case TauScenario::custom: return "custom";
  }
  return "unknown";
}

std::vector<double> tau_for_scenario(TauScenario s, int D, double delta,
                                     const std::vector<double>& tau_observed,
                                     const std::vector<double>& tau_custom) {
  std::vector<double> tau(D, 0.0);
  switch (s) {
    case TauScenario::global_null:
      break;
    case TauScenario::tau1_only:
      tau[1] = delta;
      break;
    case TauScenario::tau12_only:
      if (D < 3)
        throw std::invalid_argument("tau scenario tau12_only needs at least 3 treatments");
      tau[1] = delta;
      tau[2] = delta;
      break;
    case TauScenario::global_alt:
      for (int d = 1; d < D; ++d) tau[d] = delta;
      break;
    case TauScenario::observed:
      if (static_cast<int>(tau_observed.size()) != D)
        throw std::invalid_argument("tau scenario observed: tau_observed must have D entries");
      tau = tau_observed;
      break;
    case TauScenario::custom:
      if (static_cast<int>(tau_custom.size()) != D)
        throw std::invalid_argument("tau scenario custom: tau_custom must have D entries");
      tau = tau_custom;
      break;
  }
  return tau;
}

PatientAllocation allocate_simple(const TrialDesign& design, int n, Rng& rng) {
  if (n <= 0 || n % design.K != 0)
    throw std::invalid_argument("simple allocation: n must be a positive multiple of K");
  PatientAllocation alloc;
  alloc.sequence.reserve(n);
  const int per = n / design.K;
  for (int k = 0; k < design.K; ++k)
    alloc.sequence.insert(alloc.sequence.end(), per, k);
  rng.shuffle(alloc.sequence.begin(), alloc.sequence.end());
  return alloc;
}

BlockScheme::BlockScheme(const TrialDesign& design, int n_B)
    : design_(&design), n_B_(n_B) {
  if (n_B < 1) throw std::invalid_argument("block scheme: block length must be >= 1");
  round_.resize(design.K);
  std::iota(round_.begin(), round_.end(), 0);
  pos_ = round_.size();  // first take() starts a fresh permuted round
}

void BlockScheme::take(int n, PatientAllocation& alloc, Rng& rng) {
  if (n <= 0 || n % n_B_ != 0)
    throw std::invalid_argument("block scheme: n must be a positive multiple of the block length");
  for (int b = 0; b < n / n_B_; ++b) {
    if (pos_ == round_.size()) {
      rng.shuffle(round_.begin(), round_.end());
      pos_ = 0;
    }
    const int k = round_[pos_++];
    for (int i = 0; i < n_B_; ++i) {
      alloc.sequence.push_back(k);
      alloc.block.push_back(next_block_);
    }
    ++next_block_;
  }
}

PatientAllocation allocate_block(const TrialDesign& design, int n, int n_B,
                                 Rng& rng) {
  BlockScheme scheme(design, n_B);
  PatientAllocation alloc;
  scheme.take(n, alloc, rng);
  return alloc;
}

bool block_counts_even(const PatientAllocation& alloc, int K) {
  std::vector<int> counts(K, 0);
  for (int k : alloc.sequence) {
    if (k < 0 || k >= K)
      throw std::invalid_argument("allocation references a sequence outside the design");
    ++counts[k];
  }
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  return *lo == *hi;
}

std::vector<std::vector<double>> simulate_responses(
    const PatientAllocation& alloc, const TrialDesign& design,
    const ModelParams& params, Rng& rng, double random_period_sd) {
  const int P = design.P;
  if (static_cast<int>(params.pi.size()) != P ||
      static_cast<int>(params.tau.size()) != design.D)
    throw std::invalid_argument("simulate_responses: parameter sizes disagree with design");
  std::vector<double> pi_eff = params.pi;
  if (random_period_sd > 0.0)
    for (int j = 1; j < P; ++j)
      pi_eff[j] += random_period_sd * rng.next_normal();
  const double sd_b = std::sqrt(std::max(0.0, params.sigma_b2));
  const double sd_e = std::sqrt(std::max(0.0, params.sigma_e2));
  std::vector<std::vector<double>> y(alloc.N(), std::vector<double>(P));
  for (int i = 0; i < alloc.N(); ++i) {
    const int k = alloc.sequence[i];
    const double s_i = sd_b > 0.0 ? sd_b * rng.next_normal() : 0.0;
    for (int j = 0; j < P; ++j) {
      const double eps = sd_e > 0.0 ? sd_e * rng.next_normal() : 0.0;
      y[i][j] = params.mu0 + pi_eff[j] + params.tau[design.treatment(j, k)] +
                s_i + eps;
    }
  }
  return y;
}

void validate_scenario(const ScenarioConfig& config) {
  const TrialDesign& d = config.design;
  const ReestimationPolicy& pol = config.policy;
  if (config.replications < 1)
    throw std::invalid_argument("scenario: replications must be >= 1");
  if (pol.n_int < 1 || pol.n_int > pol.n_max)
    throw std::invalid_argument("scenario: need 0 < n_int <= n_max");
  if (config.method == Method::block) {
    if (pol.n_B < 1)
      throw std::invalid_argument("scenario: block method needs a block length");
    if (pol.n_int % pol.n_B != 0)
      throw std::invalid_argument("scenario: n_int must be a multiple of the block length");
    if (pol.rounding != RoundingRule::multiple_of_nB)
      throw std::invalid_argument("scenario: block method requires block-multiple rounding");
  } else if (pol.n_int % d.K != 0) {
    throw std::invalid_argument("scenario: n_int must be a multiple of K for simple randomisation");
  }
  if (!(config.hyp.alpha > 0.0) || !(config.hyp.alpha < 1.0) ||
      !(config.hyp.beta > 0.0) || !(config.hyp.beta < 1.0))
    throw std::invalid_argument("scenario: alpha and beta must be in (0,1)");
  if (config.hyp.delta == 0.0)
    throw std::invalid_argument("scenario: delta must be nonzero");
  if (config.random_period_sd < 0.0)
    throw std::invalid_argument("scenario: random period sd must be >= 0");
  // force the tau expansion errors (size mismatches) out of the replicate loop
  (void)tau_for_scenario(config.tau_scenario, d.D, config.hyp.delta,
                         config.tau_observed, config.tau_custom);
  if (config.method == Method::adjusted_custom &&
      static_cast<int>(config.tau_custom.size()) != d.D)
    throw std::invalid_argument("scenario: adjusted_custom needs a D-entry tau_custom");
}

namespace {

AdjustmentSpec adjustment_for(const ScenarioConfig& config) {
  switch (config.method) {
    case Method::adjusted_null:
      return AdjustmentSpec::null_adjustment(config.design.D);
    case Method::adjusted_alternative:
      return AdjustmentSpec::alternative_adjustment(config.design.D,
                                                    config.hyp.delta);
    default: {
      AdjustmentSpec spec;
      spec.kind = AdjustmentKind::custom;
      spec.tau_star = config.tau_custom;
      return spec;
    }
  }
}

}  // namespace

TrialResult run_trial(const ScenarioConfig& config, Rng& rng) {
  validate_scenario(config);
  const TrialDesign& design = config.design;
  const int D = design.D, P = design.P;

  ModelParams truth = config.true_params;
  truth.tau = tau_for_scenario(config.tau_scenario, D, config.hyp.delta,
                               config.tau_observed, config.tau_custom);
  // period effects are a per-trial draw, shared by both recruitment stages
  if (config.random_period_sd > 0.0)
    for (int j = 1; j < P; ++j)
      truth.pi[j] += config.random_period_sd * rng.next_normal();

  PatientAllocation alloc;
  BlockScheme scheme(design, std::max(1, config.policy.n_B));
  if (config.method == Method::block)
    scheme.take(config.policy.n_int, alloc, rng);
  else
    alloc = allocate_simple(design, config.policy.n_int, rng);
  std::vector<std::vector<double>> responses =
      simulate_responses(alloc, design, truth, rng, 0.0);

  TrialResult out;
  out.rejected.assign(D - 1, false);

  InterimData interim;
  interim.responses = responses;
  interim.alloc = alloc;
  interim.design = &design;
  try {
    switch (config.method) {
      case Method::unblinded:
        out.interim = unblinded_estimate(interim);
        break;
      case Method::block:
        out.interim = block_blinded_estimate(interim);
        break;
      default:
        out.interim = adjusted_blinded_estimate(interim, adjustment_for(config));
        break;
    }
  } catch (const std::runtime_error&) {
    // degenerate interim data; fall back to the lower clamp and flag it
    out.interim.sigma_e2_hat = 0.0;
    out.interim.sigma_b2_raw = 0.0;
    out.interim.sigma_b2_trunc = 0.0;
    out.interim.method = method_name(config.method);
    out.interim.converged = false;
  }

  const Reestimate re = reestimate(config.policy, out.interim.sigma_e2_hat,
                                   out.interim.sigma_b2_trunc, design, config.hyp);
  out.n_hat = re.n_hat;
  out.realised_n = re.n_final;

  const int extra = static_cast<int>(re.n_final) - config.policy.n_int;
  if (extra > 0) {
    PatientAllocation second;
    if (config.method == Method::block)
      scheme.take(extra, second, rng);
    else
      second = allocate_simple(design, extra, rng);
    const auto more = simulate_responses(second, design, truth, rng, 0.0);
    for (int i = 0; i < second.N(); ++i) {
      alloc.sequence.push_back(second.sequence[i]);
      if (config.method == Method::block) alloc.block.push_back(second.block[i]);
      responses.push_back(more[i]);
    }
  }

  if (config.method == Method::block)
    out.uneven_block_allocation = !block_counts_even(alloc, design.K);

  const int N = alloc.N();
  Eigen::VectorXd y(N * P);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < P; ++j) y[i * P + j] = responses[i][j];
  try {
    const Eigen::MatrixXd X = build_design_matrix(design, alloc);
    const FitResult fit = reml_fit(y, X, P);
    const double e = analysis_critical_value(fit.var_beta, N, D, P,
                                             config.hyp.alpha, config.hyp.direction);
    for (int d = 1; d < D; ++d) {
      const int idx = P - 1 + d;
      const double t = fit.beta_hat[idx] / std::sqrt(fit.var_beta(idx, idx));
      bool rej = false;
      switch (config.hyp.direction) {
        case Direction::greater: rej = t > e; break;
        case Direction::less: rej = t < -e; break;
        case Direction::two_sided: rej = std::fabs(t) > e; break;
      }
      out.rejected[d - 1] = rej;
      out.any_rejection = out.any_rejection || rej;
    }
    out.final_fit_converged = fit.converged && out.interim.converged;
  } catch (const std::exception&) {
    out.final_fit_converged = false;
  }
  return out;
}

SummaryStats run_monte_carlo(const ScenarioConfig& config, int threads,
                             std::vector<TrialResult>* raw) {
  validate_scenario(config);
  const long R = config.replications;
  std::vector<TrialResult> results(R);
  auto worker_body = [&](long r) {
    Rng rng = Rng::for_replicate(config.master_seed, config.scenario_id,
                                 static_cast<std::uint64_t>(r));
    results[r] = run_trial(config, rng);
  };
  const int workers = static_cast<int>(
      std::min<long>(std::max(1, threads), R));
  if (workers <= 1) {
    for (long r = 0; r < R; ++r) worker_body(r);
  } else {
    std::atomic<long> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const long r = next.fetch_add(1);
          if (r >= R) return;
          try {
            worker_body(r);
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
            return;
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }
  SummaryStats stats = summarize(results, config);
  if (raw != nullptr) *raw = std::move(results);
  return stats;
}

namespace {

Quartiles quartiles_type7(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const auto at = [&](double p) {
    const double h = (static_cast<double>(values.size()) - 1.0) * p;
    const std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + (h - lo) * (values[lo + 1] - values[lo]);
  };
  return {at(0.25), at(0.50), at(0.75)};
}

}  // namespace

SummaryStats summarize(const std::vector<TrialResult>& results,
                       const ScenarioConfig& config) {
  if (results.empty())
    throw std::invalid_argument("summarize: no replicates");
  const int D = config.design.D;
  const std::vector<double> truth_tau =
      tau_for_scenario(config.tau_scenario, D, config.hyp.delta,
                       config.tau_observed, config.tau_custom);
  std::vector<int> true_nulls;
  for (int d = 1; d < D; ++d)
    if (truth_tau[d] == 0.0) true_nulls.push_back(d - 1);

  SummaryStats stats;
  stats.reps = static_cast<long>(results.size());
  long fwer_hits = 0, pair_hits = 0, fam_hits = 0;
  double realised_sum = 0.0;
  std::vector<double> se2, sb2, nhat;
  se2.reserve(results.size());
  sb2.reserve(results.size());
  nhat.reserve(results.size());
  for (const TrialResult& r : results) {
    if (!true_nulls.empty()) {
      bool hit = false;
      for (int idx : true_nulls) hit = hit || r.rejected[idx];
      fwer_hits += hit ? 1 : 0;
    }
    pair_hits += r.rejected[0] ? 1 : 0;
    fam_hits += r.any_rejection ? 1 : 0;
    realised_sum += static_cast<double>(r.realised_n);
    se2.push_back(r.interim.sigma_e2_hat);
    sb2.push_back(r.interim.sigma_b2_trunc);
    nhat.push_back(static_cast<double>(r.n_hat));
    stats.nonconverged += r.final_fit_converged ? 0 : 1;
    stats.uneven_allocation_count += r.uneven_block_allocation ? 1 : 0;
  }
  const double R = static_cast<double>(stats.reps);
  if (!true_nulls.empty()) {
    const double p = fwer_hits / R;
    stats.fwer = p;
    stats.fwer_se = std::sqrt(p * (1.0 - p) / R);
  }
  stats.power_pairwise = pair_hits / R;
  stats.power_familywise = fam_hits / R;
  stats.mean_realised_n = realised_sum / R;
  stats.sigma_e2_hat = quartiles_type7(std::move(se2));
  stats.sigma_b2_hat = quartiles_type7(std::move(sb2));
  stats.n_hat = quartiles_type7(std::move(nhat));
  return stats;
}

CalibrationResult calibrate_alpha(
    const ScenarioConfig& config,
    const std::vector<std::pair<double, double>>& sigma_grid, double target_alpha,
    long reps, int threads) {
  if (sigma_grid.empty())
    throw std::invalid_argument("calibrate_alpha: sigma grid must be nonempty");
  if (!(target_alpha > 0.0) || !(target_alpha < 1.0))
    throw std::invalid_argument("calibrate_alpha: target alpha must be in (0,1)");

  auto fwer_at = [&](double se2, double sb2, double alpha,
                     std::uint64_t stream) -> std::pair<double, double> {
    ScenarioConfig c = config;
    c.true_params.sigma_e2 = se2;
    c.true_params.sigma_b2 = sb2;
    c.tau_scenario = TauScenario::global_null;
    c.hyp.alpha = alpha;
    c.replications = reps;
    c.scenario_id = stream;
    const SummaryStats s = run_monte_carlo(c, threads);
    return {s.fwer.value_or(0.0), s.fwer_se};
  };

  CalibrationResult out;
  double worst = -1.0, worst_se = 0.0;
  for (std::size_t g = 0; g < sigma_grid.size(); ++g) {
    const auto [se2, sb2] = sigma_grid[g];
    const auto [f, se] = fwer_at(se2, sb2, target_alpha,
                                 config.scenario_id + 1 + static_cast<std::uint64_t>(g));
    out.grid_fwer.emplace_back(se2, sb2, f);
    if (f > worst) {
      worst = f;
      worst_se = se;
      out.worst_sigma_e2 = se2;
      out.worst_sigma_b2 = sb2;
    }
  }
  out.worst_fwer = worst;

  if (worst <= target_alpha + worst_se) {
    out.alpha_adj = target_alpha;  // no material inflation at the worst point
    return out;
  }

  // fixed replicate streams for every bisection probe: common random numbers
  // keep the simulated FWER effectively monotone in the nominal level
  const std::uint64_t stream = config.scenario_id + 7777;
  double lo = target_alpha / 4.0, hi = target_alpha;
  for (int tries = 0; tries < 4; ++tries) {
    const auto [f, se] = fwer_at(out.worst_sigma_e2, out.worst_sigma_b2, lo, stream);
    out.trace.emplace_back(lo, f);
    if (f <= target_alpha + se) break;
    hi = lo;
    lo /= 4.0;
  }
  double best_alpha = lo, best_gap = 1.0;
  for (int iter = 0; iter < 24; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const auto [f, se] = fwer_at(out.worst_sigma_e2, out.worst_sigma_b2, mid, stream);
    out.trace.emplace_back(mid, f);
    const double gap = std::fabs(f - target_alpha);
    if (gap < best_gap) {
      best_gap = gap;
      best_alpha = mid;
    }
    if (gap <= se) break;
    (f > target_alpha ? hi : lo) = mid;
  }
  out.alpha_adj = best_alpha;
  return out;
}

}  // namespace xover
