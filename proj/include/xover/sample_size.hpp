#pragma once

#include <Eigen/Dense>

#include "xover/numerics.hpp"
#include "xover/trial_design.hpp"

namespace xover {

// Per-patient information under equal allocation: building X for one patient
// per sequence (N = K) and inverting X'Sigma^-1 X gives Var(tau_hat) at N = K;
// i_d = 1/(K * Var(tau_hat_d)) scales as I_d = N * i_d for any N that keeps
// allocation equal. q_corr is the correlation of the design-stage statistics
// Q (the tau block of the covariance), independent of N.
struct DesignInformation {
  Eigen::VectorXd unit_info;  // i_d, d = 1..D-1
  Eigen::MatrixXd q_corr;     // (D-1) x (D-1)
  double alpha_star = 0.0;    // implied per-comparison level, set alongside e
};

DesignInformation unit_information(const TrialDesign& design, double sigma_e2,
                                   double sigma_b2);

struct CriticalValue {
  double e = 0.0;
  double alpha_star = 0.0;  // 1 - Phi(e)
};

// Equicoordinate design-stage critical value: solves
//   1 - alpha   = Phi_{D-1}{(e,...,e), q_corr}   (one-sided)
//   1 - alpha/2 = Phi_{D-1}{(e,...,e), q_corr}   (two-sided)
CriticalValue design_critical_value(const Eigen::MatrixXd& q_corr, double alpha,
                                    Direction direction);

// N(sigma_e2, sigma_b2) = (z_{1-alpha*} + z_{1-beta})^2 / (delta^2 i_1).
// For complete-block period-balanced designs this equals
// 2 sigma_e2 (z_{1-alpha*} + z_{1-beta})^2 / delta^2 and has no sigma_b2
// dependence. A nonpositive/degenerate variance input yields 0 so the
// re-estimation clamp can take over.
double required_n_pairwise(const TrialDesign& design, double sigma_e2,
                           double sigma_b2, const HypothesisSpec& hyp);

// Smallest integer N with familywise power
//   1 - Phi_{D-1}{(e - delta sqrt(N i_d))_d, q_corr} >= 1 - beta.
long required_n_familywise(const TrialDesign& design, double sigma_e2,
                           double sigma_b2, const HypothesisSpec& hyp);

enum class RoundingRule { multiple_of_K, multiple_of_nB };

struct ReestimationPolicy {
  int n_int = 0;
  int n_max = 0;
  RoundingRule rounding = RoundingRule::multiple_of_K;
  int n_B = 0;  // block length when rounding to block multiples
  bool use_inflation_factor = false;
};

struct Reestimate {
  double n_unrounded = 0.0;  // N(.) after any inflation, before ceil/clamp
  long n_hat = 0;            // clamp(ceil(N), n_int, n_max)
  long n_final = 0;          // n_hat rounded up to the policy multiple
};

// Clamp then round so the second stage stays allocatable:
// N_hat = clamp(ceil(N(se2, sb2_trunc)), n_int, n_max), then
// rounded up to a multiple of K (simple) or n_B (block). With the inflation
// factor enabled, N(.) is multiplied before the ceil and the result re-clamped
// so it never exceeds n_max.
Reestimate reestimate(const ReestimationPolicy& policy, double sigma_e2_hat,
                      double sigma_b2_trunc, const TrialDesign& design,
                      const HypothesisSpec& hyp);

// ((t_{1-alpha,nu} + t_{1-beta,nu}) / (z_{1-alpha} + z_{1-beta}))^2
double inflation_factor(double alpha, double beta, double nu_nint);

// Analysis degrees of freedom from the multi-level ANOVA analogy.
inline long analysis_df(long N, int P, int D) {
  return (N - 1) * static_cast<long>(P - 1) - (D - 1);
}

// Critical value of the final Dunnett-type test: solves
//   1 - alpha (or 1 - alpha/2) = Psi_{D-1}{(e,...,e), corr(T), nu_N}
// where corr(T) is extracted from the tau block of the FITTED Var(beta_hat).
double analysis_critical_value(const Eigen::MatrixXd& var_beta, long N, int D,
                               int P, double alpha, Direction direction);

// Correlation of (T_1..T_{D-1}) from a fitted covariance of beta_hat.
Eigen::MatrixXd t_statistic_correlation(const Eigen::MatrixXd& var_beta, int D,
                                        int P);

}  // namespace xover
