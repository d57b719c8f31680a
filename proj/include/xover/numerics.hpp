#pragma once

#include <cstdint>
#include <functional>

#include <Eigen/Dense>

namespace xover::num {

struct IntegrationSettings {
  int qmc_points = 512;       // per randomisation (first stage; adaptively doubled)
  int randomisations = 12;    // independent random shifts
  double target_abs_error = 5e-5;
  std::uint64_t seed = 0x9e3779b97f4a7c15ull;
};

struct ProbEstimate {
  double value = 0.0;
  double error = 0.0;  // estimated standard error
};

double std_normal_pdf(double x);
double std_normal_cdf(double x);
// Wichura's AS 241 (PPND16); relative error ~1e-15 over (0,1).
double std_normal_quantile(double p);

double student_t_cdf(double x, double nu);
double student_t_quantile(double p, double nu);

// Regularised incomplete beta/gamma, used by the t and chi-square
// distributions. Series + Lentz continued fraction evaluation.
double regularized_incomplete_beta(double a, double b, double x);
double regularized_lower_gamma(double a, double x);

double chi2_cdf(double x, double nu);
double chi2_quantile(double p, double nu);

// P(X_i <= upper_i, i=1..M) for X ~ N(0, corr). Correlation must be symmetric
// with unit diagonal. M=2 evaluates the closed-form bivariate algorithm, M=3
// a conditioning quadrature over it (both deterministic, near machine
// precision for moderate correlations); exactly equicorrelated matrices with
// common rho >= 0 use a 1-factor quadrature; everything else falls back to
// the Genz separation-of-variables transform with a randomly shifted lattice
// rule (variables reordered by limit magnitude).
ProbEstimate mvn_cdf(const Eigen::VectorXd& upper, const Eigen::MatrixXd& corr,
                     const IntegrationSettings& settings = {});

// Central multivariate t rectangle probability at nu degrees of freedom
// (fractional nu accepted). Shares the MVN machinery through the chi scale
// mixture; M <= 3 and the equicorrelated case reduce to deterministic
// quadrature, the rest goes through the lattice rule.
ProbEstimate mvt_cdf(const Eigen::VectorXd& upper, const Eigen::MatrixXd& corr,
                     double nu, const IntegrationSettings& settings = {});

// Brent-style root solve for a continuous f with a sign change on [lo, hi].
// Falls back to bisection steps whenever the interpolation stalls, so
// convergence is guaranteed. Throws if f(lo) and f(hi) do not straddle zero.
double solve_root(const std::function<double(double)>& f, double lo, double hi,
                  double tol = 1e-10);

// Smallest N in [lower, upper] with pred(N) true, for pred monotone
// nondecreasing in N. Throws if pred(upper) is false.
long min_integer_satisfying(const std::function<bool(long)>& pred, long lower,
                            long upper);

}  // namespace xover::num
