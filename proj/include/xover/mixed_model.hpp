#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "xover/trial_design.hpp"

namespace xover {

struct PatientAllocation {
  std::vector<int> sequence;           // k(i) for each patient, 0-based
  std::vector<int> block;              // b(i); empty unless block randomised
  int N() const { return static_cast<int>(sequence.size()); }
  bool has_blocks() const { return !block.empty(); }
};

// Sigma_P = sigma_e2 * I_P + sigma_b2 * J_P, the per-patient covariance block.
// Never materialised at NP x NP; inverse and log-determinant are closed form.
struct BlockCovariance {
  double sigma_e2 = 1.0;
  double sigma_b2 = 0.0;
  int P = 1;

  // log|Sigma_P| from the eigenvalues sigma_e2 (multiplicity P-1) and
  // sigma_e2 + P*sigma_b2 (multiplicity 1).
  double log_det() const;
};

Eigen::MatrixXd block_sigma_inverse(const BlockCovariance& cov);

struct FitResult {
  Eigen::VectorXd beta_hat;   // (mu0, pi_2..pi_P, tau_1..tau_{D-1})
  Eigen::MatrixXd var_beta;   // (X' Sigma^-1 X)^-1 at the fitted variances
  double sigma_e2_hat = 0.0;
  double sigma_b2_hat = 0.0;  // boundary-constrained, >= 0
  double reml_loglik = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Fixed-effects design matrix: row for patient i, period j carries the
// intercept, a period-j indicator (j >= 2) and a treatment indicator for
// d(j, k(i)) when nonzero. Rows are patient-major, period-minor. Columns:
// 1 + (P-1) + (D-1).
Eigen::MatrixXd build_design_matrix(const TrialDesign& design,
                                    const PatientAllocation& alloc);

// GLS with known variances: beta_hat = (X'S^-1X)^-1 X'S^-1 y, computed from
// per-patient blocks. y is patient-major period-minor, length N*P.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> gls_fit(const Eigen::VectorXd& y,
                                                    const Eigen::MatrixXd& X,
                                                    const BlockCovariance& cov);

// Restricted log-likelihood
//   -1/2 log|Sigma| - 1/2 (y - X beta_hat)' Sigma^-1 (y - X beta_hat)
//   -1/2 log|X' Sigma^-1 X|
// with beta_hat the GLS estimate at (sigma_e2, sigma_b2).
double reml_loglik(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, int P,
                   double sigma_e2, double sigma_b2);

// Per-dataset sufficient statistics that make repeated REML evaluations cheap:
// every quantity in the restricted likelihood reduces to the fixed set
// {X'X, sum_i u_i u_i', X'y, sum_i u_i s_i, y'y, sum_i s_i^2} where u_i is the
// per-patient column sum of X_i and s_i the per-patient response sum.
class RemlWorkspace {
 public:
  RemlWorkspace(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, int P);

  double loglik(double sigma_e2, double sigma_b2) const;
  // beta_hat and (X'S^-1X)^-1 at the given variances.
  std::pair<Eigen::VectorXd, Eigen::MatrixXd> gls(double sigma_e2,
                                                  double sigma_b2) const;
  int n_patients() const { return n_; }
  int periods() const { return P_; }
  // Method-of-moments seed for the optimiser starts.
  std::pair<double, double> moment_start() const;

 private:
  int n_, P_;
  Eigen::MatrixXd A_;   // X'X
  Eigen::MatrixXd B_;   // sum_i u_i u_i'
  Eigen::VectorXd v_;   // X'y
  Eigen::VectorXd w_;   // sum_i u_i s_i
  double yy_ = 0.0;     // y'y
  double ss_ = 0.0;     // sum_i s_i^2
  double var_within_ = 0.0, var_sums_ = 0.0;  // crude moments for starts
};

// REML fit of the crossover mixed model: maximises reml_loglik over
// sigma_e2 > 0, sigma_b2 >= 0 by Nelder-Mead in (log sigma_e2, sigma_b2)
// with sigma_b2 reflected at zero, three starts (method-of-moments seed,
// x4, x1/4), then a boundary polish at sigma_b2 = 0 so boundary optima land
// exactly on zero. Convergence flag: relative loglik tolerance 1e-8.
FitResult reml_fit(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, int P);

}  // namespace xover
