#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace oracle {

namespace bm = boost::math;

double normal_cdf(double x) { return bm::cdf(bm::normal_distribution<double>(), x); }
double normal_quantile(double p) { return bm::quantile(bm::normal_distribution<double>(), p); }
double t_cdf(double x, double nu) { return bm::cdf(bm::students_t_distribution<double>(nu), x); }
double t_quantile(double p, double nu) { return bm::quantile(bm::students_t_distribution<double>(nu), p); }
double chi2_quantile(double p, double nu) { return bm::quantile(bm::chi_squared_distribution<double>(nu), p); }

namespace {

double simpson(const std::function<double(double)>& f, double a, double b,
               double fa, double fm, double fb) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adapt(const std::function<double(double)>& f, double a, double b,
             double fa, double fm, double fb, double whole, double tol,
             int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = simpson(f, a, m, fa, flm, fm);
  const double right = simpson(f, m, b, fm, frm, fb);
  if (depth <= 0 || std::fabs(left + right - whole) <= 15.0 * tol) {
    return left + right + (left + right - whole) / 15.0;
  }
  return adapt(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adapt(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace

double integrate(const std::function<double(double)>& f, double a, double b,
                 double tol) {
  if (!(a < b)) return 0.0;
  const double m = 0.5 * (a + b);
  const double fa = f(a), fm = f(m), fb = f(b);
  return adapt(f, a, b, fa, fm, fb, simpson(f, a, b, fa, fm, fb), tol, 48);
}

namespace {
constexpr double kZCut = 9.5;  // beyond this the normal mass is < 1e-21

double phi(double x) {
  static const double inv_sqrt_2pi = 0.3989422804014326779;
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}
}  // namespace

double mvn_rectangle(const Eigen::VectorXd& upper, const Eigen::MatrixXd& corr,
                     double tol) {
  const int m = static_cast<int>(upper.size());
  if (m == 1) return normal_cdf(upper[0]);
  Eigen::LLT<Eigen::MatrixXd> llt(corr);
  if (llt.info() != Eigen::Success) throw std::runtime_error("corr not PD");
  const Eigen::MatrixXd L = llt.matrixL();
  if (m == 2) {
    const double b1 = std::min(upper[0], kZCut);
    if (b1 <= -kZCut) return 0.0;
    auto f = [&](double z1) {
      return phi(z1) * normal_cdf((upper[1] - L(1, 0) * z1) / L(1, 1));
    };
    return integrate(f, -kZCut, b1, 0.1 * tol);
  }
  if (m == 3) {
    const double b1 = std::min(upper[0], kZCut);
    if (b1 <= -kZCut) return 0.0;
    auto f1 = [&](double z1) {
      const double b2 = std::min((upper[1] - L(1, 0) * z1) / L(1, 1), kZCut);
      if (b2 <= -kZCut) return 0.0;
      auto f2 = [&](double z2) {
        return phi(z2) *
               normal_cdf((upper[2] - L(2, 0) * z1 - L(2, 1) * z2) / L(2, 2));
      };
      return phi(z1) * integrate(f2, -kZCut, b2, 0.01 * tol);
    };
    return integrate(f1, -kZCut, b1, tol);
  }
  throw std::runtime_error("mvn_rectangle oracle handles M <= 3 only");
}

double mvt_rectangle(const Eigen::VectorXd& upper, const Eigen::MatrixXd& corr,
                     double nu, double tol) {
  // T = Z * sqrt(nu) / chi_nu; condition on u = chi_nu: P = E_u[Phi_M(b u / sqrt(nu))].
  bm::chi_squared_distribution<double> chi2(nu);
  auto integrand = [&](double u) {
    const double dens = 2.0 * u * bm::pdf(chi2, u * u);  // chi density from chi^2
    return dens * mvn_rectangle(upper * (u / std::sqrt(nu)), corr, 0.1 * tol);
  };
  // Integrate over the chi support where the density is non-negligible.
  const double lo = std::sqrt(bm::quantile(chi2, 1e-12));
  const double hi = std::sqrt(bm::quantile(bm::complement(chi2, 1e-12)));
  return integrate(integrand, lo, hi, tol);
}

double dense_reml_loglik(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                         int P, double sigma_e2, double sigma_b2) {
  const int NP = static_cast<int>(y.size());
  const int n = NP / P;
  Eigen::MatrixXd Sigma = Eigen::MatrixXd::Zero(NP, NP);
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < P; ++a) {
      for (int b = 0; b < P; ++b) {
        Sigma(i * P + a, i * P + b) = sigma_b2 + (a == b ? sigma_e2 : 0.0);
      }
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(Sigma);
  const Eigen::MatrixXd Si = llt.solve(Eigen::MatrixXd::Identity(NP, NP));
  double log_det_sigma = 0.0;
  const Eigen::MatrixXd Lm = llt.matrixL();
  for (int i = 0; i < NP; ++i) log_det_sigma += 2.0 * std::log(Lm(i, i));
  const Eigen::MatrixXd XtSiX = X.transpose() * Si * X;
  const Eigen::VectorXd XtSiy = X.transpose() * Si * y;
  const Eigen::VectorXd beta = XtSiX.ldlt().solve(XtSiy);
  const Eigen::VectorXd r = y - X * beta;
  const double quad = r.dot(Si * r);
  const double log_det_info = std::log(XtSiX.determinant());
  return -0.5 * (log_det_sigma + quad + log_det_info);
}

std::pair<double, double> grid_reml_fit(const Eigen::VectorXd& y,
                                        const Eigen::MatrixXd& X, int P,
                                        double se2_lo, double se2_hi,
                                        double sb2_hi) {
  double best_e = se2_lo, best_b = 0.0, best_ll = -1e300;
  auto scan = [&](double e_lo, double e_hi, double b_lo, double b_hi, int steps) {
    for (int i = 0; i <= steps; ++i) {
      const double le = std::log(e_lo) +
                        (std::log(e_hi) - std::log(e_lo)) * i / steps;
      const double se2 = std::exp(le);
      for (int j = 0; j <= steps; ++j) {
        const double sb2 = b_lo + (b_hi - b_lo) * j / steps;
        const double ll = dense_reml_loglik(y, X, P, se2, sb2);
        if (ll > best_ll) { best_ll = ll; best_e = se2; best_b = sb2; }
      }
    }
  };
  scan(se2_lo, se2_hi, 0.0, sb2_hi, 200);
  // local zoom refinement
  double we = 0.15, wb = 0.05 * sb2_hi;
  for (int round = 0; round < 6; ++round) {
    const double e_lo = best_e * std::exp(-we), e_hi = best_e * std::exp(we);
    const double b_lo = std::max(0.0, best_b - wb), b_hi = best_b + wb;
    scan(e_lo, e_hi, b_lo, b_hi, 24);
    we *= 0.25;
    wb *= 0.25;
  }
  return {best_e, best_b};
}

std::pair<double, double> adjusted_estimator_variant(
    const std::vector<std::vector<double>>& y, const xover::TrialDesign& design,
    const std::vector<double>& tau_star, int last_term_sign, bool divisor_K2) {
  const int n = static_cast<int>(y.size());
  const int P = design.P, K = design.K, D = design.D;
  const double den = 2.0 * (P - 1) * (n - 1);

  double sum_p = 0.0, sum_q = 0.0;
  for (int j = 1; j < P; ++j) {
    double pbar = 0.0, qbar = 0.0;
    for (int i = 0; i < n; ++i) {
      pbar += y[i][j] - y[i][j - 1];
      qbar += y[i][j] + y[i][j - 1];
    }
    pbar /= n;
    qbar /= n;
    for (int i = 0; i < n; ++i) {
      const double p = y[i][j] - y[i][j - 1];
      const double q = y[i][j] + y[i][j - 1];
      sum_p += (p - pbar) * (p - pbar);
      sum_q += (q - qbar) * (q - qbar);
    }
  }

  double adj_diff = 0.0, adj_sum = 0.0, first = 0.0;
  for (int k = 0; k < K; ++k) {
    for (int j = 1; j < P; ++j) {
      const double a = tau_star[design.treatment(j, k)];
      const double b = tau_star[design.treatment(j - 1, k)];
      adj_diff += (a - b) * (a - b);
      adj_sum += (a + b) * (a + b);
    }
    first += tau_star[design.treatment(0, k)];
  }

  const double se2 = sum_p / den - n * adj_diff / (K * den);
  const double div = divisor_K2 ? double(K) * K : double(D) * D;
  const double last = 2.0 * n / (div * (n - 1)) * first * first;
  const double sb2 =
      0.5 * (sum_q / den - se2 - n * adj_sum / (K * den) + last_term_sign * last);
  return {se2, sb2};
}

double null_adjusted_bias(const xover::TrialDesign& design,
                          const std::vector<double>& tau, int n_int) {
  const int P = design.P, K = design.K;
  double s = 0.0;
  for (int j = 1; j < P; ++j) {
    for (int k = 0; k < K; ++k) {
      const double d = tau[design.treatment(j, k)] - tau[design.treatment(j - 1, k)];
      s += d * d;
    }
  }
  return n_int * s / (2.0 * K * (P - 1) * (n_int - 1));
}

std::vector<std::vector<double>> noise_free_responses(
    const xover::TrialDesign& design, const xover::ModelParams& params,
    int per_sequence) {
  std::vector<std::vector<double>> y;
  for (int k = 0; k < design.K; ++k) {
    for (int rep = 0; rep < per_sequence; ++rep) {
      std::vector<double> row(design.P);
      for (int j = 0; j < design.P; ++j) {
        row[j] = params.mu0 + params.pi[j] + params.tau[design.treatment(j, k)];
      }
      y.push_back(std::move(row));
    }
  }
  return y;
}

double quantile_type7(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  const double h = (values.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - lo) * (values[hi] - values[lo]);
}

}  // namespace oracle
