#include "xover/sample_size.hpp"

#include <cmath>
#include <cstring>
#include <mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "xover/mixed_model.hpp"

namespace xover {

namespace {

// The equicoordinate solves are pure functions of (corr, alpha, nu,
// direction) but cost a root search over quadrature each time, and the
// simulator asks for them once per replicate. Memoise on the exact input
// bytes: identical inputs always return the first computed value, so results
// stay byte-reproducible at any thread count.
class SolveCache {
 public:
  template <typename Compute>
  double get(const std::string& key, Compute&& compute) {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      auto it = map_.find(key);
      if (it != map_.end()) return it->second;
    }
    const double value = compute();
    std::lock_guard<std::mutex> lock(mutex_);
    return map_.emplace(key, value).first->second;
  }

 private:
  std::mutex mutex_;
  std::unordered_map<std::string, double> map_;
};

SolveCache& solve_cache() {
  static SolveCache cache;
  return cache;
}

void append_raw(std::string& key, const void* data, std::size_t size) {
  key.append(static_cast<const char*>(data), size);
}

// Round correlations to the nearest 2^-40 before solving. Refits of balanced
// designs produce correlations that differ only in the last few bits; without
// this the cache never hits and every replicate pays a root search. The
// perturbation (< 1e-12) is far below the integration tolerance, and the
// solved value is a pure function of the quantised matrix, which keeps
// results independent of thread scheduling.
Eigen::MatrixXd quantise_correlation(const Eigen::MatrixXd& corr) {
  constexpr double kScale = 1099511627776.0;  // 2^40, exact binary scaling
  Eigen::MatrixXd out = corr;
  for (int i = 0; i < out.rows(); ++i)
    for (int j = 0; j < out.cols(); ++j)
      out(i, j) = std::round(out(i, j) * kScale) / kScale;
  return out;
}

std::string cache_key(char tag, const Eigen::MatrixXd& corr, double alpha,
                      Direction direction, double nu) {
  std::string key(1, tag);
  const char dir = static_cast<char>(direction);
  key.push_back(dir);
  append_raw(key, &alpha, sizeof alpha);
  append_raw(key, &nu, sizeof nu);
  for (int i = 0; i < corr.rows(); ++i)
    for (int j = 0; j < corr.cols(); ++j) {
      const double v = corr(i, j);
      append_raw(key, &v, sizeof v);
    }
  return key;
}

// X' Sigma^-1 X for one patient per sequence, via the rank-one structure of
// Sigma_P^-1 rather than an NP x NP solve.
Eigen::MatrixXd info_one_per_sequence(const TrialDesign& design, double sigma_e2,
                                      double sigma_b2) {
  PatientAllocation alloc;
  alloc.sequence.resize(design.K);
  for (int k = 0; k < design.K; ++k) alloc.sequence[k] = k;
  const Eigen::MatrixXd X = build_design_matrix(design, alloc);
  const int q = static_cast<int>(X.cols());
  Eigen::MatrixXd A = X.transpose() * X;
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(q, q);
  for (int k = 0; k < design.K; ++k) {
    const Eigen::VectorXd u =
        X.middleRows(k * design.P, design.P).colwise().sum().transpose();
    B.noalias() += u * u.transpose();
  }
  const double c = sigma_b2 / (sigma_e2 + design.P * sigma_b2);
  return (A - c * B) / sigma_e2;
}

Eigen::MatrixXd tau_block(const Eigen::MatrixXd& var_beta, int D, int P) {
  const int q = P + D - 1;
  if (var_beta.rows() != q || var_beta.cols() != q)
    throw std::invalid_argument("covariance has wrong dimension for this D and P");
  return var_beta.block(P, P, D - 1, D - 1);
}

Eigen::MatrixXd correlation_of(const Eigen::MatrixXd& V) {
  const int m = static_cast<int>(V.rows());
  Eigen::MatrixXd corr(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      corr(i, j) = V(i, j) / std::sqrt(V(i, i) * V(j, j));
  return corr;
}

double one_minus_target(double alpha, Direction direction) {
  return direction == Direction::two_sided ? 1.0 - alpha / 2.0 : 1.0 - alpha;
}

num::IntegrationSettings solver_settings() {
  num::IntegrationSettings s;
  s.target_abs_error = 1e-7;
  s.qmc_points = 4096;
  return s;
}

}  // namespace

DesignInformation unit_information(const TrialDesign& design, double sigma_e2,
                                   double sigma_b2) {
  if (!(sigma_e2 > 0.0))
    throw std::domain_error("unit_information: sigma_e2 must be positive");
  const Eigen::MatrixXd info = info_one_per_sequence(design, sigma_e2, sigma_b2);
  Eigen::LLT<Eigen::MatrixXd> llt(info);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("unit_information: singular information matrix");
  const Eigen::MatrixXd var =
      llt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
  const Eigen::MatrixXd vt = tau_block(var, design.D, design.P);

  DesignInformation out;
  out.unit_info.resize(design.D - 1);
  for (int d = 0; d < design.D - 1; ++d) {
    const double v = vt(d, d);
    if (!(v > 0.0))
      throw std::runtime_error("unit_information: nonpositive treatment variance");
    out.unit_info[d] = 1.0 / (design.K * v);
  }
  out.q_corr = correlation_of(vt);
  return out;
}

CriticalValue design_critical_value(const Eigen::MatrixXd& q_corr, double alpha,
                                    Direction direction) {
  if (!(alpha > 0.0) || !(alpha < 1.0))
    throw std::invalid_argument("design_critical_value: alpha must be in (0,1)");
  const int m = static_cast<int>(q_corr.rows());
  const double target = one_minus_target(alpha, direction);
  CriticalValue cv;
  if (m == 1) {
    cv.e = num::std_normal_quantile(target);
  } else {
    const Eigen::MatrixXd corr_q = quantise_correlation(q_corr);
    cv.e = solve_cache().get(
        cache_key('d', corr_q, alpha, direction, 0.0), [&] {
          const auto settings = solver_settings();
          auto f = [&](double e) {
            return num::mvn_cdf(Eigen::VectorXd::Constant(m, e), corr_q,
                                settings)
                       .value -
                   target;
          };
          if (f(15.0) < 0.0)
            throw std::runtime_error("design_critical_value: no root below e = 15");
          return num::solve_root(f, -15.0, 15.0, 1e-9);
        });
  }
  cv.alpha_star = 1.0 - num::std_normal_cdf(cv.e);
  return cv;
}

double required_n_pairwise(const TrialDesign& design, double sigma_e2,
                           double sigma_b2, const HypothesisSpec& hyp) {
  if (hyp.delta == 0.0)
    throw std::invalid_argument("required_n_pairwise: delta must be nonzero");
  if (!(sigma_e2 > 0.0)) return 0.0;  // degenerate estimate, clamp decides
  const DesignInformation di = unit_information(design, sigma_e2, sigma_b2);
  const CriticalValue cv = design_critical_value(di.q_corr, hyp.alpha, hyp.direction);
  const double z_beta = num::std_normal_quantile(1.0 - hyp.beta);
  return (cv.e + z_beta) * (cv.e + z_beta) /
         (hyp.delta * hyp.delta * di.unit_info[0]);
}

long required_n_familywise(const TrialDesign& design, double sigma_e2,
                           double sigma_b2, const HypothesisSpec& hyp) {
  if (hyp.delta == 0.0)
    throw std::invalid_argument("required_n_familywise: delta must be nonzero");
  if (!(sigma_e2 > 0.0)) return 0;
  const DesignInformation di = unit_information(design, sigma_e2, sigma_b2);
  const CriticalValue cv = design_critical_value(di.q_corr, hyp.alpha, hyp.direction);
  const double shift = std::fabs(hyp.delta);
  const int m = design.D - 1;
  const auto settings = solver_settings();
  auto no_rejection_prob = [&](long N) {
    Eigen::VectorXd upper(m);
    for (int d = 0; d < m; ++d)
      upper[d] = cv.e - shift * std::sqrt(static_cast<double>(N) * di.unit_info[d]);
    return num::mvn_cdf(upper, di.q_corr, settings).value;
  };
  const double n_pair = required_n_pairwise(design, sigma_e2, sigma_b2, hyp);
  const long upper = std::max<long>(2, 10 * static_cast<long>(std::ceil(n_pair)));
  return num::min_integer_satisfying(
      [&](long N) { return no_rejection_prob(N) <= hyp.beta; }, 1, upper);
}

Reestimate reestimate(const ReestimationPolicy& policy, double sigma_e2_hat,
                      double sigma_b2_trunc, const TrialDesign& design,
                      const HypothesisSpec& hyp) {
  if (!std::isfinite(sigma_e2_hat) || !std::isfinite(sigma_b2_trunc) ||
      sigma_b2_trunc < 0.0)
    throw std::domain_error("reestimate: variance estimates must be finite, trunc >= 0");
  double n_real =
      hyp.power_kind == PowerKind::familywise
          ? static_cast<double>(
                required_n_familywise(design, sigma_e2_hat, sigma_b2_trunc, hyp))
          : required_n_pairwise(design, sigma_e2_hat, sigma_b2_trunc, hyp);
  if (policy.use_inflation_factor) {
    const long nu = analysis_df(policy.n_int, design.P, design.D);
    if (nu >= 1)
      n_real *= inflation_factor(hyp.alpha, hyp.beta, static_cast<double>(nu));
  }
  Reestimate r;
  r.n_unrounded = n_real;
  const long ceiled = static_cast<long>(std::ceil(n_real - 1e-9));
  r.n_hat = std::clamp<long>(ceiled, policy.n_int, policy.n_max);
  const long mult =
      policy.rounding == RoundingRule::multiple_of_K ? design.K : policy.n_B;
  r.n_final = mult >= 1 ? ((r.n_hat + mult - 1) / mult) * mult : r.n_hat;
  return r;
}

double inflation_factor(double alpha, double beta, double nu_nint) {
  if (!(alpha > 0.0) || !(alpha < 1.0) || !(beta > 0.0) || !(beta < 1.0) ||
      !(nu_nint >= 1.0))
    throw std::invalid_argument("inflation_factor: need alpha, beta in (0,1) and nu >= 1");
  const double t_a = num::student_t_quantile(1.0 - alpha, nu_nint);
  const double t_b = num::student_t_quantile(1.0 - beta, nu_nint);
  const double z_a = num::std_normal_quantile(1.0 - alpha);
  const double z_b = num::std_normal_quantile(1.0 - beta);
  const double ratio = (t_a + t_b) / (z_a + z_b);
  return ratio * ratio;
}

Eigen::MatrixXd t_statistic_correlation(const Eigen::MatrixXd& var_beta, int D,
                                        int P) {
  return correlation_of(tau_block(var_beta, D, P));
}

double analysis_critical_value(const Eigen::MatrixXd& var_beta, long N, int D,
                               int P, double alpha, Direction direction) {
  const long nu = analysis_df(N, P, D);
  if (nu < 1)
    throw std::domain_error("analysis_critical_value: trial too small to analyse");
  const double target = one_minus_target(alpha, direction);
  if (D == 2) return num::student_t_quantile(target, static_cast<double>(nu));
  const Eigen::MatrixXd corr =
      quantise_correlation(t_statistic_correlation(var_beta, D, P));
  const int m = D - 1;
  return solve_cache().get(
      cache_key('a', corr, alpha, direction, static_cast<double>(nu)), [&] {
        const auto settings = solver_settings();
        auto f = [&](double e) {
          return num::mvt_cdf(Eigen::VectorXd::Constant(m, e), corr,
                              static_cast<double>(nu), settings)
                     .value -
                 target;
        };
        // Fitted correlations drift a little around their design value from
        // replicate to replicate, so the full solve rarely repeats. Seed a
        // narrow bracket from the matching equal-correlation problem, which
        // is cached per (nu, coarse mean correlation) and lands within about
        // 1e-3 of the answer; then the exact solve needs only a few steps.
        double rho_bar = 0.0;
        for (int a = 0; a < m; ++a)
          for (int b = a + 1; b < m; ++b) rho_bar += corr(a, b);
        rho_bar = std::round(rho_bar / (0.5 * m * (m - 1)) * 1024.0) / 1024.0;
        Eigen::MatrixXd requi = Eigen::MatrixXd::Constant(m, m, rho_bar);
        requi.diagonal().setOnes();
        const double e0 = solve_cache().get(
            cache_key('e', requi, alpha, direction, static_cast<double>(nu)),
            [&] {
              auto fe = [&](double e) {
                return num::mvt_cdf(Eigen::VectorXd::Constant(m, e), requi,
                                    static_cast<double>(nu), settings)
                           .value -
                       target;
              };
              if (fe(15.0) < 0.0)
                throw std::runtime_error(
                    "analysis_critical_value: no root below e = 15");
              return num::solve_root(fe, -15.0, 15.0, 1e-9);
            });
        double half = 0.02;
        while (f(e0 - half) > 0.0 || f(e0 + half) < 0.0) {
          half *= 3.0;
          if (half > 40.0)
            throw std::runtime_error(
                "analysis_critical_value: could not bracket the root");
        }
        return num::solve_root(f, e0 - half, e0 + half, 1e-9);
      });
}

}  // namespace xover
