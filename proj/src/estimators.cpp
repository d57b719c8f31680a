#include "xover/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace xover {

AdjustmentSpec AdjustmentSpec::null_adjustment(int D) {
  AdjustmentSpec spec;
  spec.kind = AdjustmentKind::null_adjusted;
  spec.tau_star.assign(D, 0.0);
  return spec;
}

AdjustmentSpec AdjustmentSpec::alternative_adjustment(int D, double delta) {
  AdjustmentSpec spec;
  spec.kind = AdjustmentKind::alternative_adjusted;
  spec.tau_star.assign(D, delta);
  spec.tau_star[0] = 0.0;
  return spec;
}

namespace {

void validate_interim(const InterimData& data, int min_patients) {
  if (data.design == nullptr)
    throw std::invalid_argument("interim data: design pointer not set");
  const int P = data.design->P;
  if (data.n_int() < min_patients)
    throw std::invalid_argument("interim data: too few patients for estimation");
  for (const auto& row : data.responses)
    if (static_cast<int>(row.size()) != P)
      throw std::invalid_argument("interim data: every patient needs all periods");
}

const char* adjustment_name(AdjustmentKind kind) {
  switch (kind) {
    case AdjustmentKind::null_adjusted: return "adjusted_null";
    case AdjustmentKind::alternative_adjusted: return "adjusted_alternative";
    default: return "adjusted_custom";
  }
}

}  // namespace

VarianceEstimate unblinded_estimate(const InterimData& data) {
  validate_interim(data, 2);
  if (static_cast<int>(data.alloc.sequence.size()) != data.n_int())
    throw std::invalid_argument("unblinded estimate: allocation/response size mismatch");
  const int n = data.n_int(), P = data.design->P;
  Eigen::VectorXd y(n * P);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < P; ++j) y[i * P + j] = data.responses[i][j];
  const Eigen::MatrixXd X = build_design_matrix(*data.design, data.alloc);
  const FitResult fit = reml_fit(y, X, P);
  VarianceEstimate est;
  est.sigma_e2_hat = fit.sigma_e2_hat;
  est.sigma_b2_raw = fit.sigma_b2_hat;  // already boundary-constrained
  est.sigma_b2_trunc = fit.sigma_b2_hat;
  est.method = "unblinded";
  est.converged = fit.converged;
  return est;
}

VarianceEstimate adjusted_blinded_estimate(const InterimData& data,
                                           const AdjustmentSpec& spec) {
  validate_interim(data, 2);
  const TrialDesign& design = *data.design;
  const int n = data.n_int(), P = design.P, K = design.K, D = design.D;
  if (P < 2)
    throw std::invalid_argument("adjusted estimate: needs at least two periods");
  if (static_cast<int>(spec.tau_star.size()) != D)
    throw std::invalid_argument("adjusted estimate: tau_star must have one entry per treatment");
  if (spec.tau_star[0] != 0.0)
    throw std::invalid_argument("adjusted estimate: control entry of tau_star must be 0");

  // per-period-transition means of differences p and sums q, pooled over
  // every patient regardless of arm
  std::vector<double> p_bar(P - 1, 0.0), q_bar(P - 1, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 1; j < P; ++j) {
      p_bar[j - 1] += data.responses[i][j] - data.responses[i][j - 1];
      q_bar[j - 1] += data.responses[i][j] + data.responses[i][j - 1];
    }
  }
  for (double& v : p_bar) v /= n;
  for (double& v : q_bar) v /= n;

  double ssp = 0.0, ssq = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 1; j < P; ++j) {
      const double p = data.responses[i][j] - data.responses[i][j - 1];
      const double q = data.responses[i][j] + data.responses[i][j - 1];
      ssp += (p - p_bar[j - 1]) * (p - p_bar[j - 1]);
      ssq += (q - q_bar[j - 1]) * (q - q_bar[j - 1]);
    }
  }

  // treatment-effect corrections, averaged over the K sequences of the
  // design rather than the (unknown) realised assignments
  double diff2 = 0.0, sum2 = 0.0, first_period_sum = 0.0;
  for (int k = 0; k < K; ++k) {
    first_period_sum += spec.tau_star[design.treatment(0, k)];
    for (int j = 1; j < P; ++j) {
      const double a = spec.tau_star[design.treatment(j, k)];
      const double b = spec.tau_star[design.treatment(j - 1, k)];
      diff2 += (a - b) * (a - b);
      sum2 += (a + b) * (a + b);
    }
  }

  const double den = 2.0 * (P - 1) * (n - 1);
  const double se2 = ssp / den - n * diff2 / (K * den);
  const double sb2_raw =
      0.5 * (ssq / den - se2 - n * sum2 / (K * den) +
             2.0 * n / (static_cast<double>(K) * K * (n - 1)) *
                 first_period_sum * first_period_sum);

  VarianceEstimate est;
  est.sigma_e2_hat = se2;
  est.sigma_b2_raw = sb2_raw;
  est.sigma_b2_trunc = std::max(0.0, sb2_raw);
  est.method = adjustment_name(spec.kind);
  return est;
}

VarianceEstimate block_blinded_estimate(const InterimData& data) {
  validate_interim(data, 2);
  const int n = data.n_int(), P = data.design->P;
  if (P < 2)
    throw std::invalid_argument("block estimate: needs at least two periods");
  if (!data.alloc.has_blocks() ||
      static_cast<int>(data.alloc.block.size()) != n)
    throw std::invalid_argument("block estimate: every patient needs a block label");

  // group patients by block label; labels need not be contiguous
  std::map<int, std::vector<int>> members;
  for (int i = 0; i < n; ++i) members[data.alloc.block[i]].push_back(i);
  const int B = static_cast<int>(members.size());
  if (n - B < 1)
    throw std::invalid_argument("block estimate: needs more patients than blocks");

  double ssp = 0.0, ssq = 0.0;
  for (const auto& [label, idx] : members) {
    const int nb = static_cast<int>(idx.size());
    for (int j = 1; j < P; ++j) {
      double pm = 0.0, qm = 0.0;
      for (int i : idx) {
        pm += data.responses[i][j] - data.responses[i][j - 1];
        qm += data.responses[i][j] + data.responses[i][j - 1];
      }
      pm /= nb;
      qm /= nb;
      for (int i : idx) {
        const double p = data.responses[i][j] - data.responses[i][j - 1];
        const double q = data.responses[i][j] + data.responses[i][j - 1];
        ssp += (p - pm) * (p - pm);
        ssq += (q - qm) * (q - qm);
      }
    }
  }

  const double den = 2.0 * (P - 1) * (n - B);
  const double se2 = ssp / den;
  const double sb2_raw = 0.5 * (ssq / den - se2);

  VarianceEstimate est;
  est.sigma_e2_hat = se2;
  est.sigma_b2_raw = sb2_raw;
  est.sigma_b2_trunc = std::max(0.0, sb2_raw);
  est.method = "block";
  est.blocks = B;
  return est;
}

}  // namespace xover
