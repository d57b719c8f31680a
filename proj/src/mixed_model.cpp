#include "xover/mixed_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace xover {

double BlockCovariance::log_det() const {
  return (P - 1) * std::log(sigma_e2) + std::log(sigma_e2 + P * sigma_b2);
}

Eigen::MatrixXd block_sigma_inverse(const BlockCovariance& cov) {
  if (!(cov.sigma_e2 > 0.0))
    throw std::domain_error("block_sigma_inverse: sigma_e2 must be positive");
  const int P = cov.P;
  const double c = cov.sigma_b2 / (cov.sigma_e2 + P * cov.sigma_b2);
  Eigen::MatrixXd inv = Eigen::MatrixXd::Constant(P, P, -c / cov.sigma_e2);
  inv.diagonal().array() += 1.0 / cov.sigma_e2;
  return inv;
}

Eigen::MatrixXd build_design_matrix(const TrialDesign& design,
                                    const PatientAllocation& alloc) {
  const int N = alloc.N(), P = design.P, D = design.D;
  const int q = 1 + (P - 1) + (D - 1);
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(N * P, q);
  for (int i = 0; i < N; ++i) {
    const int k = alloc.sequence[i];
    for (int j = 0; j < P; ++j) {
      const int row = i * P + j;
      X(row, 0) = 1.0;
      if (j >= 1) X(row, j) = 1.0;  // period effect pi_{j+1}
      const int d = design.treatment(j, k);
      if (d >= 1) X(row, (P - 1) + d) = 1.0;
    }
  }
  return X;
}

namespace {

struct SuffStats {
  Eigen::MatrixXd A;  // X'X
  Eigen::MatrixXd B;  // sum_i u_i u_i'
  Eigen::VectorXd v;  // X'y
  Eigen::VectorXd w;  // sum_i u_i s_i
  double yy = 0.0;
  double ss = 0.0;
  int n = 0, P = 1;
};

SuffStats accumulate(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, int P) {
  const int q = static_cast<int>(X.cols());
  const int n = static_cast<int>(y.size()) / P;
  if (n * P != y.size() || X.rows() != y.size())
    throw std::invalid_argument("mixed model: y/X dimensions inconsistent with P");
  SuffStats s;
  s.n = n;
  s.P = P;
  s.A = X.transpose() * X;
  s.v = X.transpose() * y;
  s.B = Eigen::MatrixXd::Zero(q, q);
  s.w = Eigen::VectorXd::Zero(q);
  s.yy = y.squaredNorm();
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd u = X.middleRows(i * P, P).colwise().sum().transpose();
    const double si = y.segment(i * P, P).sum();
    s.B.noalias() += u * u.transpose();
    s.w.noalias() += u * si;
    s.ss += si * si;
  }
  return s;
}

// Everything the restricted likelihood needs at (sigma_e2, sigma_b2), from
// the sufficient statistics alone.
struct GlsSolve {
  Eigen::VectorXd beta;
  Eigen::MatrixXd info;      // X' Sigma^-1 X
  double resid_quad = 0.0;   // (y - X beta)' Sigma^-1 (y - X beta)
  double log_det_info = 0.0;
};

GlsSolve gls_at(const SuffStats& s, double sigma_e2, double sigma_b2) {
  const double c = sigma_b2 / (sigma_e2 + s.P * sigma_b2);
  GlsSolve out;
  out.info = (s.A - c * s.B) / sigma_e2;
  const Eigen::VectorXd rhs = (s.v - c * s.w) / sigma_e2;
  Eigen::LLT<Eigen::MatrixXd> llt(out.info);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("gls: singular information matrix (treatment or period never observed?)");
  out.beta = llt.solve(rhs);
  const Eigen::MatrixXd& L = llt.matrixL();
  for (int i = 0; i < L.rows(); ++i) out.log_det_info += 2.0 * std::log(L(i, i));
  out.resid_quad = (s.yy - c * s.ss) / sigma_e2 - out.beta.dot(rhs);
  return out;
}

double loglik_at(const SuffStats& s, double sigma_e2, double sigma_b2) {
  BlockCovariance cov{sigma_e2, sigma_b2, s.P};
  const GlsSolve g = gls_at(s, sigma_e2, sigma_b2);
  return -0.5 * (s.n * cov.log_det() + g.resid_quad + g.log_det_info);
}

}  // namespace

std::pair<Eigen::VectorXd, Eigen::MatrixXd> gls_fit(const Eigen::VectorXd& y,
                                                    const Eigen::MatrixXd& X,
                                                    const BlockCovariance& cov) {
  if (!(cov.sigma_e2 > 0.0))
    throw std::domain_error("gls_fit: sigma_e2 must be positive");
  const SuffStats s = accumulate(y, X, cov.P);
  const GlsSolve g = gls_at(s, cov.sigma_e2, cov.sigma_b2);
  Eigen::MatrixXd var = Eigen::LLT<Eigen::MatrixXd>(g.info).solve(
      Eigen::MatrixXd::Identity(g.info.rows(), g.info.cols()));
  return {g.beta, std::move(var)};
}

double reml_loglik(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, int P,
                   double sigma_e2, double sigma_b2) {
  if (!(sigma_e2 > 0.0) || sigma_b2 < 0.0 || !std::isfinite(sigma_e2) ||
      !std::isfinite(sigma_b2))
    throw std::domain_error("reml_loglik: invalid variance components");
  return loglik_at(accumulate(y, X, P), sigma_e2, sigma_b2);
}

RemlWorkspace::RemlWorkspace(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                             int P)
    : n_(0), P_(P) {
  SuffStats s = accumulate(y, X, P);
  n_ = s.n;
  A_ = std::move(s.A);
  B_ = std::move(s.B);
  v_ = std::move(s.v);
  w_ = std::move(s.w);
  yy_ = s.yy;
  ss_ = s.ss;
  // crude within/between moments to seed the optimiser
  double within = 0.0, between = 0.0, grand = 0.0;
  std::vector<double> means(n_);
  for (int i = 0; i < n_; ++i) {
    const auto yi = y.segment(i * P, P);
    means[i] = yi.mean();
    grand += means[i];
    if (P > 1) within += (yi.array() - means[i]).square().sum() / (P - 1);
  }
  grand /= n_;
  within /= n_;
  for (int i = 0; i < n_; ++i) between += (means[i] - grand) * (means[i] - grand);
  between /= std::max(1, n_ - 1);
  var_within_ = std::max(within, 1e-8);
  var_sums_ = std::max(between - var_within_ / P, 0.0);
}

double RemlWorkspace::loglik(double sigma_e2, double sigma_b2) const {
  SuffStats s;
  s.A = A_;
  s.B = B_;
  s.v = v_;
  s.w = w_;
  s.yy = yy_;
  s.ss = ss_;
  s.n = n_;
  s.P = P_;
  return loglik_at(s, sigma_e2, sigma_b2);
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> RemlWorkspace::gls(
    double sigma_e2, double sigma_b2) const {
  SuffStats s;
  s.A = A_;
  s.B = B_;
  s.v = v_;
  s.w = w_;
  s.yy = yy_;
  s.ss = ss_;
  s.n = n_;
  s.P = P_;
  const GlsSolve g = gls_at(s, sigma_e2, sigma_b2);
  Eigen::MatrixXd var = Eigen::LLT<Eigen::MatrixXd>(g.info).solve(
      Eigen::MatrixXd::Identity(g.info.rows(), g.info.cols()));
  return {g.beta, std::move(var)};
}

std::pair<double, double> RemlWorkspace::moment_start() const {
  return {var_within_, var_sums_};
}

namespace {

constexpr double kLogSe2Min = -46.0;  // sigma_e2 ~ 1e-20: effectively zero
constexpr double kLogSe2Max = 46.0;

// 2-parameter Nelder-Mead in (log sigma_e2, sigma_b2 reflected at 0).
struct NmResult {
  double x0 = 0.0, x1 = 0.0, f = -1e300;
  bool converged = false;
  int evals = 0;
};

template <typename F>
NmResult nelder_mead2(F&& f, double x0, double x1, double scale0, double scale1,
                      double rel_tol, int max_iter) {
  struct Vertex { double x[2]; double f; };
  auto eval = [&](const double* x) { return f(x[0], x[1]); };
  Vertex simplex[3];
  simplex[0] = {{x0, x1}, 0.0};
  simplex[1] = {{x0 + scale0, x1}, 0.0};
  simplex[2] = {{x0, x1 + scale1}, 0.0};
  NmResult res;
  for (auto& v : simplex) { v.f = eval(v.x); ++res.evals; }
  auto by_f = [](const Vertex& a, const Vertex& b) { return a.f > b.f; };  // maximise
  for (int iter = 0; iter < max_iter; ++iter) {
    std::sort(simplex, simplex + 3, by_f);
    const double spread = std::fabs(simplex[0].f - simplex[2].f);
    if (spread <= rel_tol * (std::fabs(simplex[0].f) + 1e-12)) {
      res.converged = true;
      break;
    }
    const double cx = 0.5 * (simplex[0].x[0] + simplex[1].x[0]);
    const double cy = 0.5 * (simplex[0].x[1] + simplex[1].x[1]);
    auto try_point = [&](double t) {
      Vertex v;
      v.x[0] = cx + t * (cx - simplex[2].x[0]);
      v.x[1] = cy + t * (cy - simplex[2].x[1]);
      v.f = eval(v.x);
      ++res.evals;
      return v;
    };
    Vertex reflect = try_point(1.0);
    if (reflect.f > simplex[0].f) {
      Vertex expand = try_point(2.0);
      simplex[2] = (expand.f > reflect.f) ? expand : reflect;
    } else if (reflect.f > simplex[1].f) {
      simplex[2] = reflect;
    } else {
      Vertex contract = try_point(reflect.f > simplex[2].f ? 0.5 : -0.5);
      if (contract.f > std::min(reflect.f, simplex[2].f)) {
        simplex[2] = contract;
      } else {
        for (int i = 1; i < 3; ++i) {  // shrink toward best
          simplex[i].x[0] = 0.5 * (simplex[i].x[0] + simplex[0].x[0]);
          simplex[i].x[1] = 0.5 * (simplex[i].x[1] + simplex[0].x[1]);
          simplex[i].f = eval(simplex[i].x);
          ++res.evals;
        }
      }
    }
  }
  std::sort(simplex, simplex + 3, by_f);
  res.x0 = simplex[0].x[0];
  res.x1 = simplex[0].x[1];
  res.f = simplex[0].f;
  return res;
}

// Golden-section maximisation for the 1-D boundary problem (sigma_b2 = 0).
template <typename F>
std::pair<double, double> golden_max(F&& f, double lo, double hi, double tol) {
  const double gr = 0.6180339887498949;
  double a = lo, b = hi;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc > fd) { b = d; d = c; fd = fc; c = b - gr * (b - a); fc = f(c); }
    else { a = c; c = d; fc = fd; d = a + gr * (b - a); fd = f(d); }
  }
  const double x = 0.5 * (a + b);
  return {x, f(x)};
}

}  // namespace

FitResult reml_fit(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, int P) {
  RemlWorkspace ws(y, X, P);
  if (ws.n_patients() < 2)
    throw std::invalid_argument("reml_fit: need at least 2 patients");

  auto objective = [&](double log_se2, double sb2_signed) {
    const double ls = std::clamp(log_se2, kLogSe2Min, kLogSe2Max);
    return ws.loglik(std::exp(ls), std::fabs(sb2_signed));
  };

  const auto [m_e, m_b] = ws.moment_start();
  const double scale = m_e + m_b;
  NmResult best;
  int total_evals = 0;
  bool any_converged = false;
  for (const double mult : {1.0, 4.0, 0.25}) {
    const double se2_0 = m_e * mult;
    const double sb2_0 = std::max(m_b * mult, 0.05 * scale * mult);
    NmResult r = nelder_mead2(objective, std::log(se2_0), sb2_0, 0.4,
                              0.3 * std::max(sb2_0, 0.1 * scale), 1e-8, 400);
    total_evals += r.evals;
    any_converged = any_converged || r.converged;
    if (r.f > best.f) best = r;
  }

  double se2_hat = std::exp(std::clamp(best.x0, kLogSe2Min, kLogSe2Max));
  double sb2_hat = std::fabs(best.x1);

  // Boundary polish: the reflected parametrisation can stall near but not at
  // zero; optimise the sigma_b2 = 0 section of the likelihood and take it
  // whenever it does at least as well.
  auto boundary = [&](double log_se2) { return objective(log_se2, 0.0); };
  const auto [b_log_se2, b_f] =
      golden_max(boundary, std::log(se2_hat) - 6.0, std::log(se2_hat) + 6.0, 1e-10);
  if (b_f >= best.f - 1e-9 * (std::fabs(best.f) + 1.0)) {
    // accept the boundary only if it's genuinely as good; resolves the
    // near-zero reflections to an exact 0
    if (b_f >= best.f || sb2_hat < 1e-8 * scale) {
      se2_hat = std::exp(std::clamp(b_log_se2, kLogSe2Min, kLogSe2Max));
      sb2_hat = 0.0;
    }
  }

  FitResult fit;
  fit.sigma_e2_hat = se2_hat;
  fit.sigma_b2_hat = sb2_hat;
  fit.reml_loglik = ws.loglik(se2_hat, sb2_hat);
  fit.converged = any_converged;
  fit.iterations = total_evals;
  auto [beta, var] = ws.gls(se2_hat, sb2_hat);
  fit.beta_hat = std::move(beta);
  fit.var_beta = std::move(var);
  return fit;
}

}  // namespace xover
