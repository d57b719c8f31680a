#include "xover/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "xover/rng.hpp"

namespace xover::num {

double std_normal_pdf(double x) {
  static const double inv_sqrt_2pi = 0.3989422804014326779;
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

double std_normal_cdf(double x) {
  return 0.5 * std::erfc(-x * 0.7071067811865475244);
}

/*
 * Wichura's algorithm AS 241 (PPND16). Rational approximations on three
 * regions; good to ~1e-15 relative over the open unit interval.
 */
double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal quantile: p outside (0,1)");
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
               1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
             1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
           (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
               5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
             4.2313330701600911252e1) * r + 1.0);
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
              3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
            4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
              6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
            2.05319162663775882187e0) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
              2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
            5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
              1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 1.0);
  }
  return (q < 0.0) ? -val : val;
}

namespace {

// Continued fraction for the regularised incomplete beta (modified Lentz).
double beta_cf(double a, double b, double x) {
  constexpr double eps = 3e-16, fpmin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::fabs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 500; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) <= eps) return h;
  }
  throw std::runtime_error("incomplete beta continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) -
                             std::lgamma(b) + a * std::log(x) +
                             b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * beta_cf(a, b, x) / a;
  return 1.0 - bt * beta_cf(b, a, 1.0 - x) / b;
}

double regularized_lower_gamma(double a, double x) {
  if (x <= 0.0) return 0.0;
  if (x < a + 1.0) {
    // series representation
    double ap = a, sum = 1.0 / a, del = sum;
    for (int n = 0; n < 1000; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
  }
  // continued fraction for Q(a,x), then P = 1 - Q (modified Lentz)
  constexpr double fpmin = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / fpmin, d = 1.0 / b, h = d;
  for (int i = 1; i <= 1000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = b + an / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) <= 1e-16) break;
  }
  const double q = std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
  return 1.0 - q;
}

double student_t_cdf(double x, double nu) {
  if (!(nu >= 1.0)) throw std::domain_error("student_t_cdf: nu must be >= 1");
  if (x == 0.0) return 0.5;
  const double z = nu / (nu + x * x);
  const double tail = 0.5 * regularized_incomplete_beta(0.5 * nu, 0.5, z);
  return (x > 0.0) ? 1.0 - tail : tail;
}

double student_t_quantile(double p, double nu) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("t quantile: p outside (0,1)");
  if (!(nu >= 1.0)) throw std::domain_error("t quantile: nu must be >= 1");
  if (p == 0.5) return 0.0;
  // normal-based start, expanded until it brackets, then Brent + Newton polish
  double guess = std_normal_quantile(p);
  if (nu < 30.0) guess *= std::sqrt(nu / std::max(nu - 2.0, 0.5));
  double lo = guess, hi = guess;
  double width = std::max(1.0, std::fabs(guess));
  while (student_t_cdf(lo, nu) > p) lo -= width, width *= 2.0;
  width = std::max(1.0, std::fabs(guess));
  while (student_t_cdf(hi, nu) < p) hi += width, width *= 2.0;
  double x = solve_root([&](double t) { return student_t_cdf(t, nu) - p; }, lo,
                        hi, 1e-13);
  // one Newton step sharpens the root to full precision
  const double pdf = std::exp(std::lgamma(0.5 * (nu + 1.0)) -
                              std::lgamma(0.5 * nu) -
                              0.5 * std::log(nu * M_PI) -
                              0.5 * (nu + 1.0) * std::log1p(x * x / nu));
  if (pdf > 0.0) x -= (student_t_cdf(x, nu) - p) / pdf;
  return x;
}

double chi2_cdf(double x, double nu) {
  if (x <= 0.0) return 0.0;
  return regularized_lower_gamma(0.5 * nu, 0.5 * x);
}

double chi2_quantile(double p, double nu) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("chi2 quantile: p outside (0,1)");
  // Wilson-Hilferty start
  const double z = std_normal_quantile(p);
  const double c = 2.0 / (9.0 * nu);
  double x = nu * std::pow(1.0 - c + z * std::sqrt(c), 3.0);
  if (!(x > 0.0)) x = 1e-8;
  // bracket and solve
  double lo = x, hi = x;
  while (chi2_cdf(lo, nu) > p && lo > 1e-300) lo *= 0.5;
  while (chi2_cdf(hi, nu) < p && hi < 1e300) hi *= 2.0;
  return solve_root([&](double t) { return chi2_cdf(t, nu) - p; }, lo, hi,
                    1e-12 * std::max(1.0, x));
}

namespace {

// Gauss-Legendre nodes/weights on [-1, 1] by Newton iteration, cached per n.
struct GaussLegendre {
  std::vector<double> x, w;
};

const GaussLegendre& gauss_legendre(int n) {
  static std::map<int, GaussLegendre> cache;
  static std::mutex* mtx = new std::mutex;  // function-local: avoid init order issues
  std::lock_guard<std::mutex> lock(*mtx);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  GaussLegendre g;
  g.x.resize(n);
  g.w.resize(n);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p1 = 1.0, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1.0);
      }
      pp = n * (z * p1 - p2) / (z * z - 1.0);
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::fabs(z - z1) < 1e-15) break;
    }
    g.x[i] = -z;
    g.x[n - 1 - i] = z;
    g.w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
    g.w[n - 1 - i] = g.w[i];
  }
  return cache.emplace(n, std::move(g)).first->second;
}

bool detect_equicorrelation(const Eigen::MatrixXd& corr, double* rho) {
  const int m = static_cast<int>(corr.rows());
  if (m < 2) { *rho = 0.0; return true; }
  double sum = 0.0;
  int cnt = 0;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) { sum += corr(i, j); ++cnt; }
  const double mean = sum / cnt;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j)
      if (std::fabs(corr(i, j) - mean) > 1e-9) return false;
  *rho = mean;
  return true;
}

// One-factor reduction for equicorrelated limits, rho in [0, 1):
// P = int phi(z) prod_i Phi((b_i - sqrt(rho) z) / sqrt(1-rho)) dz.
double mvn_equicorr(const Eigen::VectorXd& upper, double rho) {
  const int m = static_cast<int>(upper.size());
  if (rho == 0.0) {
    double p = 1.0;
    for (int i = 0; i < m; ++i) p *= std_normal_cdf(upper[i]);
    return p;
  }
  const double sr = std::sqrt(rho), s1 = std::sqrt(1.0 - rho);
  const auto& gl = gauss_legendre(128);
  const double a = -9.5, b = 9.5;
  double total = 0.0;
  for (std::size_t i = 0; i < gl.x.size(); ++i) {
    const double z = 0.5 * (b - a) * gl.x[i] + 0.5 * (a + b);
    double f = std_normal_pdf(z);
    for (int d = 0; d < m && f > 0.0; ++d) {
      f *= std_normal_cdf((upper[d] - sr * z) / s1);
    }
    total += gl.w[i] * f;
  }
  return 0.5 * (b - a) * total;
}

// Upper-orthant bivariate normal P(X > dh, Y > dk) with correlation r,
// following Genz's BVND: Gauss-Legendre on the Drezner-Wesolowsky angle
// integral for moderate |r|, a tail expansion plus corrective quadrature
// when |r| is close to one. Accurate to about 5e-16.
double bvn_upper(double dh, double dk, double r) {
  static const double xw[3][10][2] = {
      {{0.9324695142031522, 0.1713244923791705},
       {0.6612093864662647, 0.3607615730481384},
       {0.2386191860831970, 0.4679139345726904}},
      {{0.9815606342467191, 0.04717533638651177},
       {0.9041172563704750, 0.1069393259953183},
       {0.7699026741943050, 0.1600783285433464},
       {0.5873179542866171, 0.2031674267230659},
       {0.3678314989981802, 0.2334925365383547},
       {0.1252334085114692, 0.2491470458134029}},
      {{0.9931285991850949, 0.01761400713915212},
       {0.9639719272779138, 0.04060142980038694},
       {0.9122344282513259, 0.06267204833410906},
       {0.8391169718222188, 0.08327674157670475},
       {0.7463319064601508, 0.1019301198172404},
       {0.6360536807265150, 0.1181945319615184},
       {0.5108670019508271, 0.1316886384491766},
       {0.3737060887154196, 0.1420961093183821},
       {0.2277858511416451, 0.1491729864726037},
       {0.07652652113349733, 0.1527533871307259}}};
  const double ar = std::fabs(r);
  int rule, ng;
  if (ar < 0.3) { rule = 0; ng = 3; }
  else if (ar < 0.75) { rule = 1; ng = 6; }
  else { rule = 2; ng = 10; }

  double h = dh, k = dk, hk = h * k, bvn = 0.0;
  if (ar < 0.925) {
    if (ar > 0.0) {
      const double hs = 0.5 * (h * h + k * k);
      const double asr = std::asin(r);
      for (int i = 0; i < ng; ++i)
        for (int is = -1; is <= 1; is += 2) {
          const double sn = std::sin(0.5 * asr * (is * xw[rule][i][0] + 1.0));
          bvn += xw[rule][i][1] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
        }
      bvn *= asr / (4.0 * M_PI);
    }
    return bvn + std_normal_cdf(-h) * std_normal_cdf(-k);
  }
  if (r < 0.0) { k = -k; hk = -hk; }
  if (ar < 1.0) {
    const double as = (1.0 - r) * (1.0 + r);
    double a = std::sqrt(as);
    const double bs = (h - k) * (h - k);
    const double c = (4.0 - hk) / 8.0, d = (12.0 - hk) / 16.0;
    double asr = -0.5 * (bs / as + hk);
    if (asr > -100.0)
      bvn = a * std::exp(asr) *
            (1.0 - c * (bs - as) * (1.0 - d * bs / 5.0) / 3.0 +
             c * d * as * as / 5.0);
    if (-hk < 100.0) {
      const double b = std::sqrt(bs);
      bvn -= std::exp(-0.5 * hk) * std::sqrt(2.0 * M_PI) * std_normal_cdf(-b / a) *
             b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
    }
    a *= 0.5;
    for (int i = 0; i < ng; ++i)
      for (int is = -1; is <= 1; is += 2) {
        double xs = a * (is * xw[rule][i][0] + 1.0);
        xs *= xs;
        const double rs = std::sqrt(1.0 - xs);
        asr = -0.5 * (bs / xs + hk);
        if (asr > -100.0)
          bvn += a * xw[rule][i][1] * std::exp(asr) *
                 (std::exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs -
                  (1.0 + c * xs * (1.0 + d * xs)));
      }
    bvn = -bvn / (2.0 * M_PI);
  }
  if (r > 0.0) return bvn + std_normal_cdf(-std::max(h, k));
  bvn = -bvn;
  if (k > h) bvn += std_normal_cdf(k) - std_normal_cdf(h);
  return bvn;
}

double bvn_cdf(double b1, double b2, double rho) {
  return bvn_upper(-b1, -b2, rho);
}

// P(X1<=b1, X2<=b2, X3<=b3) for standard trivariate normal: condition on the
// variable least correlated with the other two, leaving phi(z) times a
// bivariate rectangle that bvn_cdf evaluates exactly. Two Gauss-Legendre
// panels split at zero keep the quadrature error near 1e-12.
double tvn_cdf(const Eigen::VectorXd& upper, const Eigen::MatrixXd& corr) {
  int pivot = 0;
  double best = 2.0;
  for (int i = 0; i < 3; ++i) {
    double worst = 0.0;
    for (int j = 0; j < 3; ++j)
      if (j != i) worst = std::max(worst, std::fabs(corr(i, j)));
    if (worst < best) { best = worst; pivot = i; }
  }
  const int o2 = (pivot + 1) % 3, o3 = (pivot + 2) % 3;
  const double b1 = upper[pivot], b2 = upper[o2], b3 = upper[o3];
  const double r12 = corr(pivot, o2), r13 = corr(pivot, o3), r23 = corr(o2, o3);
  const double s2 = std::sqrt(std::max(0.0, 1.0 - r12 * r12));
  const double s3 = std::sqrt(std::max(0.0, 1.0 - r13 * r13));
  double rc = (r23 - r12 * r13) / (s2 * s3);
  rc = std::min(1.0, std::max(-1.0, rc));

  const double lo = -8.5, hi = std::min(b1, 8.5);
  if (hi <= lo) return 0.0;
  const double mid = std::min(hi, std::max(lo, 0.0));
  const auto& gl = gauss_legendre(32);
  double total = 0.0;
  const double bounds[2][2] = {{lo, mid}, {mid, hi}};
  for (const auto& seg : bounds) {
    const double half = 0.5 * (seg[1] - seg[0]);
    if (half <= 0.0) continue;
    const double centre = 0.5 * (seg[0] + seg[1]);
    for (std::size_t i = 0; i < gl.x.size(); ++i) {
      const double z = half * gl.x[i] + centre;
      total += half * gl.w[i] * std_normal_pdf(z) *
               bvn_cdf((b2 - r12 * z) / s2, (b3 - r13 * z) / s3, rc);
    }
  }
  return total;
}

// The conditioning step in tvn_cdf steepens as any |r| -> 1 and the fixed
// quadrature loses digits, so keep the closed-form routes to comfortably
// regular matrices; bvn_cdf itself is good for the whole range.
bool smalldim_usable(const Eigen::MatrixXd& corr) {
  const int m = static_cast<int>(corr.rows());
  if (m == 2) return true;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j)
      if (std::fabs(corr(i, j)) > 0.97) return false;
  return true;
}

constexpr double kTinyP = 1e-16;

// Genz separation-of-variables integrand for one unit-cube point. Lower
// limits are all -infinity here, which collapses the usual two-sided form:
// walk the Cholesky rows, turning each uniform into a draw from the previous
// variable's truncated conditional and accumulating the conditional
// probabilities.
double sov_point(const Eigen::MatrixXd& L, const Eigen::VectorXd& b, int m,
                 double scale, const double* u, double* y) {
  double c = std_normal_cdf(scale * b[0] / L(0, 0));
  double prod = c;
  for (int i = 1; i < m; ++i) {
    const double t = std::min(1.0 - kTinyP, std::max(kTinyP, u[i - 1] * c));
    y[i - 1] = std_normal_quantile(t);
    double dot = 0.0;
    for (int j = 0; j < i; ++j) dot += L(i, j) * y[j];
    c = std_normal_cdf((scale * b[i] - dot) / L(i, i));
    prod *= c;
    if (prod <= 0.0) return 0.0;
  }
  return prod;
}

struct SovProblem {
  Eigen::MatrixXd L;
  Eigen::VectorXd b;
  int m = 0;
};

// Reorder variables by ascending upper limit (hardest constraint first), then
// Cholesky. A tiny diagonal jitter tolerates nearly singular correlations.
SovProblem prepare_sov(const Eigen::VectorXd& upper, const Eigen::MatrixXd& corr) {
  const int m = static_cast<int>(upper.size());
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b2) { return upper[a] < upper[b2]; });
  SovProblem prob;
  prob.m = m;
  prob.b.resize(m);
  Eigen::MatrixXd R(m, m);
  for (int i = 0; i < m; ++i) {
    prob.b[i] = upper[order[i]];
    for (int j = 0; j < m; ++j) R(i, j) = corr(order[i], order[j]);
  }
  Eigen::LLT<Eigen::MatrixXd> llt(R);
  if (llt.info() != Eigen::Success) {
    R.diagonal().array() += 1e-10;
    llt.compute(R);
    if (llt.info() != Eigen::Success)
      throw std::domain_error("mvn_cdf: correlation matrix not positive semi-definite");
  }
  prob.L = llt.matrixL();
  return prob;
}

// Richtmyer/Kronecker lattice directions: fractional parts of sqrt(primes).
const double* lattice_directions(int dim) {
  static const int primes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29,
                               31, 37, 41, 43, 47, 53, 59, 61, 67, 71};
  static thread_local double dirs[20];
  for (int i = 0; i < dim; ++i) {
    const double s = std::sqrt(static_cast<double>(primes[i]));
    dirs[i] = s - std::floor(s);
  }
  return dirs;
}

// Randomised QMC mean over `shifts` random shifts of an n-point Kronecker
// lattice; the integrand f maps a dim-vector in (0,1)^dim to a value.
template <typename F>
ProbEstimate rqmc(F&& f, int dim, const IntegrationSettings& settings) {
  Rng shift_rng(settings.seed);
  const double* dirs = lattice_directions(std::max(1, dim));
  int n = std::max(128, settings.qmc_points);
  std::vector<double> shift(std::max(1, dim));
  ProbEstimate out;
  for (int attempt = 0; attempt < 6; ++attempt) {
    double mean = 0.0, m2 = 0.0;
    for (int r = 0; r < settings.randomisations; ++r) {
      for (auto& s : shift) s = shift_rng.next_uniform();
      double acc = 0.0;
      double u[20];
      for (int k = 1; k <= n; ++k) {
        for (int d = 0; d < dim; ++d) {
          const double v = k * dirs[d] + shift[d];
          u[d] = v - std::floor(v);
        }
        acc += f(u);
      }
      const double est = acc / n;
      const double delta = est - mean;
      mean += delta / (r + 1);
      m2 += delta * (est - mean);
    }
    const double var = m2 / (settings.randomisations - 1);
    out.value = mean;
    out.error = std::sqrt(std::max(0.0, var / settings.randomisations));
    if (out.error <= settings.target_abs_error || n >= (1 << 20)) return out;
    n *= 4;
  }
  return out;
}

}  // namespace

ProbEstimate mvn_cdf(const Eigen::VectorXd& upper, const Eigen::MatrixXd& corr,
                     const IntegrationSettings& settings) {
  const int m = static_cast<int>(upper.size());
  if (m == 0 || corr.rows() != m || corr.cols() != m)
    throw std::domain_error("mvn_cdf: dimension mismatch");
  if (m == 1) return {std_normal_cdf(upper[0]), 0.0};
  if (m == 2 && smalldim_usable(corr))
    return {bvn_cdf(upper[0], upper[1], corr(0, 1)), 5e-15};
  if (m == 3 && smalldim_usable(corr)) return {tvn_cdf(upper, corr), 1e-11};
  double rho;
  if (detect_equicorrelation(corr, &rho) && rho >= 0.0 && rho < 1.0) {
    return {mvn_equicorr(upper, rho), 1e-10};
  }
  SovProblem prob = prepare_sov(upper, corr);
  auto f = [&](const double* u) {
    double y[20];
    return sov_point(prob.L, prob.b, prob.m, 1.0, u, y);
  };
  return rqmc(f, m - 1, settings);
}

ProbEstimate mvt_cdf(const Eigen::VectorXd& upper, const Eigen::MatrixXd& corr,
                     double nu, const IntegrationSettings& settings) {
  const int m = static_cast<int>(upper.size());
  if (m == 0 || corr.rows() != m || corr.cols() != m)
    throw std::domain_error("mvt_cdf: dimension mismatch");
  if (!(nu >= 1.0)) throw std::domain_error("mvt_cdf: nu must be >= 1");
  if (m == 1) return {student_t_cdf(upper[0], nu), 0.0};

  if ((m == 2 || m == 3) && smalldim_usable(corr)) {
    // chi scale mixture: P = E_s[Phi_M(upper * s)], s = chi_nu / sqrt(nu),
    // integrated over t in (0,1) with s(t) from the chi-square quantile and
    // the exact small-dimension normal rectangle inside. The quantile nodes
    // depend only on nu and consecutive calls share it, so keep the last set.
    const int nodes = (nu < 20.0) ? 96 : 48;
    const auto& gl = gauss_legendre(nodes);
    static thread_local double cached_nu = -1.0;
    static thread_local int cached_nodes = 0;
    static thread_local std::vector<double> scale_nodes;
    if (cached_nu != nu || cached_nodes != nodes) {
      scale_nodes.resize(gl.x.size());
      for (std::size_t i = 0; i < gl.x.size(); ++i) {
        const double t = 0.5 * gl.x[i] + 0.5;
        scale_nodes[i] = std::sqrt(chi2_quantile(t, nu) / nu);
      }
      cached_nu = nu;
      cached_nodes = nodes;
    }
    double total = 0.0;
    if (m == 2) {
      for (std::size_t i = 0; i < gl.x.size(); ++i) {
        const double s = scale_nodes[i];
        total += gl.w[i] * bvn_cdf(upper[0] * s, upper[1] * s, corr(0, 1));
      }
    } else {
      for (std::size_t i = 0; i < gl.x.size(); ++i)
        total += gl.w[i] * tvn_cdf(upper * scale_nodes[i], corr);
    }
    return {0.5 * total, 1e-7};
  }
  double rho;
  if (detect_equicorrelation(corr, &rho) && rho >= 0.0 && rho < 1.0) {
    const int nodes = (nu < 20.0) ? 96 : 48;
    const auto& gl = gauss_legendre(nodes);
    double total = 0.0;
    for (std::size_t i = 0; i < gl.x.size(); ++i) {
      const double t = 0.5 * gl.x[i] + 0.5;
      const double s = std::sqrt(chi2_quantile(t, nu) / nu);
      total += gl.w[i] * mvn_equicorr(upper * s, rho);
    }
    return {0.5 * total, 1e-7};
  }
  SovProblem prob = prepare_sov(upper, corr);
  auto f = [&](const double* u) {
    const double t = std::min(1.0 - kTinyP, std::max(kTinyP, u[0]));
    const double s = std::sqrt(chi2_quantile(t, nu) / nu);
    double y[20];
    return sov_point(prob.L, prob.b, prob.m, s, u + 1, y);
  };
  return rqmc(f, m, settings);
}

double solve_root(const std::function<double(double)>& f, double lo, double hi,
                  double tol) {
  double a = lo, b = hi;
  double fa = f(a), fb = f(b);
  if (fa == 0.0) return a;
  if (fb == 0.0) return b;
  if ((fa > 0.0) == (fb > 0.0))
    throw std::domain_error("solve_root: no sign change on bracket");
  // Brent's method with guaranteed bisection fallback
  double c = a, fc = fa, d = b - a, e = b - a;
  for (int iter = 0; iter < 200; ++iter) {
    if ((fb > 0.0) == (fc > 0.0)) { c = a; fc = fa; d = e = b - a; }
    if (std::fabs(fc) < std::fabs(fb)) {
      a = b; b = c; c = a;
      fa = fb; fb = fc; fc = fa;
    }
    const double tol1 = 2.0 * 2.22e-16 * std::fabs(b) + 0.5 * tol;
    const double xm = 0.5 * (c - b);
    if (std::fabs(xm) <= tol1 || fb == 0.0) return b;
    if (std::fabs(e) >= tol1 && std::fabs(fa) > std::fabs(fb)) {
      double p, q, r;
      const double s = fb / fa;
      if (a == c) {
        p = 2.0 * xm * s;
        q = 1.0 - s;
      } else {
        q = fa / fc;
        r = fb / fc;
        p = s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0));
        q = (q - 1.0) * (r - 1.0) * (s - 1.0);
      }
      if (p > 0.0) q = -q;
      p = std::fabs(p);
      if (2.0 * p < std::min(3.0 * xm * q - std::fabs(tol1 * q), std::fabs(e * q))) {
        e = d;
        d = p / q;
      } else {
        d = xm;
        e = d;
      }
    } else {
      d = xm;
      e = d;
    }
    a = b;
    fa = fb;
    b += (std::fabs(d) > tol1) ? d : (xm > 0 ? tol1 : -tol1);
    fb = f(b);
  }
  return b;
}

long min_integer_satisfying(const std::function<bool(long)>& pred, long lower,
                            long upper) {
  if (lower > upper) throw std::domain_error("min_integer_satisfying: empty range");
  if (!pred(upper))
    throw std::runtime_error("min_integer_satisfying: predicate false at upper bound");
  long lo = lower, hi = upper;
  while (lo < hi) {
    const long mid = lo + (hi - lo) / 2;
    if (pred(mid)) hi = mid; else lo = mid + 1;
  }
  return lo;
}

}  // namespace xover::num
