#include "nebula/densities.hpp"

#include <cmath>
#include <string>

#include "nebula/errors.hpp"

namespace nebula {

namespace {

// The mixture series evaluates lgamma only at integers and half-integers.
// Cached std::lgamma values keep results bit-identical to direct calls while
// removing the dominant cost of building likelihood tensors.
constexpr std::size_t kLgammaTab = 4096;

double fast_lgamma(double z) {
  static const std::vector<double> at_int = [] {
    std::vector<double> t(kLgammaTab);
    for (std::size_t i = 0; i < kLgammaTab; ++i)
      t[i] = std::lgamma(static_cast<double>(i) + 1.0);
    return t;
  }();
  static const std::vector<double> at_half = [] {
    std::vector<double> t(kLgammaTab);
    for (std::size_t i = 0; i < kLgammaTab; ++i)
      t[i] = std::lgamma(static_cast<double>(i) + 0.5);
    return t;
  }();
  const double fl = std::floor(z);
  if (z == fl) {
    if (z >= 1.0 && z <= static_cast<double>(kLgammaTab))
      return at_int[static_cast<std::size_t>(z) - 1];
  } else if (z - 0.5 == fl && z >= 0.5 &&
             z < static_cast<double>(kLgammaTab) + 0.5) {
    return at_half[static_cast<std::size_t>(fl)];
  }
  return std::lgamma(z);
}

double log_central_chisq_pdf(double x, double df) {
  const double h = 0.5 * df;
  return (h - 1.0) * std::log(x) - 0.5 * x - h * std::log(2.0) - fast_lgamma(h);
}

double log_poisson_pmf(double i, double mean) {
  return -mean + i * std::log(mean) - fast_lgamma(i + 1.0);
}

}  // namespace

double log_binom_pmf(long long k, long long n, double p) {
  if (n < 0) throw DomainError("log_binom_pmf: n < 0 (n=" + std::to_string(n) + ")");
  if (k < 0 || k > n)
    throw DomainError("log_binom_pmf: k outside [0, n] (k=" + std::to_string(k) +
                      ", n=" + std::to_string(n) + ")");
  if (!(p >= 0.0 && p <= 1.0))
    throw DomainError("log_binom_pmf: p outside [0, 1] (p=" + std::to_string(p) + ")");

  // Evaluated in long double: the three lgamma terms in the binomial
  // coefficient individually reach ~1e4 for n in the thousands, and double
  // precision there leaves log-scale errors above 1e-12 after cancellation.
  const long double nd = static_cast<long double>(n);
  const long double kd = static_cast<long double>(k);
  long double acc =
      std::lgamma(nd + 1.0L) - std::lgamma(kd + 1.0L) - std::lgamma(nd - kd + 1.0L);

  // k log p and (n-k) log(1-p) with the 0 * log 0 = 0 convention, so the
  // boundary cases p = 0 (all mass at k = 0) and p = 1 (all at k = n) come
  // out as exact 0 / -inf log probabilities rather than NaN.
  if (k > 0) {
    if (p == 0.0) return kNegInf;
    acc += kd * std::log(static_cast<long double>(p));
  }
  if (k < n) {
    if (p == 1.0) return kNegInf;
    acc += (nd - kd) * std::log1p(-static_cast<long double>(p));
  }
  return static_cast<double>(acc);
}

double log_noncentral_chisq_pdf(double x, double df, double lambda) {
  if (!(x > 0.0)) throw DomainError("log_noncentral_chisq_pdf: x <= 0 (x=" + std::to_string(x) + ")");
  if (!(df > 0.0)) throw DomainError("log_noncentral_chisq_pdf: df <= 0");
  if (!(lambda >= 0.0)) throw DomainError("log_noncentral_chisq_pdf: lambda < 0");

  if (lambda == 0.0) return log_central_chisq_pdf(x, df);

  // Poisson mixture of central chi-square densities:
  //   f(x) = sum_i Pois(i; lambda/2) * chisq_pdf(x; df + 2i).
  // The log terms are concave in i, so summation starts near the Poisson
  // mode and walks outward in both directions until terms stop contributing.
  const double m = 0.5 * lambda;
  const long long i0 = std::llround(m);
  constexpr double kRelTol = 1e-14;

  auto term = [&](long long i) {
    const double id = static_cast<double>(i);
    return log_poisson_pmf(id, m) + log_central_chisq_pdf(x, df + 2.0 * id);
  };

  double s = term(i0);
  for (long long i = i0 + 1;; ++i) {
    const double t = term(i);
    if (std::exp(t - s) < kRelTol) break;
    s = log_sum_exp(s, t);
  }
  for (long long i = i0 - 1; i >= 0; --i) {
    const double t = term(i);
    if (std::exp(t - s) < kRelTol) break;
    s = log_sum_exp(s, t);
  }
  return s;
}

double log_sum_exp(const std::vector<double>& v) {
  if (v.empty()) return kNegInf;
  double mx = kNegInf;
  for (double x : v)
    if (x > mx) mx = x;
  if (mx == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

double log_sum_exp(double a, double b) {
  if (a == kNegInf && b == kNegInf) return kNegInf;
  const double mx = a > b ? a : b;
  const double mn = a > b ? b : a;
  return mx + std::log1p(std::exp(mn - mx));
}

}  // namespace nebula
