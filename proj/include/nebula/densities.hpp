#pragma once

#include <limits>
#include <vector>

namespace nebula {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log P(X = k) for X ~ Binomial(n, p). Returns -inf for zero-probability
// outcomes at p in {0, 1}. Throws DomainError for k outside [0, n], n < 0,
// or p outside [0, 1].
double log_binom_pmf(long long k, long long n, double p);

// log density at x of the noncentral chi-square with df degrees of freedom
// and noncentrality lambda. Exactly the central density when lambda == 0.
// Throws DomainError for x <= 0, df <= 0, or lambda < 0.
double log_noncentral_chisq_pdf(double x, double df, double lambda);

// log(sum_i exp(v[i])) with max-shift stabilisation. Empty input gives -inf.
double log_sum_exp(const std::vector<double>& v);
double log_sum_exp(double a, double b);

}  // namespace nebula
