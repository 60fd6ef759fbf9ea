#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nebula {

// Chi-square statistics of exactly 0 are legal inputs (monomorphic or
// perfectly balanced tables) but the noncentral chi-square density is only
// defined for x > 0, so likelihood evaluations floor the statistic here.
inline constexpr double kTStatFloor = 1e-8;

// Cap on explicit d*d0*d1*d2 materialization of the likelihood tensor.
inline constexpr std::size_t kDenseTensorCap = 200000000;

struct TargetSufficientStats {
  std::vector<long long> s0;
  std::vector<long long> s1;
  long long n0 = 0;
  long long n1 = 0;

  std::size_t dim() const { return s0.size(); }
  void validate() const;
};

struct AuxSummary {
  std::vector<double> t;
  std::optional<std::vector<double>> gamma_hat;

  std::size_t dim() const { return t.size(); }
  void validate() const;
  void validate_for(std::size_t expected_d) const;
};

// n equally spaced points on [lo, hi]; a single requested point sits at the
// midpoint, and a degenerate range collapses to one point.
std::vector<double> equally_spaced(double lo, double hi, std::size_t n);

struct Grid3 {
  std::vector<double> pi0_points;
  std::vector<double> pi1_points;
  std::vector<double> lambda_points;

  std::size_t d0() const { return pi0_points.size(); }
  std::size_t d1() const { return pi1_points.size(); }
  std::size_t d2() const { return lambda_points.size(); }
  std::size_t size() const { return d0() * d1() * d2(); }
  void validate() const;
};

// Axis ranges are data driven: [min, max] of the per-SNP allele frequency
// estimates for the two binomial axes and of the chi-square statistics
// (floored at 0) for the noncentrality axis.
Grid3 build_grid(const TargetSufficientStats& stats, const AuxSummary& aux,
                 std::size_t d0, std::size_t d1, std::size_t d2);

// Per-SNP log likelihoods over the grid, stored in factorized form: the
// full entry is log_f0[j,a] + log_f1[j,b] + log_fchi[j,c], so memory is
// O(d*(d0+d1+d2)) instead of O(d*d0*d1*d2). A bivariate variant drops the
// chi-square axis (d2() == 1 with a zero log factor).
class LikelihoodTensor {
 public:
  LikelihoodTensor(const TargetSufficientStats& stats, const AuxSummary& aux,
                   const Grid3& grid);
  LikelihoodTensor(const TargetSufficientStats& stats,
                   const std::vector<std::size_t>& selector,
                   const std::vector<double>& pi0_axis,
                   const std::vector<double>& pi1_axis);

  std::size_t d() const { return d_; }
  std::size_t d0() const { return d0_; }
  std::size_t d1() const { return d1_; }
  std::size_t d2() const { return d2_; }
  std::size_t grid_size() const { return d0_ * d1_ * d2_; }
  bool has_chisq_axis() const { return has_chi_; }

  double at(std::size_t j, std::size_t a, std::size_t b, std::size_t c) const;

  const double* log_f0_row(std::size_t j) const { return f0_.data() + j * d0_; }
  const double* log_f1_row(std::size_t j) const { return f1_.data() + j * d1_; }
  const double* log_fchi_row(std::size_t j) const { return fchi_.data() + j * d2_; }

  // Explicit d*d0*d1*d2 array (j outermost, c innermost). Throws
  // ResourceError when the entry count exceeds the cap.
  std::vector<double> dense(std::size_t entry_cap = kDenseTensorCap) const;

 private:
  std::size_t d_ = 0, d0_ = 0, d1_ = 0, d2_ = 1;
  bool has_chi_ = false;
  std::vector<double> f0_, f1_, fchi_;
};

LikelihoodTensor precompute_log_likelihood_tensor(const TargetSufficientStats& stats,
                                                  const AuxSummary& aux,
                                                  const Grid3& grid);

// Discrete prior over the grid; log_mass is laid out with the lambda index
// fastest, then pi1, then pi0.
struct MixingDistribution {
  Grid3 grid;
  std::vector<double> log_mass;

  static MixingDistribution uniform(const Grid3& grid);
  std::size_t index(std::size_t a, std::size_t b, std::size_t c) const {
    return (a * grid.d1() + b) * grid.d2() + c;
  }
  double mass(std::size_t a, std::size_t b, std::size_t c) const;
  double total_mass() const;
  void check_normalized(double tol) const;
};

struct MixingDistribution2 {
  std::vector<double> pi0_points;
  std::vector<double> pi1_points;
  std::vector<double> log_mass;

  std::size_t index(std::size_t a, std::size_t b) const {
    return a * pi1_points.size() + b;
  }
  double mass(std::size_t a, std::size_t b) const;
  double total_mass() const;
};

struct FitReport {
  std::size_t iterations = 0;
  double final_log_likelihood = 0.0;
  bool converged = false;
  std::vector<double> log_likelihood_trace;
};

struct FitOptions {
  double tol = 1e-8;
  std::size_t max_iter = 2000;
  unsigned threads = 1;
};

// Shared evaluation core: given a prior over the grid, computes per-SNP
// mixture denominators, posterior axis marginals, and whole-pass EM
// accumulators. Arithmetic runs on per-axis max-shifted likelihood factors
// (the max-shift of log_sum_exp carried in factorized form); SNPs whose
// shifted denominator underflows fall back to explicit log-space summation.
class PosteriorEngine {
 public:
  PosteriorEngine(const LikelihoodTensor& tensor, const std::vector<double>& log_mass,
                  unsigned threads = 1);

  // Replace the prior masses (linear scale) without touching the cached
  // shifted likelihood factors; used by the fit loop between iterations.
  void set_linear_masses(const std::vector<double>& w);

  // Sum over SNPs of the marginal log likelihood under the current prior.
  // When accum is non-null it receives sum_j q(g | j) / mass(g), the
  // multiplicative EM factor (grid-shaped). zero_is_error controls whether
  // an all-zero-likelihood SNP throws FitError or contributes -inf.
  double pass(std::vector<double>* accum, bool zero_is_error) const;

  // Posterior marginals over the pi0 and pi1 axes for one SNP.
  void axis_marginals(std::size_t j, std::vector<double>& pa,
                      std::vector<double>& pb) const;

  const LikelihoodTensor& tensor() const { return *tensor_; }

 private:
  double snp_pass(std::size_t j, std::vector<double>& s_buf, double* accum) const;
  double robust_snp_pass(std::size_t j, double* accum) const;

  const LikelihoodTensor* tensor_;
  std::vector<double> w_;
  std::vector<double> q0_, q1_, q2_;
  std::vector<double> m0_, m1_, m2_;
  unsigned threads_ = 1;
};

MixingDistribution em_step(const MixingDistribution& current,
                           const LikelihoodTensor& tensor);

double marginal_log_likelihood(const MixingDistribution& g,
                               const LikelihoodTensor& tensor);

std::pair<MixingDistribution, FitReport> fit_npmle(const TargetSufficientStats& stats,
                                                   const AuxSummary& aux,
                                                   const Grid3& grid,
                                                   const FitOptions& opts = {});

std::pair<MixingDistribution2, FitReport> fit_npmle_bivariate(
    const TargetSufficientStats& stats, const std::vector<std::size_t>& selector,
    const std::vector<double>& pi0_axis, const std::vector<double>& pi1_axis,
    const FitOptions& opts = {});

// TSV of positive-mass support points plus a key=value sidecar holding the
// grid axes and fit diagnostics.
void save_mixing_distribution(const std::filesystem::path& tsv_path,
                              const std::filesystem::path& meta_path,
                              const MixingDistribution& g, const FitReport* report);
MixingDistribution load_mixing_distribution(const std::filesystem::path& tsv_path,
                                            const std::filesystem::path& meta_path);

void save_mixing_distribution2(const std::filesystem::path& tsv_path,
                               const std::filesystem::path& meta_path,
                               const MixingDistribution2& g, const FitReport* report);
MixingDistribution2 load_mixing_distribution2(const std::filesystem::path& tsv_path,
                                              const std::filesystem::path& meta_path);

}  // namespace nebula
