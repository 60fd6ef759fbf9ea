#pragma once

#include <cstdint>
#include <vector>

#include "nebula/npmle.hpp"

namespace nebula {

struct DiseaseModel {
  std::vector<double> pi0;
  std::vector<double> pi1;

  std::size_t dim() const { return pi0.size(); }
  void validate() const;
};

struct Prevalence {
  double p = 0.5;

  void validate() const;
  double log_odds() const;
};

enum class CovariateFamily { kBinary, kGaussian };

// Per-covariate class-conditional parameters. Binary covariates use prob0 and
// prob1; gaussian covariates use the mean/var pairs.
struct CovariateEntry {
  CovariateFamily family = CovariateFamily::kBinary;
  double prob0 = 0.5;
  double prob1 = 0.5;
  double mean0 = 0.0;
  double var0 = 1.0;
  double mean1 = 0.0;
  double var1 = 1.0;
};

struct CovariateModel {
  std::vector<CovariateEntry> entries;

  std::size_t dim() const { return entries.size(); }
  void validate() const;
};

struct ScoreReport {
  double score = 0.0;
  int predicted_class = 0;
  double covariate_loglr = 0.0;
  std::vector<double> per_snp_loglr;
};

// Log likelihood-ratio rule with the true per-class allele frequencies.
// Ties at score exactly 0 classify as 1.
ScoreReport oracle_score(const std::vector<int>& x, const DiseaseModel& model,
                         const Prevalence& prev);

// Per-SNP log-odds-ratio estimates from the pooled allele counts; a SNP whose
// raw frequency estimate hits 0 or 1 gets a continuity correction
// (S + 0.5) / (2n + 1) in both classes.
std::vector<double> fit_log_odds(const TargetSufficientStats& stats);

// Polygenic risk score with hard thresholding of the per-SNP weights. The
// genotype term keeps SNP j only when |beta_j| > threshold; the intercept sum
// runs over every SNP regardless.
ScoreReport prs_score(const std::vector<int>& x, const TargetSufficientStats& stats,
                      double threshold, const Prevalence& prev);

// PRS variant whose keep rule is |beta_j * gamma_j| > threshold, using the
// auxiliary log-odds estimates; dropped SNPs contribute nothing, so the
// intercept sum is restricted to kept SNPs.
ScoreReport adaptive_prs_score(const std::vector<int>& x,
                               const TargetSufficientStats& stats,
                               const AuxSummary& aux, double threshold,
                               const Prevalence& prev);

// Sum over covariates of log f(z; theta1) - log f(z; theta0).
double covariate_loglr(const std::vector<double>& z, const CovariateModel& model);

// Class-conditional maximum likelihood fits: sample proportion for binary
// covariates (boundary proportions continuity-corrected), sample mean and
// biased variance for gaussian ones.
CovariateModel fit_covariate_model(const std::vector<std::vector<double>>& controls,
                                   const std::vector<std::vector<double>>& cases,
                                   const std::vector<CovariateFamily>& families);

// Empirical Bayes scorer. Construction turns the fitted prior into per-SNP
// posterior marginals over the two frequency axes and collapses them into
// genotype likelihood tables, so scoring a subject is O(d).
class NebulaScorer {
 public:
  NebulaScorer(const TargetSufficientStats& stats, const AuxSummary& aux,
               const MixingDistribution& g);

  std::size_t dim() const { return d_; }
  ScoreReport score(const std::vector<int>& x, const Prevalence& prev,
                    const std::vector<double>* z = nullptr,
                    const CovariateModel* cov_model = nullptr) const;

 private:
  std::size_t d_ = 0;
  std::vector<double> num0_, num1_;
};

// Variant for binary-annotated SNPs: group-specific bivariate priors with no
// chi-square factor; SNP j is scored under the prior of its group.
class AnnotatedNebulaScorer {
 public:
  AnnotatedNebulaScorer(const TargetSufficientStats& stats,
                        const std::vector<int>& annotations,
                        const MixingDistribution2& g0,
                        const MixingDistribution2& g1);

  std::size_t dim() const { return d_; }
  ScoreReport score(const std::vector<int>& x, const Prevalence& prev,
                    const std::vector<double>* z = nullptr,
                    const CovariateModel* cov_model = nullptr) const;

 private:
  std::size_t d_ = 0;
  std::vector<double> num0_, num1_;
};

ScoreReport nebula_score(const std::vector<int>& x, const TargetSufficientStats& stats,
                         const AuxSummary& aux, const MixingDistribution& g_hat,
                         const Prevalence& prev,
                         const std::vector<double>* z = nullptr,
                         const CovariateModel* cov_model = nullptr);

ScoreReport nebula_annotated_score(const std::vector<int>& x,
                                   const TargetSufficientStats& stats,
                                   const std::vector<int>& annotations,
                                   const MixingDistribution2& g0,
                                   const MixingDistribution2& g1,
                                   const Prevalence& prev,
                                   const std::vector<double>* z = nullptr,
                                   const CovariateModel* cov_model = nullptr);

// Pooled per-class allele counts from labeled genotype rows.
TargetSufficientStats compute_sufficient_stats(const std::vector<std::vector<int>>& x,
                                               const std::vector<int>& labels);

enum class PrsVariant { kPlain, kAdaptive };

// {0} followed by count-1 log-spaced values from max|effect|/1000 up to
// max|effect|; collapses to {0} when every effect is zero.
std::vector<double> threshold_candidates(const std::vector<double>& effects,
                                         std::size_t count = 20);

// Stratified k-fold cross-validation over the candidate thresholds: refit
// sufficient statistics on the training folds, score the held-out fold, and
// return the candidate with the lowest mean misclassification rate, breaking
// ties toward the largest threshold. aux supplies gamma for the adaptive
// variant and is not refit.
double select_threshold_cv(const std::vector<std::vector<int>>& x,
                           const std::vector<int>& labels,
                           const std::vector<double>& candidates,
                           PrsVariant variant, const AuxSummary* aux,
                           const Prevalence& prev, std::size_t folds = 5,
                           std::uint64_t seed = 0);

}  // namespace nebula
