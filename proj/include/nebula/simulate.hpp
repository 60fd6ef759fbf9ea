#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nebula/classifiers.hpp"
#include "nebula/npmle.hpp"
#include "nebula/rng.hpp"

namespace nebula {

struct SimulationConfig {
  long long d = 0;
  long long n_nonnull_target = 0;
  long long n_nonnull_aux = 0;
  double overlap_pct = 0.0;
  double mu = 0.0;
  double effect_var = 0.01;
  long long n0_train = 0;
  long long n1_train = 0;
  long long n0_test = 0;
  long long n1_test = 0;
  long long n0_aux = 0;
  long long n1_aux = 0;
  std::uint64_t seed = 0;
  double base_maf_lo = 0.2;
  double base_maf_hi = 0.5;

  // round(overlap_pct/100 * min(n_nonnull_target, n_nonnull_aux)).
  long long overlap_count() const;
  void validate() const;
};

// Labeled genotype rows: the n0 controls first, then the n1 cases.
struct LabeledCohort {
  std::vector<std::vector<int>> x;
  std::vector<int> labels;

  std::size_t n() const { return x.size(); }
};

// Frequency models and non-null index sets, fixed across every replication
// of a simulation setting.
struct StudyDesign {
  DiseaseModel target_model;
  DiseaseModel aux_model;
  std::vector<std::size_t> nonnull_target;
  std::vector<std::size_t> nonnull_aux;
};

// One replication: target cohorts plus the auxiliary study already reduced
// to per-SNP summary statistics. Raw auxiliary genotypes are never exposed.
struct StudyRealization {
  DiseaseModel target_model;
  DiseaseModel aux_model;
  LabeledCohort train;
  LabeledCohort test;
  AuxSummary aux_summary;
  std::vector<std::size_t> nonnull_target;
  std::vector<std::size_t> nonnull_aux;
};

// Control frequencies uniform on [base_maf_lo, base_maf_hi]; non-null SNPs
// get a log-odds shift Normal(mu, effect_var) times a fair random sign, so
// pi1 = expit(beta + logit(pi0)); null SNPs have pi1 = pi0 exactly.
DiseaseModel gen_disease_model(std::size_t d, const std::vector<std::size_t>& nonnull_indices,
                               double mu, double effect_var, double base_maf_lo,
                               double base_maf_hi, Rng& rng);

// Independent Binomial(2, pi) draws per subject per SNP under the class
// frequencies; accepts boundary frequencies 0 and 1.
LabeledCohort gen_genotypes(const DiseaseModel& model, long long n0, long long n1, Rng& rng);

// Pearson chi-square statistic of the 2x2 allele count table
// [[s1, 2*n1 - s1], [s0, 2*n0 - s0]]; 0 whenever a table margin is 0.
double allelic_test(long long s0, long long s1, long long n0, long long n1);

// Log-odds ratio estimate from auxiliary allele counts, with the same
// boundary continuity correction as fit_log_odds.
double aux_log_odds(long long s0, long long s1, long long n0, long long n1);

// Picks the non-null index sets with the exact configured overlap, then
// draws both disease models. Deterministic under config.seed.
StudyDesign draw_design(const SimulationConfig& config);

// Redraws all genotypes for one replication of a fixed design and reduces
// the auxiliary cohort to (t, gamma_hat). Each (seed, replication) pair owns
// its generator streams.
StudyRealization realize_replication(const SimulationConfig& config,
                                     const StudyDesign& design, std::uint64_t replication);

// draw_design followed by replication 0.
StudyRealization realize_study(const SimulationConfig& config);

// Per-SNP target frequencies and non-null membership flags.
struct TruthTable {
  std::vector<std::string> snp_ids;
  std::vector<double> pi0;
  std::vector<double> pi1;
  std::vector<int> nonnull_target;
  std::vector<int> nonnull_aux;
};

std::vector<std::string> default_snp_ids(std::size_t d);

// Writes target_train.tsv, target_test.tsv, aux_summary.tsv, truth.tsv and
// config.toml into dir, creating it if needed.
void save_realization(const StudyRealization& r, const SimulationConfig& config,
                      const std::string& dir);

void write_aux_summary_tsv(const std::string& path, const std::vector<std::string>& snp_ids,
                           const AuxSummary& aux);

// Reads snp_id/t_stat/gamma_hat rows; a gamma_hat column that is NA on every
// row loads as an absent gamma_hat.
AuxSummary read_aux_summary_tsv(const std::string& path,
                                std::vector<std::string>* snp_ids = nullptr);

void write_truth_tsv(const std::string& path, const TruthTable& t);
TruthTable read_truth_tsv(const std::string& path);

}  // namespace nebula
