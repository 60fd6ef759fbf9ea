#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nebula/npmle.hpp"
#include "nebula/simulate.hpp"

namespace nebula {

// Fraction of mismatched labels.
double misclassification_rate(const std::vector<int>& predicted,
                              const std::vector<int>& truth);

// Probability that a random case's score exceeds a random control's, ties
// counted one half (the Mann-Whitney statistic rescaled to [0,1]).
double empirical_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// One cell of the simulation sweep; n_aux is the per-class auxiliary size.
struct BenchSetting {
  double overlap_pct = 50.0;
  long long n_aux = 1000;
  long long n_nonnull_target = 100;
  long long n_nonnull_aux = 100;
  double mu = 0.15;
};

// Full cross product of the sweep axes, ordered overlap-major.
std::vector<BenchSetting> settings_grid(const std::vector<double>& overlaps,
                                        const std::vector<long long>& aux_sizes,
                                        const std::vector<long long>& nonnull_counts,
                                        const std::vector<double>& mus);

struct BenchmarkConfig {
  // Supplies d, the target cohort sizes, the seed and the frequency range;
  // the per-setting fields are overwritten from each BenchSetting.
  SimulationConfig base;
  std::vector<BenchSetting> settings;
  long long replications = 50;
  std::size_t grid_d0 = 20;
  std::size_t grid_d1 = 20;
  std::size_t grid_d2 = 20;
  double tol = 1e-8;
  std::size_t max_iter = 2000;
  std::size_t cv_folds = 5;
  std::size_t cv_candidates = 20;
  double prevalence = 0.5;
  unsigned threads = 1;

  void validate() const;
};

// Classifier order used by every per-classifier array and output column.
inline constexpr const char* kBenchClassifierNames[3] = {"prs", "adaptive_prs", "nebula"};

struct ReplicationRecord {
  std::size_t setting = 0;
  long long replication = 0;
  double error[3] = {0.0, 0.0, 0.0};
  double threshold[2] = {0.0, 0.0};
  double min_ll_step = 0.0;
  long long em_iterations = 0;
  bool converged = false;
  double final_log_likelihood = 0.0;
};

struct FailureRecord {
  std::size_t setting = 0;
  long long replication = 0;
  std::string reason;
};

struct SettingAggregate {
  BenchSetting setting;
  long long replications = 0;
  double mean_error[3] = {0.0, 0.0, 0.0};
  // NaN when fewer than two replications completed.
  double se_error[3] = {0.0, 0.0, 0.0};
};

struct BenchmarkOutcome {
  std::vector<BenchSetting> settings;
  std::vector<ReplicationRecord> records;
  std::vector<FailureRecord> failures;
  std::vector<SettingAggregate> aggregates;
  double failure_fraction = 0.0;
  bool failure_threshold_exceeded = false;
};

// Means and standard errors per setting, accumulated in record order.
std::vector<SettingAggregate> aggregate_records(const std::vector<BenchSetting>& settings,
                                                const std::vector<ReplicationRecord>& records);

// Per setting: one design draw, then per replication fresh genotypes, a
// cross-validated PRS, a cross-validated adaptive PRS and an NPMLE-backed
// empirical Bayes run, each scored on the held-out test cohort. Failed
// replications are recorded and excluded; more than 10% of them flips
// failure_threshold_exceeded.
BenchmarkOutcome run_benchmark(const BenchmarkConfig& config);

void write_benchmark_long_tsv(const std::string& path, const BenchmarkOutcome& outcome);
void write_benchmark_aggregate_tsv(const std::string& path, const BenchmarkOutcome& outcome);
void write_benchmark_failures_tsv(const std::string& path, const BenchmarkOutcome& outcome);

}  // namespace nebula
