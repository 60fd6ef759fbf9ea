#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "nebula/classifiers.hpp"
#include "nebula/simulate.hpp"

namespace nebula {

// Union of every command's parameters. Defaults are overridden by config
// file entries, which are overridden by command-line flags.
struct RunConfig {
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string out_dir = ".";
  std::size_t grid_d0 = 20;
  std::size_t grid_d1 = 20;
  std::size_t grid_d2 = 20;
  double tol = 1e-8;
  std::size_t max_iter = 2000;
  double prevalence = 0.5;
  std::string classifier = "nebula";
  // NaN means "select by cross-validation".
  double threshold = std::numeric_limits<double>::quiet_NaN();
  std::size_t cv_folds = 5;
  std::size_t cv_candidates = 20;
  bool per_snp = false;

  std::string train_path;
  std::string test_path;
  std::string aux_path;
  std::string truth_path;
  std::string model_dir;
  std::string annotations_path;
  std::string genotypes_path;

  double min_maf = 0.01;
  double hwe_p = 0.001;
  bool impute = false;

  long long d = 2000;
  long long n_nonnull_target = 100;
  long long n_nonnull_aux = 100;
  double overlap_pct = 50.0;
  double mu = 0.15;
  double effect_var = 0.01;
  long long n0_train = 100;
  long long n1_train = 100;
  long long n0_test = 50;
  long long n1_test = 50;
  long long n0_aux = 1000;
  long long n1_aux = 1000;
  double base_maf_lo = 0.2;
  double base_maf_hi = 0.5;

  std::string overlaps = "25,50,100";
  std::string aux_sizes = "1000";
  std::string nonnull_counts = "100";
  std::string mus = "0.15";
  long long replications = 50;

  // The SimulationConfig assembled from the fields above, seed included.
  SimulationConfig simulation() const;
};

// Applies one flat key=value map; keys are flag names with dashes replaced
// by underscores. Unknown keys raise ConfigError.
void apply_config_kv(RunConfig& rc, const std::map<std::string, std::string>& kv);

// Reads a flat key=value file and applies it.
void apply_config_file(RunConfig& rc, const std::string& path);

// Comma-separated numeric lists for the benchmark sweep axes.
std::vector<double> parse_double_list(const std::string& s, const std::string& context);
std::vector<long long> parse_int_list(const std::string& s, const std::string& context);

// One row per subject: subject_id, score, predicted_class, covariate_loglr,
// then one column per SNP when per_snp_ids is non-null.
void write_score_reports(const std::string& path, const std::vector<std::string>& subject_ids,
                         const std::vector<ScoreReport>& reports,
                         const std::vector<std::string>* per_snp_ids);

// snp_id/annotation rows; ids must match snp_ids in order.
std::vector<int> read_annotations_tsv(const std::string& path,
                                      const std::vector<std::string>& snp_ids);
void write_annotations_tsv(const std::string& path, const std::vector<std::string>& snp_ids,
                           const std::vector<int>& annotations);

int cmd_simulate(const RunConfig& rc);
int cmd_preprocess(const RunConfig& rc);
int cmd_fit(const RunConfig& rc);
int cmd_predict(const RunConfig& rc);
int cmd_benchmark(const RunConfig& rc);

// Dispatch by subcommand name; unknown name raises ConfigError.
int run_command(const std::string& name, const RunConfig& rc);

}  // namespace nebula
