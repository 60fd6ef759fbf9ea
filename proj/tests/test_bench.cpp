#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nebula/bench.hpp"
#include "nebula/errors.hpp"
#include "nebula/rng.hpp"

using namespace nebula;

namespace {

BenchmarkConfig tiny_config() {
  BenchmarkConfig config;
  config.base.d = 60;
  config.base.n0_train = 12;
  config.base.n1_train = 12;
  config.base.n0_test = 8;
  config.base.n1_test = 8;
  config.base.seed = 17;
  config.settings = settings_grid({25.0, 100.0}, {40}, {10}, {0.4});
  config.replications = 3;
  config.grid_d0 = 4;
  config.grid_d1 = 4;
  config.grid_d2 = 4;
  config.tol = 1e-7;
  config.max_iter = 300;
  config.cv_folds = 3;
  config.cv_candidates = 6;
  return config;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("misclassification rate counts mismatches") {
  CHECK(misclassification_rate({1, 0, 1}, {1, 0, 1}) == 0.0);
  CHECK(misclassification_rate({1, 0}, {0, 1}) == 1.0);
  CHECK(misclassification_rate({1, 0, 1, 1}, {1, 1, 1, 0}) == 0.5);
  CHECK_THROWS_AS(misclassification_rate({}, {}), DomainError);
  CHECK_THROWS_AS(misclassification_rate({1}, {1, 0}), DomainError);
}

TEST_CASE("empirical AUC is the rescaled Mann-Whitney statistic") {
  CHECK(empirical_auc({5.0, 4.0, 1.0, 0.0}, {1, 1, 0, 0}) == 1.0);
  CHECK(empirical_auc({2.0, 2.0, 2.0, 2.0}, {1, 0, 1, 0}) == 0.5);
  CHECK(empirical_auc({3.0, 1.0, 2.0, 0.0}, {1, 1, 0, 0}) == 0.75);
  CHECK_THROWS_AS(empirical_auc({1.0, 2.0}, {1, 1}), DomainError);
  CHECK_THROWS_AS(empirical_auc({1.0, 2.0}, {1, 2}), DomainError);
  CHECK_THROWS_AS(empirical_auc({1.0}, {1, 0}), DomainError);

  // Negating tie-free scores mirrors the statistic around one half.
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 30; ++i) {
      scores.push_back(rng.uniform01());
      labels.push_back(static_cast<int>(rng.bernoulli(0.5)));
    }
    labels[0] = 0;
    labels[1] = 1;
    std::vector<double> negated;
    for (double s : scores) negated.push_back(-s);
    CHECK(empirical_auc(scores, labels) + empirical_auc(negated, labels) ==
          doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("settings grid enumerates the cross product") {
  const auto grid = settings_grid({25.0, 50.0}, {250, 1000}, {100}, {0.1, 0.2, 0.3});
  REQUIRE(grid.size() == 12);
  CHECK(grid[0].overlap_pct == 25.0);
  CHECK(grid[0].n_aux == 250);
  CHECK(grid[0].mu == 0.1);
  CHECK(grid[1].mu == 0.2);
  CHECK(grid[3].n_aux == 1000);
  CHECK(grid[6].overlap_pct == 50.0);
  for (const auto& s : grid) {
    CHECK(s.n_nonnull_target == 100);
    CHECK(s.n_nonnull_aux == 100);
  }
  CHECK_THROWS_AS(settings_grid({}, {250}, {100}, {0.1}), DomainError);
}

TEST_CASE("aggregation computes means and standard errors") {
  const auto settings = settings_grid({25.0, 50.0}, {40}, {10}, {0.4});
  std::vector<ReplicationRecord> records(3);
  records[0].setting = 0;
  records[0].error[0] = 0.2;
  records[0].error[2] = 0.1;
  records[1].setting = 0;
  records[1].error[0] = 0.4;
  records[1].error[2] = 0.1;
  records[2].setting = 1;
  records[2].error[0] = 0.3;

  const auto aggs = aggregate_records(settings, records);
  REQUIRE(aggs.size() == 2);
  CHECK(aggs[0].replications == 2);
  CHECK(aggs[0].mean_error[0] == doctest::Approx(0.3).epsilon(1e-15));
  // sd of {0.2, 0.4} is sqrt(0.02); the standard error divides by sqrt(2).
  CHECK(aggs[0].se_error[0] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(aggs[0].mean_error[2] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(aggs[0].se_error[2] == 0.0);
  CHECK(aggs[1].replications == 1);
  CHECK(aggs[1].mean_error[0] == 0.3);
  CHECK(std::isnan(aggs[1].se_error[0]));

  const auto empty = aggregate_records(settings, {});
  CHECK(empty[0].replications == 0);
  CHECK(std::isnan(empty[0].mean_error[0]));
}

TEST_CASE("benchmark runs the sweep deterministically") {
  const BenchmarkConfig config = tiny_config();
  const BenchmarkOutcome a = run_benchmark(config);
  REQUIRE(a.records.size() == 6);
  CHECK(a.failures.empty());
  CHECK(a.failure_fraction == 0.0);
  CHECK_FALSE(a.failure_threshold_exceeded);

  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const ReplicationRecord& rec = a.records[i];
    CHECK(rec.setting == i / 3);
    CHECK(rec.replication == static_cast<long long>(i % 3));
    for (int c = 0; c < 3; ++c) {
      CHECK(rec.error[c] >= 0.0);
      CHECK(rec.error[c] <= 1.0);
    }
    CHECK(rec.min_ll_step >= -1e-10);
    CHECK(rec.em_iterations >= 1);
    CHECK(rec.threshold[0] >= 0.0);
    CHECK(rec.threshold[1] >= 0.0);
  }
  REQUIRE(a.aggregates.size() == 2);
  for (const SettingAggregate& agg : a.aggregates) {
    CHECK(agg.replications == 3);
    for (int c = 0; c < 3; ++c) {
      CHECK(agg.mean_error[c] >= 0.0);
      CHECK(agg.mean_error[c] <= 1.0);
      CHECK(agg.se_error[c] >= 0.0);
    }
  }

  const BenchmarkOutcome b = run_benchmark(config);
  REQUIRE(b.records.size() == a.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    for (int c = 0; c < 3; ++c) CHECK(a.records[i].error[c] == b.records[i].error[c]);
    CHECK(a.records[i].threshold[0] == b.records[i].threshold[0]);
    CHECK(a.records[i].final_log_likelihood == b.records[i].final_log_likelihood);
  }
}

TEST_CASE("benchmark worker pools do not change the outcome") {
  BenchmarkConfig config = tiny_config();
  config.settings = settings_grid({50.0}, {40}, {10}, {0.4});
  config.replications = 2;
  const BenchmarkOutcome serial = run_benchmark(config);
  config.threads = 3;
  const BenchmarkOutcome pooled = run_benchmark(config);
  REQUIRE(serial.records.size() == pooled.records.size());
  for (std::size_t i = 0; i < serial.records.size(); ++i) {
    for (int c = 0; c < 3; ++c)
      CHECK(serial.records[i].error[c] == pooled.records[i].error[c]);
    CHECK(serial.records[i].final_log_likelihood == pooled.records[i].final_log_likelihood);
  }
}

TEST_CASE("failed replications are excluded and flagged") {
  BenchmarkConfig config = tiny_config();
  // Two subjects per class cannot fill three stratified folds.
  config.base.n0_train = 2;
  config.base.n1_train = 2;
  config.cv_folds = 3;
  config.settings = settings_grid({50.0}, {40}, {10}, {0.4});
  config.replications = 2;

  const BenchmarkOutcome outcome = run_benchmark(config);
  CHECK(outcome.records.empty());
  REQUIRE(outcome.failures.size() == 2);
  CHECK(outcome.failures[0].replication == 0);
  CHECK(outcome.failures[1].replication == 1);
  CHECK(outcome.failures[0].reason ==
        std::string("a cross-validation fold contains a single class"));
  CHECK(outcome.failure_fraction == 1.0);
  CHECK(outcome.failure_threshold_exceeded);
  REQUIRE(outcome.aggregates.size() == 1);
  CHECK(outcome.aggregates[0].replications == 0);
  CHECK(std::isnan(outcome.aggregates[0].mean_error[0]));
}

TEST_CASE("benchmark configuration validation") {
  BenchmarkConfig config = tiny_config();
  config.settings.clear();
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = tiny_config();
  config.replications = 0;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = tiny_config();
  config.grid_d1 = 0;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = tiny_config();
  config.cv_folds = 1;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = tiny_config();
  config.threads = 0;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = tiny_config();
  config.settings[0].n_aux = 0;
  CHECK_THROWS_AS(config.validate(), ConfigError);
}

TEST_CASE("benchmark tables round trip and aggregate consistently") {
  BenchmarkConfig config = tiny_config();
  config.settings = settings_grid({25.0, 100.0}, {40}, {10}, {0.4});
  config.replications = 2;
  const BenchmarkOutcome outcome = run_benchmark(config);

  const auto dir = std::filesystem::temp_directory_path() / "nebula_bench_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  write_benchmark_long_tsv((dir / "long.tsv").string(), outcome);
  write_benchmark_aggregate_tsv((dir / "agg.tsv").string(), outcome);
  write_benchmark_failures_tsv((dir / "fail.tsv").string(), outcome);

  const auto long_rows = read_tsv(dir / "long.tsv");
  REQUIRE(long_rows.size() == 1 + outcome.records.size() * 3);
  CHECK(long_rows[0] == std::vector<std::string>{"overlap_pct", "n_aux", "n_nonnull_target",
                                                 "n_nonnull_aux", "mu", "replication",
                                                 "classifier", "error", "threshold",
                                                 "min_ll_step", "em_iterations", "converged"});

  // Recompute each aggregate cell from the long table, accumulating in row
  // order with the same two-pass formula; results must match exactly.
  std::map<std::pair<std::string, std::string>, std::vector<double>> by_cell;
  for (std::size_t i = 1; i < long_rows.size(); ++i)
    by_cell[{long_rows[i][0], long_rows[i][6]}].push_back(std::stod(long_rows[i][7]));

  const auto agg_rows = read_tsv(dir / "agg.tsv");
  REQUIRE(agg_rows.size() == 1 + outcome.aggregates.size() * 3);
  for (std::size_t i = 1; i < agg_rows.size(); ++i) {
    const auto& row = agg_rows[i];
    const auto& errors = by_cell.at({row[0], row[5]});
    REQUIRE(errors.size() == static_cast<std::size_t>(std::stoll(row[6])));
    double sum = 0.0;
    for (double e : errors) sum += e;
    const double mean = sum / static_cast<double>(errors.size());
    double ssd = 0.0;
    for (double e : errors) ssd += (e - mean) * (e - mean);
    const double se = std::sqrt(ssd / static_cast<double>(errors.size() - 1)) /
                      std::sqrt(static_cast<double>(errors.size()));
    CHECK(std::stod(row[7]) == mean);
    CHECK(std::stod(row[8]) == se);
  }

  const auto fail_rows = read_tsv(dir / "fail.tsv");
  CHECK(fail_rows.size() == 1);

  write_benchmark_long_tsv((dir / "long2.tsv").string(), run_benchmark(config));
  CHECK(slurp(dir / "long.tsv") == slurp(dir / "long2.tsv"));
  std::filesystem::remove_all(dir);
}
