#include "nebula/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <optional>
#include <thread>
#include <vector>

#include "nebula/classifiers.hpp"
#include "nebula/errors.hpp"
#include "nebula/rng.hpp"
#include "text_util.hpp"

namespace nebula {

namespace {

constexpr std::uint64_t kCvKey = 0xC5EEDull;

std::string na_or_double(double v) {
  return std::isnan(v) ? std::string("NA") : text::format_double(v);
}

std::string sanitize_reason(std::string s) {
  for (char& c : s)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return s;
}

SimulationConfig setting_config(const BenchmarkConfig& config, std::size_t index) {
  SimulationConfig cfg = config.base;
  const BenchSetting& s = config.settings[index];
  cfg.overlap_pct = s.overlap_pct;
  cfg.n0_aux = s.n_aux;
  cfg.n1_aux = s.n_aux;
  cfg.n_nonnull_target = s.n_nonnull_target;
  cfg.n_nonnull_aux = s.n_nonnull_aux;
  cfg.mu = s.mu;
  // The seed stays shared across settings: cells that agree on the target
  // parameters then see identical target studies, so a sweep along one axis
  // is a matched comparison and differs only through that axis.
  return cfg;
}

double smallest_ll_step(const std::vector<double>& trace) {
  double worst = 0.0;
  for (std::size_t i = 1; i < trace.size(); ++i)
    worst = std::min(worst, trace[i] - trace[i - 1]);
  return worst;
}

ReplicationRecord run_replication(const BenchmarkConfig& config, const SimulationConfig& cfg,
                                  const StudyDesign& design, std::size_t setting,
                                  long long replication) {
  ReplicationRecord rec;
  rec.setting = setting;
  rec.replication = replication;

  const StudyRealization r =
      realize_replication(cfg, design, static_cast<std::uint64_t>(replication));
  const TargetSufficientStats stats = compute_sufficient_stats(r.train.x, r.train.labels);
  const Prevalence prev{config.prevalence};
  const std::vector<double> beta = fit_log_odds(stats);
  if (!r.aux_summary.gamma_hat)
    throw FitError("auxiliary summary lacks gamma_hat");
  const std::vector<double>& gamma = *r.aux_summary.gamma_hat;

  const auto cv_seed = [&cfg, replication](std::uint64_t variant) {
    return Rng::stream(cfg.seed, {kCvKey, static_cast<std::uint64_t>(replication), variant})
        .next_u64();
  };

  std::vector<int> predicted(r.test.n());

  const double prs_thr =
      select_threshold_cv(r.train.x, r.train.labels, threshold_candidates(beta, config.cv_candidates),
                          PrsVariant::kPlain, nullptr, prev, config.cv_folds, cv_seed(0));
  rec.threshold[0] = prs_thr;
  for (std::size_t i = 0; i < r.test.n(); ++i)
    predicted[i] = prs_score(r.test.x[i], stats, prs_thr, prev).predicted_class;
  rec.error[0] = misclassification_rate(predicted, r.test.labels);

  std::vector<double> products(beta.size());
  for (std::size_t j = 0; j < beta.size(); ++j) products[j] = beta[j] * gamma[j];
  const double adaptive_thr = select_threshold_cv(
      r.train.x, r.train.labels, threshold_candidates(products, config.cv_candidates),
      PrsVariant::kAdaptive, &r.aux_summary, prev, config.cv_folds, cv_seed(1));
  rec.threshold[1] = adaptive_thr;
  for (std::size_t i = 0; i < r.test.n(); ++i)
    predicted[i] =
        adaptive_prs_score(r.test.x[i], stats, r.aux_summary, adaptive_thr, prev).predicted_class;
  rec.error[1] = misclassification_rate(predicted, r.test.labels);

  const Grid3 grid =
      build_grid(stats, r.aux_summary, config.grid_d0, config.grid_d1, config.grid_d2);
  FitOptions opts;
  opts.tol = config.tol;
  opts.max_iter = config.max_iter;
  opts.threads = 1;
  const auto [ghat, report] = fit_npmle(stats, r.aux_summary, grid, opts);
  rec.min_ll_step = smallest_ll_step(report.log_likelihood_trace);
  rec.em_iterations = static_cast<long long>(report.iterations);
  rec.converged = report.converged;
  rec.final_log_likelihood = report.final_log_likelihood;

  const NebulaScorer scorer(stats, r.aux_summary, ghat);
  for (std::size_t i = 0; i < r.test.n(); ++i)
    predicted[i] = scorer.score(r.test.x[i], prev).predicted_class;
  rec.error[2] = misclassification_rate(predicted, r.test.labels);
  return rec;
}

}  // namespace

double misclassification_rate(const std::vector<int>& predicted,
                              const std::vector<int>& truth) {
  if (predicted.empty()) throw DomainError("misclassification rate of an empty label set");
  if (predicted.size() != truth.size())
    throw DomainError("predicted and true label counts differ");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] != truth[i]) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(predicted.size());
}

double empirical_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw DomainError("score and label counts differ");
  std::vector<double> cases, controls;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 1) {
      cases.push_back(scores[i]);
    } else if (labels[i] == 0) {
      controls.push_back(scores[i]);
    } else {
      throw DomainError("labels must be 0 or 1");
    }
  }
  if (cases.empty() || controls.empty())
    throw DomainError("empirical AUC needs both classes");
  double wins = 0.0;
  for (double s1 : cases)
    for (double s0 : controls) {
      if (s1 > s0)
        wins += 1.0;
      else if (s1 == s0)
        wins += 0.5;
    }
  return wins / (static_cast<double>(cases.size()) * static_cast<double>(controls.size()));
}

std::vector<BenchSetting> settings_grid(const std::vector<double>& overlaps,
                                        const std::vector<long long>& aux_sizes,
                                        const std::vector<long long>& nonnull_counts,
                                        const std::vector<double>& mus) {
  if (overlaps.empty() || aux_sizes.empty() || nonnull_counts.empty() || mus.empty())
    throw DomainError("every sweep axis needs at least one value");
  std::vector<BenchSetting> grid;
  grid.reserve(overlaps.size() * aux_sizes.size() * nonnull_counts.size() * mus.size());
  for (double overlap : overlaps)
    for (long long n_aux : aux_sizes)
      for (long long nonnull : nonnull_counts)
        for (double mu : mus) {
          BenchSetting s;
          s.overlap_pct = overlap;
          s.n_aux = n_aux;
          s.n_nonnull_target = nonnull;
          s.n_nonnull_aux = nonnull;
          s.mu = mu;
          grid.push_back(s);
        }
  return grid;
}

void BenchmarkConfig::validate() const {
  if (settings.empty()) throw ConfigError("benchmark needs at least one setting");
  if (replications < 1) throw ConfigError("benchmark needs at least one replication");
  if (grid_d0 == 0 || grid_d1 == 0 || grid_d2 == 0)
    throw ConfigError("grid sizes must all be at least 1");
  if (cv_folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  if (cv_candidates < 1) throw ConfigError("cross-validation needs at least 1 candidate");
  if (threads < 1) throw ConfigError("worker count must be at least 1");
  for (std::size_t i = 0; i < settings.size(); ++i) setting_config(*this, i).validate();
}

std::vector<SettingAggregate> aggregate_records(const std::vector<BenchSetting>& settings,
                                                const std::vector<ReplicationRecord>& records) {
  std::vector<SettingAggregate> out(settings.size());
  for (std::size_t s = 0; s < settings.size(); ++s) out[s].setting = settings[s];
  for (const ReplicationRecord& rec : records) ++out[rec.setting].replications;
  for (std::size_t s = 0; s < settings.size(); ++s) {
    SettingAggregate& agg = out[s];
    if (agg.replications == 0) {
      for (int c = 0; c < 3; ++c) {
        agg.mean_error[c] = std::numeric_limits<double>::quiet_NaN();
        agg.se_error[c] = std::numeric_limits<double>::quiet_NaN();
      }
      continue;
    }
    const double n = static_cast<double>(agg.replications);
    for (int c = 0; c < 3; ++c) {
      double sum = 0.0;
      for (const ReplicationRecord& rec : records)
        if (rec.setting == s) sum += rec.error[c];
      agg.mean_error[c] = sum / n;
      if (agg.replications < 2) {
        agg.se_error[c] = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      double ssd = 0.0;
      for (const ReplicationRecord& rec : records)
        if (rec.setting == s) {
          const double dev = rec.error[c] - agg.mean_error[c];
          ssd += dev * dev;
        }
      agg.se_error[c] = std::sqrt(ssd / (n - 1.0)) / std::sqrt(n);
    }
  }
  return out;
}

BenchmarkOutcome run_benchmark(const BenchmarkConfig& config) {
  config.validate();

  std::vector<SimulationConfig> cfgs;
  std::vector<StudyDesign> designs;
  cfgs.reserve(config.settings.size());
  designs.reserve(config.settings.size());
  for (std::size_t s = 0; s < config.settings.size(); ++s) {
    cfgs.push_back(setting_config(config, s));
    designs.push_back(draw_design(cfgs.back()));
  }

  const std::size_t n_settings = config.settings.size();
  const auto reps = static_cast<std::size_t>(config.replications);
  const std::size_t n_tasks = n_settings * reps;
  std::vector<std::optional<ReplicationRecord>> slots(n_tasks);
  std::vector<std::optional<FailureRecord>> failed(n_tasks);

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n_tasks) return;
      const std::size_t s = i / reps;
      const auto rep = static_cast<long long>(i % reps);
      try {
        slots[i] = run_replication(config, cfgs[s], designs[s], s, rep);
      } catch (const std::exception& e) {
        failed[i] = FailureRecord{s, rep, e.what()};
      }
    }
  };
  if (config.threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(config.threads);
    for (unsigned t = 0; t < config.threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  BenchmarkOutcome outcome;
  outcome.settings = config.settings;
  for (std::size_t i = 0; i < n_tasks; ++i) {
    if (slots[i]) outcome.records.push_back(*slots[i]);
    if (failed[i]) outcome.failures.push_back(*failed[i]);
  }
  outcome.failure_fraction =
      static_cast<double>(outcome.failures.size()) / static_cast<double>(n_tasks);
  outcome.failure_threshold_exceeded = outcome.failure_fraction > 0.10;
  outcome.aggregates = aggregate_records(outcome.settings, outcome.records);
  return outcome;
}

void write_benchmark_long_tsv(const std::string& path, const BenchmarkOutcome& outcome) {
  auto out = text::open_out(path);
  out << "overlap_pct\tn_aux\tn_nonnull_target\tn_nonnull_aux\tmu\treplication\t"
         "classifier\terror\tthreshold\tmin_ll_step\tem_iterations\tconverged\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const ReplicationRecord& rec : outcome.records) {
    const BenchSetting& s = outcome.settings[rec.setting];
    for (int c = 0; c < 3; ++c) {
      out << text::format_double(s.overlap_pct) << '\t' << s.n_aux << '\t'
          << s.n_nonnull_target << '\t' << s.n_nonnull_aux << '\t'
          << text::format_double(s.mu) << '\t' << rec.replication << '\t'
          << kBenchClassifierNames[c] << '\t' << text::format_double(rec.error[c]) << '\t'
          << na_or_double(c < 2 ? rec.threshold[c] : nan) << '\t';
      if (c == 2) {
        out << text::format_double(rec.min_ll_step) << '\t' << rec.em_iterations << '\t'
            << (rec.converged ? 1 : 0) << '\n';
      } else {
        out << "NA\tNA\tNA\n";
      }
    }
  }
}

void write_benchmark_aggregate_tsv(const std::string& path, const BenchmarkOutcome& outcome) {
  auto out = text::open_out(path);
  out << "overlap_pct\tn_aux\tn_nonnull_target\tn_nonnull_aux\tmu\tclassifier\t"
         "replications\tmean_error\tse_error\n";
  for (const SettingAggregate& agg : outcome.aggregates) {
    const BenchSetting& s = agg.setting;
    for (int c = 0; c < 3; ++c) {
      out << text::format_double(s.overlap_pct) << '\t' << s.n_aux << '\t'
          << s.n_nonnull_target << '\t' << s.n_nonnull_aux << '\t'
          << text::format_double(s.mu) << '\t' << kBenchClassifierNames[c] << '\t'
          << agg.replications << '\t' << na_or_double(agg.mean_error[c]) << '\t'
          << na_or_double(agg.se_error[c]) << '\n';
    }
  }
}

void write_benchmark_failures_tsv(const std::string& path, const BenchmarkOutcome& outcome) {
  auto out = text::open_out(path);
  out << "overlap_pct\tn_aux\tn_nonnull_target\tn_nonnull_aux\tmu\treplication\treason\n";
  for (const FailureRecord& f : outcome.failures) {
    const BenchSetting& s = outcome.settings[f.setting];
    out << text::format_double(s.overlap_pct) << '\t' << s.n_aux << '\t'
        << s.n_nonnull_target << '\t' << s.n_nonnull_aux << '\t'
        << text::format_double(s.mu) << '\t' << f.replication << '\t'
        << sanitize_reason(f.reason) << '\n';
  }
}

}  // namespace nebula
