#include "nebula/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "nebula/bench.hpp"
#include "nebula/errors.hpp"
#include "nebula/npmle.hpp"
#include "nebula/preprocess.hpp"
#include "text_util.hpp"

namespace nebula {

namespace fs = std::filesystem;

namespace {

bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ConfigError("expected a boolean for " + key + ", got '" + s + "'");
}

std::uint64_t parse_u64(const std::string& s, const std::string& key) {
  try {
    if (s.empty() || s[0] == '-') throw std::invalid_argument(s);
    std::size_t used = 0;
    const std::uint64_t v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("expected an unsigned integer for " + key + ", got '" + s + "'");
  }
}

double config_double(const std::string& s, const std::string& key) {
  try {
    return text::parse_double(s, key);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
}

long long config_int(const std::string& s, const std::string& key) {
  try {
    return text::parse_int(s, key);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
}

std::size_t config_size(const std::string& s, const std::string& key) {
  const long long v = config_int(s, key);
  if (v < 0) throw ConfigError(key + " must be nonnegative");
  return static_cast<std::size_t>(v);
}

const std::string& require_path(const std::string& path, const std::string& flag) {
  if (path.empty()) throw ConfigError("missing required option " + flag);
  if (!fs::exists(path)) throw ConfigError(flag + " path does not exist: " + path);
  return path;
}

fs::path out_file(const RunConfig& rc, const std::string& name) {
  return fs::path(rc.out_dir) / name;
}

void check_snp_ids(const std::vector<std::string>& expected, const std::vector<std::string>& got,
                   const std::string& what) {
  if (expected != got) throw DomainError(what + " SNP ids do not match the training data");
}

// Equally spaced frequency axes spanning the raw per-class estimates of the
// selected SNPs.
std::pair<std::vector<double>, std::vector<double>> frequency_axes(
    const TargetSufficientStats& stats, const std::vector<std::size_t>& selector,
    std::size_t d0, std::size_t d1) {
  double lo0 = 1.0, hi0 = 0.0, lo1 = 1.0, hi1 = 0.0;
  for (std::size_t j : selector) {
    const double p0 = static_cast<double>(stats.s0[j]) / (2.0 * static_cast<double>(stats.n0));
    const double p1 = static_cast<double>(stats.s1[j]) / (2.0 * static_cast<double>(stats.n1));
    lo0 = std::min(lo0, p0);
    hi0 = std::max(hi0, p0);
    lo1 = std::min(lo1, p1);
    hi1 = std::max(hi1, p1);
  }
  return {equally_spaced(lo0, hi0, d0), equally_spaced(lo1, hi1, d1)};
}

struct TrainingData {
  GenotypeMatrix matrix;
  std::vector<std::vector<int>> rows;
  TargetSufficientStats stats;
};

TrainingData load_training(const std::string& path) {
  TrainingData data;
  data.matrix = read_genotype_tsv(path);
  data.rows = genotype_rows(data.matrix);
  data.stats = compute_sufficient_stats(data.rows, data.matrix.labels);
  return data;
}

FitOptions fit_options(const RunConfig& rc) {
  FitOptions opts;
  opts.tol = rc.tol;
  opts.max_iter = rc.max_iter;
  opts.threads = rc.threads;
  return opts;
}

[[noreturn]] void rethrow_with_snp_id(const FitError& e,
                                      const std::vector<std::string>& snp_ids) {
  if (e.has_snp_index() && e.snp_index() < snp_ids.size())
    throw FitError(std::string(e.what()) + " (snp id " + snp_ids[e.snp_index()] + ")",
                   e.snp_index());
  throw e;
}

}  // namespace

SimulationConfig RunConfig::simulation() const {
  SimulationConfig cfg;
  cfg.d = d;
  cfg.n_nonnull_target = n_nonnull_target;
  cfg.n_nonnull_aux = n_nonnull_aux;
  cfg.overlap_pct = overlap_pct;
  cfg.mu = mu;
  cfg.effect_var = effect_var;
  cfg.n0_train = n0_train;
  cfg.n1_train = n1_train;
  cfg.n0_test = n0_test;
  cfg.n1_test = n1_test;
  cfg.n0_aux = n0_aux;
  cfg.n1_aux = n1_aux;
  cfg.seed = seed;
  cfg.base_maf_lo = base_maf_lo;
  cfg.base_maf_hi = base_maf_hi;
  return cfg;
}

void apply_config_kv(RunConfig& rc, const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "seed") rc.seed = parse_u64(value, key);
    else if (key == "threads") rc.threads = static_cast<unsigned>(config_size(value, key));
    else if (key == "out_dir") rc.out_dir = value;
    else if (key == "grid_d0") rc.grid_d0 = config_size(value, key);
    else if (key == "grid_d1") rc.grid_d1 = config_size(value, key);
    else if (key == "grid_d2") rc.grid_d2 = config_size(value, key);
    else if (key == "tol") rc.tol = config_double(value, key);
    else if (key == "max_iter") rc.max_iter = config_size(value, key);
    else if (key == "prevalence") rc.prevalence = config_double(value, key);
    else if (key == "classifier") rc.classifier = value;
    else if (key == "threshold") rc.threshold = config_double(value, key);
    else if (key == "cv_folds") rc.cv_folds = config_size(value, key);
    else if (key == "cv_candidates") rc.cv_candidates = config_size(value, key);
    else if (key == "per_snp") rc.per_snp = parse_bool(value, key);
    else if (key == "train") rc.train_path = value;
    else if (key == "test") rc.test_path = value;
    else if (key == "aux") rc.aux_path = value;
    else if (key == "truth") rc.truth_path = value;
    else if (key == "model_dir") rc.model_dir = value;
    else if (key == "annotations") rc.annotations_path = value;
    else if (key == "genotypes") rc.genotypes_path = value;
    else if (key == "min_maf") rc.min_maf = config_double(value, key);
    else if (key == "hwe_p") rc.hwe_p = config_double(value, key);
    else if (key == "impute") rc.impute = parse_bool(value, key);
    else if (key == "d") rc.d = config_int(value, key);
    else if (key == "n_nonnull_target") rc.n_nonnull_target = config_int(value, key);
    else if (key == "n_nonnull_aux") rc.n_nonnull_aux = config_int(value, key);
    else if (key == "overlap_pct") rc.overlap_pct = config_double(value, key);
    else if (key == "mu") rc.mu = config_double(value, key);
    else if (key == "effect_var") rc.effect_var = config_double(value, key);
    else if (key == "n0_train") rc.n0_train = config_int(value, key);
    else if (key == "n1_train") rc.n1_train = config_int(value, key);
    else if (key == "n0_test") rc.n0_test = config_int(value, key);
    else if (key == "n1_test") rc.n1_test = config_int(value, key);
    else if (key == "n0_aux") rc.n0_aux = config_int(value, key);
    else if (key == "n1_aux") rc.n1_aux = config_int(value, key);
    else if (key == "base_maf_lo") rc.base_maf_lo = config_double(value, key);
    else if (key == "base_maf_hi") rc.base_maf_hi = config_double(value, key);
    else if (key == "overlaps") rc.overlaps = value;
    else if (key == "aux_sizes") rc.aux_sizes = value;
    else if (key == "nonnull_counts") rc.nonnull_counts = value;
    else if (key == "mus") rc.mus = value;
    else if (key == "replications") rc.replications = config_int(value, key);
    else throw ConfigError("unknown configuration key '" + key + "'");
  }
}

void apply_config_file(RunConfig& rc, const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("--config path does not exist: " + path);
  apply_config_kv(rc, text::read_kv_file(path));
}

std::vector<double> parse_double_list(const std::string& s, const std::string& context) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t comma = std::min(s.find(',', start), s.size());
    out.push_back(config_double(s.substr(start, comma - start), context));
    start = comma + 1;
  }
  return out;
}

std::vector<long long> parse_int_list(const std::string& s, const std::string& context) {
  std::vector<long long> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t comma = std::min(s.find(',', start), s.size());
    out.push_back(config_int(s.substr(start, comma - start), context));
    start = comma + 1;
  }
  return out;
}

void write_score_reports(const std::string& path, const std::vector<std::string>& subject_ids,
                         const std::vector<ScoreReport>& reports,
                         const std::vector<std::string>* per_snp_ids) {
  if (subject_ids.size() != reports.size())
    throw DomainError("subject id and report counts differ");
  auto out = text::open_out(path);
  out << "subject_id\tscore\tpredicted_class\tcovariate_loglr";
  if (per_snp_ids)
    for (const std::string& id : *per_snp_ids) out << '\t' << id;
  out << '\n';
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const ScoreReport& r = reports[i];
    out << subject_ids[i] << '\t' << text::format_double(r.score) << '\t' << r.predicted_class
        << '\t' << text::format_double(r.covariate_loglr);
    if (per_snp_ids) {
      if (r.per_snp_loglr.size() != per_snp_ids->size())
        throw DomainError("per-SNP contribution count does not match the SNP ids");
      for (double v : r.per_snp_loglr) out << '\t' << text::format_double(v);
    }
    out << '\n';
  }
}

std::vector<int> read_annotations_tsv(const std::string& path,
                                      const std::vector<std::string>& snp_ids) {
  auto in = text::open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty annotation file: " + path);
  if (text::strip_cr(line) != "snp_id\tannotation")
    throw IoError("bad annotation header in " + path);
  std::vector<int> ann;
  std::vector<std::string> ids;
  while (std::getline(in, line)) {
    line = text::strip_cr(line);
    if (line.empty()) continue;
    const auto cells = text::split_tabs(line);
    if (cells.size() != 2) throw IoError("expected 2 columns in annotation row of " + path);
    const long long v = text::parse_int(cells[1], "annotation in " + path);
    if (v != 0 && v != 1) throw IoError("annotations must be 0 or 1 in " + path);
    ids.push_back(cells[0]);
    ann.push_back(static_cast<int>(v));
  }
  if (ids != snp_ids)
    throw DomainError("annotation SNP ids do not match the training data");
  return ann;
}

void write_annotations_tsv(const std::string& path, const std::vector<std::string>& snp_ids,
                           const std::vector<int>& annotations) {
  if (snp_ids.size() != annotations.size())
    throw DomainError("SNP id and annotation counts differ");
  auto out = text::open_out(path);
  out << "snp_id\tannotation\n";
  for (std::size_t j = 0; j < snp_ids.size(); ++j) {
    if (annotations[j] != 0 && annotations[j] != 1)
      throw DomainError("annotations must be 0 or 1");
    out << snp_ids[j] << '\t' << annotations[j] << '\n';
  }
}

int cmd_simulate(const RunConfig& rc) {
  const SimulationConfig cfg = rc.simulation();
  cfg.validate();
  const StudyRealization r = realize_study(cfg);
  save_realization(r, cfg, rc.out_dir);
  std::cout << "simulate: d=" << cfg.d << " train=" << r.train.n() << " test=" << r.test.n()
            << " aux_snps=" << r.aux_summary.t.size() << " -> " << rc.out_dir << "\n";
  return 0;
}

int cmd_preprocess(const RunConfig& rc) {
  const GenotypeMatrix input = read_genotype_tsv(require_path(rc.genotypes_path, "--genotypes"));
  FilterResult after_maf = maf_filter(input, rc.min_maf);
  std::vector<DropRecord> dropped = std::move(after_maf.dropped);
  GenotypeMatrix kept = std::move(after_maf.kept);
  if (rc.hwe_p > 0.0) {
    FilterResult after_hwe = hwe_filter(kept, rc.hwe_p);
    kept = std::move(after_hwe.kept);
    dropped.insert(dropped.end(), after_hwe.dropped.begin(), after_hwe.dropped.end());
  }
  if (rc.impute) kept = impute_missing(kept, rc.seed);
  write_genotype_tsv(out_file(rc, "filtered.tsv"), kept);
  write_drop_log(out_file(rc, "drop_log.tsv"), dropped);
  std::cout << "preprocess: kept " << kept.d() << "/" << input.d() << " SNPs, dropped "
            << dropped.size() << (rc.impute ? ", imputed missing" : "") << " -> " << rc.out_dir
            << "\n";
  return 0;
}

int cmd_fit(const RunConfig& rc) {
  const TrainingData train = load_training(require_path(rc.train_path, "--train"));
  std::vector<std::string> aux_ids;
  const AuxSummary aux = read_aux_summary_tsv(require_path(rc.aux_path, "--aux"), &aux_ids);
  check_snp_ids(train.matrix.snp_ids, aux_ids, "auxiliary summary");

  if (rc.annotations_path.empty()) {
    const Grid3 grid = build_grid(train.stats, aux, rc.grid_d0, rc.grid_d1, rc.grid_d2);
    try {
      const auto [ghat, report] = fit_npmle(train.stats, aux, grid, fit_options(rc));
      save_mixing_distribution(out_file(rc, "ghat.tsv"), out_file(rc, "ghat_meta.txt"), ghat,
                               &report);
      std::cout << "fit: " << report.iterations << " iterations, converged="
                << (report.converged ? 1 : 0)
                << ", log_likelihood=" << text::format_double(report.final_log_likelihood)
                << " -> " << rc.out_dir << "\n";
    } catch (const FitError& e) {
      rethrow_with_snp_id(e, train.matrix.snp_ids);
    }
    return 0;
  }

  const std::vector<int> ann =
      read_annotations_tsv(require_path(rc.annotations_path, "--annotations"),
                           train.matrix.snp_ids);
  for (int group = 0; group < 2; ++group) {
    std::vector<std::size_t> selector;
    for (std::size_t j = 0; j < ann.size(); ++j)
      if (ann[j] == group) selector.push_back(j);
    if (selector.empty())
      throw DomainError("annotation group " + std::to_string(group) + " has no SNPs");
    const auto [axis0, axis1] = frequency_axes(train.stats, selector, rc.grid_d0, rc.grid_d1);
    try {
      const auto [ghat, report] =
          fit_npmle_bivariate(train.stats, selector, axis0, axis1, fit_options(rc));
      const std::string stem = "ghat_annot" + std::to_string(group);
      save_mixing_distribution2(out_file(rc, stem + ".tsv"), out_file(rc, stem + "_meta.txt"),
                                ghat, &report);
      std::cout << "fit: annotation group " << group << ": " << report.iterations
                << " iterations, converged=" << (report.converged ? 1 : 0)
                << ", log_likelihood=" << text::format_double(report.final_log_likelihood)
                << " -> " << rc.out_dir << "\n";
    } catch (const FitError& e) {
      rethrow_with_snp_id(e, train.matrix.snp_ids);
    }
  }
  return 0;
}

int cmd_predict(const RunConfig& rc) {
  const GenotypeMatrix test = read_genotype_tsv(require_path(rc.test_path, "--test"));
  const std::vector<std::vector<int>> rows = genotype_rows(test);
  const Prevalence prev{rc.prevalence};
  prev.validate();

  std::vector<ScoreReport> reports;
  reports.reserve(rows.size());
  double chosen_threshold = std::numeric_limits<double>::quiet_NaN();

  if (rc.classifier == "oracle") {
    const TruthTable truth = read_truth_tsv(require_path(rc.truth_path, "--truth"));
    check_snp_ids(test.snp_ids, truth.snp_ids, "truth table");
    DiseaseModel model;
    model.pi0 = truth.pi0;
    model.pi1 = truth.pi1;
    model.validate();
    for (const auto& x : rows) reports.push_back(oracle_score(x, model, prev));
  } else if (rc.classifier == "prs" || rc.classifier == "adaptive-prs") {
    const TrainingData train = load_training(require_path(rc.train_path, "--train"));
    check_snp_ids(train.matrix.snp_ids, test.snp_ids, "test data");
    const std::vector<double> beta = fit_log_odds(train.stats);
    if (rc.classifier == "prs") {
      chosen_threshold = rc.threshold;
      if (std::isnan(chosen_threshold))
        chosen_threshold = select_threshold_cv(train.rows, train.matrix.labels,
                                               threshold_candidates(beta, rc.cv_candidates),
                                               PrsVariant::kPlain, nullptr, prev, rc.cv_folds,
                                               rc.seed);
      for (const auto& x : rows)
        reports.push_back(prs_score(x, train.stats, chosen_threshold, prev));
    } else {
      std::vector<std::string> aux_ids;
      const AuxSummary aux = read_aux_summary_tsv(require_path(rc.aux_path, "--aux"), &aux_ids);
      check_snp_ids(train.matrix.snp_ids, aux_ids, "auxiliary summary");
      if (!aux.gamma_hat)
        throw DomainError("adaptive PRS needs gamma_hat in the auxiliary summary");
      chosen_threshold = rc.threshold;
      if (std::isnan(chosen_threshold)) {
        std::vector<double> products(beta.size());
        for (std::size_t j = 0; j < beta.size(); ++j)
          products[j] = beta[j] * (*aux.gamma_hat)[j];
        chosen_threshold = select_threshold_cv(train.rows, train.matrix.labels,
                                               threshold_candidates(products, rc.cv_candidates),
                                               PrsVariant::kAdaptive, &aux, prev, rc.cv_folds,
                                               rc.seed);
      }
      for (const auto& x : rows)
        reports.push_back(adaptive_prs_score(x, train.stats, aux, chosen_threshold, prev));
    }
  } else if (rc.classifier == "nebula") {
    const TrainingData train = load_training(require_path(rc.train_path, "--train"));
    check_snp_ids(train.matrix.snp_ids, test.snp_ids, "test data");
    std::vector<std::string> aux_ids;
    const AuxSummary aux = read_aux_summary_tsv(require_path(rc.aux_path, "--aux"), &aux_ids);
    check_snp_ids(train.matrix.snp_ids, aux_ids, "auxiliary summary");
    const std::string dir = rc.model_dir.empty() ? rc.out_dir : rc.model_dir;
    const MixingDistribution ghat = load_mixing_distribution(
        fs::path(dir) / "ghat.tsv", fs::path(dir) / "ghat_meta.txt");
    const NebulaScorer scorer(train.stats, aux, ghat);
    for (const auto& x : rows) reports.push_back(scorer.score(x, prev));
  } else if (rc.classifier == "nebula-annot") {
    const TrainingData train = load_training(require_path(rc.train_path, "--train"));
    check_snp_ids(train.matrix.snp_ids, test.snp_ids, "test data");
    const std::vector<int> ann =
        read_annotations_tsv(require_path(rc.annotations_path, "--annotations"),
                             train.matrix.snp_ids);
    const std::string dir = rc.model_dir.empty() ? rc.out_dir : rc.model_dir;
    const MixingDistribution2 g0 = load_mixing_distribution2(
        fs::path(dir) / "ghat_annot0.tsv", fs::path(dir) / "ghat_annot0_meta.txt");
    const MixingDistribution2 g1 = load_mixing_distribution2(
        fs::path(dir) / "ghat_annot1.tsv", fs::path(dir) / "ghat_annot1_meta.txt");
    const AnnotatedNebulaScorer scorer(train.stats, ann, g0, g1);
    for (const auto& x : rows) reports.push_back(scorer.score(x, prev));
  } else {
    throw ConfigError("unknown classifier '" + rc.classifier + "'");
  }

  const auto path = out_file(rc, "scores.tsv");
  write_score_reports(path.string(), test.subject_ids, reports,
                      rc.per_snp ? &test.snp_ids : nullptr);
  std::cout << "predict: " << rc.classifier << " scored " << reports.size() << " subjects";
  if (!std::isnan(chosen_threshold))
    std::cout << " (threshold " << text::format_double(chosen_threshold) << ")";
  std::cout << " -> " << path.string() << "\n";
  return 0;
}

int cmd_benchmark(const RunConfig& rc) {
  BenchmarkConfig config;
  config.base = rc.simulation();
  config.settings = settings_grid(parse_double_list(rc.overlaps, "overlaps"),
                                  parse_int_list(rc.aux_sizes, "aux_sizes"),
                                  parse_int_list(rc.nonnull_counts, "nonnull_counts"),
                                  parse_double_list(rc.mus, "mus"));
  config.replications = rc.replications;
  config.grid_d0 = rc.grid_d0;
  config.grid_d1 = rc.grid_d1;
  config.grid_d2 = rc.grid_d2;
  config.tol = rc.tol;
  config.max_iter = rc.max_iter;
  config.cv_folds = rc.cv_folds;
  config.cv_candidates = rc.cv_candidates;
  config.prevalence = rc.prevalence;
  config.threads = rc.threads;

  const BenchmarkOutcome outcome = run_benchmark(config);
  write_benchmark_long_tsv(out_file(rc, "benchmark_long.tsv").string(), outcome);
  write_benchmark_aggregate_tsv(out_file(rc, "benchmark_aggregate.tsv").string(), outcome);
  write_benchmark_failures_tsv(out_file(rc, "benchmark_failures.tsv").string(), outcome);
  std::cout << "benchmark: " << outcome.settings.size() << " settings x " << rc.replications
            << " replications, " << outcome.failures.size() << " failures -> " << rc.out_dir
            << "\n";
  return outcome.failure_threshold_exceeded ? 1 : 0;
}

int run_command(const std::string& name, const RunConfig& rc) {
  if (name == "simulate") return cmd_simulate(rc);
  if (name == "preprocess") return cmd_preprocess(rc);
  if (name == "fit") return cmd_fit(rc);
  if (name == "predict") return cmd_predict(rc);
  if (name == "benchmark") return cmd_benchmark(rc);
  throw ConfigError("unknown command '" + name + "'");
}

}  // namespace nebula
