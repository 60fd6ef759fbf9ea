#include "nebula/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <unordered_set>
#include <vector>

#include "nebula/errors.hpp"
#include "nebula/mathfn.hpp"
#include "nebula/preprocess.hpp"
#include "text_util.hpp"

namespace nebula {

namespace {

constexpr std::uint64_t kDesignKey = 0xDE516Eull;
constexpr std::uint64_t kGenotypeKey = 0x6E07ull;

std::vector<std::size_t> complement_of(const std::vector<std::size_t>& sorted, std::size_t d) {
  std::vector<std::size_t> out;
  out.reserve(d - sorted.size());
  std::size_t k = 0;
  for (std::size_t j = 0; j < d; ++j) {
    if (k < sorted.size() && sorted[k] == j) {
      ++k;
    } else {
      out.push_back(j);
    }
  }
  return out;
}

GenotypeMatrix to_matrix(const LabeledCohort& c, const std::string& subject_prefix,
                         const std::vector<std::string>& snp_ids) {
  GenotypeMatrix m;
  m.snp_ids = snp_ids;
  m.subject_ids.reserve(c.n());
  m.labels = c.labels;
  m.values.resize(c.n() * snp_ids.size());
  for (std::size_t i = 0; i < c.n(); ++i) {
    m.subject_ids.push_back(subject_prefix + std::to_string(i + 1));
    for (std::size_t j = 0; j < snp_ids.size(); ++j)
      m.set(i, j, static_cast<std::int8_t>(c.x[i][j]));
  }
  return m;
}

}  // namespace

long long SimulationConfig::overlap_count() const {
  const long long smaller = std::min(n_nonnull_target, n_nonnull_aux);
  return std::llround(overlap_pct / 100.0 * static_cast<double>(smaller));
}

void SimulationConfig::validate() const {
  if (d < 1) throw ConfigError("simulation needs at least one SNP");
  if (n_nonnull_target < 0 || n_nonnull_target > d)
    throw ConfigError("target non-null count must lie in [0, d]");
  if (n_nonnull_aux < 0 || n_nonnull_aux > d)
    throw ConfigError("auxiliary non-null count must lie in [0, d]");
  if (!(overlap_pct >= 0.0 && overlap_pct <= 100.0))
    throw ConfigError("overlap percentage must lie in [0, 100]");
  const long long k = overlap_count();
  if (k > n_nonnull_target || k > n_nonnull_aux)
    throw ConfigError("overlap count exceeds a non-null set");
  if (n_nonnull_target + n_nonnull_aux - k > d)
    throw ConfigError("non-null sets with the requested overlap do not fit in d SNPs");
  if (n0_train < 1 || n1_train < 1 || n0_test < 1 || n1_test < 1 || n0_aux < 1 || n1_aux < 1)
    throw ConfigError("every cohort needs at least one control and one case");
  if (!(base_maf_lo > 0.0 && base_maf_lo <= base_maf_hi && base_maf_hi < 1.0))
    throw ConfigError("control frequency range must satisfy 0 < lo <= hi < 1");
}

DiseaseModel gen_disease_model(std::size_t d, const std::vector<std::size_t>& nonnull_indices,
                               double mu, double effect_var, double base_maf_lo,
                               double base_maf_hi, Rng& rng) {
  if (!std::isfinite(mu)) throw DomainError("mean effect size must be finite");
  if (!std::isfinite(effect_var) || effect_var < 0.0)
    throw DomainError("effect size variance must be finite and nonnegative");
  if (!(base_maf_lo > 0.0 && base_maf_lo <= base_maf_hi && base_maf_hi < 1.0))
    throw DomainError("control frequency range must satisfy 0 < lo <= hi < 1");
  std::unordered_set<std::size_t> seen;
  for (std::size_t j : nonnull_indices) {
    if (j >= d) throw DomainError("non-null index out of range");
    if (!seen.insert(j).second) throw DomainError("duplicate non-null index");
  }

  DiseaseModel model;
  model.pi0.resize(d);
  for (std::size_t j = 0; j < d; ++j) model.pi0[j] = rng.uniform(base_maf_lo, base_maf_hi);
  model.pi1 = model.pi0;
  const double sd = std::sqrt(effect_var);
  for (std::size_t j : nonnull_indices) {
    double beta = rng.normal(mu, sd);
    if (rng.bernoulli(0.5)) beta = -beta;
    model.pi1[j] = expit(beta + logit(model.pi0[j]));
  }
  return model;
}

LabeledCohort gen_genotypes(const DiseaseModel& model, long long n0, long long n1, Rng& rng) {
  if (model.pi1.size() != model.pi0.size())
    throw DomainError("disease model frequency sequences differ in length");
  for (std::size_t j = 0; j < model.dim(); ++j) {
    if (!(model.pi0[j] >= 0.0 && model.pi0[j] <= 1.0) ||
        !(model.pi1[j] >= 0.0 && model.pi1[j] <= 1.0))
      throw DomainError("genotype frequency outside [0,1] at SNP " + std::to_string(j));
  }
  if (n0 < 1 || n1 < 1) throw DomainError("both class sizes must be at least 1");

  const std::size_t d = model.dim();
  LabeledCohort c;
  c.x.reserve(static_cast<std::size_t>(n0 + n1));
  c.labels.reserve(static_cast<std::size_t>(n0 + n1));
  for (long long split = 0; split < 2; ++split) {
    const long long count = split == 0 ? n0 : n1;
    const std::vector<double>& pi = split == 0 ? model.pi0 : model.pi1;
    for (long long i = 0; i < count; ++i) {
      std::vector<int> row(d);
      for (std::size_t j = 0; j < d; ++j) row[j] = rng.binomial2(pi[j]);
      c.x.push_back(std::move(row));
      c.labels.push_back(static_cast<int>(split));
    }
  }
  return c;
}

double allelic_test(long long s0, long long s1, long long n0, long long n1) {
  if (n0 < 0 || n1 < 0) throw DomainError("allelic test class sizes must be nonnegative");
  if (s0 < 0 || s0 > 2 * n0 || s1 < 0 || s1 > 2 * n1)
    throw DomainError("allele count outside [0, 2n] in allelic test");
  const double a0 = 2.0 * static_cast<double>(n0);
  const double a1 = 2.0 * static_cast<double>(n1);
  const double total = a0 + a1;
  const double carriers = static_cast<double>(s0) + static_cast<double>(s1);
  const double others = total - carriers;
  if (a0 == 0.0 || a1 == 0.0 || carriers == 0.0 || others == 0.0) return 0.0;
  const double cross = static_cast<double>(s1) * (a0 - static_cast<double>(s0)) -
                       static_cast<double>(s0) * (a1 - static_cast<double>(s1));
  return total * cross * cross / (carriers * others * a1 * a0);
}

double aux_log_odds(long long s0, long long s1, long long n0, long long n1) {
  TargetSufficientStats stats;
  stats.s0 = {s0};
  stats.s1 = {s1};
  stats.n0 = n0;
  stats.n1 = n1;
  return fit_log_odds(stats)[0];
}

StudyDesign draw_design(const SimulationConfig& config) {
  config.validate();
  const auto d = static_cast<std::size_t>(config.d);
  const auto m_target = static_cast<std::size_t>(config.n_nonnull_target);
  const auto m_aux = static_cast<std::size_t>(config.n_nonnull_aux);
  const auto k = static_cast<std::size_t>(config.overlap_count());
  // Separate substreams keep the target model and its non-null set invariant
  // to the overlap percentage and the auxiliary axes, so sweeps over those
  // quantities compare matched target studies.
  Rng set_rng = Rng::stream(config.seed, {kDesignKey, 0});
  Rng target_rng = Rng::stream(config.seed, {kDesignKey, 1});
  Rng aux_rng = Rng::stream(config.seed, {kDesignKey, 2});

  StudyDesign design;
  design.nonnull_target = set_rng.sample_without_replacement(d, m_target);
  const auto overlap_pos = set_rng.sample_without_replacement(m_target, k);
  design.nonnull_aux.reserve(m_aux);
  for (std::size_t pos : overlap_pos) design.nonnull_aux.push_back(design.nonnull_target[pos]);
  const auto pool = complement_of(design.nonnull_target, d);
  const auto extra_pos = set_rng.sample_without_replacement(pool.size(), m_aux - k);
  for (std::size_t pos : extra_pos) design.nonnull_aux.push_back(pool[pos]);
  std::sort(design.nonnull_aux.begin(), design.nonnull_aux.end());

  design.target_model = gen_disease_model(d, design.nonnull_target, config.mu,
                                          config.effect_var, config.base_maf_lo,
                                          config.base_maf_hi, target_rng);
  design.aux_model = gen_disease_model(d, design.nonnull_aux, config.mu, config.effect_var,
                                       config.base_maf_lo, config.base_maf_hi, aux_rng);
  return design;
}

StudyRealization realize_replication(const SimulationConfig& config, const StudyDesign& design,
                                     std::uint64_t replication) {
  config.validate();
  if (design.target_model.dim() != static_cast<std::size_t>(config.d) ||
      design.aux_model.dim() != static_cast<std::size_t>(config.d))
    throw DomainError("study design dimension does not match the configuration");

  StudyRealization r;
  r.target_model = design.target_model;
  r.aux_model = design.aux_model;
  r.nonnull_target = design.nonnull_target;
  r.nonnull_aux = design.nonnull_aux;

  Rng train_rng = Rng::stream(config.seed, {kGenotypeKey, replication, 0});
  Rng test_rng = Rng::stream(config.seed, {kGenotypeKey, replication, 1});
  Rng aux_rng = Rng::stream(config.seed, {kGenotypeKey, replication, 2});
  r.train = gen_genotypes(design.target_model, config.n0_train, config.n1_train, train_rng);
  r.test = gen_genotypes(design.target_model, config.n0_test, config.n1_test, test_rng);

  const LabeledCohort aux = gen_genotypes(design.aux_model, config.n0_aux, config.n1_aux, aux_rng);
  const TargetSufficientStats aux_stats = compute_sufficient_stats(aux.x, aux.labels);
  r.aux_summary.t.resize(aux_stats.dim());
  for (std::size_t j = 0; j < aux_stats.dim(); ++j)
    r.aux_summary.t[j] = allelic_test(aux_stats.s0[j], aux_stats.s1[j], aux_stats.n0, aux_stats.n1);
  r.aux_summary.gamma_hat = fit_log_odds(aux_stats);
  return r;
}

StudyRealization realize_study(const SimulationConfig& config) {
  return realize_replication(config, draw_design(config), 0);
}

std::vector<std::string> default_snp_ids(std::size_t d) {
  std::vector<std::string> ids;
  ids.reserve(d);
  for (std::size_t j = 0; j < d; ++j) ids.push_back("snp" + std::to_string(j + 1));
  return ids;
}

void save_realization(const StudyRealization& r, const SimulationConfig& config,
                      const std::string& dir) {
  const std::filesystem::path base(dir);
  const auto snp_ids = default_snp_ids(r.target_model.dim());
  write_genotype_tsv((base / "target_train.tsv").string(), to_matrix(r.train, "tr", snp_ids));
  write_genotype_tsv((base / "target_test.tsv").string(), to_matrix(r.test, "te", snp_ids));
  write_aux_summary_tsv((base / "aux_summary.tsv").string(), snp_ids, r.aux_summary);

  TruthTable truth;
  truth.snp_ids = snp_ids;
  truth.pi0 = r.target_model.pi0;
  truth.pi1 = r.target_model.pi1;
  truth.nonnull_target.assign(snp_ids.size(), 0);
  truth.nonnull_aux.assign(snp_ids.size(), 0);
  for (std::size_t j : r.nonnull_target) truth.nonnull_target[j] = 1;
  for (std::size_t j : r.nonnull_aux) truth.nonnull_aux[j] = 1;
  write_truth_tsv((base / "truth.tsv").string(), truth);

  auto out = text::open_out(base / "config.toml");
  out << "d=" << config.d << "\n";
  out << "n_nonnull_target=" << config.n_nonnull_target << "\n";
  out << "n_nonnull_aux=" << config.n_nonnull_aux << "\n";
  out << "overlap_pct=" << text::format_double(config.overlap_pct) << "\n";
  out << "mu=" << text::format_double(config.mu) << "\n";
  out << "effect_var=" << text::format_double(config.effect_var) << "\n";
  out << "n0_train=" << config.n0_train << "\n";
  out << "n1_train=" << config.n1_train << "\n";
  out << "n0_test=" << config.n0_test << "\n";
  out << "n1_test=" << config.n1_test << "\n";
  out << "n0_aux=" << config.n0_aux << "\n";
  out << "n1_aux=" << config.n1_aux << "\n";
  out << "seed=" << config.seed << "\n";
  out << "base_maf_lo=" << text::format_double(config.base_maf_lo) << "\n";
  out << "base_maf_hi=" << text::format_double(config.base_maf_hi) << "\n";
}

void write_aux_summary_tsv(const std::string& path, const std::vector<std::string>& snp_ids,
                           const AuxSummary& aux) {
  if (snp_ids.size() != aux.t.size())
    throw DomainError("SNP id count does not match the summary length");
  if (aux.gamma_hat && aux.gamma_hat->size() != aux.t.size())
    throw DomainError("gamma_hat length does not match the summary length");
  auto out = text::open_out(path);
  out << "snp_id\tt_stat\tgamma_hat\n";
  for (std::size_t j = 0; j < aux.t.size(); ++j) {
    out << snp_ids[j] << '\t' << text::format_double(aux.t[j]) << '\t'
        << (aux.gamma_hat ? text::format_double((*aux.gamma_hat)[j]) : std::string("NA"))
        << '\n';
  }
}

AuxSummary read_aux_summary_tsv(const std::string& path, std::vector<std::string>* snp_ids) {
  auto in = text::open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty auxiliary summary file: " + path);
  if (text::strip_cr(line) != "snp_id\tt_stat\tgamma_hat")
    throw IoError("bad auxiliary summary header in " + path);

  AuxSummary aux;
  std::vector<std::string> ids;
  std::vector<double> gamma;
  std::size_t n_missing = 0;
  while (std::getline(in, line)) {
    line = text::strip_cr(line);
    if (line.empty()) continue;
    const auto cells = text::split_tabs(line);
    if (cells.size() != 3)
      throw IoError("expected 3 columns in auxiliary summary row of " + path);
    ids.push_back(cells[0]);
    aux.t.push_back(text::parse_double(cells[1], "t_stat in " + path));
    if (cells[2] == "NA") {
      ++n_missing;
      gamma.push_back(0.0);
    } else {
      gamma.push_back(text::parse_double(cells[2], "gamma_hat in " + path));
    }
  }
  if (n_missing > 0 && n_missing != gamma.size())
    throw IoError("gamma_hat column mixes NA with values in " + path);
  if (n_missing == 0) aux.gamma_hat = std::move(gamma);
  if (snp_ids) *snp_ids = std::move(ids);
  return aux;
}

void write_truth_tsv(const std::string& path, const TruthTable& t) {
  const std::size_t d = t.snp_ids.size();
  if (t.pi0.size() != d || t.pi1.size() != d || t.nonnull_target.size() != d ||
      t.nonnull_aux.size() != d)
    throw DomainError("truth table columns differ in length");
  auto out = text::open_out(path);
  out << "snp_id\tpi0\tpi1\tnonnull_target\tnonnull_aux\n";
  for (std::size_t j = 0; j < d; ++j) {
    out << t.snp_ids[j] << '\t' << text::format_double(t.pi0[j]) << '\t'
        << text::format_double(t.pi1[j]) << '\t' << t.nonnull_target[j] << '\t'
        << t.nonnull_aux[j] << '\n';
  }
}

TruthTable read_truth_tsv(const std::string& path) {
  auto in = text::open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty truth file: " + path);
  if (text::strip_cr(line) != "snp_id\tpi0\tpi1\tnonnull_target\tnonnull_aux")
    throw IoError("bad truth header in " + path);

  TruthTable t;
  auto parse_flag = [&path](const std::string& s, const char* col) {
    const long long v = text::parse_int(s, std::string(col) + " in " + path);
    if (v != 0 && v != 1) throw IoError(std::string("non-binary ") + col + " flag in " + path);
    return static_cast<int>(v);
  };
  while (std::getline(in, line)) {
    line = text::strip_cr(line);
    if (line.empty()) continue;
    const auto cells = text::split_tabs(line);
    if (cells.size() != 5) throw IoError("expected 5 columns in truth row of " + path);
    t.snp_ids.push_back(cells[0]);
    t.pi0.push_back(text::parse_double(cells[1], "pi0 in " + path));
    t.pi1.push_back(text::parse_double(cells[2], "pi1 in " + path));
    t.nonnull_target.push_back(parse_flag(cells[3], "nonnull_target"));
    t.nonnull_aux.push_back(parse_flag(cells[4], "nonnull_aux"));
  }
  return t;
}

}  // namespace nebula
