#include "nebula/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nebula/densities.hpp"
#include "nebula/errors.hpp"
#include "nebula/mathfn.hpp"
#include "nebula/rng.hpp"

namespace nebula {
namespace {

void validate_genotypes(const std::vector<int>& x, std::size_t d) {
  if (x.size() != d)
    throw DomainError("genotype vector length " + std::to_string(x.size()) +
                      " does not match the model dimension " + std::to_string(d));
  for (std::size_t j = 0; j < x.size(); ++j)
    if (x[j] < 0 || x[j] > 2)
      throw DomainError("genotype outside {0,1,2} at SNP " + std::to_string(j));
}

// Per-class frequency estimates S/(2n), switching both classes of a SNP to the
// corrected (S + 0.5)/(2n + 1) form when either raw estimate is 0 or 1.
std::vector<std::pair<double, double>> effective_freqs(const TargetSufficientStats& stats) {
  const std::size_t d = stats.dim();
  std::vector<std::pair<double, double>> freqs(d);
  for (std::size_t j = 0; j < d; ++j) {
    const long long s0 = stats.s0[j], s1 = stats.s1[j];
    const bool boundary = s0 == 0 || s0 == 2 * stats.n0 || s1 == 0 || s1 == 2 * stats.n1;
    if (boundary) {
      freqs[j].first = (static_cast<double>(s0) + 0.5) / (2.0 * static_cast<double>(stats.n0) + 1.0);
      freqs[j].second = (static_cast<double>(s1) + 0.5) / (2.0 * static_cast<double>(stats.n1) + 1.0);
    } else {
      freqs[j].first = static_cast<double>(s0) / (2.0 * static_cast<double>(stats.n0));
      freqs[j].second = static_cast<double>(s1) / (2.0 * static_cast<double>(stats.n1));
    }
  }
  return freqs;
}

double normal_logpdf(double z, double mean, double var) {
  return -0.5 * std::log(2.0 * M_PI * var) - (z - mean) * (z - mean) / (2.0 * var);
}

double covariate_part(const std::vector<double>* z, const CovariateModel* cov_model) {
  if (z == nullptr && cov_model == nullptr)
    return 0.0;
  if (z == nullptr || cov_model == nullptr)
    throw DomainError("covariates and covariate model must be supplied together");
  return covariate_loglr(*z, *cov_model);
}

ScoreReport assemble(double offset, double cov, std::vector<double> per_snp) {
  ScoreReport rep;
  rep.covariate_loglr = cov;
  double total = offset + cov;
  for (double v : per_snp)
    total += v;
  rep.per_snp_loglr = std::move(per_snp);
  rep.score = total;
  rep.predicted_class = total >= 0.0 ? 1 : 0;
  return rep;
}

// Collapses per-SNP posterior axis marginals into genotype likelihood tables
// num[j*3 + x] = sum over the axis of marginal * f_Bin(x; 2, point). rows maps
// engine row r to the output SNP index.
void fill_genotype_tables(const PosteriorEngine& engine, const std::vector<double>& axis0,
                          const std::vector<double>& axis1,
                          const std::vector<std::size_t>& rows, std::vector<double>& num0,
                          std::vector<double>& num1) {
  const std::size_t d0 = axis0.size(), d1 = axis1.size();
  std::vector<double> b0(d0 * 3), b1(d1 * 3);
  for (std::size_t a = 0; a < d0; ++a)
    for (int geno = 0; geno < 3; ++geno)
      b0[a * 3 + geno] = std::exp(log_binom_pmf(geno, 2, axis0[a]));
  for (std::size_t b = 0; b < d1; ++b)
    for (int geno = 0; geno < 3; ++geno)
      b1[b * 3 + geno] = std::exp(log_binom_pmf(geno, 2, axis1[b]));

  std::vector<double> pa, pb;
  for (std::size_t r = 0; r < engine.tensor().d(); ++r) {
    const std::size_t j = rows[r];
    try {
      engine.axis_marginals(r, pa, pb);
    } catch (const FitError&) {
      throw ScoringError("SNP " + std::to_string(j) +
                             " has zero marginal likelihood under the fitted prior",
                         j);
    }
    for (int geno = 0; geno < 3; ++geno) {
      double acc0 = 0.0, acc1 = 0.0;
      for (std::size_t a = 0; a < d0; ++a)
        acc0 += pa[a] * b0[a * 3 + geno];
      for (std::size_t b = 0; b < d1; ++b)
        acc1 += pb[b] * b1[b * 3 + geno];
      num0[j * 3 + geno] = acc0;
      num1[j * 3 + geno] = acc1;
    }
  }
}

ScoreReport score_from_tables(std::size_t d, const std::vector<double>& num0,
                              const std::vector<double>& num1, const std::vector<int>& x,
                              const Prevalence& prev, const std::vector<double>* z,
                              const CovariateModel* cov_model) {
  prev.validate();
  validate_genotypes(x, d);
  const double cov = covariate_part(z, cov_model);
  std::vector<double> per_snp(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double den = num0[j * 3 + x[j]];
    if (!(den > 0.0))
      throw ScoringError("class-0 genotype likelihood vanished at SNP " + std::to_string(j), j);
    const double num = num1[j * 3 + x[j]];
    per_snp[j] = num > 0.0 ? std::log(num) - std::log(den) : kNegInf;
  }
  return assemble(prev.log_odds(), cov, std::move(per_snp));
}

}  // namespace

void DiseaseModel::validate() const {
  if (pi1.size() != pi0.size())
    throw DomainError("disease model frequency sequences differ in length");
  for (std::size_t j = 0; j < pi0.size(); ++j) {
    if (!(pi0[j] > 0.0 && pi0[j] < 1.0) || !(pi1[j] > 0.0 && pi1[j] < 1.0))
      throw DomainError("disease model frequency outside (0,1) at SNP " + std::to_string(j));
  }
}

void Prevalence::validate() const {
  if (!(p > 0.0 && p < 1.0))
    throw DomainError("prevalence must lie strictly between 0 and 1");
}

double Prevalence::log_odds() const {
  validate();
  return logit(p);
}

void CovariateModel::validate() const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const CovariateEntry& e = entries[i];
    if (e.family == CovariateFamily::kBinary) {
      if (!(e.prob0 > 0.0 && e.prob0 < 1.0) || !(e.prob1 > 0.0 && e.prob1 < 1.0))
        throw DomainError("binary covariate " + std::to_string(i) +
                          " has a class rate outside (0,1)");
    } else {
      if (!(e.var0 > 0.0) || !(e.var1 > 0.0))
        throw DomainError("gaussian covariate " + std::to_string(i) +
                          " has a nonpositive variance");
      if (!std::isfinite(e.mean0) || !std::isfinite(e.mean1))
        throw DomainError("gaussian covariate " + std::to_string(i) + " has a nonfinite mean");
    }
  }
}

ScoreReport oracle_score(const std::vector<int>& x, const DiseaseModel& model,
                         const Prevalence& prev) {
  model.validate();
  prev.validate();
  validate_genotypes(x, model.dim());
  std::vector<double> per_snp(model.dim());
  for (std::size_t j = 0; j < model.dim(); ++j)
    per_snp[j] =
        log_binom_pmf(x[j], 2, model.pi1[j]) - log_binom_pmf(x[j], 2, model.pi0[j]);
  return assemble(prev.log_odds(), 0.0, std::move(per_snp));
}

std::vector<double> fit_log_odds(const TargetSufficientStats& stats) {
  stats.validate();
  const auto freqs = effective_freqs(stats);
  std::vector<double> beta(freqs.size());
  for (std::size_t j = 0; j < freqs.size(); ++j)
    beta[j] = logit(freqs[j].second) - logit(freqs[j].first);
  return beta;
}

ScoreReport prs_score(const std::vector<int>& x, const TargetSufficientStats& stats,
                      double threshold, const Prevalence& prev) {
  stats.validate();
  prev.validate();
  validate_genotypes(x, stats.dim());
  if (!(threshold >= 0.0))
    throw DomainError("threshold must be nonnegative");
  const auto freqs = effective_freqs(stats);
  std::vector<double> per_snp(stats.dim());
  for (std::size_t j = 0; j < stats.dim(); ++j) {
    const double beta = logit(freqs[j].second) - logit(freqs[j].first);
    const double intercept = 2.0 * (std::log1p(-freqs[j].second) - std::log1p(-freqs[j].first));
    per_snp[j] = intercept + (std::abs(beta) > threshold ? beta * x[j] : 0.0);
  }
  return assemble(prev.log_odds(), 0.0, std::move(per_snp));
}

ScoreReport adaptive_prs_score(const std::vector<int>& x,
                               const TargetSufficientStats& stats, const AuxSummary& aux,
                               double threshold, const Prevalence& prev) {
  stats.validate();
  prev.validate();
  validate_genotypes(x, stats.dim());
  if (!(threshold >= 0.0))
    throw DomainError("threshold must be nonnegative");
  aux.validate_for(stats.dim());
  if (!aux.gamma_hat.has_value())
    throw DomainError("adaptive scoring needs auxiliary log-odds estimates");
  const std::vector<double>& gamma = *aux.gamma_hat;
  const auto freqs = effective_freqs(stats);
  std::vector<double> per_snp(stats.dim());
  for (std::size_t j = 0; j < stats.dim(); ++j) {
    const double beta = logit(freqs[j].second) - logit(freqs[j].first);
    if (std::abs(beta * gamma[j]) > threshold) {
      const double intercept =
          2.0 * (std::log1p(-freqs[j].second) - std::log1p(-freqs[j].first));
      per_snp[j] = intercept + beta * x[j];
    } else {
      per_snp[j] = 0.0;
    }
  }
  return assemble(prev.log_odds(), 0.0, std::move(per_snp));
}

double covariate_loglr(const std::vector<double>& z, const CovariateModel& model) {
  model.validate();
  if (z.size() != model.dim())
    throw DomainError("covariate vector length does not match the covariate model");
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const CovariateEntry& e = model.entries[i];
    if (e.family == CovariateFamily::kBinary) {
      if (z[i] != 0.0 && z[i] != 1.0)
        throw DomainError("binary covariate " + std::to_string(i) + " must be 0 or 1");
      total += z[i] == 1.0 ? std::log(e.prob1) - std::log(e.prob0)
                           : std::log1p(-e.prob1) - std::log1p(-e.prob0);
    } else {
      if (!std::isfinite(z[i]))
        throw DomainError("gaussian covariate " + std::to_string(i) + " must be finite");
      total += normal_logpdf(z[i], e.mean1, e.var1) - normal_logpdf(z[i], e.mean0, e.var0);
    }
  }
  return total;
}

CovariateModel fit_covariate_model(const std::vector<std::vector<double>>& controls,
                                   const std::vector<std::vector<double>>& cases,
                                   const std::vector<CovariateFamily>& families) {
  const std::size_t k = families.size();
  for (const auto& rows : {&controls, &cases})
    for (const auto& row : *rows)
      if (row.size() != k)
        throw DomainError("covariate row length does not match the family list");

  CovariateModel model;
  model.entries.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    CovariateEntry& e = model.entries[i];
    e.family = families[i];
    if (families[i] == CovariateFamily::kBinary) {
      if (controls.empty() || cases.empty())
        throw DomainError("binary covariate " + std::to_string(i) +
                          " needs at least one observation per class");
      auto fit_rate = [i](const std::vector<std::vector<double>>& rows) {
        double count = 0.0;
        for (const auto& row : rows) {
          if (row[i] != 0.0 && row[i] != 1.0)
            throw DomainError("binary covariate " + std::to_string(i) + " must be 0 or 1");
          count += row[i];
        }
        const double n = static_cast<double>(rows.size());
        const double rate = count / n;
        return rate == 0.0 || rate == 1.0 ? (count + 0.5) / (n + 1.0) : rate;
      };
      e.prob0 = fit_rate(controls);
      e.prob1 = fit_rate(cases);
    } else {
      if (controls.size() < 2 || cases.size() < 2)
        throw DomainError("gaussian covariate " + std::to_string(i) +
                          " needs at least two observations per class");
      auto fit_normal = [i](const std::vector<std::vector<double>>& rows, double& mean,
                            double& var) {
        double sum = 0.0;
        for (const auto& row : rows)
          sum += row[i];
        mean = sum / static_cast<double>(rows.size());
        double ss = 0.0;
        for (const auto& row : rows)
          ss += (row[i] - mean) * (row[i] - mean);
        var = ss / static_cast<double>(rows.size());
        if (!(var > 0.0))
          throw DomainError("gaussian covariate " + std::to_string(i) +
                            " has zero sample variance in one class");
      };
      fit_normal(controls, e.mean0, e.var0);
      fit_normal(cases, e.mean1, e.var1);
    }
  }
  model.validate();
  return model;
}

NebulaScorer::NebulaScorer(const TargetSufficientStats& stats, const AuxSummary& aux,
                           const MixingDistribution& g) {
  stats.validate();
  aux.validate_for(stats.dim());
  g.grid.validate();
  if (g.log_mass.size() != g.grid.size())
    throw DomainError("prior mass vector does not match its grid size");
  d_ = stats.dim();
  num0_.assign(d_ * 3, 0.0);
  num1_.assign(d_ * 3, 0.0);
  LikelihoodTensor tensor(stats, aux, g.grid);
  PosteriorEngine engine(tensor, g.log_mass);
  std::vector<std::size_t> rows(d_);
  for (std::size_t j = 0; j < d_; ++j)
    rows[j] = j;
  fill_genotype_tables(engine, g.grid.pi0_points, g.grid.pi1_points, rows, num0_, num1_);
}

ScoreReport NebulaScorer::score(const std::vector<int>& x, const Prevalence& prev,
                                const std::vector<double>* z,
                                const CovariateModel* cov_model) const {
  return score_from_tables(d_, num0_, num1_, x, prev, z, cov_model);
}

AnnotatedNebulaScorer::AnnotatedNebulaScorer(const TargetSufficientStats& stats,
                                             const std::vector<int>& annotations,
                                             const MixingDistribution2& g0,
                                             const MixingDistribution2& g1) {
  stats.validate();
  d_ = stats.dim();
  if (annotations.size() != d_)
    throw DomainError("annotation vector length does not match the SNP count");
  for (std::size_t j = 0; j < d_; ++j)
    if (annotations[j] != 0 && annotations[j] != 1)
      throw DomainError("annotation outside {0,1} at SNP " + std::to_string(j));
  num0_.assign(d_ * 3, 0.0);
  num1_.assign(d_ * 3, 0.0);
  for (int group = 0; group < 2; ++group) {
    std::vector<std::size_t> rows;
    for (std::size_t j = 0; j < d_; ++j)
      if (annotations[j] == group)
        rows.push_back(j);
    if (rows.empty())
      continue;
    const MixingDistribution2& g = group == 0 ? g0 : g1;
    if (g.log_mass.size() != g.pi0_points.size() * g.pi1_points.size())
      throw DomainError("group " + std::to_string(group) +
                        " prior mass vector does not match its grid size");
    LikelihoodTensor tensor(stats, rows, g.pi0_points, g.pi1_points);
    PosteriorEngine engine(tensor, g.log_mass);
    fill_genotype_tables(engine, g.pi0_points, g.pi1_points, rows, num0_, num1_);
  }
}

ScoreReport AnnotatedNebulaScorer::score(const std::vector<int>& x, const Prevalence& prev,
                                         const std::vector<double>* z,
                                         const CovariateModel* cov_model) const {
  return score_from_tables(d_, num0_, num1_, x, prev, z, cov_model);
}

ScoreReport nebula_score(const std::vector<int>& x, const TargetSufficientStats& stats,
                         const AuxSummary& aux, const MixingDistribution& g_hat,
                         const Prevalence& prev, const std::vector<double>* z,
                         const CovariateModel* cov_model) {
  return NebulaScorer(stats, aux, g_hat).score(x, prev, z, cov_model);
}

ScoreReport nebula_annotated_score(const std::vector<int>& x,
                                   const TargetSufficientStats& stats,
                                   const std::vector<int>& annotations,
                                   const MixingDistribution2& g0,
                                   const MixingDistribution2& g1, const Prevalence& prev,
                                   const std::vector<double>* z,
                                   const CovariateModel* cov_model) {
  return AnnotatedNebulaScorer(stats, annotations, g0, g1).score(x, prev, z, cov_model);
}

TargetSufficientStats compute_sufficient_stats(const std::vector<std::vector<int>>& x,
                                               const std::vector<int>& labels) {
  if (x.size() != labels.size())
    throw DomainError("genotype row count does not match the label count");
  if (x.empty())
    throw DomainError("no training subjects");
  const std::size_t d = x.front().size();
  if (d == 0)
    throw DomainError("training genotypes have no SNPs");
  TargetSufficientStats stats;
  stats.s0.assign(d, 0);
  stats.s1.assign(d, 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw DomainError("label outside {0,1} at subject " + std::to_string(i));
    validate_genotypes(x[i], d);
    auto& s = labels[i] == 0 ? stats.s0 : stats.s1;
    for (std::size_t j = 0; j < d; ++j)
      s[j] += x[i][j];
    ++(labels[i] == 0 ? stats.n0 : stats.n1);
  }
  if (stats.n0 == 0 || stats.n1 == 0)
    throw DomainError("training data must contain both classes");
  stats.validate();
  return stats;
}

std::vector<double> threshold_candidates(const std::vector<double>& effects,
                                         std::size_t count) {
  if (count == 0)
    throw DomainError("candidate count must be positive");
  double top = 0.0;
  for (double e : effects) {
    if (!std::isfinite(e))
      throw DomainError("effect magnitudes must be finite");
    top = std::max(top, std::abs(e));
  }
  std::vector<double> cands{0.0};
  if (top == 0.0 || count == 1)
    return cands;
  for (std::size_t i = 1; i < count; ++i) {
    const double frac =
        count == 2 ? 1.0 : static_cast<double>(i - 1) / static_cast<double>(count - 2);
    cands.push_back(top * std::pow(1e-3, 1.0 - frac));
  }
  return cands;
}

double select_threshold_cv(const std::vector<std::vector<int>>& x,
                           const std::vector<int>& labels,
                           const std::vector<double>& candidates, PrsVariant variant,
                           const AuxSummary* aux, const Prevalence& prev,
                           std::size_t folds, std::uint64_t seed) {
  prev.validate();
  if (folds < 2)
    throw DomainError("cross-validation needs at least 2 folds");
  if (candidates.empty())
    throw DomainError("no candidate thresholds");
  for (double c : candidates)
    if (!(c >= 0.0))
      throw DomainError("candidate thresholds must be nonnegative");
  if (x.size() != labels.size() || x.empty())
    throw DomainError("genotype row count does not match the label count");
  const std::size_t d = x.front().size();
  for (const auto& row : x)
    validate_genotypes(row, d);

  const std::vector<double>* gamma = nullptr;
  if (variant == PrsVariant::kAdaptive) {
    if (aux == nullptr || !aux->gamma_hat.has_value())
      throw DomainError("adaptive scoring needs auxiliary log-odds estimates");
    aux->validate_for(d);
    gamma = &*aux->gamma_hat;
  }

  std::vector<std::size_t> idx0, idx1;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw DomainError("label outside {0,1} at subject " + std::to_string(i));
    (labels[i] == 0 ? idx0 : idx1).push_back(i);
  }
  Rng rng = Rng::stream(seed, {0xCF01Du});
  rng.shuffle(idx0);
  rng.shuffle(idx1);
  std::vector<std::vector<std::size_t>> fold_members(folds);
  for (std::size_t i = 0; i < idx0.size(); ++i)
    fold_members[i % folds].push_back(idx0[i]);
  for (std::size_t i = 0; i < idx1.size(); ++i)
    fold_members[i % folds].push_back(idx1[i]);
  for (const auto& members : fold_members) {
    bool has0 = false, has1 = false;
    for (std::size_t i : members)
      (labels[i] == 0 ? has0 : has1) = true;
    if (!has0 || !has1)
      throw DomainError("a cross-validation fold contains a single class");
  }

  const double offset = prev.log_odds();
  std::vector<double> mean_rate(candidates.size(), 0.0);
  for (std::size_t f = 0; f < folds; ++f) {
    TargetSufficientStats stats;
    stats.s0.assign(d, 0);
    stats.s1.assign(d, 0);
    for (std::size_t g = 0; g < folds; ++g) {
      if (g == f)
        continue;
      for (std::size_t i : fold_members[g]) {
        auto& s = labels[i] == 0 ? stats.s0 : stats.s1;
        for (std::size_t j = 0; j < d; ++j)
          s[j] += x[i][j];
        ++(labels[i] == 0 ? stats.n0 : stats.n1);
      }
    }
    const auto freqs = effective_freqs(stats);
    std::vector<double> beta(d), intercept(d), keyed(d);
    for (std::size_t j = 0; j < d; ++j) {
      beta[j] = logit(freqs[j].second) - logit(freqs[j].first);
      intercept[j] = 2.0 * (std::log1p(-freqs[j].second) - std::log1p(-freqs[j].first));
      keyed[j] = gamma != nullptr ? beta[j] * (*gamma)[j] : beta[j];
    }
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      std::vector<std::size_t> kept;
      double base = offset;
      for (std::size_t j = 0; j < d; ++j) {
        if (std::abs(keyed[j]) > candidates[c]) {
          kept.push_back(j);
          base += intercept[j];
        } else if (variant == PrsVariant::kPlain) {
          base += intercept[j];
        }
      }
      std::size_t mistakes = 0;
      for (std::size_t i : fold_members[f]) {
        double s = base;
        for (std::size_t j : kept)
          s += beta[j] * x[i][j];
        const int predicted = s >= 0.0 ? 1 : 0;
        mistakes += predicted != labels[i];
      }
      mean_rate[c] += static_cast<double>(mistakes) /
                      static_cast<double>(fold_members[f].size()) /
                      static_cast<double>(folds);
    }
  }

  std::size_t best = 0;
  for (std::size_t c = 1; c < candidates.size(); ++c) {
    if (mean_rate[c] < mean_rate[best] ||
        (mean_rate[c] == mean_rate[best] && candidates[c] > candidates[best]))
      best = c;
  }
  return candidates[best];
}

}  // namespace nebula
