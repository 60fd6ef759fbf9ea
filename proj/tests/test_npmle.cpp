#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <vector>

#include "nebula/densities.hpp"
#include "nebula/errors.hpp"
#include "nebula/npmle.hpp"
#include "nebula/rng.hpp"
#include "support/simplex_search.hpp"

using namespace nebula;

namespace {

TargetSufficientStats make_stats(std::vector<long long> s0, std::vector<long long> s1,
                                 long long n0, long long n1) {
  TargetSufficientStats st;
  st.s0 = std::move(s0);
  st.s1 = std::move(s1);
  st.n0 = n0;
  st.n1 = n1;
  return st;
}

AuxSummary make_aux(std::vector<double> t) {
  AuxSummary aux;
  aux.t = std::move(t);
  return aux;
}

// Random small instance whose per-axis estimates are non-degenerate.
struct SmallInstance {
  TargetSufficientStats stats;
  AuxSummary aux;
  Grid3 grid;
};

SmallInstance random_instance(Rng& rng, std::size_t d, std::size_t d0, std::size_t d1,
                              std::size_t d2) {
  SmallInstance inst;
  const long long n0 = 3 + static_cast<long long>(rng.uniform_int(20));
  const long long n1 = 3 + static_cast<long long>(rng.uniform_int(20));
  while (true) {
    inst.stats.s0.clear();
    inst.stats.s1.clear();
    inst.aux.t.clear();
    // Counts stay off {0, 2n} so even two-point grids cover every SNP.
    for (std::size_t j = 0; j < d; ++j) {
      inst.stats.s0.push_back(1 + static_cast<long long>(rng.uniform_int(2 * n0 - 1)));
      inst.stats.s1.push_back(1 + static_cast<long long>(rng.uniform_int(2 * n1 - 1)));
      inst.aux.t.push_back(rng.uniform(0.0, 9.0));
    }
    inst.stats.n0 = n0;
    inst.stats.n1 = n1;
    const auto distinct = [](const std::vector<long long>& v) {
      for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] != v[0]) return true;
      return false;
    };
    if (d == 1 || (distinct(inst.stats.s0) && distinct(inst.stats.s1))) break;
  }
  inst.grid = build_grid(inst.stats, inst.aux, d0, d1, d2);
  return inst;
}

std::vector<std::vector<double>> tensor_rows(const LikelihoodTensor& t) {
  std::vector<std::vector<double>> rows(t.d());
  for (std::size_t j = 0; j < t.d(); ++j)
    for (std::size_t a = 0; a < t.d0(); ++a)
      for (std::size_t b = 0; b < t.d1(); ++b)
        for (std::size_t c = 0; c < t.d2(); ++c) rows[j].push_back(t.at(j, a, b, c));
  return rows;
}

}  // namespace

TEST_CASE("equally spaced axis construction") {
  const auto pts = equally_spaced(0.0, 1.0, 5);
  REQUIRE(pts.size() == 5);
  CHECK(pts.front() == 0.0);
  CHECK(pts.back() == 1.0);
  CHECK(std::fabs(pts[2] - 0.5) < 1e-15);
  CHECK(equally_spaced(0.2, 0.6, 1) == std::vector<double>{0.4});
  CHECK(equally_spaced(0.3, 0.3, 7) == std::vector<double>{0.3});
  CHECK_THROWS_AS(equally_spaced(0.0, 1.0, 0), DomainError);
  CHECK_THROWS_AS(equally_spaced(1.0, 0.0, 3), DomainError);
}

TEST_CASE("grid spans the observed estimate ranges") {
  const auto stats = make_stats({0, 2, 4}, {1, 3, 3}, 2, 2);
  const auto aux = make_aux({0.5, 2.0, 8.0});
  const Grid3 grid = build_grid(stats, aux, 5, 3, 4);
  CHECK(grid.pi0_points.front() == 0.0);
  CHECK(grid.pi0_points.back() == 1.0);
  CHECK(grid.pi1_points.front() == 0.25);
  CHECK(grid.pi1_points.back() == 0.75);
  CHECK(grid.lambda_points.front() == 0.5);
  CHECK(grid.lambda_points.back() == 8.0);
  grid.validate();
}

TEST_CASE("identical per-class counts degenerate that axis to one point") {
  const auto stats = make_stats({2, 2, 2}, {1, 2, 3}, 2, 2);
  const auto aux = make_aux({1.0, 2.0, 3.0});
  const Grid3 grid = build_grid(stats, aux, 6, 6, 6);
  REQUIRE(grid.pi0_points.size() == 1);
  CHECK(grid.pi0_points[0] == 0.5);
  CHECK(grid.pi1_points.size() == 6);
}

TEST_CASE("grid construction rejects bad inputs") {
  const auto stats = make_stats({1}, {1}, 2, 2);
  const auto aux = make_aux({1.0});
  CHECK_THROWS_AS(build_grid(stats, aux, 0, 2, 2), DomainError);
  CHECK_THROWS_AS(build_grid(make_stats({}, {}, 2, 2), make_aux({}), 2, 2, 2),
                  DomainError);
  CHECK_THROWS_AS(build_grid(stats, make_aux({1.0, 2.0}), 2, 2, 2), DomainError);
  CHECK_THROWS_AS(build_grid(make_stats({9}, {1}, 2, 2), aux, 2, 2, 2), DomainError);
}

TEST_CASE("likelihood tensor entries match direct density calls bit for bit") {
  const auto stats = make_stats({3, 0, 7}, {2, 5, 1}, 4, 4);
  const auto aux = make_aux({0.7, 3.2, 5.9});
  const Grid3 grid = build_grid(stats, aux, 3, 4, 2);
  const LikelihoodTensor tensor(stats, aux, grid);
  REQUIRE(tensor.d() == 3);
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t c = 0; c < 2; ++c) {
          const double want = log_binom_pmf(stats.s0[j], 8, grid.pi0_points[a]) +
                              log_binom_pmf(stats.s1[j], 8, grid.pi1_points[b]) +
                              log_noncentral_chisq_pdf(aux.t[j], 1.0,
                                                       grid.lambda_points[c]);
          CHECK(tensor.at(j, a, b, c) == want);
        }
}

TEST_CASE("single cell tensor is the sum of the three log densities") {
  const auto stats = make_stats({2}, {3}, 3, 3);
  const auto aux = make_aux({1.5});
  const Grid3 grid = build_grid(stats, aux, 1, 1, 1);
  const LikelihoodTensor tensor(stats, aux, grid);
  const double want = log_binom_pmf(2, 6, grid.pi0_points[0]) +
                      log_binom_pmf(3, 6, grid.pi1_points[0]) +
                      log_noncentral_chisq_pdf(1.5, 1.0, grid.lambda_points[0]);
  CHECK(tensor.at(0, 0, 0, 0) == want);
}

TEST_CASE("tensor rows are permutation equivariant") {
  Rng rng = Rng::stream(11, {1});
  auto inst = random_instance(rng, 4, 2, 2, 2);
  const LikelihoodTensor t1(inst.stats, inst.aux, inst.grid);
  TargetSufficientStats swapped = inst.stats;
  std::swap(swapped.s0[1], swapped.s0[3]);
  std::swap(swapped.s1[1], swapped.s1[3]);
  AuxSummary aux2 = inst.aux;
  std::swap(aux2.t[1], aux2.t[3]);
  const LikelihoodTensor t2(swapped, aux2, inst.grid);
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t c = 0; c < 2; ++c) {
        CHECK(t1.at(1, a, b, c) == t2.at(3, a, b, c));
        CHECK(t1.at(3, a, b, c) == t2.at(1, a, b, c));
        CHECK(t1.at(0, a, b, c) == t2.at(0, a, b, c));
      }
}

TEST_CASE("dense materialization matches indexed access and honors the cap") {
  Rng rng = Rng::stream(11, {2});
  auto inst = random_instance(rng, 3, 2, 3, 2);
  const LikelihoodTensor tensor(inst.stats, inst.aux, inst.grid);
  const auto dense = tensor.dense();
  std::size_t idx = 0;
  for (std::size_t j = 0; j < tensor.d(); ++j)
    for (std::size_t a = 0; a < tensor.d0(); ++a)
      for (std::size_t b = 0; b < tensor.d1(); ++b)
        for (std::size_t c = 0; c < tensor.d2(); ++c)
          CHECK(dense[idx++] == tensor.at(j, a, b, c));

  try {
    tensor.dense(5);
    FAIL("expected ResourceError");
  } catch (const ResourceError& e) {
    CHECK(std::string(e.what()).find("cap of 5") != std::string::npos);
  }
}

TEST_CASE("zero chi-square statistics are accepted via the evaluation floor") {
  const auto stats = make_stats({1, 2}, {2, 3}, 3, 3);
  const auto aux = make_aux({0.0, 4.0});
  const Grid3 grid = build_grid(stats, aux, 2, 2, 3);
  CHECK(grid.lambda_points.front() == 0.0);
  const LikelihoodTensor tensor(stats, aux, grid);
  const double want = log_noncentral_chisq_pdf(kTStatFloor, 1.0, grid.lambda_points[1]);
  const double got = tensor.at(0, 0, 0, 1) - log_binom_pmf(1, 6, grid.pi0_points[0]) -
                     log_binom_pmf(2, 6, grid.pi1_points[0]);
  CHECK(std::fabs(got - want) < 1e-12);
}

TEST_CASE("em step keeps a single-atom prior untouched") {
  const auto stats = make_stats({2}, {3}, 3, 3);
  const auto aux = make_aux({1.5});
  const Grid3 grid = build_grid(stats, aux, 1, 1, 1);
  const LikelihoodTensor tensor(stats, aux, grid);
  const auto g = MixingDistribution::uniform(grid);
  const auto next = em_step(g, tensor);
  CHECK(next.log_mass.size() == 1);
  CHECK(next.log_mass[0] == 0.0);
}

TEST_CASE("em step posterior for two support points and one SNP") {
  const auto stats = make_stats({2}, {3}, 5, 5);
  const auto aux = make_aux({2.0});
  Grid3 grid;
  grid.pi0_points = {0.15, 0.45};
  grid.pi1_points = {0.3};
  grid.lambda_points = {2.0};
  const LikelihoodTensor tensor(stats, aux, grid);
  const auto g = MixingDistribution::uniform(grid);
  const auto next = em_step(g, tensor);
  const double e0 = std::exp(tensor.at(0, 0, 0, 0));
  const double e1 = std::exp(tensor.at(0, 1, 0, 0));
  CHECK(std::fabs(next.mass(0, 0, 0) - e0 / (e0 + e1)) < 1e-14);
  CHECK(std::fabs(next.mass(1, 0, 0) - e1 / (e0 + e1)) < 1e-14);
}

TEST_CASE("em step fixes the uniform prior when the likelihood is flat") {
  // pmf(1; 2, p) is symmetric around p = 0.5, so these axes give every grid
  // point the same likelihood.
  const auto stats = make_stats({1}, {1}, 1, 1);
  const auto aux = make_aux({1.0});
  Grid3 grid;
  grid.pi0_points = {0.4, 0.6};
  grid.pi1_points = {0.3, 0.7};
  grid.lambda_points = {1.0};
  const LikelihoodTensor tensor(stats, aux, grid);
  const auto g = MixingDistribution::uniform(grid);
  const auto next = em_step(g, tensor);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(std::exp(next.log_mass[i]) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("em step reports the SNP whose likelihood vanishes everywhere") {
  const auto stats = make_stats({0, 1}, {1, 1}, 1, 1);
  const auto aux = make_aux({1.0, 1.0});
  Grid3 grid;
  grid.pi0_points = {0.0, 1.0};
  grid.pi1_points = {0.5};
  grid.lambda_points = {1.0};
  const LikelihoodTensor tensor(stats, aux, grid);
  const auto g = MixingDistribution::uniform(grid);
  try {
    em_step(g, tensor);
    FAIL("expected FitError");
  } catch (const FitError& e) {
    REQUIRE(e.has_snp_index());
    CHECK(e.snp_index() == 1);
  }
}

TEST_CASE("em step conserves mass on random instances") {
  Rng rng = Rng::stream(11, {3});
  for (int rep = 0; rep < 20; ++rep) {
    auto inst = random_instance(rng, 5, 2, 2, 3);
    const LikelihoodTensor tensor(inst.stats, inst.aux, inst.grid);
    auto g = MixingDistribution::uniform(inst.grid);
    for (int step = 0; step < 3; ++step) {
      g = em_step(g, tensor);
      double total = 0.0;
      for (double lm : g.log_mass) {
        const double m = std::exp(lm);
        CHECK(m >= 0.0);
        total += m;
      }
      CHECK(std::fabs(total - 1.0) < 1e-10);
    }
  }
}

TEST_CASE("huge tolerance stops after one iteration") {
  Rng rng = Rng::stream(11, {4});
  auto inst = random_instance(rng, 4, 2, 2, 2);
  FitOptions opts;
  opts.tol = 1e3;
  auto [g, report] = fit_npmle(inst.stats, inst.aux, inst.grid, opts);
  CHECK(report.iterations == 1);
  CHECK(report.converged);
  CHECK(report.log_likelihood_trace.size() == 2);
}

TEST_CASE("iteration cap reported as non-convergence") {
  Rng rng = Rng::stream(11, {5});
  auto inst = random_instance(rng, 4, 2, 2, 2);
  FitOptions opts;
  opts.tol = 1e-300;
  opts.max_iter = 3;
  auto [g, report] = fit_npmle(inst.stats, inst.aux, inst.grid, opts);
  CHECK(report.iterations == 3);
  CHECK_FALSE(report.converged);
}

TEST_CASE("fit options are validated") {
  Rng rng = Rng::stream(11, {6});
  auto inst = random_instance(rng, 2, 2, 2, 2);
  FitOptions opts;
  opts.tol = 0.0;
  CHECK_THROWS_AS(fit_npmle(inst.stats, inst.aux, inst.grid, opts), DomainError);
  opts.tol = 1e-8;
  opts.max_iter = 0;
  CHECK_THROWS_AS(fit_npmle(inst.stats, inst.aux, inst.grid, opts), DomainError);
}

TEST_CASE("single observation concentrates mass on the likelihood argmax") {
  Rng rng = Rng::stream(11, {7});
  for (int rep = 0; rep < 5; ++rep) {
    auto inst = random_instance(rng, 1, 3, 2, 2);
    const LikelihoodTensor tensor(inst.stats, inst.aux, inst.grid);
    const auto rows = tensor_rows(tensor);
    const std::size_t argmax =
        std::max_element(rows[0].begin(), rows[0].end()) - rows[0].begin();
    // Ties would split mass; skip the rare tied draw.
    std::size_t num_max = 0;
    for (double v : rows[0])
      if (v == rows[0][argmax]) ++num_max;
    if (num_max > 1) continue;
    FitOptions opts;
    opts.tol = 1e-13;
    opts.max_iter = 100000;
    auto [g, report] = fit_npmle(inst.stats, inst.aux, inst.grid, opts);
    CHECK(std::exp(g.log_mass[argmax]) > 0.999);
  }
}

TEST_CASE("fit attains the global optimum found by exhaustive simplex search") {
  Rng rng = Rng::stream(11, {8});
  for (int rep = 0; rep < 5; ++rep) {
    const std::size_t d = 2 + rng.uniform_int(4);
    auto inst = random_instance(rng, d, 2, 2, 2);
    const LikelihoodTensor tensor(inst.stats, inst.aux, inst.grid);
    FitOptions opts;
    opts.tol = 1e-12;
    opts.max_iter = 200000;
    auto [g, report] = fit_npmle(inst.stats, inst.aux, inst.grid, opts);
    const auto oracle = oracles::simplex_search(tensor_rows(tensor), 100);
    CHECK(report.final_log_likelihood >= oracle.best_ll - 1e-6);
  }
}

TEST_CASE("log likelihood trace never steps down") {
  Rng rng = Rng::stream(11, {9});
  for (int rep = 0; rep < 10; ++rep) {
    auto inst = random_instance(rng, 8, 3, 3, 3);
    FitOptions opts;
    opts.tol = 1e-11;
    opts.max_iter = 5000;
    auto [g, report] = fit_npmle(inst.stats, inst.aux, inst.grid, opts);
    for (std::size_t i = 1; i < report.log_likelihood_trace.size(); ++i)
      CHECK(report.log_likelihood_trace[i] >=
            report.log_likelihood_trace[i - 1] - 1e-10);
    CHECK(report.final_log_likelihood == report.log_likelihood_trace.back());
  }
}

TEST_CASE("final log likelihood equals a fresh evaluation") {
  Rng rng = Rng::stream(11, {10});
  auto inst = random_instance(rng, 6, 3, 2, 2);
  const LikelihoodTensor tensor(inst.stats, inst.aux, inst.grid);
  auto [g, report] = fit_npmle(inst.stats, inst.aux, inst.grid);
  CHECK(marginal_log_likelihood(g, tensor) == report.final_log_likelihood);
}

TEST_CASE("duplicating every SNP preserves the fit") {
  Rng rng = Rng::stream(11, {11});
  auto inst = random_instance(rng, 5, 2, 2, 2);
  TargetSufficientStats dup = inst.stats;
  dup.s0.insert(dup.s0.end(), inst.stats.s0.begin(), inst.stats.s0.end());
  dup.s1.insert(dup.s1.end(), inst.stats.s1.begin(), inst.stats.s1.end());
  AuxSummary aux2 = inst.aux;
  aux2.t.insert(aux2.t.end(), inst.aux.t.begin(), inst.aux.t.end());
  FitOptions opts;
  opts.tol = 1e-12;
  opts.max_iter = 100000;
  auto [g1, r1] = fit_npmle(inst.stats, inst.aux, inst.grid, opts);
  auto [g2, r2] = fit_npmle(dup, aux2, inst.grid, opts);
  for (std::size_t i = 0; i < g1.log_mass.size(); ++i)
    CHECK(std::fabs(std::exp(g1.log_mass[i]) - std::exp(g2.log_mass[i])) < 1e-7);
}

TEST_CASE("permuting SNP order leaves the fit unchanged") {
  Rng rng = Rng::stream(11, {12});
  auto inst = random_instance(rng, 6, 2, 2, 2);
  TargetSufficientStats perm = inst.stats;
  AuxSummary paux = inst.aux;
  std::reverse(perm.s0.begin(), perm.s0.end());
  std::reverse(perm.s1.begin(), perm.s1.end());
  std::reverse(paux.t.begin(), paux.t.end());
  FitOptions opts;
  opts.tol = 1e-11;
  auto [g1, r1] = fit_npmle(inst.stats, inst.aux, inst.grid, opts);
  auto [g2, r2] = fit_npmle(perm, paux, inst.grid, opts);
  for (std::size_t i = 0; i < g1.log_mass.size(); ++i)
    CHECK(std::fabs(std::exp(g1.log_mass[i]) - std::exp(g2.log_mass[i])) < 1e-10);
}

TEST_CASE("thread count does not change the fit at fixed worker count") {
  Rng rng = Rng::stream(11, {18});
  auto inst = random_instance(rng, 200, 3, 3, 3);
  FitOptions a, b;
  a.threads = 1;
  b.threads = 4;
  auto [g1, r1] = fit_npmle(inst.stats, inst.aux, inst.grid, a);
  auto [g2, r2] = fit_npmle(inst.stats, inst.aux, inst.grid, b);
  CHECK(r1.iterations == r2.iterations);
  for (std::size_t i = 0; i < g1.log_mass.size(); ++i)
    CHECK(std::fabs(std::exp(g1.log_mass[i]) - std::exp(g2.log_mass[i])) < 1e-12);
}

TEST_CASE("marginal log likelihood on a single-cell grid sums the tensor") {
  const auto stats = make_stats({2, 4, 1}, {3, 0, 2}, 3, 3);
  const auto aux = make_aux({1.5, 0.3, 2.2});
  const Grid3 grid = build_grid(stats, aux, 1, 1, 1);
  const LikelihoodTensor tensor(stats, aux, grid);
  const auto g = MixingDistribution::uniform(grid);
  double want = 0.0;
  for (std::size_t j = 0; j < 3; ++j) want += tensor.at(j, 0, 0, 0);
  CHECK(std::fabs(marginal_log_likelihood(g, tensor) - want) < 1e-10);
}

TEST_CASE("zero-mass support points do not move the likelihood") {
  const auto stats = make_stats({2}, {3}, 5, 5);
  const auto aux = make_aux({2.0});
  Grid3 g1;
  g1.pi0_points = {0.2};
  g1.pi1_points = {0.3};
  g1.lambda_points = {2.0};
  Grid3 g2 = g1;
  g2.pi0_points = {0.2, 0.8};
  const LikelihoodTensor t1(stats, aux, g1);
  const LikelihoodTensor t2(stats, aux, g2);
  MixingDistribution m1{g1, {0.0}};
  MixingDistribution m2{g2, {0.0, kNegInf}};
  CHECK(std::fabs(marginal_log_likelihood(m1, t1) - marginal_log_likelihood(m2, t2)) <
        1e-12);
}

TEST_CASE("marginal log likelihood matches a plain double loop") {
  Rng rng = Rng::stream(11, {13});
  auto inst = random_instance(rng, 3, 2, 2, 2);
  const LikelihoodTensor tensor(inst.stats, inst.aux, inst.grid);
  auto [g, report] = fit_npmle(inst.stats, inst.aux, inst.grid);
  const auto rows = tensor_rows(tensor);
  double want = 0.0;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < rows[j].size(); ++k)
      s += std::exp(g.log_mass[k]) * std::exp(rows[j][k]);
    want += std::log(s);
  }
  CHECK(std::fabs(marginal_log_likelihood(g, tensor) - want) < 1e-10);
}

TEST_CASE("underflowing priors are evaluated through the log-space fallback") {
  TargetSufficientStats stats = make_stats({0}, {1}, 500, 1);
  AuxSummary aux = make_aux({1.0});
  Grid3 grid;
  grid.pi0_points = {0.001, 0.999};
  grid.pi1_points = {0.5};
  grid.lambda_points = {1.0};
  const LikelihoodTensor tensor(stats, aux, grid);
  MixingDistribution g{grid, {kNegInf, 0.0}};
  const double ll = marginal_log_likelihood(g, tensor);
  CHECK(std::isfinite(ll));
  CHECK(std::fabs(ll - tensor.at(0, 1, 0, 0)) < 1e-9);
  const auto next = em_step(g, tensor);
  CHECK(std::fabs(std::exp(next.log_mass[1]) - 1.0) < 1e-12);
}

TEST_CASE("bivariate fit with one grid point per axis is trivial") {
  const auto stats = make_stats({2, 3}, {3, 1}, 3, 3);
  auto [g, report] =
      fit_npmle_bivariate(stats, {0, 1}, {0.4}, {0.5}, FitOptions{});
  REQUIRE(g.log_mass.size() == 1);
  CHECK(g.log_mass[0] == 0.0);
  CHECK(report.converged);
}

TEST_CASE("bivariate fit on a single SNP lands on the argmax cell") {
  const auto stats = make_stats({2, 9}, {3, 2}, 6, 6);
  const std::vector<double> a0 = equally_spaced(0.1, 0.8, 4);
  const std::vector<double> a1 = equally_spaced(0.1, 0.8, 3);
  FitOptions opts;
  opts.tol = 1e-13;
  opts.max_iter = 100000;
  auto [g, report] = fit_npmle_bivariate(stats, {1}, a0, a1, opts);
  std::size_t best = 0;
  double best_v = -1e300;
  for (std::size_t a = 0; a < a0.size(); ++a)
    for (std::size_t b = 0; b < a1.size(); ++b) {
      const double v =
          log_binom_pmf(stats.s0[1], 12, a0[a]) + log_binom_pmf(stats.s1[1], 12, a1[b]);
      if (v > best_v) {
        best_v = v;
        best = a * a1.size() + b;
      }
    }
  CHECK(std::exp(g.log_mass[best]) > 0.999);
}

TEST_CASE("bivariate fit rejects an empty selector") {
  const auto stats = make_stats({2}, {3}, 3, 3);
  CHECK_THROWS_AS(fit_npmle_bivariate(stats, {}, {0.4}, {0.5}, FitOptions{}),
                  DomainError);
}

TEST_CASE("constant chi-square statistics reduce the trivariate fit to the bivariate one") {
  Rng rng = Rng::stream(11, {14});
  TargetSufficientStats stats;
  stats.n0 = 8;
  stats.n1 = 9;
  for (int j = 0; j < 30; ++j) {
    stats.s0.push_back(static_cast<long long>(rng.uniform_int(17)));
    stats.s1.push_back(static_cast<long long>(rng.uniform_int(19)));
  }
  AuxSummary aux = make_aux(std::vector<double>(30, 2.5));
  const Grid3 grid = build_grid(stats, aux, 3, 3, 5);
  REQUIRE(grid.lambda_points.size() == 1);

  FitOptions opts;
  opts.tol = 1e-12;
  opts.max_iter = 100000;
  auto [g3, r3] = fit_npmle(stats, aux, grid, opts);
  std::vector<std::size_t> all(30);
  std::iota(all.begin(), all.end(), 0);
  auto [g2, r2] =
      fit_npmle_bivariate(stats, all, grid.pi0_points, grid.pi1_points, opts);
  const double kappa = log_noncentral_chisq_pdf(2.5, 1.0, 2.5);
  CHECK(std::fabs(r3.final_log_likelihood - (r2.final_log_likelihood + 30.0 * kappa)) <
        1e-6);
}

TEST_CASE("mixing distribution serialization round trips") {
  Rng rng = Rng::stream(11, {15});
  auto inst = random_instance(rng, 6, 3, 2, 4);
  auto [g, report] = fit_npmle(inst.stats, inst.aux, inst.grid);
  const auto dir = std::filesystem::temp_directory_path() / "nebula_npmle_test";
  std::filesystem::create_directories(dir);
  save_mixing_distribution(dir / "g.tsv", dir / "g.meta", g, &report);
  const auto loaded = load_mixing_distribution(dir / "g.tsv", dir / "g.meta");
  REQUIRE(loaded.grid.d0() == g.grid.d0());
  REQUIRE(loaded.grid.d1() == g.grid.d1());
  REQUIRE(loaded.grid.d2() == g.grid.d2());
  for (std::size_t i = 0; i < g.grid.pi0_points.size(); ++i)
    CHECK(loaded.grid.pi0_points[i] == g.grid.pi0_points[i]);
  for (std::size_t i = 0; i < g.log_mass.size(); ++i) {
    const double a = std::exp(g.log_mass[i]);
    const double b = std::exp(loaded.log_mass[i]);
    CHECK(std::fabs(a - b) <= 1e-14 * std::max(1.0, std::fabs(a)));
  }
}

TEST_CASE("bivariate serialization round trips") {
  const auto stats = make_stats({2, 9, 4}, {3, 2, 7}, 6, 6);
  FitOptions opts;
  auto [g, report] = fit_npmle_bivariate(stats, {0, 1, 2}, equally_spaced(0.1, 0.8, 3),
                                         equally_spaced(0.2, 0.7, 4), opts);
  const auto dir = std::filesystem::temp_directory_path() / "nebula_npmle_test";
  std::filesystem::create_directories(dir);
  save_mixing_distribution2(dir / "g2.tsv", dir / "g2.meta", g, &report);
  const auto loaded = load_mixing_distribution2(dir / "g2.tsv", dir / "g2.meta");
  REQUIRE(loaded.log_mass.size() == g.log_mass.size());
  for (std::size_t i = 0; i < g.log_mass.size(); ++i)
    CHECK(std::fabs(std::exp(g.log_mass[i]) - std::exp(loaded.log_mass[i])) < 1e-14);
}

TEST_CASE("loader rejects malformed prior files") {
  const auto dir = std::filesystem::temp_directory_path() / "nebula_npmle_test";
  std::filesystem::create_directories(dir);
  {
    std::FILE* f = std::fopen((dir / "bad.tsv").string().c_str(), "w");
    std::fputs("wrong\theader\n", f);
    std::fclose(f);
    std::FILE* m = std::fopen((dir / "bad.meta").string().c_str(), "w");
    std::fputs("kind=trivariate\nd0=1\nd1=1\nd2=1\npi0_min=0.2\npi0_max=0.2\n"
               "pi1_min=0.3\npi1_max=0.3\nlambda_min=1\nlambda_max=1\n",
               m);
    std::fclose(m);
  }
  CHECK_THROWS_AS(load_mixing_distribution(dir / "bad.tsv", dir / "bad.meta"), IoError);
  CHECK_THROWS_AS(load_mixing_distribution(dir / "missing.tsv", dir / "bad.meta"),
                  IoError);
}
