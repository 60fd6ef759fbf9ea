#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "nebula/commands.hpp"

namespace {

using nebula::RunConfig;

void add_solver_options(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--grid-d0", rc.grid_d0, "control frequency grid size");
  cmd->add_option("--grid-d1", rc.grid_d1, "case frequency grid size");
  cmd->add_option("--grid-d2", rc.grid_d2, "noncentrality grid size");
  cmd->add_option("--tol", rc.tol, "EM convergence tolerance");
  cmd->add_option("--max-iter", rc.max_iter, "EM iteration cap");
  cmd->add_option("--threads", rc.threads, "worker thread count");
}

void add_simulation_options(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--d", rc.d, "number of SNPs");
  cmd->add_option("--n-nonnull-target", rc.n_nonnull_target, "target non-null SNP count");
  cmd->add_option("--n-nonnull-aux", rc.n_nonnull_aux, "auxiliary non-null SNP count");
  cmd->add_option("--overlap-pct", rc.overlap_pct, "non-null overlap percentage");
  cmd->add_option("--mu", rc.mu, "mean effect size");
  cmd->add_option("--effect-var", rc.effect_var, "effect size variance");
  cmd->add_option("--n0-train", rc.n0_train, "training controls");
  cmd->add_option("--n1-train", rc.n1_train, "training cases");
  cmd->add_option("--n0-test", rc.n0_test, "test controls");
  cmd->add_option("--n1-test", rc.n1_test, "test cases");
  cmd->add_option("--n0-aux", rc.n0_aux, "auxiliary controls");
  cmd->add_option("--n1-aux", rc.n1_aux, "auxiliary cases");
  cmd->add_option("--base-maf-lo", rc.base_maf_lo, "control frequency lower bound");
  cmd->add_option("--base-maf-hi", rc.base_maf_hi, "control frequency upper bound");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"integrative genetic risk classification toolkit"};
  app.require_subcommand(1);

  RunConfig rc;
  std::string config_path;

  // Config values are applied before parsing so explicit flags win.
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc)
      config_path = argv[i + 1];
    else if (arg.rfind("--config=", 0) == 0)
      config_path = arg.substr(9);
  }
  try {
    if (!config_path.empty()) nebula::apply_config_file(rc, config_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  auto add_shared = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat key=value configuration file");
    cmd->add_option("--seed", rc.seed, "random seed");
    cmd->add_option("--out-dir", rc.out_dir, "output directory");
    return cmd;
  };

  CLI::App* simulate = add_shared(app.add_subcommand("simulate", "generate a synthetic study"));
  add_simulation_options(simulate, rc);

  CLI::App* preprocess =
      add_shared(app.add_subcommand("preprocess", "filter and impute a genotype table"));
  preprocess->add_option("--genotypes", rc.genotypes_path, "genotype TSV to clean");
  preprocess->add_option("--min-maf", rc.min_maf, "minor allele frequency floor");
  preprocess->add_option("--hwe-p", rc.hwe_p, "Hardy-Weinberg p-value threshold (0 skips)");
  preprocess->add_flag("--impute", rc.impute, "impute missing genotypes");

  CLI::App* fit = add_shared(app.add_subcommand("fit", "estimate the prior from counts"));
  fit->add_option("--train", rc.train_path, "training genotype TSV");
  fit->add_option("--aux", rc.aux_path, "auxiliary summary TSV");
  fit->add_option("--annotations", rc.annotations_path, "binary annotation TSV");
  add_solver_options(fit, rc);

  CLI::App* predict = add_shared(app.add_subcommand("predict", "score test subjects"));
  predict->add_option("--test", rc.test_path, "test genotype TSV");
  predict->add_option("--train", rc.train_path, "training genotype TSV");
  predict->add_option("--aux", rc.aux_path, "auxiliary summary TSV");
  predict->add_option("--truth", rc.truth_path, "true frequency TSV (oracle)");
  predict->add_option("--model-dir", rc.model_dir, "directory with fitted prior files");
  predict->add_option("--annotations", rc.annotations_path, "binary annotation TSV");
  predict->add_option("--classifier", rc.classifier,
                      "prs|adaptive-prs|nebula|nebula-annot|oracle");
  predict->add_option("--threshold", rc.threshold, "effect threshold (default: cross-validate)");
  predict->add_option("--cv-folds", rc.cv_folds, "cross-validation folds");
  predict->add_option("--cv-candidates", rc.cv_candidates, "threshold candidate count");
  predict->add_option("--prevalence", rc.prevalence, "disease prevalence");
  predict->add_flag("--per-snp", rc.per_snp, "dump per-SNP contributions");

  CLI::App* benchmark =
      add_shared(app.add_subcommand("benchmark", "sweep simulation settings"));
  add_simulation_options(benchmark, rc);
  add_solver_options(benchmark, rc);
  benchmark->add_option("--overlaps", rc.overlaps, "overlap percentages, comma separated");
  benchmark->add_option("--aux-sizes", rc.aux_sizes, "per-class auxiliary sizes");
  benchmark->add_option("--nonnull-counts", rc.nonnull_counts, "non-null SNP counts");
  benchmark->add_option("--mus", rc.mus, "mean effect sizes");
  benchmark->add_option("--replications", rc.replications, "replications per setting");
  benchmark->add_option("--cv-folds", rc.cv_folds, "cross-validation folds");
  benchmark->add_option("--cv-candidates", rc.cv_candidates, "threshold candidate count");
  benchmark->add_option("--prevalence", rc.prevalence, "disease prevalence");

  CLI11_PARSE(app, argc, argv);

  try {
    return nebula::run_command(app.get_subcommands().front()->get_name(), rc);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
