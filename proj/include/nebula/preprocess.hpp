#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace nebula {

inline constexpr std::int8_t kMissingGenotype = -1;
inline constexpr int kMissingLabel = -1;

// Subjects-by-SNPs genotype table over {0, 1, 2, missing}, with one optional
// class label per subject.
struct GenotypeMatrix {
  std::vector<std::string> subject_ids;
  std::vector<std::string> snp_ids;
  std::vector<int> labels;
  std::vector<std::int8_t> values;

  std::size_t n() const { return subject_ids.size(); }
  std::size_t d() const { return snp_ids.size(); }
  std::int8_t at(std::size_t i, std::size_t j) const { return values[i * d() + j]; }
  void set(std::size_t i, std::size_t j, std::int8_t v) { values[i * d() + j] = v; }
  bool has_controls() const;
  void validate() const;
};

struct DropRecord {
  std::string snp_id;
  std::string reason;
  double statistic = std::numeric_limits<double>::quiet_NaN();
  double p_value = std::numeric_limits<double>::quiet_NaN();
};

struct FilterResult {
  GenotypeMatrix kept;
  std::vector<DropRecord> dropped;
};

// Drop-log reason codes.
inline constexpr const char* kReasonLowMaf = "low_maf";
inline constexpr const char* kReasonAllMissing = "all_missing";
inline constexpr const char* kReasonHweFail = "hwe_fail";
inline constexpr const char* kReasonTooFewSubjects = "too_few_subjects";

// Drops SNPs whose folded minor allele frequency (allele count over twice the
// non-missing subject count, frequencies above 0.5 folded to the complement)
// falls below min_maf; all-missing SNPs are dropped with their own reason.
FilterResult maf_filter(const GenotypeMatrix& m, double min_maf);

// Drops SNPs failing a 1-df Pearson goodness-of-fit test of the genotype
// counts against Hardy-Weinberg expectations at the estimated allele
// frequency. The test sample is the controls when any subject is labeled 0,
// otherwise all subjects; SNPs with fewer than 2 non-missing genotypes in the
// sample are dropped with their own reason.
FilterResult hwe_filter(const GenotypeMatrix& m, double p_threshold);

// Replaces each missing entry with an independent Binomial(2, maf) draw at the
// SNP's estimated allele frequency, using one generator stream per SNP so the
// result depends only on the seed.
GenotypeMatrix impute_missing(const GenotypeMatrix& m, std::uint64_t seed);

GenotypeMatrix read_genotype_tsv(const std::filesystem::path& path);
void write_genotype_tsv(const std::filesystem::path& path, const GenotypeMatrix& m);
void write_drop_log(const std::filesystem::path& path,
                    const std::vector<DropRecord>& dropped);

// Complete-data view for the scoring code; throws if any genotype is missing.
std::vector<std::vector<int>> genotype_rows(const GenotypeMatrix& m);

}  // namespace nebula
