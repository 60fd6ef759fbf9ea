#include "nebula/preprocess.hpp"

#include <cmath>
#include <set>
#include <string>

#include "nebula/errors.hpp"
#include "nebula/rng.hpp"
#include "text_util.hpp"

namespace nebula {
namespace {

GenotypeMatrix keep_columns(const GenotypeMatrix& m, const std::vector<bool>& keep) {
  GenotypeMatrix out;
  out.subject_ids = m.subject_ids;
  out.labels = m.labels;
  for (std::size_t j = 0; j < m.d(); ++j)
    if (keep[j])
      out.snp_ids.push_back(m.snp_ids[j]);
  out.values.reserve(m.n() * out.d());
  for (std::size_t i = 0; i < m.n(); ++i)
    for (std::size_t j = 0; j < m.d(); ++j)
      if (keep[j])
        out.values.push_back(m.at(i, j));
  return out;
}

// Allele frequency of SNP j over the non-missing entries of the given
// subjects; returns the number of such entries through present.
double allele_frequency(const GenotypeMatrix& m, std::size_t j,
                        const std::vector<std::size_t>& subjects, std::size_t& present) {
  long long alleles = 0;
  present = 0;
  for (std::size_t i : subjects) {
    const std::int8_t v = m.at(i, j);
    if (v == kMissingGenotype)
      continue;
    alleles += v;
    ++present;
  }
  if (present == 0)
    return 0.0;
  return static_cast<double>(alleles) / (2.0 * static_cast<double>(present));
}

std::vector<std::size_t> all_subjects(const GenotypeMatrix& m) {
  std::vector<std::size_t> idx(m.n());
  for (std::size_t i = 0; i < m.n(); ++i)
    idx[i] = i;
  return idx;
}

std::string na_or_double(double v) {
  return std::isnan(v) ? "NA" : text::format_double(v);
}

}  // namespace

bool GenotypeMatrix::has_controls() const {
  for (int label : labels)
    if (label == 0)
      return true;
  return false;
}

void GenotypeMatrix::validate() const {
  if (labels.size() != n())
    throw DomainError("label count does not match the subject count");
  if (values.size() != n() * d())
    throw DomainError("genotype value count does not match the matrix shape");
  for (std::int8_t v : values)
    if (v != kMissingGenotype && (v < 0 || v > 2))
      throw DomainError("genotype entry outside {0,1,2,missing}");
  for (int label : labels)
    if (label != kMissingLabel && label != 0 && label != 1)
      throw DomainError("label outside {0,1,missing}");
  std::set<std::string> seen;
  for (const std::string& id : snp_ids)
    if (id.empty() || !seen.insert(id).second)
      throw DomainError("SNP ids must be unique and nonempty");
}

FilterResult maf_filter(const GenotypeMatrix& m, double min_maf) {
  m.validate();
  if (!(min_maf >= 0.0 && min_maf <= 0.5))
    throw DomainError("minimum minor allele frequency must lie in [0, 0.5]");
  const std::vector<std::size_t> subjects = all_subjects(m);
  FilterResult result;
  std::vector<bool> keep(m.d(), false);
  for (std::size_t j = 0; j < m.d(); ++j) {
    std::size_t present = 0;
    const double freq = allele_frequency(m, j, subjects, present);
    if (present == 0) {
      result.dropped.push_back({m.snp_ids[j], kReasonAllMissing});
      continue;
    }
    const double folded = std::min(freq, 1.0 - freq);
    if (folded < min_maf) {
      result.dropped.push_back({m.snp_ids[j], kReasonLowMaf, folded});
      continue;
    }
    keep[j] = true;
  }
  result.kept = keep_columns(m, keep);
  return result;
}

FilterResult hwe_filter(const GenotypeMatrix& m, double p_threshold) {
  m.validate();
  if (!(p_threshold > 0.0 && p_threshold < 1.0))
    throw DomainError("Hardy-Weinberg p-value threshold must lie in (0, 1)");
  std::vector<std::size_t> sample;
  if (m.has_controls()) {
    for (std::size_t i = 0; i < m.n(); ++i)
      if (m.labels[i] == 0)
        sample.push_back(i);
  } else {
    sample = all_subjects(m);
  }

  FilterResult result;
  std::vector<bool> keep(m.d(), false);
  for (std::size_t j = 0; j < m.d(); ++j) {
    long long counts[3] = {0, 0, 0};
    for (std::size_t i : sample) {
      const std::int8_t v = m.at(i, j);
      if (v != kMissingGenotype)
        ++counts[v];
    }
    const long long total = counts[0] + counts[1] + counts[2];
    if (total < 2) {
      result.dropped.push_back({m.snp_ids[j], kReasonTooFewSubjects});
      continue;
    }
    const double tn = static_cast<double>(total);
    const double freq = (static_cast<double>(counts[1]) + 2.0 * static_cast<double>(counts[2])) / (2.0 * tn);
    const double expected[3] = {tn * (1.0 - freq) * (1.0 - freq),
                                2.0 * tn * freq * (1.0 - freq), tn * freq * freq};
    double stat = 0.0;
    for (int k = 0; k < 3; ++k) {
      if (expected[k] > 0.0) {
        const double diff = static_cast<double>(counts[k]) - expected[k];
        stat += diff * diff / expected[k];
      }
    }
    const double p_value = std::erfc(std::sqrt(stat / 2.0));
    if (p_value < p_threshold) {
      result.dropped.push_back({m.snp_ids[j], kReasonHweFail, stat, p_value});
      continue;
    }
    keep[j] = true;
  }
  result.kept = keep_columns(m, keep);
  return result;
}

GenotypeMatrix impute_missing(const GenotypeMatrix& m, std::uint64_t seed) {
  m.validate();
  GenotypeMatrix out = m;
  const std::vector<std::size_t> subjects = all_subjects(m);
  for (std::size_t j = 0; j < m.d(); ++j) {
    std::size_t present = 0;
    const double freq = allele_frequency(m, j, subjects, present);
    bool any_missing = present < m.n();
    if (!any_missing)
      continue;
    if (present == 0)
      throw DomainError("SNP " + m.snp_ids[j] + " is entirely missing; filter it first");
    Rng rng = Rng::stream(seed, {static_cast<std::uint64_t>(j)});
    for (std::size_t i = 0; i < m.n(); ++i)
      if (m.at(i, j) == kMissingGenotype)
        out.set(i, j, static_cast<std::int8_t>(rng.binomial2(freq)));
  }
  return out;
}

GenotypeMatrix read_genotype_tsv(const std::filesystem::path& path) {
  std::ifstream ifs = text::open_in(path);
  std::string line;
  if (!std::getline(ifs, line))
    throw IoError("'" + path.string() + "' is empty");
  const std::vector<std::string> header = text::split_tabs(text::strip_cr(line));
  if (header.size() < 2 || header[0] != "subject_id" || header[1] != "label")
    throw IoError("'" + path.string() + "' must start with subject_id and label columns");

  GenotypeMatrix m;
  m.snp_ids.assign(header.begin() + 2, header.end());
  while (std::getline(ifs, line)) {
    line = text::strip_cr(line);
    if (line.empty())
      continue;
    const std::vector<std::string> cells = text::split_tabs(line);
    if (cells.size() != header.size())
      throw IoError("row for subject '" + cells[0] + "' in '" + path.string() +
                    "' has " + std::to_string(cells.size()) + " columns, expected " +
                    std::to_string(header.size()));
    m.subject_ids.push_back(cells[0]);
    if (cells[1] == "NA") {
      m.labels.push_back(kMissingLabel);
    } else {
      const long long label = text::parse_int(cells[1], "label in " + path.string());
      if (label != 0 && label != 1)
        throw IoError("label '" + cells[1] + "' in '" + path.string() +
                      "' must be 0, 1, or NA");
      m.labels.push_back(static_cast<int>(label));
    }
    for (std::size_t j = 2; j < cells.size(); ++j) {
      if (cells[j] == "NA") {
        m.values.push_back(kMissingGenotype);
        continue;
      }
      const long long v = text::parse_int(cells[j], "genotype in " + path.string());
      if (v < 0 || v > 2)
        throw IoError("genotype '" + cells[j] + "' in '" + path.string() +
                      "' must be 0, 1, 2, or NA");
      m.values.push_back(static_cast<std::int8_t>(v));
    }
  }
  m.validate();
  return m;
}

void write_genotype_tsv(const std::filesystem::path& path, const GenotypeMatrix& m) {
  m.validate();
  std::ofstream ofs = text::open_out(path);
  ofs << "subject_id\tlabel";
  for (const std::string& id : m.snp_ids)
    ofs << '\t' << id;
  ofs << '\n';
  for (std::size_t i = 0; i < m.n(); ++i) {
    ofs << m.subject_ids[i] << '\t';
    if (m.labels[i] == kMissingLabel)
      ofs << "NA";
    else
      ofs << m.labels[i];
    for (std::size_t j = 0; j < m.d(); ++j) {
      const std::int8_t v = m.at(i, j);
      if (v == kMissingGenotype)
        ofs << "\tNA";
      else
        ofs << '\t' << static_cast<int>(v);
    }
    ofs << '\n';
  }
  if (!ofs)
    throw IoError("failed writing '" + path.string() + "'");
}

void write_drop_log(const std::filesystem::path& path,
                    const std::vector<DropRecord>& dropped) {
  std::ofstream ofs = text::open_out(path);
  ofs << "snp_id\treason\tstatistic\tp_value\n";
  for (const DropRecord& rec : dropped)
    ofs << rec.snp_id << '\t' << rec.reason << '\t' << na_or_double(rec.statistic)
        << '\t' << na_or_double(rec.p_value) << '\n';
  if (!ofs)
    throw IoError("failed writing '" + path.string() + "'");
}

std::vector<std::vector<int>> genotype_rows(const GenotypeMatrix& m) {
  m.validate();
  std::vector<std::vector<int>> rows(m.n(), std::vector<int>(m.d()));
  for (std::size_t i = 0; i < m.n(); ++i)
    for (std::size_t j = 0; j < m.d(); ++j) {
      const std::int8_t v = m.at(i, j);
      if (v == kMissingGenotype)
        throw DomainError("SNP " + m.snp_ids[j] + " has a missing genotype for subject " +
                          m.subject_ids[i] + "; impute first");
      rows[i][j] = v;
    }
  return rows;
}

}  // namespace nebula
