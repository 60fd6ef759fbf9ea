#include "nebula/npmle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <string>
#include <thread>

#include "nebula/densities.hpp"
#include "nebula/errors.hpp"
#include "text_util.hpp"

namespace nebula {

namespace {

// Masses below this are flushed to exact zero: they can never recover under
// the multiplicative EM update and denormals stall the inner loops.
constexpr double kMassFloor = 1e-250;

// Shifted denominators at least this large use the plain linear-space path;
// smaller ones are recomputed with explicit log-space summation.
constexpr double kDenomFastMin = 1e-100;

struct KahanSum {
  double s = 0.0, c = 0.0;
  void add(double x) {
    const double y = x - c;
    const double t = s + y;
    c = (t - s) - y;
    s = t;
  }
  double value() const { return s; }
};

void validate_axis(const std::vector<double>& pts, double lo_bound, double hi_bound,
                   const char* name) {
  if (pts.empty()) throw DomainError(std::string(name) + " axis is empty");
  const double span = pts.back() - pts.front();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double v = pts[i];
    if (!std::isfinite(v) || v < lo_bound || v > hi_bound)
      throw DomainError(std::string(name) + " axis value out of range: " +
                        text::format_double(v));
    if (i > 0 && !(v > pts[i - 1]))
      throw DomainError(std::string(name) + " axis is not strictly increasing");
  }
  if (pts.size() > 1) {
    const double step = span / static_cast<double>(pts.size() - 1);
    const double tol = 1e-12 * std::max({std::fabs(pts.front()), std::fabs(pts.back()), 1.0});
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (std::fabs(pts[i] - (pts.front() + static_cast<double>(i) * step)) > tol)
        throw DomainError(std::string(name) + " axis is not equally spaced");
  }
}

}  // namespace

void TargetSufficientStats::validate() const {
  if (s0.empty() || s0.size() != s1.size())
    throw DomainError("sufficient statistics need equal, nonzero SNP counts (got " +
                      std::to_string(s0.size()) + " and " + std::to_string(s1.size()) + ")");
  if (n0 < 1 || n1 < 1)
    throw DomainError("class sizes must be at least 1 (n0=" + std::to_string(n0) +
                      ", n1=" + std::to_string(n1) + ")");
  for (std::size_t j = 0; j < s0.size(); ++j) {
    if (s0[j] < 0 || s0[j] > 2 * n0)
      throw DomainError("S0 out of [0, 2*n0] at SNP " + std::to_string(j));
    if (s1[j] < 0 || s1[j] > 2 * n1)
      throw DomainError("S1 out of [0, 2*n1] at SNP " + std::to_string(j));
  }
}

void AuxSummary::validate() const {
  if (t.empty()) throw DomainError("auxiliary summary has no SNPs");
  for (std::size_t j = 0; j < t.size(); ++j)
    if (!(t[j] >= 0.0) || !std::isfinite(t[j]))
      throw DomainError("chi-square statistic must be finite and >= 0 at SNP " +
                        std::to_string(j));
  if (gamma_hat && gamma_hat->size() != t.size())
    throw DomainError("gamma_hat length does not match t length");
}

void AuxSummary::validate_for(std::size_t expected_d) const {
  validate();
  if (t.size() != expected_d)
    throw DomainError("auxiliary summary covers " + std::to_string(t.size()) +
                      " SNPs but the target has " + std::to_string(expected_d));
}

std::vector<double> equally_spaced(double lo, double hi, std::size_t n) {
  if (n == 0) throw DomainError("axis needs at least one point");
  if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi)
    throw DomainError("invalid axis range [" + text::format_double(lo) + ", " +
                      text::format_double(hi) + "]");
  if (lo == hi) return {lo};
  if (n == 1) return {0.5 * (lo + hi)};
  std::vector<double> pts(n);
  const double step = (hi - lo) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) pts[i] = lo + static_cast<double>(i) * step;
  pts.back() = hi;
  return pts;
}

void Grid3::validate() const {
  validate_axis(pi0_points, 0.0, 1.0, "pi0");
  validate_axis(pi1_points, 0.0, 1.0, "pi1");
  validate_axis(lambda_points, 0.0, std::numeric_limits<double>::infinity(), "lambda");
}

Grid3 build_grid(const TargetSufficientStats& stats, const AuxSummary& aux,
                 std::size_t d0, std::size_t d1, std::size_t d2) {
  stats.validate();
  aux.validate_for(stats.dim());
  if (d0 == 0 || d1 == 0 || d2 == 0)
    throw DomainError("grid sizes must all be at least 1");

  const double inv0 = 1.0 / (2.0 * static_cast<double>(stats.n0));
  const double inv1 = 1.0 / (2.0 * static_cast<double>(stats.n1));
  double lo0 = 1.0, hi0 = 0.0, lo1 = 1.0, hi1 = 0.0;
  double lot = std::numeric_limits<double>::infinity(), hit = 0.0;
  for (std::size_t j = 0; j < stats.dim(); ++j) {
    const double p0 = static_cast<double>(stats.s0[j]) * inv0;
    const double p1 = static_cast<double>(stats.s1[j]) * inv1;
    lo0 = std::min(lo0, p0);
    hi0 = std::max(hi0, p0);
    lo1 = std::min(lo1, p1);
    hi1 = std::max(hi1, p1);
    lot = std::min(lot, aux.t[j]);
    hit = std::max(hit, aux.t[j]);
  }
  lot = std::max(0.0, lot);

  Grid3 grid;
  grid.pi0_points = equally_spaced(lo0, hi0, d0);
  grid.pi1_points = equally_spaced(lo1, hi1, d1);
  grid.lambda_points = equally_spaced(lot, hit, d2);
  return grid;
}

LikelihoodTensor::LikelihoodTensor(const TargetSufficientStats& stats,
                                   const AuxSummary& aux, const Grid3& grid) {
  stats.validate();
  aux.validate_for(stats.dim());
  grid.validate();
  d_ = stats.dim();
  d0_ = grid.d0();
  d1_ = grid.d1();
  d2_ = grid.d2();
  has_chi_ = true;
  f0_.resize(d_ * d0_);
  f1_.resize(d_ * d1_);
  fchi_.resize(d_ * d2_);
  for (std::size_t j = 0; j < d_; ++j) {
    for (std::size_t a = 0; a < d0_; ++a)
      f0_[j * d0_ + a] = log_binom_pmf(stats.s0[j], 2 * stats.n0, grid.pi0_points[a]);
    for (std::size_t b = 0; b < d1_; ++b)
      f1_[j * d1_ + b] = log_binom_pmf(stats.s1[j], 2 * stats.n1, grid.pi1_points[b]);
    const double x = std::max(aux.t[j], kTStatFloor);
    for (std::size_t c = 0; c < d2_; ++c)
      fchi_[j * d2_ + c] = log_noncentral_chisq_pdf(x, 1.0, grid.lambda_points[c]);
  }
}

LikelihoodTensor::LikelihoodTensor(const TargetSufficientStats& stats,
                                   const std::vector<std::size_t>& selector,
                                   const std::vector<double>& pi0_axis,
                                   const std::vector<double>& pi1_axis) {
  stats.validate();
  if (selector.empty()) throw DomainError("SNP selector is empty");
  for (std::size_t j : selector)
    if (j >= stats.dim())
      throw DomainError("selector index " + std::to_string(j) + " out of range");
  validate_axis(pi0_axis, 0.0, 1.0, "pi0");
  validate_axis(pi1_axis, 0.0, 1.0, "pi1");
  d_ = selector.size();
  d0_ = pi0_axis.size();
  d1_ = pi1_axis.size();
  d2_ = 1;
  has_chi_ = false;
  f0_.resize(d_ * d0_);
  f1_.resize(d_ * d1_);
  fchi_.assign(d_, 0.0);
  for (std::size_t r = 0; r < d_; ++r) {
    const std::size_t j = selector[r];
    for (std::size_t a = 0; a < d0_; ++a)
      f0_[r * d0_ + a] = log_binom_pmf(stats.s0[j], 2 * stats.n0, pi0_axis[a]);
    for (std::size_t b = 0; b < d1_; ++b)
      f1_[r * d1_ + b] = log_binom_pmf(stats.s1[j], 2 * stats.n1, pi1_axis[b]);
  }
}

double LikelihoodTensor::at(std::size_t j, std::size_t a, std::size_t b,
                            std::size_t c) const {
  if (j >= d_ || a >= d0_ || b >= d1_ || c >= d2_)
    throw DomainError("likelihood tensor index out of range");
  return f0_[j * d0_ + a] + f1_[j * d1_ + b] + fchi_[j * d2_ + c];
}

std::vector<double> LikelihoodTensor::dense(std::size_t entry_cap) const {
  const std::size_t entries = d_ * d0_ * d1_ * d2_;
  if (entries > entry_cap)
    throw ResourceError("dense likelihood tensor would need " + std::to_string(entries) +
                        " entries, exceeding the cap of " + std::to_string(entry_cap));
  std::vector<double> out(entries);
  std::size_t idx = 0;
  for (std::size_t j = 0; j < d_; ++j)
    for (std::size_t a = 0; a < d0_; ++a)
      for (std::size_t b = 0; b < d1_; ++b)
        for (std::size_t c = 0; c < d2_; ++c)
          out[idx++] = f0_[j * d0_ + a] + f1_[j * d1_ + b] + fchi_[j * d2_ + c];
  return out;
}

LikelihoodTensor precompute_log_likelihood_tensor(const TargetSufficientStats& stats,
                                                  const AuxSummary& aux,
                                                  const Grid3& grid) {
  return LikelihoodTensor(stats, aux, grid);
}

MixingDistribution MixingDistribution::uniform(const Grid3& grid) {
  grid.validate();
  MixingDistribution g;
  g.grid = grid;
  g.log_mass.assign(grid.size(), -std::log(static_cast<double>(grid.size())));
  return g;
}

double MixingDistribution::mass(std::size_t a, std::size_t b, std::size_t c) const {
  return std::exp(log_mass[index(a, b, c)]);
}

double MixingDistribution::total_mass() const {
  KahanSum acc;
  for (double lm : log_mass) acc.add(std::exp(lm));
  return acc.value();
}

void MixingDistribution::check_normalized(double tol) const {
  if (log_mass.size() != grid.size())
    throw DomainError("mixing distribution mass array does not match its grid");
  const double total = total_mass();
  if (!(std::fabs(total - 1.0) <= tol))
    throw DomainError("mixing distribution masses sum to " + text::format_double(total) +
                      ", not 1");
}

double MixingDistribution2::mass(std::size_t a, std::size_t b) const {
  return std::exp(log_mass[index(a, b)]);
}

double MixingDistribution2::total_mass() const {
  KahanSum acc;
  for (double lm : log_mass) acc.add(std::exp(lm));
  return acc.value();
}

PosteriorEngine::PosteriorEngine(const LikelihoodTensor& tensor,
                                 const std::vector<double>& log_mass, unsigned threads)
    : tensor_(&tensor), threads_(std::max(1u, threads)) {
  if (log_mass.size() != tensor.grid_size())
    throw DomainError("mass array size " + std::to_string(log_mass.size()) +
                      " does not match grid size " + std::to_string(tensor.grid_size()));
  w_.resize(log_mass.size());
  for (std::size_t i = 0; i < log_mass.size(); ++i) w_[i] = std::exp(log_mass[i]);

  const std::size_t d = tensor.d();
  const auto shift_axis = [d](const LikelihoodTensor& t, std::size_t width,
                              const double* (LikelihoodTensor::*row)(std::size_t) const,
                              std::vector<double>& q, std::vector<double>& m) {
    q.resize(d * width);
    m.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double* f = (t.*row)(j);
      double mx = kNegInf;
      for (std::size_t i = 0; i < width; ++i) mx = std::max(mx, f[i]);
      if (mx == kNegInf) mx = 0.0;
      for (std::size_t i = 0; i < width; ++i) q[j * width + i] = std::exp(f[i] - mx);
      m[j] = mx;
    }
  };
  shift_axis(tensor, tensor.d0(), &LikelihoodTensor::log_f0_row, q0_, m0_);
  shift_axis(tensor, tensor.d1(), &LikelihoodTensor::log_f1_row, q1_, m1_);
  shift_axis(tensor, tensor.d2(), &LikelihoodTensor::log_fchi_row, q2_, m2_);
}

void PosteriorEngine::set_linear_masses(const std::vector<double>& w) {
  if (w.size() != tensor_->grid_size())
    throw DomainError("mass array size " + std::to_string(w.size()) +
                      " does not match grid size " + std::to_string(tensor_->grid_size()));
  w_ = w;
}

double PosteriorEngine::snp_pass(std::size_t j, std::vector<double>& s_buf,
                                 double* accum) const {
  const std::size_t d0 = tensor_->d0(), d1 = tensor_->d1(), d2 = tensor_->d2();
  const double* q0 = q0_.data() + j * d0;
  const double* q1 = q1_.data() + j * d1;
  const double* q2 = q2_.data() + j * d2;
  const double* w = w_.data();

  double denom = 0.0;
  for (std::size_t a = 0; a < d0; ++a) {
    double row = 0.0;
    for (std::size_t b = 0; b < d1; ++b) {
      const double* wrow = w + (a * d1 + b) * d2;
      double dot = 0.0;
      for (std::size_t c = 0; c < d2; ++c) dot += wrow[c] * q2[c];
      s_buf[a * d1 + b] = dot;
      row += q1[b] * dot;
    }
    denom += q0[a] * row;
  }

  if (!(denom >= kDenomFastMin)) return robust_snp_pass(j, accum);

  if (accum) {
    const double inv = 1.0 / denom;
    for (std::size_t a = 0; a < d0; ++a) {
      const double qa = q0[a] * inv;
      if (qa == 0.0) continue;
      for (std::size_t b = 0; b < d1; ++b) {
        const double coef = qa * q1[b];
        if (coef == 0.0) continue;
        double* arow = accum + (a * d1 + b) * d2;
        for (std::size_t c = 0; c < d2; ++c) arow[c] += coef * q2[c];
      }
    }
  }
  return std::log(denom) + m0_[j] + m1_[j] + m2_[j];
}

double PosteriorEngine::robust_snp_pass(std::size_t j, double* accum) const {
  const std::size_t d0 = tensor_->d0(), d1 = tensor_->d1(), d2 = tensor_->d2();
  const double* f0 = tensor_->log_f0_row(j);
  const double* f1 = tensor_->log_f1_row(j);
  const double* f2 = tensor_->log_fchi_row(j);
  const double s0 = m0_[j], s1 = m1_[j], s2 = m2_[j];

  double mx = kNegInf;
  for (std::size_t a = 0; a < d0; ++a)
    for (std::size_t b = 0; b < d1; ++b)
      for (std::size_t c = 0; c < d2; ++c) {
        const double wv = w_[(a * d1 + b) * d2 + c];
        if (wv <= 0.0) continue;
        const double v =
            std::log(wv) + (f0[a] - s0) + (f1[b] - s1) + (f2[c] - s2);
        mx = std::max(mx, v);
      }
  if (mx == kNegInf) return kNegInf;

  KahanSum sum;
  for (std::size_t a = 0; a < d0; ++a)
    for (std::size_t b = 0; b < d1; ++b)
      for (std::size_t c = 0; c < d2; ++c) {
        const double wv = w_[(a * d1 + b) * d2 + c];
        if (wv <= 0.0) continue;
        const double v =
            std::log(wv) + (f0[a] - s0) + (f1[b] - s1) + (f2[c] - s2);
        sum.add(std::exp(v - mx));
      }
  const double log_denom = mx + std::log(sum.value());

  if (accum) {
    for (std::size_t a = 0; a < d0; ++a)
      for (std::size_t b = 0; b < d1; ++b)
        for (std::size_t c = 0; c < d2; ++c) {
          const std::size_t idx = (a * d1 + b) * d2 + c;
          if (w_[idx] <= 0.0) continue;
          const double lq = (f0[a] - s0) + (f1[b] - s1) + (f2[c] - s2);
          accum[idx] += std::exp(lq - log_denom);
        }
  }
  return log_denom + s0 + s1 + s2;
}

double PosteriorEngine::pass(std::vector<double>* accum, bool zero_is_error) const {
  const std::size_t d = tensor_->d();
  const std::size_t grid = tensor_->grid_size();
  constexpr std::size_t kChunk = 64;
  const std::size_t nchunks = (d + kChunk - 1) / kChunk;
  const unsigned nthreads =
      static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads_), nchunks));

  std::vector<double> chunk_ll(nchunks, 0.0);
  std::vector<unsigned char> chunk_zero(nchunks, 0);
  std::vector<std::vector<double>> worker_accum;
  if (accum) worker_accum.assign(nthreads, std::vector<double>(grid, 0.0));

  auto worker = [&](unsigned wk) {
    std::vector<double> s_buf(tensor_->d0() * tensor_->d1());
    double* acc = accum ? worker_accum[wk].data() : nullptr;
    for (std::size_t ch = wk; ch < nchunks; ch += nthreads) {
      const std::size_t lo = ch * kChunk;
      const std::size_t hi = std::min(d, lo + kChunk);
      KahanSum sum;
      for (std::size_t j = lo; j < hi; ++j) {
        const double term = snp_pass(j, s_buf, acc);
        if (term == kNegInf) {
          if (zero_is_error)
            throw FitError("SNP " + std::to_string(j) +
                               " has zero likelihood at every grid point; the grid does "
                               "not cover the data",
                           j);
          chunk_zero[ch] = 1;
          continue;
        }
        sum.add(term);
      }
      chunk_ll[ch] = sum.value();
    }
  };

  if (nthreads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(nthreads);
    pool.reserve(nthreads);
    for (unsigned wk = 0; wk < nthreads; ++wk)
      pool.emplace_back([&, wk] {
        try {
          worker(wk);
        } catch (...) {
          errs[wk] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errs)
      if (e) std::rethrow_exception(e);
  }

  if (accum) {
    accum->assign(grid, 0.0);
    for (unsigned wk = 0; wk < nthreads; ++wk) {
      const double* src = worker_accum[wk].data();
      double* dst = accum->data();
      for (std::size_t i = 0; i < grid; ++i) dst[i] += src[i];
    }
  }

  bool any_zero = false;
  KahanSum total;
  for (std::size_t ch = 0; ch < nchunks; ++ch) {
    any_zero = any_zero || chunk_zero[ch];
    total.add(chunk_ll[ch]);
  }
  return any_zero ? kNegInf : total.value();
}

void PosteriorEngine::axis_marginals(std::size_t j, std::vector<double>& pa,
                                     std::vector<double>& pb) const {
  const std::size_t d0 = tensor_->d0(), d1 = tensor_->d1(), d2 = tensor_->d2();
  if (j >= tensor_->d()) throw DomainError("SNP index out of range");
  pa.assign(d0, 0.0);
  pb.assign(d1, 0.0);

  const double* q0 = q0_.data() + j * d0;
  const double* q1 = q1_.data() + j * d1;
  const double* q2 = q2_.data() + j * d2;

  std::vector<double> s(d0 * d1);
  double denom = 0.0;
  for (std::size_t a = 0; a < d0; ++a) {
    double row = 0.0;
    for (std::size_t b = 0; b < d1; ++b) {
      const double* wrow = w_.data() + (a * d1 + b) * d2;
      double dot = 0.0;
      for (std::size_t c = 0; c < d2; ++c) dot += wrow[c] * q2[c];
      s[a * d1 + b] = dot;
      row += q1[b] * dot;
    }
    denom += q0[a] * row;
  }

  if (denom >= kDenomFastMin) {
    const double inv = 1.0 / denom;
    for (std::size_t a = 0; a < d0; ++a) {
      double row = 0.0;
      for (std::size_t b = 0; b < d1; ++b) row += q1[b] * s[a * d1 + b];
      pa[a] = q0[a] * row * inv;
    }
    for (std::size_t b = 0; b < d1; ++b) {
      double col = 0.0;
      for (std::size_t a = 0; a < d0; ++a) col += q0[a] * s[a * d1 + b];
      pb[b] = q1[b] * col * inv;
    }
    return;
  }

  const double* f0 = tensor_->log_f0_row(j);
  const double* f1 = tensor_->log_f1_row(j);
  const double* f2 = tensor_->log_fchi_row(j);
  const double s0 = m0_[j], s1 = m1_[j], s2 = m2_[j];
  double mx = kNegInf;
  for (std::size_t a = 0; a < d0; ++a)
    for (std::size_t b = 0; b < d1; ++b)
      for (std::size_t c = 0; c < d2; ++c) {
        const double wv = w_[(a * d1 + b) * d2 + c];
        if (wv <= 0.0) continue;
        mx = std::max(mx, std::log(wv) + (f0[a] - s0) + (f1[b] - s1) + (f2[c] - s2));
      }
  if (mx == kNegInf)
    throw FitError("SNP " + std::to_string(j) +
                       " has zero likelihood at every grid point; the grid does not "
                       "cover the data",
                   j);
  double z = 0.0;
  for (std::size_t a = 0; a < d0; ++a)
    for (std::size_t b = 0; b < d1; ++b)
      for (std::size_t c = 0; c < d2; ++c) {
        const double wv = w_[(a * d1 + b) * d2 + c];
        if (wv <= 0.0) continue;
        const double e =
            std::exp(std::log(wv) + (f0[a] - s0) + (f1[b] - s1) + (f2[c] - s2) - mx);
        pa[a] += e;
        pb[b] += e;
        z += e;
      }
  for (double& v : pa) v /= z;
  for (double& v : pb) v /= z;
}

namespace {

// One multiplicative EM update in place: w <- normalize(w .* k / d), with a
// drift check on the pre-normalization total and tiny masses flushed to zero.
void apply_em_update(std::vector<double>& w, const std::vector<double>& k, std::size_t d) {
  KahanSum total;
  const double invd = 1.0 / static_cast<double>(d);
  for (std::size_t i = 0; i < w.size(); ++i) {
    double nw = w[i] > 0.0 ? w[i] * k[i] * invd : 0.0;
    if (nw < kMassFloor) nw = 0.0;
    w[i] = nw;
    total.add(nw);
  }
  const double sum = total.value();
  if (!(std::fabs(sum - 1.0) < 1e-12))
    throw FitError("EM mass drift " + text::format_double(sum - 1.0) +
                   " exceeds 1e-12 before renormalization");
  const double inv = 1.0 / sum;
  for (double& v : w) v *= inv;
}

std::vector<double> to_log(const std::vector<double>& w) {
  std::vector<double> lm(w.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    lm[i] = w[i] > 0.0 ? std::log(w[i]) : kNegInf;
  return lm;
}

std::pair<std::vector<double>, FitReport> run_em(const LikelihoodTensor& tensor,
                                                 const FitOptions& opts) {
  if (!(opts.tol > 0.0)) throw DomainError("tolerance must be positive");
  if (opts.max_iter < 1) throw DomainError("max_iter must be at least 1");

  const std::size_t grid = tensor.grid_size();
  const std::size_t d = tensor.d();
  std::vector<double> w(grid, 1.0 / static_cast<double>(grid));
  PosteriorEngine engine(tensor, to_log(w), opts.threads);
  engine.set_linear_masses(w);

  std::vector<double> k(grid);
  FitReport report;
  double ll_prev = engine.pass(&k, true);
  report.log_likelihood_trace.push_back(ll_prev);

  while (true) {
    apply_em_update(w, k, d);
    ++report.iterations;
    engine.set_linear_masses(w);
    const double ll = engine.pass(&k, true);
    report.log_likelihood_trace.push_back(ll);
    if ((ll - ll_prev) / static_cast<double>(d) < opts.tol) {
      report.converged = true;
      break;
    }
    if (report.iterations >= opts.max_iter) {
      report.converged = false;
      break;
    }
    ll_prev = ll;
  }
  report.final_log_likelihood = report.log_likelihood_trace.back();
  return {std::move(w), std::move(report)};
}

}  // namespace

MixingDistribution em_step(const MixingDistribution& current,
                           const LikelihoodTensor& tensor) {
  current.grid.validate();
  if (current.grid.d0() != tensor.d0() || current.grid.d1() != tensor.d1() ||
      current.grid.d2() != tensor.d2())
    throw DomainError("mixing distribution grid does not match the likelihood tensor");
  current.check_normalized(1e-8);

  PosteriorEngine engine(tensor, current.log_mass, 1);
  std::vector<double> k(tensor.grid_size());
  engine.pass(&k, true);

  std::vector<double> w(current.log_mass.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(current.log_mass[i]);
  apply_em_update(w, k, tensor.d());

  MixingDistribution next;
  next.grid = current.grid;
  next.log_mass = to_log(w);
  return next;
}

double marginal_log_likelihood(const MixingDistribution& g,
                               const LikelihoodTensor& tensor) {
  if (g.grid.d0() != tensor.d0() || g.grid.d1() != tensor.d1() ||
      g.grid.d2() != tensor.d2())
    throw DomainError("mixing distribution grid does not match the likelihood tensor");
  PosteriorEngine engine(tensor, g.log_mass, 1);
  return engine.pass(nullptr, false);
}

std::pair<MixingDistribution, FitReport> fit_npmle(const TargetSufficientStats& stats,
                                                   const AuxSummary& aux,
                                                   const Grid3& grid,
                                                   const FitOptions& opts) {
  LikelihoodTensor tensor(stats, aux, grid);
  auto [w, report] = run_em(tensor, opts);
  MixingDistribution g;
  g.grid = grid;
  g.log_mass = to_log(w);
  return {std::move(g), std::move(report)};
}

std::pair<MixingDistribution2, FitReport> fit_npmle_bivariate(
    const TargetSufficientStats& stats, const std::vector<std::size_t>& selector,
    const std::vector<double>& pi0_axis, const std::vector<double>& pi1_axis,
    const FitOptions& opts) {
  LikelihoodTensor tensor(stats, selector, pi0_axis, pi1_axis);
  auto [w, report] = run_em(tensor, opts);
  MixingDistribution2 g;
  g.pi0_points = pi0_axis;
  g.pi1_points = pi1_axis;
  g.log_mass = to_log(w);
  return {std::move(g), std::move(report)};
}

namespace {

void write_meta(const std::filesystem::path& meta_path, const char* kind,
                const std::vector<std::pair<std::string, std::string>>& axes,
                const FitReport* report) {
  std::ofstream ofs = text::open_out(meta_path);
  ofs << "kind=" << kind << "\n";
  for (const auto& [k, v] : axes) ofs << k << "=" << v << "\n";
  if (report) {
    ofs << "iterations=" << report->iterations << "\n";
    ofs << "converged=" << (report->converged ? 1 : 0) << "\n";
    ofs << "final_log_likelihood=" << text::format_double(report->final_log_likelihood)
        << "\n";
  }
  if (!ofs) throw IoError("failed writing '" + meta_path.string() + "'");
}

std::size_t locate_on_axis(const std::vector<double>& pts, double v, const char* name) {
  std::size_t idx = 0;
  if (pts.size() > 1) {
    const double step = (pts.back() - pts.front()) / static_cast<double>(pts.size() - 1);
    const double raw = (v - pts.front()) / step;
    const double rounded = std::max(0.0, std::min(raw, static_cast<double>(pts.size() - 1)));
    idx = static_cast<std::size_t>(std::llround(rounded));
  }
  if (std::fabs(pts[idx] - v) > 1e-9 * std::max(1.0, std::fabs(v)))
    throw IoError(std::string("support point ") + text::format_double(v) +
                  " is not on the stored " + name + " axis");
  return idx;
}

}  // namespace

void save_mixing_distribution(const std::filesystem::path& tsv_path,
                              const std::filesystem::path& meta_path,
                              const MixingDistribution& g, const FitReport* report) {
  g.grid.validate();
  if (g.log_mass.size() != g.grid.size())
    throw DomainError("mixing distribution mass array does not match its grid");
  std::ofstream ofs = text::open_out(tsv_path);
  ofs << "pi0\tpi1\tlambda\tmass\n";
  for (std::size_t a = 0; a < g.grid.d0(); ++a)
    for (std::size_t b = 0; b < g.grid.d1(); ++b)
      for (std::size_t c = 0; c < g.grid.d2(); ++c) {
        const double m = g.mass(a, b, c);
        if (m <= 0.0) continue;
        ofs << text::format_double(g.grid.pi0_points[a]) << '\t'
            << text::format_double(g.grid.pi1_points[b]) << '\t'
            << text::format_double(g.grid.lambda_points[c]) << '\t'
            << text::format_double(m) << '\n';
      }
  if (!ofs) throw IoError("failed writing '" + tsv_path.string() + "'");

  write_meta(meta_path, "trivariate",
             {{"d0", std::to_string(g.grid.d0())},
              {"d1", std::to_string(g.grid.d1())},
              {"d2", std::to_string(g.grid.d2())},
              {"pi0_min", text::format_double(g.grid.pi0_points.front())},
              {"pi0_max", text::format_double(g.grid.pi0_points.back())},
              {"pi1_min", text::format_double(g.grid.pi1_points.front())},
              {"pi1_max", text::format_double(g.grid.pi1_points.back())},
              {"lambda_min", text::format_double(g.grid.lambda_points.front())},
              {"lambda_max", text::format_double(g.grid.lambda_points.back())}},
             report);
}

MixingDistribution load_mixing_distribution(const std::filesystem::path& tsv_path,
                                            const std::filesystem::path& meta_path) {
  const auto kv = text::read_kv_file(meta_path);
  if (text::require_key(kv, "kind", meta_path) != "trivariate")
    throw IoError("'" + meta_path.string() + "' does not describe a trivariate prior");
  const auto axis_of = [&](const char* nkey, const char* lokey, const char* hikey) {
    const std::size_t n =
        static_cast<std::size_t>(text::parse_int(text::require_key(kv, nkey, meta_path), nkey));
    const double lo = text::parse_double(text::require_key(kv, lokey, meta_path), lokey);
    const double hi = text::parse_double(text::require_key(kv, hikey, meta_path), hikey);
    return equally_spaced(lo, hi, n);
  };
  MixingDistribution g;
  g.grid.pi0_points = axis_of("d0", "pi0_min", "pi0_max");
  g.grid.pi1_points = axis_of("d1", "pi1_min", "pi1_max");
  g.grid.lambda_points = axis_of("d2", "lambda_min", "lambda_max");
  g.grid.validate();

  std::vector<double> w(g.grid.size(), 0.0);
  std::ifstream ifs = text::open_in(tsv_path);
  std::string line;
  if (!std::getline(ifs, line) || text::strip_cr(line) != "pi0\tpi1\tlambda\tmass")
    throw IoError("'" + tsv_path.string() + "' lacks the expected mass table header");
  std::size_t lineno = 1;
  while (std::getline(ifs, line)) {
    ++lineno;
    line = text::strip_cr(line);
    if (line.empty()) continue;
    const auto cells = text::split_tabs(line);
    if (cells.size() != 4)
      throw IoError("'" + tsv_path.string() + "' line " + std::to_string(lineno) +
                    ": expected 4 columns");
    const std::size_t a =
        locate_on_axis(g.grid.pi0_points, text::parse_double(cells[0], "pi0"), "pi0");
    const std::size_t b =
        locate_on_axis(g.grid.pi1_points, text::parse_double(cells[1], "pi1"), "pi1");
    const std::size_t c = locate_on_axis(g.grid.lambda_points,
                                         text::parse_double(cells[2], "lambda"), "lambda");
    const std::size_t idx = (a * g.grid.d1() + b) * g.grid.d2() + c;
    if (w[idx] != 0.0)
      throw IoError("'" + tsv_path.string() + "' line " + std::to_string(lineno) +
                    ": duplicate support point");
    w[idx] = text::parse_double(cells[3], "mass");
    if (!(w[idx] > 0.0))
      throw IoError("'" + tsv_path.string() + "' line " + std::to_string(lineno) +
                    ": mass must be positive");
  }
  KahanSum total;
  for (double v : w) total.add(v);
  if (std::fabs(total.value() - 1.0) > 1e-8)
    throw IoError("'" + tsv_path.string() + "' masses sum to " +
                  text::format_double(total.value()) + ", not 1");
  g.log_mass = to_log(w);
  return g;
}

void save_mixing_distribution2(const std::filesystem::path& tsv_path,
                               const std::filesystem::path& meta_path,
                               const MixingDistribution2& g, const FitReport* report) {
  if (g.log_mass.size() != g.pi0_points.size() * g.pi1_points.size())
    throw DomainError("mixing distribution mass array does not match its axes");
  std::ofstream ofs = text::open_out(tsv_path);
  ofs << "pi0\tpi1\tmass\n";
  for (std::size_t a = 0; a < g.pi0_points.size(); ++a)
    for (std::size_t b = 0; b < g.pi1_points.size(); ++b) {
      const double m = g.mass(a, b);
      if (m <= 0.0) continue;
      ofs << text::format_double(g.pi0_points[a]) << '\t'
          << text::format_double(g.pi1_points[b]) << '\t' << text::format_double(m)
          << '\n';
    }
  if (!ofs) throw IoError("failed writing '" + tsv_path.string() + "'");

  write_meta(meta_path, "bivariate",
             {{"d0", std::to_string(g.pi0_points.size())},
              {"d1", std::to_string(g.pi1_points.size())},
              {"pi0_min", text::format_double(g.pi0_points.front())},
              {"pi0_max", text::format_double(g.pi0_points.back())},
              {"pi1_min", text::format_double(g.pi1_points.front())},
              {"pi1_max", text::format_double(g.pi1_points.back())}},
             report);
}

MixingDistribution2 load_mixing_distribution2(const std::filesystem::path& tsv_path,
                                              const std::filesystem::path& meta_path) {
  const auto kv = text::read_kv_file(meta_path);
  if (text::require_key(kv, "kind", meta_path) != "bivariate")
    throw IoError("'" + meta_path.string() + "' does not describe a bivariate prior");
  const auto axis_of = [&](const char* nkey, const char* lokey, const char* hikey) {
    const std::size_t n =
        static_cast<std::size_t>(text::parse_int(text::require_key(kv, nkey, meta_path), nkey));
    const double lo = text::parse_double(text::require_key(kv, lokey, meta_path), lokey);
    const double hi = text::parse_double(text::require_key(kv, hikey, meta_path), hikey);
    return equally_spaced(lo, hi, n);
  };
  MixingDistribution2 g;
  g.pi0_points = axis_of("d0", "pi0_min", "pi0_max");
  g.pi1_points = axis_of("d1", "pi1_min", "pi1_max");

  std::vector<double> w(g.pi0_points.size() * g.pi1_points.size(), 0.0);
  std::ifstream ifs = text::open_in(tsv_path);
  std::string line;
  if (!std::getline(ifs, line) || text::strip_cr(line) != "pi0\tpi1\tmass")
    throw IoError("'" + tsv_path.string() + "' lacks the expected mass table header");
  std::size_t lineno = 1;
  while (std::getline(ifs, line)) {
    ++lineno;
    line = text::strip_cr(line);
    if (line.empty()) continue;
    const auto cells = text::split_tabs(line);
    if (cells.size() != 3)
      throw IoError("'" + tsv_path.string() + "' line " + std::to_string(lineno) +
                    ": expected 3 columns");
    const std::size_t a =
        locate_on_axis(g.pi0_points, text::parse_double(cells[0], "pi0"), "pi0");
    const std::size_t b =
        locate_on_axis(g.pi1_points, text::parse_double(cells[1], "pi1"), "pi1");
    const std::size_t idx = a * g.pi1_points.size() + b;
    if (w[idx] != 0.0)
      throw IoError("'" + tsv_path.string() + "' line " + std::to_string(lineno) +
                    ": duplicate support point");
    w[idx] = text::parse_double(cells[2], "mass");
    if (!(w[idx] > 0.0))
      throw IoError("'" + tsv_path.string() + "' line " + std::to_string(lineno) +
                    ": mass must be positive");
  }
  KahanSum total;
  for (double v : w) total.add(v);
  if (std::fabs(total.value() - 1.0) > 1e-8)
    throw IoError("'" + tsv_path.string() + "' masses sum to " +
                  text::format_double(total.value()) + ", not 1");
  g.log_mass = to_log(w);
  return g;
}

}  // namespace nebula
