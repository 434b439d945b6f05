#include "datalair/stats.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/distributions/chi_squared.hpp>

namespace datalair {

double chi2_sf(double stat, double df) {
  if (df <= 0) return 1.0;
  boost::math::chi_squared dist(df);
  return boost::math::cdf(boost::math::complement(dist, stat));
}

namespace {

// Merge adjacent cells until each merged bin's expected count is large
// enough for the chi-square approximation to hold.
std::vector<double> merge_expected(std::span<const std::uint64_t> counts, double total,
                                   double min_expected, std::vector<std::uint64_t>& merged) {
  const double per_cell = total / static_cast<double>(counts.size());
  std::vector<double> expected;
  double acc_e = 0;
  std::uint64_t acc_c = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    acc_e += per_cell;
    acc_c += counts[i];
    if (acc_e >= min_expected) {
      expected.push_back(acc_e);
      merged.push_back(acc_c);
      acc_e = 0;
      acc_c = 0;
    }
  }
  if (acc_e > 0) {
    if (!expected.empty()) {
      expected.back() += acc_e;
      merged.back() += acc_c;
    } else {
      expected.push_back(acc_e);
      merged.push_back(acc_c);
    }
  }
  return expected;
}

}  // namespace

Chi2Result chi2_uniform(std::span<const std::uint64_t> counts, double min_expected) {
  double total = 0;
  for (auto c : counts) total += static_cast<double>(c);
  if (counts.size() < 2 || total <= 0)
    throw DlError(DlError::Kind::usage, "chi2_uniform: need >= 2 cells and samples");

  std::vector<std::uint64_t> merged;
  auto expected = merge_expected(counts, total, min_expected, merged);
  if (merged.size() < 2)
    throw DlError(DlError::Kind::usage, "chi2_uniform: insufficient samples for binning");

  double stat = 0;
  for (std::size_t i = 0; i < merged.size(); ++i) {
    double d = static_cast<double>(merged[i]) - expected[i];
    stat += d * d / expected[i];
  }
  double df = static_cast<double>(merged.size() - 1);
  return {stat, df, chi2_sf(stat, df), merged.size()};
}

Chi2Result chi2_uniform_samples(std::span<const std::uint64_t> samples, std::uint64_t domain,
                                double min_expected) {
  std::vector<std::uint64_t> counts(domain, 0);
  for (auto s : samples) {
    if (s >= domain) throw DlError(DlError::Kind::usage, "sample outside domain");
    ++counts[s];
  }
  return chi2_uniform(counts, min_expected);
}

Chi2Result chi2_two_sample(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                           double min_expected) {
  if (a.size() != b.size() || a.size() < 2)
    throw DlError(DlError::Kind::usage, "chi2_two_sample: mismatched cells");
  double na = 0, nb = 0;
  for (auto c : a) na += static_cast<double>(c);
  for (auto c : b) nb += static_cast<double>(c);
  if (na <= 0 || nb <= 0) throw DlError(DlError::Kind::usage, "chi2_two_sample: empty sample");

  // Merge cells by pooled expectation, then standard 2xC homogeneity test.
  std::vector<std::uint64_t> ma, mb;
  double acc_pool = 0;
  std::uint64_t acc_a = 0, acc_b = 0;
  const double pool_total = na + nb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc_a += a[i];
    acc_b += b[i];
    acc_pool = static_cast<double>(acc_a + acc_b);
    double exp_a = acc_pool * na / pool_total;
    double exp_b = acc_pool * nb / pool_total;
    if (exp_a >= min_expected && exp_b >= min_expected) {
      ma.push_back(acc_a);
      mb.push_back(acc_b);
      acc_a = acc_b = 0;
    }
  }
  if (acc_a + acc_b > 0 && !ma.empty()) {
    ma.back() += acc_a;
    mb.back() += acc_b;
  }
  if (ma.size() < 2) throw DlError(DlError::Kind::usage, "chi2_two_sample: too few samples");

  double stat = 0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    double pooled = static_cast<double>(ma[i] + mb[i]);
    double ea = pooled * na / pool_total;
    double eb = pooled * nb / pool_total;
    double da = static_cast<double>(ma[i]) - ea;
    double db = static_cast<double>(mb[i]) - eb;
    stat += da * da / ea + db * db / eb;
  }
  double df = static_cast<double>(ma.size() - 1);
  return {stat, df, chi2_sf(stat, df), ma.size()};
}

BinomialCi wilson_ci(std::uint64_t successes, std::uint64_t trials, double z) {
  if (trials == 0) throw DlError(DlError::Kind::usage, "wilson_ci: zero trials");
  double n = static_cast<double>(trials);
  double p = static_cast<double>(successes) / n;
  double z2 = z * z;
  double denom = 1 + z2 / n;
  double center = (p + z2 / (2 * n)) / denom;
  double half = z * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom;
  return {p, center - half, center + half};
}

ZipfSampler::ZipfSampler(std::uint64_t n, double s) {
  if (n == 0) throw DlError(DlError::Kind::usage, "zipf: empty domain");
  cdf_.resize(n);
  double acc = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    acc += 1.0 / std::pow(static_cast<double>(i + 1), s);
    cdf_[i] = acc;
  }
  for (auto& v : cdf_) v /= acc;
}

std::uint64_t ZipfSampler::sample(double u01) const {
  auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u01);
  if (it == cdf_.end()) --it;
  return static_cast<std::uint64_t>(it - cdf_.begin());
}

}  // namespace datalair
