#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "datalair/common.hpp"

namespace datalair {

struct Chi2Result {
  double stat = 0.0;
  double df = 0.0;
  double p = 1.0;
  std::size_t bins = 0;
};

// Goodness-of-fit against the uniform distribution over `counts.size()`
// cells. Adjacent cells are merged until every expected count reaches
// `min_expected` (throws if the sample is too small for even two bins).
Chi2Result chi2_uniform(std::span<const std::uint64_t> counts, double min_expected = 5.0);

// Convenience: bins raw samples over [0, domain) first.
Chi2Result chi2_uniform_samples(std::span<const std::uint64_t> samples, std::uint64_t domain,
                                double min_expected = 5.0);

// Two-sample homogeneity test on parallel count vectors.
Chi2Result chi2_two_sample(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                           double min_expected = 5.0);

double chi2_sf(double stat, double df);  // upper tail probability

struct BinomialCi {
  double rate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return lo <= v && v <= hi; }
};

// Wilson score interval (z = 1.96 for 95%).
BinomialCi wilson_ci(std::uint64_t successes, std::uint64_t trials, double z = 1.96);

// Zipf(s) sampler over [0, n) with precomputed CDF.
class ZipfSampler {
 public:
  ZipfSampler(std::uint64_t n, double s);
  std::uint64_t sample(double u01) const;  // u01 in [0,1)
  std::uint64_t domain() const { return cdf_.size(); }

 private:
  std::vector<double> cdf_;
};

}  // namespace datalair
