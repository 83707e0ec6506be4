#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "scenediff/core.hpp"

namespace scenediff {

/// Shared product-quantization codebook: a feature of dimension d is split
/// into `codes_per_feature` contiguous chunks of `chunk_dim()` values, and each
/// chunk is replaced by the index of its nearest centroid.
class Codebook {
 public:
  Codebook() = default;

  /// `entries` is row-major, size() * chunk_dim values.
  Codebook(std::vector<double> entries, int size, int codes_per_feature, int feature_dim)
      : entries_(std::move(entries)), size_(size), codes_per_feature_(codes_per_feature),
        feature_dim_(feature_dim) {
    require(size_ >= 1, "Codebook: size must be >= 1");
    require(codes_per_feature_ >= 1 && feature_dim_ % codes_per_feature_ == 0,
            "Codebook: feature_dim must be divisible by codes_per_feature");
    require(entries_.size() == static_cast<std::size_t>(size_) * chunk_dim(),
            "Codebook: entry table has wrong shape");
    for (double v : entries_) require(std::isfinite(v), "Codebook: entries must be finite");
  }

  int size() const noexcept { return size_; }
  int codes_per_feature() const noexcept { return codes_per_feature_; }
  int feature_dim() const noexcept { return feature_dim_; }
  int chunk_dim() const noexcept { return feature_dim_ / codes_per_feature_; }
  const std::vector<double>& entries() const noexcept { return entries_; }

  std::span<const double> centroid(int k) const {
    return {entries_.data() + static_cast<std::size_t>(k) * chunk_dim(),
            static_cast<std::size_t>(chunk_dim())};
  }

  /// Nearest centroid index for one chunk; exact ties go to the lowest index.
  int nearest(std::span<const double> chunk) const {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < size_; ++k) {
      const double d = squared_distance(chunk, centroid(k));
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    return best;
  }

  std::vector<int> encode(std::span<const double> feature) const {
    require(static_cast<int>(feature.size()) == feature_dim_, "encode: feature dimension mismatch");
    std::vector<int> codes(codes_per_feature_);
    for (int m = 0; m < codes_per_feature_; ++m) codes[m] = nearest(feature.subspan(m * chunk_dim(), chunk_dim()));
    return codes;
  }

  std::vector<double> decode(std::span<const int> codes) const {
    require(static_cast<int>(codes.size()) == codes_per_feature_, "decode: wrong number of codes");
    std::vector<double> out;
    out.reserve(feature_dim_);
    for (int c : codes) {
      require(c >= 0 && c < size_, "decode: code out of range");
      auto row = centroid(c);
      out.insert(out.end(), row.begin(), row.end());
    }
    return out;
  }

  /// Sum over chunks of the squared distance to the assigned centroid.
  double reconstruction_error(std::span<const double> feature) const {
    const auto recon = decode(encode(feature));
    return squared_distance(feature, recon);
  }

  static double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = a[i] - b[i];
      s += d * d;
    }
    return s;
  }

  bool operator==(const Codebook&) const = default;

 private:
  std::vector<double> entries_;
  int size_ = 0;
  int codes_per_feature_ = 1;
  int feature_dim_ = 0;
};

struct KMeansOptions {
  int iterations = 50;
};

/// Fits a shared codebook by k-means over every chunk of every feature.
/// Initialization is k-means++ driven by `seed`; iteration stops early when
/// no assignment changes.
inline Codebook fit_codebook(std::span<const std::vector<double>> features, int size, int codes_per_feature,
                             std::uint64_t seed, KMeansOptions opts = {}) {
  require(!features.empty(), "fit_codebook: no features");
  require(size >= 1, "fit_codebook: codebook size must be >= 1");
  require(codes_per_feature >= 1, "fit_codebook: codes_per_feature must be >= 1");
  const int dim = static_cast<int>(features.front().size());
  require(dim > 0 && dim % codes_per_feature == 0, "fit_codebook: feature dim not divisible by codes_per_feature");
  for (const auto& f : features) require(static_cast<int>(f.size()) == dim, "fit_codebook: inconsistent feature dimension");

  const int cdim = dim / codes_per_feature;
  const std::size_t npts = features.size() * codes_per_feature;
  auto point = [&](std::size_t i) {
    return std::span<const double>(features[i / codes_per_feature]).subspan((i % codes_per_feature) * cdim, cdim);
  };

  Rng rng(seed);
  std::vector<double> centroids(static_cast<std::size_t>(size) * cdim);
  auto set_centroid = [&](int k, std::span<const double> p) { std::copy(p.begin(), p.end(), centroids.begin() + k * cdim); };
  auto centroid = [&](int k) { return std::span<const double>(centroids).subspan(k * cdim, cdim); };

  // k-means++ seeding
  set_centroid(0, point(rng.index(npts)));
  std::vector<double> dist2(npts);
  for (std::size_t i = 0; i < npts; ++i) dist2[i] = Codebook::squared_distance(point(i), centroid(0));
  for (int k = 1; k < size; ++k) {
    double total = 0.0;
    for (double d : dist2) total += d;
    const std::size_t pick = total > 0.0 ? rng.categorical(dist2) : rng.index(npts);
    set_centroid(k, point(pick));
    for (std::size_t i = 0; i < npts; ++i)
      dist2[i] = std::min(dist2[i], Codebook::squared_distance(point(i), centroid(k)));
  }

  std::vector<int> assign(npts, -1);
  std::vector<double> sums(centroids.size());
  std::vector<std::size_t> counts(size);
  for (int it = 0; it < opts.iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < npts; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int k = 0; k < size; ++k) {
        const double d = Codebook::squared_distance(point(i), centroid(k));
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < npts; ++i) {
      auto p = point(i);
      for (int c = 0; c < cdim; ++c) sums[assign[i] * cdim + c] += p[c];
      ++counts[assign[i]];
    }
    // empty clusters keep their previous centroid
    for (int k = 0; k < size; ++k)
      if (counts[k] > 0)
        for (int c = 0; c < cdim; ++c) centroids[k * cdim + c] = sums[k * cdim + c] / static_cast<double>(counts[k]);
  }
  return Codebook(std::move(centroids), size, codes_per_feature, dim);
}

}  // namespace scenediff
