#pragma once

#include <cstdint>
#include <vector>

#include "ivnac/image.hpp"

namespace ivnac::metrics {

inline constexpr double kPsnrCapDb = 99.0;

// 20*log10(max(ref)/rmse), capped at 99 dB (identical images hit the cap).
double psnr(const Image& ref, const Image& pred);

// Mean local structural similarity over 11x11 Gaussian windows (sigma 1.5),
// c1=(0.01 L)^2, c2=(0.03 L)^2 with L shared between both images.
double ssim(const Image& ref, const Image& pred);
double ssim_with_range(const Image& a, const Image& b, double range);

enum class RmseNorm { range, mean };

// Root-mean-square error as a percentage of the reference dynamic range
// (or reference mean with RmseNorm::mean).
double rmse_pct(const Image& ref, const Image& pred, RmseNorm norm = RmseNorm::range);

// Boolean mask: reference above `frac` of its maximum, largest connected
// component (8-connectivity).
struct BrainMask {
  std::int64_t h = 0, w = 0;
  std::vector<std::uint8_t> m;

  bool at(std::int64_t y, std::int64_t x) const { return m[size_t(y * w + x)] != 0; }
  std::int64_t count() const;
};

BrainMask brain_mask(const Image& ref, double frac = 0.05);

struct MaeResult {
  double pct = 0;              // mean |pred-ref|/ref over the mask, in percent
  std::int64_t used = 0;       // pixels entering the mean
  std::int64_t excluded = 0;   // masked pixels skipped for near-zero reference
};

MaeResult mae_pct(const Image& ref, const Image& pred, const BrainMask& mask);

struct Aggregate {
  double mean = 0;
  double stddev = 0;  // population
};

Aggregate aggregate(const std::vector<double>& values);

// Per-image evaluation row and the report the eval command emits.
struct ImageMetrics {
  std::int64_t id = 0;
  double psnr_db = 0, ssim = 0, rmse_pct = 0, mae_pct = 0;
};

struct MetricsReport {
  std::vector<ImageMetrics> per_image;
  Aggregate psnr_db, ssim, rmse_pct, mae_pct;

  void finalize();  // recomputes the aggregates from per-image rows
};

}  // namespace ivnac::metrics
