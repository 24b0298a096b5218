#include "ivnac/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace ivnac::metrics {

namespace {

void require_same(const Image& a, const Image& b, const char* op) {
  if (a.h != b.h || a.w != b.w)
    throw ContractError(std::string(op) + ": image sizes differ");
  if (a.pixels() == 0) throw ContractError(std::string(op) + ": empty image");
}

}  // namespace

double psnr(const Image& ref, const Image& pred) {
  require_same(ref, pred, "psnr");
  const double peak = ref.max();
  if (peak <= 0) throw ContractError("psnr: reference peak must be positive");
  double se = 0;
  for (size_t i = 0; i < ref.v.size(); i++) {
    const double d = double(ref.v[i]) - double(pred.v[i]);
    se += d * d;
  }
  const double rmse = std::sqrt(se / double(ref.pixels()));
  if (rmse == 0) return kPsnrCapDb;
  const double db = 20.0 * std::log10(peak / rmse);
  return std::min(db, kPsnrCapDb);
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

const std::vector<double>& gaussian_kernel() {
  static const std::vector<double> k = [] {
    std::vector<double> v(kSsimWindow);
    const double c = (kSsimWindow - 1) / 2.0;
    double sum = 0;
    for (int i = 0; i < kSsimWindow; i++) {
      v[size_t(i)] = std::exp(-0.5 * (i - c) * (i - c) / (kSsimSigma * kSsimSigma));
      sum += v[size_t(i)];
    }
    for (auto& x : v) x /= sum;
    return v;
  }();
  return k;
}

// separable valid-mode Gaussian filter
std::vector<double> gauss_valid(const std::vector<double>& img, std::int64_t h,
                                std::int64_t w) {
  const auto& k = gaussian_kernel();
  const std::int64_t oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;
  std::vector<double> rows(size_t(h * ow));
#pragma omp parallel for schedule(static)
  for (std::int64_t y = 0; y < h; y++)
    for (std::int64_t x = 0; x < ow; x++) {
      double acc = 0;
      for (int i = 0; i < kSsimWindow; i++) acc += k[size_t(i)] * img[size_t(y * w + x + i)];
      rows[size_t(y * ow + x)] = acc;
    }
  std::vector<double> out(size_t(oh * ow));
#pragma omp parallel for schedule(static)
  for (std::int64_t y = 0; y < oh; y++)
    for (std::int64_t x = 0; x < ow; x++) {
      double acc = 0;
      for (int i = 0; i < kSsimWindow; i++) acc += k[size_t(i)] * rows[size_t((y + i) * ow + x)];
      out[size_t(y * ow + x)] = acc;
    }
  return out;
}

}  // namespace

double ssim_with_range(const Image& a, const Image& b, double range) {
  require_same(a, b, "ssim");
  if (!(range > 0)) throw ContractError("ssim: dynamic range must be positive");
  if (a.h < kSsimWindow || a.w < kSsimWindow)
    throw ContractError("ssim: image smaller than the 11x11 window");
  const std::int64_t h = a.h, w = a.w;
  std::vector<double> da(a.v.begin(), a.v.end()), db(b.v.begin(), b.v.end());
  std::vector<double> aa(da.size()), bb(db.size()), ab(da.size());
  for (size_t i = 0; i < da.size(); i++) {
    aa[i] = da[i] * da[i];
    bb[i] = db[i] * db[i];
    ab[i] = da[i] * db[i];
  }
  const auto mu_a = gauss_valid(da, h, w);
  const auto mu_b = gauss_valid(db, h, w);
  const auto m_aa = gauss_valid(aa, h, w);
  const auto m_bb = gauss_valid(bb, h, w);
  const auto m_ab = gauss_valid(ab, h, w);
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);
  double acc = 0;
  for (size_t i = 0; i < mu_a.size(); i++) {
    const double va = m_aa[i] - mu_a[i] * mu_a[i];
    const double vb = m_bb[i] - mu_b[i] * mu_b[i];
    const double cov = m_ab[i] - mu_a[i] * mu_b[i];
    const double num = (2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2);
    const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
    acc += num / den;
  }
  return acc / double(mu_a.size());
}

double ssim(const Image& ref, const Image& pred) {
  require_same(ref, pred, "ssim");
  const double range = double(ref.max()) - double(ref.min());
  if (!(range > 0)) throw ContractError("ssim: reference dynamic range is zero");
  return ssim_with_range(ref, pred, range);
}

double rmse_pct(const Image& ref, const Image& pred, RmseNorm norm) {
  require_same(ref, pred, "rmse_pct");
  double se = 0;
  for (size_t i = 0; i < ref.v.size(); i++) {
    const double d = double(ref.v[i]) - double(pred.v[i]);
    se += d * d;
  }
  const double rmse = std::sqrt(se / double(ref.pixels()));
  double denom;
  if (norm == RmseNorm::range) {
    denom = double(ref.max()) - double(ref.min());
    if (!(denom > 0)) throw ContractError("rmse_pct: reference dynamic range is zero");
  } else {
    double sum = 0;
    for (float x : ref.v) sum += x;
    denom = sum / double(ref.pixels());
    if (!(denom > 0)) throw ContractError("rmse_pct: reference mean is not positive");
  }
  return 100.0 * rmse / denom;
}

std::int64_t BrainMask::count() const {
  std::int64_t n = 0;
  for (auto x : m) n += x != 0;
  return n;
}

BrainMask brain_mask(const Image& ref, double frac) {
  if (ref.pixels() == 0) throw ContractError("brain_mask: empty image");
  const double thr = frac * double(ref.max());
  const std::int64_t h = ref.h, w = ref.w;
  std::vector<std::uint8_t> above(size_t(h * w));
  for (std::int64_t i = 0; i < h * w; i++) above[size_t(i)] = ref.v[size_t(i)] > thr;

  // largest 8-connected component
  std::vector<std::int32_t> label(size_t(h * w), -1);
  std::int32_t best_label = -1;
  std::int64_t best_size = 0;
  std::int32_t next = 0;
  std::deque<std::int64_t> queue;
  for (std::int64_t start = 0; start < h * w; start++) {
    if (!above[size_t(start)] || label[size_t(start)] >= 0) continue;
    std::int64_t size = 0;
    label[size_t(start)] = next;
    queue.push_back(start);
    while (!queue.empty()) {
      const std::int64_t p = queue.front();
      queue.pop_front();
      size++;
      const std::int64_t y = p / w, x = p % w;
      for (std::int64_t dy = -1; dy <= 1; dy++)
        for (std::int64_t dx = -1; dx <= 1; dx++) {
          if (dy == 0 && dx == 0) continue;
          const std::int64_t ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const std::int64_t q = ny * w + nx;
          if (above[size_t(q)] && label[size_t(q)] < 0) {
            label[size_t(q)] = next;
            queue.push_back(q);
          }
        }
    }
    if (size > best_size) {
      best_size = size;
      best_label = next;
    }
    next++;
  }
  if (best_size == 0) throw ContractError("brain_mask: mask is empty");

  BrainMask mask;
  mask.h = h;
  mask.w = w;
  mask.m.resize(size_t(h * w), 0);
  for (std::int64_t i = 0; i < h * w; i++)
    mask.m[size_t(i)] = label[size_t(i)] == best_label;
  return mask;
}

MaeResult mae_pct(const Image& ref, const Image& pred, const BrainMask& mask) {
  require_same(ref, pred, "mae_pct");
  if (mask.h != ref.h || mask.w != ref.w)
    throw ContractError("mae_pct: mask size differs from images");
  const double floor = 1e-6 * double(ref.max());
  MaeResult r;
  double acc = 0;
  for (std::int64_t i = 0; i < ref.pixels(); i++) {
    if (!mask.m[size_t(i)]) continue;
    const double rv = ref.v[size_t(i)];
    if (rv <= floor) {
      r.excluded++;
      continue;
    }
    acc += std::abs(double(pred.v[size_t(i)]) - rv) / rv;
    r.used++;
  }
  if (r.used == 0) throw ContractError("mae_pct: effective mask is empty");
  r.pct = 100.0 * acc / double(r.used);
  return r;
}

Aggregate aggregate(const std::vector<double>& values) {
  if (values.empty()) throw ContractError("aggregate: empty value set");
  Aggregate a;
  for (double v : values) a.mean += v;
  a.mean /= double(values.size());
  double var = 0;
  for (double v : values) var += (v - a.mean) * (v - a.mean);
  a.stddev = std::sqrt(var / double(values.size()));
  return a;
}

void MetricsReport::finalize() {
  std::vector<double> p, s, r, m;
  for (const auto& row : per_image) {
    p.push_back(row.psnr_db);
    s.push_back(row.ssim);
    r.push_back(row.rmse_pct);
    m.push_back(row.mae_pct);
  }
  psnr_db = aggregate(p);
  ssim = aggregate(s);
  rmse_pct = aggregate(r);
  mae_pct = aggregate(m);
}

}  // namespace ivnac::metrics
