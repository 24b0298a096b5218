#include "ivnac/physics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

namespace ivnac {

float Image::max() const {
  float best = -std::numeric_limits<float>::infinity();
  for (float x : v) best = std::max(best, x);
  return best;
}

float Image::min() const {
  float best = std::numeric_limits<float>::infinity();
  for (float x : v) best = std::min(best, x);
  return best;
}

Tensor Image::to_tensor() const { return Tensor({1, 1, h, w}, v); }

Image Image::from_tensor(const Tensor& t, std::int64_t n, std::int64_t c) {
  const Shape4 s = t.shape();
  Image img(s.h, s.w);
  const float* p = t.data() + (n * s.c + c) * s.hw();
  std::copy(p, p + s.hw(), img.v.begin());
  return img;
}

void MuMapConstants::validate() const {
  if (!(mu_water > 0 && mu_bone > 0 && rho_water > 0 && rho_bone > 0))
    throw ContractError("mu-map constants must be positive");
  if (!(mu_bone > mu_water) || !(rho_bone > rho_water))
    throw ContractError("mu-map constants must satisfy bone > water");
}

void Geometry::validate() const {
  if (height < 1 || width < 1 || n_angles < 1 || n_bins < 1 || !(pixel_cm > 0))
    throw ContractError("geometry fields must be positive");
  const double diag = std::sqrt(double(height * height + width * width));
  if (double(n_bins) < diag)
    throw ContractError("geometry: n_bins " + std::to_string(n_bins) +
                        " is below the image diagonal " + std::to_string(diag) +
                        " px; projections would truncate");
}

namespace physics {

double mu_at(double hu, const MuMapConstants& k) {
  double mu;
  if (hu <= 0.0) {
    mu = k.mu_water * (1.0 + hu / 1000.0);
  } else {
    const double bone_slope =
        k.rho_water * (k.mu_bone - k.mu_water) / (k.mu_bone * (k.rho_bone - k.rho_water));
    mu = k.mu_water * (1.0 + hu / 1000.0 * bone_slope);
  }
  return mu < 0.0 ? 0.0 : mu;
}

Image hu_to_mu(const Image& ct_hu, const MuMapConstants& k, ClampStats* stats) {
  k.validate();
  Image mu(ct_hu.h, ct_hu.w);
  std::int64_t below = 0, above = 0;
  for (size_t i = 0; i < ct_hu.v.size(); i++) {
    double hu = ct_hu.v[i];
    if (hu < -1024.0) {
      hu = -1024.0;
      below++;
    } else if (hu > 3000.0) {
      hu = 3000.0;
      above++;
    }
    mu.v[i] = float(mu_at(hu, k));
  }
  if (stats) {
    stats->below += below;
    stats->above += above;
  }
  return mu;
}

namespace {

// ray through detector position t at angle theta, direction (-sin, cos);
// samples the image (pixel centers on a cm grid centered in the FOV) by
// bilinear interpolation at half-pixel steps
double ray_integral(const Image& img, const Geometry& g, double theta, double t_cm) {
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cx = (double(g.width) - 1.0) / 2.0;
  const double cy = (double(g.height) - 1.0) / 2.0;
  const double step = 0.5 * g.pixel_cm;
  const double half_len =
      0.5 * std::sqrt(double(g.width * g.width + g.height * g.height)) * g.pixel_cm;
  const std::int64_t n_steps = std::int64_t(std::ceil(2.0 * half_len / step));
  double acc = 0.0;
  for (std::int64_t i = 0; i < n_steps; i++) {
    const double s = -half_len + (double(i) + 0.5) * step;
    const double x_cm = t_cm * ct - s * st;
    const double y_cm = t_cm * st + s * ct;
    const double px = cx + x_cm / g.pixel_cm;
    const double py = cy + y_cm / g.pixel_cm;
    const std::int64_t x0 = std::int64_t(std::floor(px));
    const std::int64_t y0 = std::int64_t(std::floor(py));
    if (x0 < -1 || x0 >= g.width || y0 < -1 || y0 >= g.height) continue;
    const double fx = px - double(x0), fy = py - double(y0);
    auto sample = [&](std::int64_t yy, std::int64_t xx) -> double {
      if (xx < 0 || xx >= g.width || yy < 0 || yy >= g.height) return 0.0;
      return img.at(yy, xx);
    };
    acc += (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
           fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
  }
  return acc * step;
}

double bin_center_cm(const Geometry& g, std::int64_t b) {
  return (double(b) - (double(g.n_bins) - 1.0) / 2.0) * g.bin_spacing_cm();
}

}  // namespace

Sinogram radon(const Image& img, const Geometry& geom) {
  geom.validate();
  if (img.h != geom.height || img.w != geom.width)
    throw ContractError("radon: image does not match geometry");
  Sinogram sino(geom.n_angles, geom.n_bins, geom.bin_spacing_cm());
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t a = 0; a < geom.n_angles; a++) {
    for (std::int64_t b = 0; b < geom.n_bins; b++) {
      const double theta = 3.14159265358979323846 * double(a) / double(geom.n_angles);
      sino.at(a, b) = float(ray_integral(img, geom, theta, bin_center_cm(geom, b)));
    }
  }
  return sino;
}

Sinogram acf(const Image& mu_map, const Geometry& geom) {
  Sinogram line = radon(mu_map, geom);
  Sinogram out(geom.n_angles, geom.n_bins, geom.bin_spacing_cm());
  for (size_t i = 0; i < line.v.size(); i++) {
    const double integral = line.v[i];
    if (integral > 50.0)
      throw NumericError("acf: ray integral " + std::to_string(integral) +
                         " exceeds 50; mu map is nonphysical");
    out.v[i] = float(std::exp(integral));
  }
  return out;
}

namespace {

// iterative radix-2 FFT, in place; inverse scales by 1/n
void fft_radix2(std::vector<std::complex<double>>& a, bool inverse) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; i++) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * 3.14159265358979323846 / double(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; k++) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse)
    for (auto& x : a) x /= double(n);
}

}  // namespace

Image fbp(const Sinogram& sino, const Geometry& geom) {
  geom.validate();
  if (sino.n_angles != geom.n_angles || sino.n_bins != geom.n_bins)
    throw ContractError("fbp: sinogram does not match geometry");
  const std::int64_t nb = geom.n_bins;
  std::size_t nfft = 1;
  while (nfft < size_t(2 * nb)) nfft <<= 1;
  const double ds = geom.bin_spacing_cm();
  const double nyquist = 1.0 / (2.0 * ds);

  // ramp |nu| with rectangular cutoff at the Nyquist frequency
  std::vector<double> ramp(nfft);
  for (size_t k = 0; k < nfft; k++) {
    const double cycles = k <= nfft / 2 ? double(k) : double(k) - double(nfft);
    const double nu = cycles / (double(nfft) * ds);
    ramp[k] = std::abs(nu) <= nyquist ? std::abs(nu) : 0.0;
  }

  std::vector<float> filtered(size_t(geom.n_angles * nb));
#pragma omp parallel for schedule(static)
  for (std::int64_t a = 0; a < geom.n_angles; a++) {
    std::vector<std::complex<double>> buf(nfft, {0.0, 0.0});
    for (std::int64_t b = 0; b < nb; b++) buf[size_t(b)] = double(sino.at(a, b));
    fft_radix2(buf, false);
    for (size_t k = 0; k < nfft; k++) buf[k] *= ramp[k];
    fft_radix2(buf, true);
    for (std::int64_t b = 0; b < nb; b++)
      filtered[size_t(a * nb + b)] = float(buf[size_t(b)].real());
  }

  Image out(geom.height, geom.width);
  const double cx = (double(geom.width) - 1.0) / 2.0;
  const double cy = (double(geom.height) - 1.0) / 2.0;
  const double dtheta = 3.14159265358979323846 / double(geom.n_angles);
#pragma omp parallel for schedule(static)
  for (std::int64_t y = 0; y < geom.height; y++) {
    for (std::int64_t x = 0; x < geom.width; x++) {
      double acc = 0.0;
      for (std::int64_t a = 0; a < geom.n_angles; a++) {
        const double theta = 3.14159265358979323846 * double(a) / double(geom.n_angles);
        const double x_cm = (double(x) - cx) * geom.pixel_cm;
        const double y_cm = (double(y) - cy) * geom.pixel_cm;
        const double t = x_cm * std::cos(theta) + y_cm * std::sin(theta);
        const double bin = t / ds + (double(nb) - 1.0) / 2.0;
        const std::int64_t b0 = std::int64_t(std::floor(bin));
        if (b0 < -1 || b0 >= nb) continue;
        const double f = bin - double(b0);
        const double v0 = b0 >= 0 ? filtered[size_t(a * nb + b0)] : 0.0;
        const double v1 = b0 + 1 < nb ? filtered[size_t(a * nb + b0 + 1)] : 0.0;
        acc += (1 - f) * v0 + f * v1;
      }
      out.at(y, x) = float(acc * dtheta);
    }
  }
  return out;
}

NacSim simulate_nac(const Image& activity, const Image& mu_map, const Geometry& geom,
                    std::uint64_t noise_seed, double counts_scale) {
  if (counts_scale <= 0)
    throw ContractError("simulate_nac_pet: counts_scale must be positive");
  Sinogram emission = radon(activity, geom);
  Sinogram factors = acf(mu_map, geom);
  Sinogram attenuated(geom.n_angles, geom.n_bins, geom.bin_spacing_cm());
  for (size_t i = 0; i < emission.v.size(); i++)
    attenuated.v[i] = emission.v[i] / factors.v[i];
  if (std::isfinite(counts_scale)) {
    Rng rng(noise_seed);
    for (auto& x : attenuated.v) {
      const double mean = double(x) * counts_scale;
      x = float(double(rng.poisson(mean)) / counts_scale);
    }
  }
  Image nac = fbp(attenuated, geom);
  for (auto& x : nac.v) x = std::max(x, 0.f);
  return NacSim{std::move(attenuated), std::move(nac)};
}

Image simulate_nac_pet(const Image& activity, const Image& mu_map, const Geometry& geom,
                       std::uint64_t noise_seed, double counts_scale) {
  return simulate_nac(activity, mu_map, geom, noise_seed, counts_scale).nac;
}

Image correct_pet(const Sinogram& attenuated, const Image& mu_map, const Geometry& geom) {
  if (attenuated.n_angles != geom.n_angles || attenuated.n_bins != geom.n_bins)
    throw ContractError("correct_pet: sinogram does not match geometry");
  Sinogram factors = acf(mu_map, geom);
  Sinogram corrected(geom.n_angles, geom.n_bins, geom.bin_spacing_cm());
  for (size_t i = 0; i < corrected.v.size(); i++)
    corrected.v[i] = attenuated.v[i] * factors.v[i];
  Image out = fbp(corrected, geom);
  for (auto& x : out.v) x = std::max(x, 0.f);
  return out;
}

}  // namespace physics
}  // namespace ivnac
