#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "ivnac/image.hpp"

namespace ivnac {

// Attenuation model constants: PET 511 keV coefficients for water and bone
// plus the CT-energy (120 keV) coefficients entering the bone branch.
struct MuMapConstants {
  double mu_water = 0.096;   // cm^-1
  double mu_bone = 0.172;    // cm^-1
  double rho_water = 0.158;  // cm^-1
  double rho_bone = 0.326;   // cm^-1

  void validate() const;
};

// Parallel-beam acquisition/reconstruction geometry.
struct Geometry {
  std::int64_t height = 64, width = 64;
  double pixel_cm = 0.4;
  std::int64_t n_angles = 90;
  std::int64_t n_bins = 96;

  void validate() const;  // enforces n_bins >= image diagonal in pixels
  double bin_spacing_cm() const { return pixel_cm; }
};

// (angles x bins) array of line integrals; angles uniform over [0, pi).
struct Sinogram {
  std::int64_t n_angles = 0, n_bins = 0;
  double bin_spacing_cm = 0;
  std::vector<float> v;

  Sinogram() = default;
  Sinogram(std::int64_t a, std::int64_t b, double spacing)
      : n_angles(a), n_bins(b), bin_spacing_cm(spacing), v(size_t(a * b), 0.f) {}

  float& at(std::int64_t a, std::int64_t b) { return v[size_t(a * n_bins + b)]; }
  float at(std::int64_t a, std::int64_t b) const { return v[size_t(a * n_bins + b)]; }
};

namespace physics {

struct ClampStats {
  std::int64_t below = 0;  // inputs clamped up to -1024 HU
  std::int64_t above = 0;  // inputs clamped down to 3000 HU
};

// Piecewise-linear HU -> linear attenuation coefficient (cm^-1) at 511 keV.
// Exact scalar form; continuous at 0 HU and clamped below at 0.
double mu_at(double hu, const MuMapConstants& k = {});

// Image version; out-of-range HU values are clamped into [-1024, 3000] and
// counted in `stats` when given.
Image hu_to_mu(const Image& ct_hu, const MuMapConstants& k = {},
               ClampStats* stats = nullptr);

// Line integrals by fixed-step (half pixel) bilinear sampling, scaled to cm.
Sinogram radon(const Image& img, const Geometry& geom);

// Attenuation correction factors exp(+integral of mu) along each full ray;
// all factors >= 1 for nonnegative mu. Throws NumericError when a ray
// integral exceeds 50 (nonphysical mu map).
Sinogram acf(const Image& mu_map, const Geometry& geom);

// Ramp-filtered (frequency-domain ramp, rectangular cutoff at Nyquist)
// back-projection.
Image fbp(const Sinogram& sino, const Geometry& geom);

// Use as counts_scale to disable Poisson noise.
inline constexpr double kNoiselessCounts = std::numeric_limits<double>::infinity();

// Attenuates the emission sinogram of `activity` by the mu map, applies
// Poisson noise at `counts_scale` expected counts per unit sinogram value,
// and reconstructs with fbp (negatives clamped to zero).
Image simulate_nac_pet(const Image& activity, const Image& mu_map, const Geometry& geom,
                       std::uint64_t noise_seed, double counts_scale);

// Same as simulate_nac_pet but also returns the noisy attenuated sinogram,
// which attenuation correction consumes.
struct NacSim {
  Sinogram attenuated;  // noisy attenuated emission sinogram
  Image nac;            // its reconstruction
};
NacSim simulate_nac(const Image& activity, const Image& mu_map, const Geometry& geom,
                    std::uint64_t noise_seed, double counts_scale);

// fbp(sinogram * acf(mu_map)) with negatives clamped to zero.
Image correct_pet(const Sinogram& attenuated, const Image& mu_map, const Geometry& geom);

}  // namespace physics
}  // namespace ivnac
