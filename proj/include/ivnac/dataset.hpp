#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ivnac/image.hpp"
#include "ivnac/phantom.hpp"
#include "ivnac/physics.hpp"
#include "ivnac/tensor.hpp"

namespace ivnac {

// The shared binary container (magic "IVNC"): 24-byte header (magic, u32
// version, count, H, W, channels) followed by count records of `channels`
// little-endian float32 planes each, row-major. Dataset files use
// channels=2 (NAC-PET plane then CT plane); single images, mu maps and
// sinogram dumps use channels=1.
struct Volume {
  std::uint32_t count = 0;
  std::uint32_t channels = 1;
  std::int64_t h = 0, w = 0;
  std::vector<float> data;

  static Volume create(std::uint32_t count, std::uint32_t channels, std::int64_t h,
                       std::int64_t w);
  Image plane(std::int64_t index, std::int64_t channel) const;
  void set_plane(std::int64_t index, std::int64_t channel, const Image& img);
};

void write_ivnc(const std::string& path, const Volume& vol);
Volume read_ivnc(const std::string& path);

// Intensity mapping persisted with datasets and checkpoints: PET divides by
// a fixed scale (the 99.5th percentile of the training NAC images), CT maps
// the fixed HU window onto [0, 1].
struct Normalization {
  double pet_scale = 1.0;
  double ct_lo = -1024.0;
  double ct_hi = 3000.0;

  float norm_pet(float v) const { return float(double(v) / pet_scale); }
  float denorm_pet(float v) const { return float(double(v) * pet_scale); }
  float norm_ct(float hu) const { return float((double(hu) - ct_lo) / (ct_hi - ct_lo)); }
  float denorm_ct(float u) const { return float(double(u) * (ct_hi - ct_lo) + ct_lo); }

  Image norm_pet(const Image& img) const;
  Image denorm_pet(const Image& img) const;
  Image norm_ct(const Image& img) const;
  Image denorm_ct(const Image& img) const;
};

// Sidecar (<file>.meta, key=value text) describing how a pair file was
// produced. The fixed 24-byte container header leaves no room for this, so
// it rides alongside.
struct DatasetMeta {
  bool normalized = false;  // raw (activity, CT HU) vs training (NAC, CT) pairs
  Normalization norm;
  std::uint64_t seed = 0;           // generator seed of the whole build
  std::int64_t index_offset = 0;    // global sample index of record 0
  double counts_scale = 2e4;
  Geometry geom;

  void write(const std::string& pair_path) const;
  static DatasetMeta read(const std::string& pair_path);
  static std::string meta_path(const std::string& pair_path) { return pair_path + ".meta"; }
};

// nearest-rank percentile used for the PET scale
double percentile(std::vector<float> values, double fraction);

// Deterministic per-sample seed streams; phantom and noise draws never share
// a stream and split files never share global indices.
std::uint64_t phantom_seed(std::uint64_t base, std::int64_t global_index);
std::uint64_t noise_seed(std::uint64_t base, std::int64_t global_index);

struct BuildConfig {
  std::int64_t count = 10;          // single-file mode
  std::uint64_t seed = 1;
  double counts_scale = 2e4;
  Geometry geom;
  PhantomSpec spec;
};

// One normalized training file (and optionally the raw activity/CT pairs
// behind it). The PET scale comes from this file's own NAC images.
void build_single(const BuildConfig& cfg, const std::string& out_path,
                  const std::string& raw_out_path = "");

struct SplitConfig {
  std::int64_t n_train = 200, n_val = 20, n_test = 40;
  std::uint64_t seed = 1;
  double counts_scale = 2e4;
  Geometry geom;
  PhantomSpec spec;
};

struct SplitPaths {
  std::string train, val, test, test_raw;
};

// train/val/test with disjoint seed ranges; the PET scale is fitted on the
// training split and reused verbatim for val and test.
SplitPaths build_dataset(const SplitConfig& cfg, const std::string& out_dir);

// Center crop around the head-mask centroid (CT above -500 HU), then
// normalization. Returns (pet, ct) tensors shaped (1,1,crop,crop).
struct CropResult {
  Tensor pet, ct;
  std::int64_t cy = 0, cx = 0;  // window center actually used
  bool clamped = false;         // window hit the image border
};

CropResult crop_normalize(const Image& nac_pet, const Image& ct_hu,
                          const Normalization& norm, std::int64_t crop_size);

}  // namespace ivnac
