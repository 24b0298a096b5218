#include "ivnac/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

namespace ivnac {

Volume Volume::create(std::uint32_t count, std::uint32_t channels, std::int64_t h,
                      std::int64_t w) {
  Volume v;
  v.count = count;
  v.channels = channels;
  v.h = h;
  v.w = w;
  v.data.assign(size_t(count) * channels * size_t(h * w), 0.f);
  return v;
}

Image Volume::plane(std::int64_t index, std::int64_t channel) const {
  if (index < 0 || index >= std::int64_t(count) || channel < 0 ||
      channel >= std::int64_t(channels))
    throw ContractError("volume: plane index out of range");
  Image img(h, w);
  const float* p = data.data() + (index * channels + channel) * h * w;
  std::copy(p, p + h * w, img.v.begin());
  return img;
}

void Volume::set_plane(std::int64_t index, std::int64_t channel, const Image& img) {
  if (img.h != h || img.w != w) throw ContractError("volume: plane size mismatch");
  if (index < 0 || index >= std::int64_t(count) || channel < 0 ||
      channel >= std::int64_t(channels))
    throw ContractError("volume: plane index out of range");
  std::copy(img.v.begin(), img.v.end(),
            data.begin() + (index * channels + channel) * h * w);
}

namespace {

constexpr char kMagic[4] = {'I', 'V', 'N', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

}  // namespace

void write_ivnc(const std::string& path, const Volume& vol) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, vol.count);
  put_u32(os, std::uint32_t(vol.h));
  put_u32(os, std::uint32_t(vol.w));
  put_u32(os, vol.channels);
  os.write(reinterpret_cast<const char*>(vol.data.data()),
           std::streamsize(vol.data.size() * sizeof(float)));
  if (!os) throw IoError("write failed: " + path);
}

Volume read_ivnc(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("not an IVNC container: " + path);
  const std::uint32_t version = get_u32(is);
  if (version != kVersion)
    throw IoError("unsupported container version " + std::to_string(version) + ": " + path);
  Volume vol;
  vol.count = get_u32(is);
  const std::uint32_t h = get_u32(is), w = get_u32(is);
  vol.channels = get_u32(is);
  if (!is) throw IoError("truncated header: " + path);
  vol.h = h;
  vol.w = w;
  if (vol.channels == 0 || h == 0 || w == 0)
    throw IoError("degenerate container dimensions: " + path);
  vol.data.resize(size_t(vol.count) * vol.channels * h * w);
  is.read(reinterpret_cast<char*>(vol.data.data()),
          std::streamsize(vol.data.size() * sizeof(float)));
  if (!is) throw IoError("truncated payload: " + path);
  char extra;
  if (is.read(&extra, 1)) throw IoError("trailing bytes after payload: " + path);
  return vol;
}

Image Normalization::norm_pet(const Image& img) const {
  Image out(img.h, img.w);
  for (size_t i = 0; i < img.v.size(); i++) out.v[i] = norm_pet(img.v[i]);
  return out;
}

Image Normalization::denorm_pet(const Image& img) const {
  Image out(img.h, img.w);
  for (size_t i = 0; i < img.v.size(); i++) out.v[i] = denorm_pet(img.v[i]);
  return out;
}

Image Normalization::norm_ct(const Image& img) const {
  Image out(img.h, img.w);
  for (size_t i = 0; i < img.v.size(); i++) out.v[i] = norm_ct(img.v[i]);
  return out;
}

Image Normalization::denorm_ct(const Image& img) const {
  Image out(img.h, img.w);
  for (size_t i = 0; i < img.v.size(); i++) out.v[i] = denorm_ct(img.v[i]);
  return out;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void DatasetMeta::write(const std::string& pair_path) const {
  const std::string path = meta_path(pair_path);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "normalized=" << (normalized ? 1 : 0) << "\n";
  os << "pet_scale=" << fmt_double(norm.pet_scale) << "\n";
  os << "ct_lo=" << fmt_double(norm.ct_lo) << "\n";
  os << "ct_hi=" << fmt_double(norm.ct_hi) << "\n";
  os << "seed=" << seed << "\n";
  os << "index_offset=" << index_offset << "\n";
  os << "counts_scale=" << fmt_double(counts_scale) << "\n";
  os << "geom_height=" << geom.height << "\n";
  os << "geom_width=" << geom.width << "\n";
  os << "geom_pixel_cm=" << fmt_double(geom.pixel_cm) << "\n";
  os << "geom_angles=" << geom.n_angles << "\n";
  os << "geom_bins=" << geom.n_bins << "\n";
  if (!os) throw IoError("write failed: " + path);
}

DatasetMeta DatasetMeta::read(const std::string& pair_path) {
  const std::string path = meta_path(pair_path);
  std::ifstream is(path);
  if (!is) throw IoError("missing dataset sidecar: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError("sidecar missing key '" + key + "': " + path);
    return it->second;
  };
  DatasetMeta m;
  m.normalized = std::stoi(need("normalized")) != 0;
  m.norm.pet_scale = std::stod(need("pet_scale"));
  m.norm.ct_lo = std::stod(need("ct_lo"));
  m.norm.ct_hi = std::stod(need("ct_hi"));
  m.seed = std::stoull(need("seed"));
  m.index_offset = std::stoll(need("index_offset"));
  m.counts_scale = std::stod(need("counts_scale"));
  m.geom.height = std::stoll(need("geom_height"));
  m.geom.width = std::stoll(need("geom_width"));
  m.geom.pixel_cm = std::stod(need("geom_pixel_cm"));
  m.geom.n_angles = std::stoll(need("geom_angles"));
  m.geom.n_bins = std::stoll(need("geom_bins"));
  return m;
}

double percentile(std::vector<float> values, double fraction) {
  if (values.empty()) throw ContractError("percentile: empty sample");
  std::sort(values.begin(), values.end());
  const auto n = std::int64_t(values.size());
  std::int64_t k = std::int64_t(std::ceil(fraction * double(n))) - 1;
  k = std::clamp<std::int64_t>(k, 0, n - 1);
  return values[size_t(k)];
}

std::uint64_t phantom_seed(std::uint64_t base, std::int64_t global_index) {
  return Rng::derive(base, std::uint64_t(2 * global_index));
}

std::uint64_t noise_seed(std::uint64_t base, std::int64_t global_index) {
  return Rng::derive(base, std::uint64_t(2 * global_index + 1));
}

namespace {

struct RawSample {
  Image activity, ct_hu, nac;
};

// raw phantoms plus their simulated NAC reconstructions, parallel across
// samples (each sample owns its seed streams)
std::vector<RawSample> simulate_samples(const PhantomSpec& spec, const Geometry& geom,
                                        std::uint64_t seed, double counts_scale,
                                        std::int64_t offset, std::int64_t count) {
  if (count < 1) throw ContractError("dataset: sample count must be >= 1");
  if (spec.size != geom.height || spec.size != geom.width)
    throw ContractError("dataset: phantom size must match geometry");
  spec.validate();
  std::vector<RawSample> out(static_cast<size_t>(count));
  std::exception_ptr error = nullptr;
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < count; i++) {
    try {
      const std::int64_t g = offset + i;
      PhantomPair pair = gen_phantom(spec, phantom_seed(seed, g), g);
      const Image mu = physics::hu_to_mu(pair.ct_hu);
      Image nac = physics::simulate_nac_pet(pair.activity, mu, geom,
                                            noise_seed(seed, g), counts_scale);
      out[size_t(i)] = RawSample{std::move(pair.activity), std::move(pair.ct_hu),
                                 std::move(nac)};
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

double fit_pet_scale(const std::vector<RawSample>& samples) {
  std::vector<float> all;
  all.reserve(samples.size() * samples.front().nac.v.size());
  for (const auto& s : samples) all.insert(all.end(), s.nac.v.begin(), s.nac.v.end());
  const double scale = percentile(std::move(all), 0.995);
  return scale > 0 ? scale : 1.0;
}

Volume pack_normalized(const std::vector<RawSample>& samples, const Normalization& norm) {
  const auto& first = samples.front();
  Volume vol = Volume::create(std::uint32_t(samples.size()), 2, first.nac.h, first.nac.w);
  for (std::int64_t i = 0; i < std::int64_t(samples.size()); i++) {
    vol.set_plane(i, 0, norm.norm_pet(samples[size_t(i)].nac));
    vol.set_plane(i, 1, norm.norm_ct(samples[size_t(i)].ct_hu));
  }
  return vol;
}

Volume pack_raw(const std::vector<RawSample>& samples) {
  const auto& first = samples.front();
  Volume vol =
      Volume::create(std::uint32_t(samples.size()), 2, first.activity.h, first.activity.w);
  for (std::int64_t i = 0; i < std::int64_t(samples.size()); i++) {
    vol.set_plane(i, 0, samples[size_t(i)].activity);
    vol.set_plane(i, 1, samples[size_t(i)].ct_hu);
  }
  return vol;
}

DatasetMeta make_meta(bool normalized, const Normalization& norm, std::uint64_t seed,
                      std::int64_t offset, double counts_scale, const Geometry& geom) {
  DatasetMeta m;
  m.normalized = normalized;
  m.norm = norm;
  m.seed = seed;
  m.index_offset = offset;
  m.counts_scale = counts_scale;
  m.geom = geom;
  return m;
}

}  // namespace

void build_single(const BuildConfig& cfg, const std::string& out_path,
                  const std::string& raw_out_path) {
  cfg.geom.validate();
  auto samples =
      simulate_samples(cfg.spec, cfg.geom, cfg.seed, cfg.counts_scale, 0, cfg.count);
  Normalization norm;
  norm.pet_scale = fit_pet_scale(samples);
  write_ivnc(out_path, pack_normalized(samples, norm));
  make_meta(true, norm, cfg.seed, 0, cfg.counts_scale, cfg.geom).write(out_path);
  if (!raw_out_path.empty()) {
    write_ivnc(raw_out_path, pack_raw(samples));
    make_meta(false, norm, cfg.seed, 0, cfg.counts_scale, cfg.geom).write(raw_out_path);
  }
}

SplitPaths build_dataset(const SplitConfig& cfg, const std::string& out_dir) {
  cfg.geom.validate();
  if (cfg.n_train < 1 || cfg.n_val < 1 || cfg.n_test < 1)
    throw ContractError("dataset: all split counts must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory " + out_dir + ": " + ec.message());

  auto train = simulate_samples(cfg.spec, cfg.geom, cfg.seed, cfg.counts_scale, 0,
                                cfg.n_train);
  auto val = simulate_samples(cfg.spec, cfg.geom, cfg.seed, cfg.counts_scale, cfg.n_train,
                              cfg.n_val);
  auto test = simulate_samples(cfg.spec, cfg.geom, cfg.seed, cfg.counts_scale,
                               cfg.n_train + cfg.n_val, cfg.n_test);

  Normalization norm;
  norm.pet_scale = fit_pet_scale(train);  // fitted once, reused for val/test

  SplitPaths paths;
  paths.train = out_dir + "/train.ivnc";
  paths.val = out_dir + "/val.ivnc";
  paths.test = out_dir + "/test.ivnc";
  paths.test_raw = out_dir + "/test_raw.ivnc";

  write_ivnc(paths.train, pack_normalized(train, norm));
  make_meta(true, norm, cfg.seed, 0, cfg.counts_scale, cfg.geom).write(paths.train);
  write_ivnc(paths.val, pack_normalized(val, norm));
  make_meta(true, norm, cfg.seed, cfg.n_train, cfg.counts_scale, cfg.geom).write(paths.val);
  write_ivnc(paths.test, pack_normalized(test, norm));
  make_meta(true, norm, cfg.seed, cfg.n_train + cfg.n_val, cfg.counts_scale, cfg.geom)
      .write(paths.test);
  write_ivnc(paths.test_raw, pack_raw(test));
  make_meta(false, norm, cfg.seed, cfg.n_train + cfg.n_val, cfg.counts_scale, cfg.geom)
      .write(paths.test_raw);
  return paths;
}

CropResult crop_normalize(const Image& nac_pet, const Image& ct_hu,
                          const Normalization& norm, std::int64_t crop_size) {
  if (nac_pet.h != ct_hu.h || nac_pet.w != ct_hu.w)
    throw ContractError("crop_normalize: pair images differ in size");
  if (crop_size < 1 || crop_size > nac_pet.h || crop_size > nac_pet.w)
    throw ContractError("crop_normalize: crop size outside the image");

  // head support from CT (anything denser than deep air)
  double sy = 0, sx = 0;
  std::int64_t n = 0;
  for (std::int64_t y = 0; y < ct_hu.h; y++)
    for (std::int64_t x = 0; x < ct_hu.w; x++)
      if (ct_hu.at(y, x) > -500.f) {
        sy += double(y);
        sx += double(x);
        n++;
      }
  if (n == 0) throw ContractError("crop_normalize: head mask is empty");

  CropResult r;
  r.cy = std::int64_t(std::llround(sy / double(n)));
  r.cx = std::int64_t(std::llround(sx / double(n)));
  std::int64_t y0 = r.cy - crop_size / 2;
  std::int64_t x0 = r.cx - crop_size / 2;
  const std::int64_t y0c = std::clamp<std::int64_t>(y0, 0, nac_pet.h - crop_size);
  const std::int64_t x0c = std::clamp<std::int64_t>(x0, 0, nac_pet.w - crop_size);
  r.clamped = (y0c != y0) || (x0c != x0);
  y0 = y0c;
  x0 = x0c;

  Tensor pet({1, 1, crop_size, crop_size});
  Tensor ct({1, 1, crop_size, crop_size});
  float* pp = pet.mutable_data();
  float* cp = ct.mutable_data();
  for (std::int64_t y = 0; y < crop_size; y++)
    for (std::int64_t x = 0; x < crop_size; x++) {
      pp[y * crop_size + x] = norm.norm_pet(nac_pet.at(y0 + y, x0 + x));
      cp[y * crop_size + x] = norm.norm_ct(ct_hu.at(y0 + y, x0 + x));
    }
  r.pet = std::move(pet);
  r.ct = std::move(ct);
  return r;
}

}  // namespace ivnac
