#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "ivnac/dataset.hpp"
#include "ivnac/metrics.hpp"
#include "test_support.hpp"

using namespace ivnac;

namespace {

std::string tmp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("ivnac_data_" + name);
  std::filesystem::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return std::string(std::istreambuf_iterator<char>(is), {});
}

Geometry small_geom(std::int64_t size = 32) {
  Geometry g;
  g.height = g.width = size;
  g.n_angles = 40;
  g.n_bins = 48;
  return g;
}

PhantomSpec small_spec(std::int64_t size = 32) {
  PhantomSpec s;
  s.size = size;
  s.skull = {15.5, 15.5, 13.0, 10.5};
  s.brain = {15.5, 15.5, 9.5, 7.0};
  s.skull_thickness = 1.6;
  s.vent_ry = 2.4;
  s.vent_rx = 1.0;
  s.vent_offset = 1.6;
  s.jitter_center = 0.8;
  s.jitter_axes = 0.7;
  s.jitter_thickness = 0.3;
  return s;
}

}  // namespace

TEST_CASE("phantom: zero jitter makes seeds irrelevant") {
  PhantomSpec spec = small_spec();
  spec.jitter_center = spec.jitter_axes = spec.jitter_thickness = 0;
  spec.jitter_angle = 0;
  spec.jitter_hu_skull = spec.jitter_hu_brain = spec.jitter_hu_vent = 0;
  spec.jitter_act = 0;
  PhantomPair a = gen_phantom(spec, 1);
  PhantomPair b = gen_phantom(spec, 999);
  CHECK(a.ct_hu.v == b.ct_hu.v);
  CHECK(a.activity.v == b.activity.v);
}

TEST_CASE("phantom: skull ring and background levels by construction") {
  PhantomSpec spec = small_spec();
  for (std::uint64_t seed = 1; seed <= 8; seed++) {
    PhantomPair p = gen_phantom(spec, seed);
    CHECK(p.ct_hu.at(0, 0) == -1000.f);
    CHECK(p.activity.at(0, 0) == 0.f);
    std::int64_t ring = 0;
    for (float v : p.ct_hu.v)
      if (v >= 800.f) ring++;
    CHECK(ring > 20);  // a visible skull ring exists
    for (float v : p.ct_hu.v)
      CHECK((v == -1000.f || v >= 0.f));  // air or tissue, nothing in between
  }
}

TEST_CASE("phantom: ventricle at water level maps to mu_water") {
  PhantomSpec spec = small_spec();
  spec.hu_ventricle = 0;
  spec.jitter_hu_vent = 0;
  PhantomPair p = gen_phantom(spec, 3);
  Image mu = physics::hu_to_mu(p.ct_hu);
  bool found = false;
  for (std::int64_t i = 0; i < p.ct_hu.pixels(); i++)
    if (p.ct_hu.v[size_t(i)] == 0.f) {
      CHECK(mu.v[size_t(i)] == doctest::Approx(0.096).epsilon(1e-6));
      found = true;
    }
  CHECK(found);
}

TEST_CASE("phantom: containment violations are rejected") {
  PhantomSpec spec = small_spec();
  spec.skull.cx = 29.0;  // would leave the 32-px field of view
  CHECK_THROWS_AS(gen_phantom(spec, 1), ContractError);

  PhantomSpec spec2 = small_spec();
  spec2.brain.ry = spec2.skull.ry;  // brain reaches the ring
  CHECK_THROWS_AS(gen_phantom(spec2, 1), ContractError);
}

TEST_CASE("phantom: mu maps stay in the physical head range") {
  PhantomSpec spec = small_spec();
  for (std::uint64_t seed = 1; seed <= 20; seed++) {
    Image mu = physics::hu_to_mu(gen_phantom(spec, seed).ct_hu);
    for (float v : mu.v) {
      CHECK(v >= 0.f);
      CHECK(v <= 0.2f);
    }
  }
}

TEST_CASE("container: header layout and size formula, hex level") {
  const std::string dir = tmp_dir("hdr");
  const std::string path = dir + "/t.ivnc";
  Volume vol = Volume::create(10, 2, 64, 64);
  Rng rng(1);
  for (auto& v : vol.data) v = float(rng.uniform());
  write_ivnc(path, vol);

  const std::string bytes = slurp(path);
  REQUIRE(bytes.size() == size_t(24 + 10 * 2 * 64 * 64 * 4));
  CHECK(bytes.substr(0, 4) == "IVNC");
  auto u32 = [&](size_t off) {
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + off, 4);
    return v;
  };
  CHECK(u32(4) == 1);    // version
  CHECK(u32(8) == 10);   // count
  CHECK(u32(12) == 64);  // H
  CHECK(u32(16) == 64);  // W
  CHECK(u32(20) == 2);   // channels

  Volume back = read_ivnc(path);
  CHECK(back.data == vol.data);
  CHECK(back.count == 10);
  CHECK(back.channels == 2);
}

TEST_CASE("normalizer round-trips and persists through the sidecar") {
  Normalization norm;
  norm.pet_scale = 7.5;
  Rng rng(2);
  for (int i = 0; i < 100; i++) {
    const float pet = float(rng.uniform(0, 20));
    const float hu = float(rng.uniform(-1024, 3000));
    CHECK(norm.denorm_pet(norm.norm_pet(pet)) == doctest::Approx(pet).epsilon(1e-6));
    CHECK(norm.denorm_ct(norm.norm_ct(hu)) == doctest::Approx(hu).epsilon(1e-6));
  }

  const std::string dir = tmp_dir("meta");
  const std::string path = dir + "/d.ivnc";
  DatasetMeta meta;
  meta.normalized = true;
  meta.norm = norm;
  meta.seed = 42;
  meta.index_offset = 220;
  meta.counts_scale = 12345.5;
  meta.geom = small_geom();
  meta.write(path);
  DatasetMeta back = DatasetMeta::read(path);
  CHECK(back.normalized);
  CHECK(back.norm.pet_scale == norm.pet_scale);
  CHECK(back.seed == 42);
  CHECK(back.index_offset == 220);
  CHECK(back.geom.n_angles == 40);
}

TEST_CASE("percentile uses the nearest rank") {
  std::vector<float> v;
  for (int i = 1; i <= 200; i++) v.push_back(float(i));
  CHECK(percentile(v, 0.995) == doctest::Approx(199.f));
  CHECK(percentile(v, 1.0) == doctest::Approx(200.f));
  CHECK_THROWS_AS(percentile({}, 0.5), ContractError);
}

TEST_CASE("build_single: deterministic bytes, normalized planes, raw twin") {
  const std::string dir = tmp_dir("single");
  BuildConfig cfg;
  cfg.count = 6;
  cfg.seed = 9;
  cfg.geom = small_geom();
  cfg.spec = small_spec();
  build_single(cfg, dir + "/a.ivnc", dir + "/a_raw.ivnc");
  build_single(cfg, dir + "/b.ivnc", dir + "/b_raw.ivnc");
  CHECK(slurp(dir + "/a.ivnc") == slurp(dir + "/b.ivnc"));
  CHECK(slurp(dir + "/a_raw.ivnc") == slurp(dir + "/b_raw.ivnc"));

  Volume norm = read_ivnc(dir + "/a.ivnc");
  DatasetMeta meta = DatasetMeta::read(dir + "/a.ivnc");
  CHECK(meta.normalized);
  CHECK(meta.norm.pet_scale > 0);
  // NAC planes sit in a unit-ish range after scaling
  for (std::int64_t i = 0; i < std::int64_t(norm.count); i++) {
    const Image pet = norm.plane(i, 0);
    CHECK(pet.max() < 3.f);
    CHECK(pet.min() >= 0.f);
  }

  Volume raw = read_ivnc(dir + "/a_raw.ivnc");
  DatasetMeta meta_raw = DatasetMeta::read(dir + "/a_raw.ivnc");
  CHECK(!meta_raw.normalized);
  for (std::int64_t i = 0; i < std::int64_t(raw.count); i++)
    CHECK(raw.plane(i, 1).min() == -1000.f);  // CT plane in HU
}

TEST_CASE("build_dataset: split files with disjoint content") {
  const std::string dir = tmp_dir("splits");
  SplitConfig cfg;
  cfg.n_train = 6;
  cfg.n_val = 3;
  cfg.n_test = 3;
  cfg.seed = 4;
  cfg.geom = small_geom();
  cfg.spec = small_spec();
  const SplitPaths paths = build_dataset(cfg, dir);

  Volume train = read_ivnc(paths.train);
  Volume val = read_ivnc(paths.val);
  Volume test = read_ivnc(paths.test);
  CHECK(train.count == 6);
  CHECK(val.count == 3);
  CHECK(test.count == 3);

  // hash audit: no identical record across splits
  auto hashes = [](const Volume& v) {
    std::set<std::uint64_t> out;
    const std::int64_t rec = v.channels * v.h * v.w;
    for (std::int64_t i = 0; i < std::int64_t(v.count); i++) {
      std::uint64_t h = 1469598103934665603ULL;
      const auto* b = reinterpret_cast<const unsigned char*>(v.data.data() + i * rec);
      for (std::int64_t k = 0; k < rec * 4; k++) {
        h ^= b[k];
        h *= 1099511628211ULL;
      }
      out.insert(h);
    }
    return out;
  };
  const auto ht = hashes(train), hv = hashes(val), hs = hashes(test);
  for (auto h : hv) CHECK(!ht.count(h));
  for (auto h : hs) CHECK(!ht.count(h));
  for (auto h : hs) CHECK(!hv.count(h));

  // val/test reuse the training normalization verbatim
  CHECK(DatasetMeta::read(paths.train).norm.pet_scale ==
        DatasetMeta::read(paths.val).norm.pet_scale);
  CHECK(DatasetMeta::read(paths.train).norm.pet_scale ==
        DatasetMeta::read(paths.test).norm.pet_scale);
  CHECK(DatasetMeta::read(paths.test_raw).index_offset == 9);
}

TEST_CASE("crop_normalize: centered and off-center phantoms") {
  PhantomSpec spec = small_spec();
  spec.jitter_center = 0;
  PhantomPair centered = gen_phantom(spec, 5);
  Normalization norm;
  norm.pet_scale = 2.0;

  CropResult full = crop_normalize(centered.activity, centered.ct_hu, norm, 32);
  CHECK(full.pet.shape() == Shape4{1, 1, 32, 32});
  CHECK(std::abs(double(full.cy) - 15.5) <= 1.0);

  CropResult window = crop_normalize(centered.activity, centered.ct_hu, norm, 24);
  CHECK(window.pet.shape() == Shape4{1, 1, 24, 24});
  CHECK(!window.clamped);

  // shift the head off center and check the window tracks the centroid
  Image act_off(40, 40), ct_off(40, 40, -1000.f);
  for (std::int64_t y = 0; y < 32; y++)
    for (std::int64_t x = 0; x < 32; x++) {
      act_off.at(y + 6, x + 2) = centered.activity.at(y, x);
      ct_off.at(y + 6, x + 2) = centered.ct_hu.at(y, x);
    }
  CropResult off = crop_normalize(act_off, ct_off, norm, 24);
  CHECK(std::abs(double(off.cy) - (15.5 + 6)) <= 1.0);
  CHECK(std::abs(double(off.cx) - (15.5 + 2)) <= 1.0);

  // normalization is applied inside the crop
  const Image ct_crop = Image::from_tensor(off.ct, 0, 0);
  CHECK(ct_crop.max() <= 1.f);
  CHECK(ct_crop.min() >= 0.f);
}

TEST_CASE("NAC hallmark: attenuation cups the center across many phantoms") {
  Geometry g = small_geom();
  PhantomSpec spec = small_spec();
  double nac_sum = 0, ac_sum = 0;
  const int n = 50;
  for (int i = 0; i < n; i++) {
    PhantomPair p = gen_phantom(spec, 100 + std::uint64_t(i));
    Image mu = physics::hu_to_mu(p.ct_hu);
    physics::NacSim sim =
        physics::simulate_nac(p.activity, mu, g, 200 + std::uint64_t(i), 2e4);
    Image ac = physics::correct_pet(sim.attenuated, mu, g);
    auto ratio = [&](const Image& img) {
      double center = 0, edge = 0;
      std::int64_t nc = 0, ne = 0;
      for (std::int64_t y = 0; y < g.height; y++)
        for (std::int64_t x = 0; x < g.width; x++) {
          const double dy = y - (g.height - 1) / 2.0, dx = x - (g.width - 1) / 2.0;
          const double r = std::sqrt(dy * dy + dx * dx);
          if (r < 3) {
            center += img.at(y, x);
            nc++;
          } else if (r >= 6 && r < 9) {
            edge += img.at(y, x);
            ne++;
          }
        }
      return (center / nc) / (edge / ne);
    };
    nac_sum += ratio(sim.nac);
    ac_sum += ratio(ac);
  }
  CHECK(nac_sum / n < ac_sum / n);
}
