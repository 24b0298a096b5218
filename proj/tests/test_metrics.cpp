#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ivnac/metrics.hpp"
#include "test_support.hpp"

using namespace ivnac;
using namespace ivnac::metrics;

namespace {

Image random_image(std::int64_t h, std::int64_t w, std::uint64_t seed, double lo = 0,
                   double hi = 1) {
  Image img(h, w);
  Rng rng(seed);
  for (auto& v : img.v) v = float(rng.uniform(lo, hi));
  return img;
}

}  // namespace

TEST_CASE("psnr: cap, hand case, halving law, sign symmetry") {
  Image ref = random_image(16, 16, 1, 0.2, 1.0);
  CHECK(psnr(ref, ref) == kPsnrCapDb);

  Image r2(8, 8);
  for (auto& v : r2.v) v = 0.4f;
  r2.v[0] = 1.0f;  // peak exactly 1
  Image p2 = r2;
  for (auto& v : p2.v) v += 0.1f;  // uniform absolute error 0.1
  CHECK(psnr(r2, p2) == doctest::Approx(20.0).epsilon(1e-5));

  Image p3 = r2;
  for (auto& v : p3.v) v += 0.05f;  // halved error: +6.02 dB
  CHECK(psnr(r2, p3) - psnr(r2, p2) == doctest::Approx(20.0 * std::log10(2.0)).epsilon(1e-4));

  Image plus = r2, minus = r2;
  Rng rng(7);
  for (size_t i = 0; i < plus.v.size(); i++) {
    const float e = float(rng.uniform(-0.1, 0.1));
    plus.v[i] += e;
    minus.v[i] -= e;
  }
  CHECK(psnr(r2, plus) == doctest::Approx(psnr(r2, minus)).epsilon(1e-6));

  Image other(4, 4);
  CHECK_THROWS_AS(psnr(r2, other), ContractError);
}

TEST_CASE("ssim: identity, noise, affine distortion, symmetry") {
  Image x = random_image(32, 32, 2, 0.0, 1.0);
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-9));

  // strong independent noise destroys structure
  Image noisy = x;
  Rng rng(3);
  for (auto& v : noisy.v) v = float(v + rng.uniform(-1.5, 1.5));
  CHECK(ssim(x, noisy) < 0.5);

  // pure affine rescale is penalized unless it is the identity
  Image affine = x;
  for (auto& v : affine.v) v = 0.5f * v + 0.3f;
  CHECK(ssim(x, affine) < 1.0);
  CHECK(ssim(x, x) > ssim(x, affine));

  // symmetric when both directions share the dynamic range
  Image y = random_image(32, 32, 4, 0.0, 1.0);
  const double range = double(x.max()) - double(x.min());
  CHECK(ssim_with_range(x, y, range) ==
        doctest::Approx(ssim_with_range(y, x, range)).epsilon(1e-12));

  Image flat(32, 32, 0.5f);
  CHECK_THROWS_AS(ssim(flat, x), ContractError);  // degenerate range
  Image tiny(8, 8);
  CHECK_THROWS_AS(ssim(tiny, tiny), ContractError);  // smaller than the window
}

TEST_CASE("rmse_pct: hand case, scale invariance") {
  Image ref(1, 2), pred(1, 2);
  ref.v = {10.f, 0.f};  // dynamic range 10
  pred.v = {13.f, 4.f};  // errors 3 and 4
  CHECK(rmse_pct(ref, pred) == doctest::Approx(35.3553).epsilon(1e-4));
  CHECK(rmse_pct(ref, ref) == 0.0);

  Image ref10 = ref, pred10 = pred;
  for (auto& v : ref10.v) v *= 10.f;
  for (auto& v : pred10.v) v *= 10.f;
  CHECK(rmse_pct(ref10, pred10) == doctest::Approx(rmse_pct(ref, pred)).epsilon(1e-6));

  // mean normalization alternative
  CHECK(rmse_pct(ref, pred, RmseNorm::mean) ==
        doctest::Approx(100.0 * std::sqrt(25.0 / 2.0) / 5.0).epsilon(1e-6));

  Image flat(2, 2, 3.f);
  CHECK_THROWS_AS(rmse_pct(flat, flat), ContractError);
}

TEST_CASE("brain mask: threshold plus largest connected component") {
  Image img(8, 8);
  // main blob (12 pixels) and a distant speck (2 pixels)
  for (std::int64_t y = 1; y <= 4; y++)
    for (std::int64_t x = 1; x <= 3; x++) img.at(y, x) = 1.f;
  img.at(7, 7) = 1.f;
  img.at(7, 6) = 1.f;
  BrainMask mask = brain_mask(img, 0.05);
  CHECK(mask.count() == 12);
  CHECK(mask.at(2, 2));
  CHECK(!mask.at(7, 7));

  Image empty(4, 4);
  CHECK_THROWS_AS(brain_mask(empty, 0.05), ContractError);
}

TEST_CASE("mae_pct: hand cases and the reference floor") {
  Image ref(1, 2), pred(1, 2);
  ref.v = {2.f, 2.f};
  pred.v = {1.f, 2.f};
  BrainMask one;
  one.h = 1;
  one.w = 2;
  one.m = {1, 0};
  CHECK(mae_pct(ref, pred, one).pct == doctest::Approx(50.0));

  ref.v = {2.f, 4.f};
  pred.v = {1.f, 4.f};
  BrainMask both;
  both.h = 1;
  both.w = 2;
  both.m = {1, 1};
  CHECK(mae_pct(ref, pred, both).pct == doctest::Approx(25.0));
  CHECK(mae_pct(ref, ref, both).pct == 0.0);

  // near-zero reference pixels are excluded and counted
  Image ref2(1, 3), pred2(1, 3);
  ref2.v = {2.f, 1e-9f, 4.f};
  pred2.v = {1.f, 5.f, 4.f};
  BrainMask all3;
  all3.h = 1;
  all3.w = 3;
  all3.m = {1, 1, 1};
  const MaeResult r = mae_pct(ref2, pred2, all3);
  CHECK(r.used == 2);
  CHECK(r.excluded == 1);
  CHECK(r.pct == doctest::Approx(25.0));

  BrainMask none;
  none.h = 1;
  none.w = 2;
  none.m = {0, 0};
  CHECK_THROWS_AS(mae_pct(ref, pred, none), ContractError);
}

TEST_CASE("aggregate: mean and population std") {
  const Aggregate a = aggregate({20.0, 24.0});
  CHECK(a.mean == doctest::Approx(22.0));
  CHECK(a.stddev == doctest::Approx(2.0));

  CHECK(aggregate({5.5}).stddev == 0.0);

  const Aggregate fwd = aggregate({1, 5, 2, 9, 3});
  const Aggregate rev = aggregate({3, 9, 2, 5, 1});
  CHECK(fwd.mean == doctest::Approx(rev.mean).epsilon(1e-12));
  CHECK(fwd.stddev == doctest::Approx(rev.stddev).epsilon(1e-12));

  CHECK_THROWS_AS(aggregate({}), ContractError);
}
