#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ivnac/flow.hpp"
#include "ivnac/ref.hpp"
#include "test_support.hpp"

using namespace ivnac;
using ivnac::testing::bitwise_equal;
using ivnac::testing::max_abs_diff;
using ivnac::testing::random_tensor;

namespace {

FlowConfig small_cfg(std::int64_t blocks = 2, std::int64_t channels = 2,
                     std::int64_t hidden = 8) {
  FlowConfig cfg;
  cfg.blocks = blocks;
  cfg.channels = channels;
  cfg.hidden = hidden;
  return cfg;
}

// Builds a coupling layer whose four subnets compute exact pointwise affine
// maps u -> gain*u + offset: the hidden path stays positive so the leaky
// ReLUs are transparent, and the output conv unwinds the positive bias.
CouplingLayerT<float> affine_coupling(const FlowConfig& cfg,
                                      ref::AffineMap<float> s1, ref::AffineMap<float> t1,
                                      ref::AffineMap<float> s2, ref::AffineMap<float> t2) {
  CouplingLayerT<float> layer(cfg.channels, cfg);
  const float lift = 10.f;  // keeps intermediate activations positive
  auto program = [&](DenseSubnetT<float>& net, ref::AffineMap<float> f) {
    // conv1: center tap = gain, bias = lift
    auto& l1 = net.layers[0];
    const Shape4 w1 = l1.weight.shape();
    l1.weight = Tensor(w1);
    for (std::int64_t co = 0; co < w1.n; co++)
      l1.weight.set(co, 0, w1.h / 2, w1.w / 2, f.gain);
    l1.bias = Tensor::full(l1.bias.shape(), lift);
    // conv2..4: pass channel 0 through the center tap
    for (int li = 1; li < 4; li++) {
      auto& l = net.layers[size_t(li)];
      const Shape4 ws = l.weight.shape();
      l.weight = Tensor(ws);
      for (std::int64_t co = 0; co < ws.n; co++)
        l.weight.set(co, 0, ws.h / 2, ws.w / 2, 1.f);
      l.bias = Tensor(l.bias.shape());
    }
    // conv5: center tap 1, bias removes the lift and adds the offset
    auto& l5 = net.layers[4];
    const Shape4 w5 = l5.weight.shape();
    l5.weight = Tensor(w5);
    for (std::int64_t ci = 0; ci < 1; ci++)
      l5.weight.set(0, ci, w5.h / 2, w5.w / 2, 1.f);
    l5.bias = Tensor::full(l5.bias.shape(), f.offset - lift);
  };
  program(layer.scale_net1, s1);
  program(layer.shift_net1, t1);
  program(layer.scale_net2, s2);
  program(layer.shift_net2, t2);
  return layer;
}

}  // namespace

TEST_CASE("augment replicates the image and extraction round-trips") {
  Tensor img = random_tensor<float>({3, 1, 4, 4}, 1);
  Tensor a2 = flow::augment<float>(nullptr, img, 2);
  CHECK(a2.shape() == Shape4{3, 2, 4, 4});
  Tensor a4 = flow::augment<float>(nullptr, img, 4);
  for (std::int64_t c = 0; c < 4; c++)
    for (std::int64_t n = 0; n < 3; n++)
      for (std::int64_t i = 0; i < 16; i++)
        CHECK(a4.data()[(n * 4 + c) * 16 + i] == img.data()[n * 16 + i]);

  auto [ct, z] = flow::extract_ct<float>(nullptr, a4);
  CHECK(bitwise_equal(ct, img));
  CHECK(z.shape() == Shape4{3, 3, 4, 4});
  CHECK(bitwise_equal(ops::concat<float>(nullptr, ct, z), a4));

  CHECK_THROWS_AS(flow::augment<float>(nullptr, img, 3), ContractError);
  CHECK_THROWS_AS(flow::augment<float>(nullptr, img, 0), ContractError);
  Tensor single({1, 1, 2, 2});
  CHECK_THROWS_AS(flow::extract_ct<float>(nullptr, single), ContractError);
}

TEST_CASE("coupling with zero subnets is the identity") {
  const FlowConfig cfg = small_cfg();
  CouplingLayerT<float> layer(cfg.channels, cfg);  // all-zero parameters
  Tensor x1 = random_tensor<float>({2, 1, 5, 5}, 3);
  Tensor x2 = random_tensor<float>({2, 1, 5, 5}, 4);
  auto [y1, y2] = layer.forward(nullptr, x1, x2);
  CHECK(bitwise_equal(y1, x1));
  CHECK(bitwise_equal(y2, x2));
  auto [r1, r2] = layer.inverse(nullptr, y1, y2);
  CHECK(bitwise_equal(r1, x1));
  CHECK(bitwise_equal(r2, x2));
}

TEST_CASE("coupling with a constant shift adds the constant") {
  const FlowConfig cfg = small_cfg();
  CouplingLayerT<float> layer(cfg.channels, cfg);
  layer.shift_net1.layers[4].bias = Tensor::full({1, 1, 1, 1}, 0.75f);
  Tensor x1 = random_tensor<float>({1, 1, 4, 4}, 5);
  Tensor x2 = random_tensor<float>({1, 1, 4, 4}, 6);
  auto [y1, y2] = layer.forward(nullptr, x1, x2);
  for (std::int64_t i = 0; i < 16; i++)
    CHECK(y1.data()[i] == doctest::Approx(x1.data()[i] + 0.75f));
  CHECK(bitwise_equal(y2, x2));  // scale_net2/shift_net2 are zero
}

TEST_CASE("coupling matches the scalar affine-subnet oracle") {
  const FlowConfig cfg = small_cfg();
  ref::AffineMap<float> s1{0.31f, -0.12f}, t1{-0.45f, 0.2f};
  ref::AffineMap<float> s2{-0.27f, 0.08f}, t2{0.5f, -0.33f};
  CouplingLayerT<float> layer = affine_coupling(cfg, s1, t1, s2, t2);
  Tensor x1 = random_tensor<float>({1, 1, 6, 6}, 7);
  Tensor x2 = random_tensor<float>({1, 1, 6, 6}, 8);
  auto [y1, y2] = layer.forward(nullptr, x1, x2);
  Tensor e1, e2;
  ref::coupling_forward_affine<float>(x1, x2, s1, t1, s2, t2, float(cfg.scale_clamp), e1,
                                      e2);
  CHECK(max_abs_diff(y1, e1) < 1e-6);
  CHECK(max_abs_diff(y2, e2) < 1e-6);
}

TEST_CASE("coupling inverse round-trips under random parameters") {
  const FlowConfig cfg = small_cfg();
  for (std::uint64_t seed = 1; seed <= 10; seed++) {
    CouplingLayerT<float> layer(cfg.channels, cfg);
    Rng rng(seed);
    layer.scale_net1.init_random(rng, 0.7);
    layer.shift_net1.init_random(rng, 0.7);
    layer.scale_net2.init_random(rng, 0.7);
    layer.shift_net2.init_random(rng, 0.7);
    Tensor x1 = random_tensor<float>({2, 1, 6, 6}, seed + 10);
    Tensor x2 = random_tensor<float>({2, 1, 6, 6}, seed + 20);
    auto [y1, y2] = layer.forward(nullptr, x1, x2);
    auto [r1, r2] = layer.inverse(nullptr, y1, y2);
    CHECK(max_abs_diff(r1, x1) < 1e-5);
    CHECK(max_abs_diff(r2, x2) < 1e-5);
  }
}

TEST_CASE("inverse order matters: computing x1 before x2 breaks the round-trip") {
  const FlowConfig cfg = small_cfg();
  ref::AffineMap<float> s1{0.4f, 0.1f}, t1{-0.3f, 0.25f};
  ref::AffineMap<float> s2{0.35f, -0.15f}, t2{0.6f, 0.1f};
  CouplingLayerT<float> layer = affine_coupling(cfg, s1, t1, s2, t2);
  Tensor x1 = random_tensor<float>({1, 1, 6, 6}, 31);
  Tensor x2 = random_tensor<float>({1, 1, 6, 6}, 32);
  auto [y1, y2] = layer.forward(nullptr, x1, x2);

  // deliberately mis-ordered inverse: uses y2 where x2 is required
  const float alpha = float(cfg.scale_clamp);
  auto clamp = [alpha](float v) { return alpha * std::tanh(v / alpha); };
  Tensor bad1(x1.shape()), bad2(x2.shape());
  for (std::int64_t i = 0; i < x1.elems(); i++) {
    const float b2 =
        (y2.data()[i] - t2(y1.data()[i])) * std::exp(-clamp(s2(y1.data()[i])));
    const float b1 =
        (y1.data()[i] - t1(y2.data()[i])) * std::exp(-clamp(s1(y2.data()[i])));
    bad1.mutable_data()[i] = b1;
    bad2.mutable_data()[i] = b2;
  }
  CHECK(max_abs_diff(bad2, x2) < 1e-5);   // second half is fine either way
  CHECK(max_abs_diff(bad1, x1) > 1e-3);   // first half needs the recovered x2
}

TEST_CASE("invertible 1x1 channel mix") {
  InvConv1x1T<float> mix(2, 1e6);
  Tensor x = random_tensor<float>({2, 2, 4, 4}, 9);
  CHECK(bitwise_equal(mix.forward(nullptr, x), x));  // identity weight

  InvConv1x1T<float> swap(2, 1e6);
  swap.weight = Tensor({2, 2, 1, 1}, {0.f, 1.f, 1.f, 0.f});
  Tensor y = swap.forward(nullptr, x);
  for (std::int64_t n = 0; n < 2; n++)
    for (std::int64_t i = 0; i < 16; i++) {
      CHECK(y.data()[(n * 2 + 0) * 16 + i] == x.data()[(n * 2 + 1) * 16 + i]);
      CHECK(y.data()[(n * 2 + 1) * 16 + i] == x.data()[(n * 2 + 0) * 16 + i]);
    }

  for (std::uint64_t seed = 1; seed <= 5; seed++) {
    InvConv1x1T<float> m(4, 1e6);
    Rng rng(seed);
    m.init_orthogonal(rng);
    Tensor v = random_tensor<float>({1, 4, 5, 5}, seed + 40);
    Tensor round = m.inverse(nullptr, m.forward(nullptr, v));
    CHECK(max_abs_diff(round, v) < 1e-5);

    // W * W^-1 close to identity
    Tensor inv = ops::mat_inverse<float>(nullptr, m.weight, 1e6);
    for (std::int64_t i = 0; i < 4; i++)
      for (std::int64_t j = 0; j < 4; j++) {
        double acc = 0;
        for (std::int64_t k = 0; k < 4; k++)
          acc += double(m.weight.data()[i * 4 + k]) * double(inv.data()[k * 4 + j]);
        CHECK(std::abs(acc - (i == j ? 1.0 : 0.0)) < 1e-5);
      }
  }

  InvConv1x1T<float> singular(2, 1e6);
  singular.weight = Tensor({2, 2, 1, 1}, {1.f, 2.f, 2.f, 4.f});
  CHECK_THROWS_AS(singular.inverse(nullptr, x), NumericError);
}

TEST_CASE("actnorm forward/inverse and data-dependent init") {
  ActNormT<float> an(2);
  CHECK_THROWS_AS(an.forward(nullptr, Tensor({1, 2, 2, 2})), ContractError);

  an.init_identity();
  Tensor x = random_tensor<float>({2, 2, 3, 3}, 11);
  CHECK(bitwise_equal(an.forward(nullptr, x), x));

  an.scale = Tensor({1, 2, 1, 1}, {2.f, 2.f});
  an.bias = Tensor({1, 2, 1, 1}, {3.f, 3.f});
  Tensor one = Tensor::full({1, 2, 1, 1}, 1.f);
  Tensor five = an.forward(nullptr, one);
  CHECK(five.data()[0] == 5.f);
  Tensor back = an.inverse(nullptr, five);
  CHECK(back.data()[0] == doctest::Approx(1.f));

  ActNormT<float> init(3);
  Tensor batch = random_tensor<float>({4, 3, 8, 8}, 12, -3.0, 5.0);
  init.init_from_batch(batch);
  Tensor out = init.forward(nullptr, batch);
  for (std::int64_t c = 0; c < 3; c++) {
    double mean = 0, var = 0;
    for (std::int64_t n = 0; n < 4; n++)
      for (std::int64_t i = 0; i < 64; i++) mean += out.data()[(n * 3 + c) * 64 + i];
    mean /= 256;
    for (std::int64_t n = 0; n < 4; n++)
      for (std::int64_t i = 0; i < 64; i++) {
        const double d = out.data()[(n * 3 + c) * 64 + i] - mean;
        var += d * d;
      }
    var /= 256;
    CHECK(std::abs(mean) < 1e-3);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }

  ActNormT<float> zero(1);
  zero.init_identity();
  zero.scale = Tensor({1, 1, 1, 1});  // zero entry
  CHECK_THROWS_AS(zero.forward(nullptr, Tensor({1, 1, 2, 2})), ContractError);
}

TEST_CASE("identity-initialized model is the identity map") {
  const FlowConfig cfg = small_cfg(8, 2, 8);
  FlowModel model = FlowModel::identity_init(cfg, 1);
  Tensor x = random_tensor<float>({2, 2, 8, 8}, 13);
  CHECK(bitwise_equal(model.forward(nullptr, x), x));
  CHECK(bitwise_equal(model.inverse(nullptr, x), x));
}

TEST_CASE("model forward equals the block-by-block composition") {
  const FlowConfig cfg = small_cfg(3, 2, 8);
  FlowModel model = FlowModel::random_init(cfg, 21);
  Tensor x = random_tensor<float>({2, 2, 8, 8}, 22);
  Tensor got = model.forward(nullptr, x);

  // independent driver: apply the three layer ops of each block in sequence
  Tensor z = x;
  for (const auto& block : model.blocks) {
    z = block.actnorm.forward(nullptr, z);
    z = block.mix.forward(nullptr, z);
    auto [z1, z2] = ops::split_half<float>(nullptr, z);
    auto [y1, y2] = block.coupling.forward(nullptr, z1, z2);
    z = ops::concat<float>(nullptr, y1, y2);
  }
  CHECK(bitwise_equal(got, z));
}

TEST_CASE("one block differs from eight unless parameters are identity") {
  Tensor x = random_tensor<float>({1, 2, 8, 8}, 23);
  FlowModel one = FlowModel::random_init(small_cfg(1, 2, 8), 24);
  FlowModel eight = FlowModel::random_init(small_cfg(8, 2, 8), 24);
  CHECK(max_abs_diff(one.forward(nullptr, x), eight.forward(nullptr, x)) > 1e-4);
}

TEST_CASE("model round-trips under many random parameter draws") {
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 25; seed++) {
    FlowModel model = FlowModel::random_init(small_cfg(4, 2, 8), seed);
    Tensor x = random_tensor<float>({1, 2, 12, 12}, seed + 500);
    Tensor y = model.forward(nullptr, x);
    worst = std::max(worst, max_abs_diff(model.inverse(nullptr, y), x));
    Tensor x2 = model.inverse(nullptr, y);
    worst = std::max(worst, max_abs_diff(model.forward(nullptr, x2), y));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("shapes are preserved at every block boundary") {
  const FlowConfig cfg = small_cfg(4, 4, 8);
  FlowModel model = FlowModel::random_init(cfg, 31);
  Tensor z = random_tensor<float>({2, 4, 10, 10}, 32);
  const Shape4 s = z.shape();
  for (const auto& block : model.blocks) {
    z = block.forward(nullptr, z);
    CHECK(z.shape() == s);
  }
}

TEST_CASE("clamped scales keep large inputs finite") {
  const FlowConfig cfg = small_cfg(2, 2, 8);
  FlowModel model = FlowModel::random_init(cfg, 41);
  Tensor x = random_tensor<float>({1, 2, 8, 8}, 42, -1000.0, 1000.0);
  Tensor y = model.forward(nullptr, x);  // finite or ops would have thrown
  for (std::int64_t i = 0; i < y.elems(); i++) CHECK(std::isfinite(y.data()[i]));

  // log-scales stay within [-alpha, alpha]
  Tensor s = random_tensor<float>({1, 1, 4, 4}, 43, -50.0, 50.0);
  Tensor clamped = ops::soft_clamp<float>(nullptr, s, 2.f);
  for (std::int64_t i = 0; i < clamped.elems(); i++) {
    CHECK(clamped.data()[i] <= 2.f);
    CHECK(clamped.data()[i] >= -2.f);
  }
}

TEST_CASE("gradients reach every parameter group") {
  const FlowConfig cfg = small_cfg(2, 2, 4);
  FlowModel model = FlowModel::random_init(cfg, 51);
  Tensor x = random_tensor<float>({2, 2, 8, 8}, 52);
  Tensor probe = random_tensor<float>({2, 2, 8, 8}, 53, 0.25, 1.25);

  Tape tape;
  model.bind_params(tape);
  Tensor y = model.forward(&tape, x);
  Tensor loss = ops::mean_all<float>(&tape, ops::mul<float>(&tape, y, probe));
  tape.backward(loss.node);

  model.visit_params([&](Tensor& t, const std::string& name) {
    const Tensor* g = tape.grad(t.node);
    REQUIRE_MESSAGE(g != nullptr, name);
    double mag = 0;
    for (std::int64_t i = 0; i < g->elems(); i++) mag += std::abs(double(g->data()[i]));
    CHECK_MESSAGE(mag > 0, name);
  });
  model.unbind_params();
}

TEST_CASE("block errors carry the block index") {
  const FlowConfig cfg = small_cfg(3, 2, 4);
  FlowModel model = FlowModel::random_init(cfg, 61);
  model.blocks[1].mix.weight = Tensor({2, 2, 1, 1}, {1.f, 1.f, 1.f, 1.f});  // singular
  Tensor y = random_tensor<float>({1, 2, 6, 6}, 62);
  try {
    model.inverse(nullptr, y);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("block 1") != std::string::npos);
  }
}
