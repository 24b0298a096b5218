// OpenMP kernels vs the serial reference implementations at training shapes.
// Run with --benchmark_counters_tabular=true; set OMP_NUM_THREADS to scale.

#include <benchmark/benchmark.h>

#include "ivnac/autodiff.hpp"
#include "ivnac/kernels.hpp"
#include "ivnac/physics.hpp"
#include "ivnac/ref.hpp"

using namespace ivnac;

namespace {

Tensor rand_tensor(Shape4 s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(s);
  float* p = t.mutable_data();
  for (std::int64_t i = 0; i < t.elems(); i++) p[i] = float(rng.uniform(-1, 1));
  return t;
}

void flops_counter(benchmark::State& state, double flops_per_iter) {
  state.counters["GFLOP/s"] = benchmark::Counter(
      flops_per_iter * double(state.iterations()) / 1e9, benchmark::Counter::kIsRate);
}

// the hot training shape: 32->32 channels, 3x3, on 64x64, batch 4
constexpr std::int64_t kN = 4, kC = 32, kH = 64, kW = 64;
const double kConvFlops = 2.0 * kN * kC * kC * 9.0 * kH * kW;

void BM_conv_forward_omp(benchmark::State& state) {
  Tensor x = rand_tensor({kN, kC, kH, kW}, 1);
  Tensor w = rand_tensor({kC, kC, 3, 3}, 2);
  Tensor b = rand_tensor({1, kC, 1, 1}, 3);
  for (auto _ : state) {
    Tensor y = ops::conv2d<float>(nullptr, x, w, b, 1);
    benchmark::DoNotOptimize(y.data());
  }
  flops_counter(state, kConvFlops);
}
BENCHMARK(BM_conv_forward_omp)->Unit(benchmark::kMillisecond);

void BM_conv_forward_serial_ref(benchmark::State& state) {
  Tensor x = rand_tensor({kN, kC, kH, kW}, 1);
  Tensor w = rand_tensor({kC, kC, 3, 3}, 2);
  std::vector<float> b(kC, 0.1f);
  for (auto _ : state) {
    Tensor y = ref::conv2d<float>(x, w, b, 1);
    benchmark::DoNotOptimize(y.data());
  }
  flops_counter(state, kConvFlops);
}
BENCHMARK(BM_conv_forward_serial_ref)->Unit(benchmark::kMillisecond);

void BM_conv_grad_weight_omp(benchmark::State& state) {
  Tensor x = rand_tensor({kN, kC, kH, kW}, 4);
  Tensor g = rand_tensor({kN, kC, kH, kW}, 5);
  std::vector<float> padded(size_t(kN * kC * (kH + 2) * (kW + 2)));
  kernels::pad_planes<float>(x.data(), padded.data(), kN, kC, kH, kW, 1);
  Tensor gw({kC, kC, 3, 3});
  const kernels::ConvDims d{kN, kC, kC, kH, kW, 3, 1};
  for (auto _ : state) {
    kernels::conv2d_grad_weight<float>(padded.data(), g.data(), gw.mutable_data(), d);
    benchmark::DoNotOptimize(gw.data());
  }
  flops_counter(state, kConvFlops);
}
BENCHMARK(BM_conv_grad_weight_omp)->Unit(benchmark::kMillisecond);

void BM_conv_grad_weight_serial_ref(benchmark::State& state) {
  Tensor x = rand_tensor({kN, kC, kH, kW}, 4);
  Tensor g = rand_tensor({kN, kC, kH, kW}, 5);
  for (auto _ : state) {
    Tensor gw = ref::conv2d_grad_weight<float>(x, g, {kC, kC, 3, 3}, 1);
    benchmark::DoNotOptimize(gw.data());
  }
  flops_counter(state, kConvFlops);
}
BENCHMARK(BM_conv_grad_weight_serial_ref)->Unit(benchmark::kMillisecond);

void BM_elementwise_mul_omp(benchmark::State& state) {
  Tensor a = rand_tensor({kN, kC, kH, kW}, 6);
  Tensor b = rand_tensor({kN, kC, kH, kW}, 7);
  Tensor out(a.shape());
  for (auto _ : state) {
    kernels::binary_ew<float>(kernels::Binary::mul, a.data(), b.data(),
                              out.mutable_data(), a.elems());
    benchmark::DoNotOptimize(out.data());
  }
  flops_counter(state, double(a.elems()));
}
BENCHMARK(BM_elementwise_mul_omp)->Unit(benchmark::kMicrosecond);

void BM_elementwise_mul_serial_ref(benchmark::State& state) {
  Tensor a = rand_tensor({kN, kC, kH, kW}, 6);
  Tensor b = rand_tensor({kN, kC, kH, kW}, 7);
  for (auto _ : state) {
    Tensor out = ref::mul(a, b);
    benchmark::DoNotOptimize(out.data());
  }
  flops_counter(state, double(a.elems()));
}
BENCHMARK(BM_elementwise_mul_serial_ref)->Unit(benchmark::kMicrosecond);

void BM_radon_omp(benchmark::State& state) {
  Geometry g;
  Image img(g.height, g.width, 0.5f);
  for (auto _ : state) {
    Sinogram s = physics::radon(img, g);
    benchmark::DoNotOptimize(s.v.data());
  }
}
BENCHMARK(BM_radon_omp)->Unit(benchmark::kMillisecond);

void BM_fbp_omp(benchmark::State& state) {
  Geometry g;
  Image img(g.height, g.width, 0.5f);
  Sinogram s = physics::radon(img, g);
  for (auto _ : state) {
    Image rec = physics::fbp(s, g);
    benchmark::DoNotOptimize(rec.v.data());
  }
}
BENCHMARK(BM_fbp_omp)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
