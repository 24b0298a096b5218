#pragma once

#include <cstdint>
#include <vector>

#include "ivnac/common.hpp"
#include "ivnac/tensor.hpp"

namespace ivnac {

// Single-channel 2D image, row-major.
struct Image {
  std::int64_t h = 0, w = 0;
  std::vector<float> v;

  Image() = default;
  Image(std::int64_t h_, std::int64_t w_, float fill = 0.f)
      : h(h_), w(w_), v(size_t(h_ * w_), fill) {}

  float& at(std::int64_t y, std::int64_t x) { return v[size_t(y * w + x)]; }
  float at(std::int64_t y, std::int64_t x) const { return v[size_t(y * w + x)]; }
  std::int64_t pixels() const { return h * w; }

  float max() const;
  float min() const;

  Tensor to_tensor() const;                 // (1,1,h,w)
  static Image from_tensor(const Tensor& t, std::int64_t n = 0, std::int64_t c = 0);
};

}  // namespace ivnac
