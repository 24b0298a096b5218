#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "ivnac/autodiff.hpp"
#include "ivnac/common.hpp"
#include "ivnac/image.hpp"
#include "ivnac/tensor.hpp"

namespace ivnac::testing {

template <typename T>
TensorT<T> random_tensor(Shape4 s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  TensorT<T> t(s);
  T* p = t.mutable_data();
  for (std::int64_t i = 0; i < t.elems(); i++) p[i] = T(rng.uniform(lo, hi));
  return t;
}

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  double best = 0;
  for (std::int64_t i = 0; i < a.elems(); i++)
    best = std::max(best, std::abs(double(a.data()[i]) - double(b.data()[i])));
  return best;
}

template <typename T>
bool bitwise_equal(const TensorT<T>& a, const TensorT<T>& b) {
  if (!(a.shape() == b.shape())) return false;
  for (std::int64_t i = 0; i < a.elems(); i++)
    if (std::memcmp(&a.data()[i], &b.data()[i], sizeof(T)) != 0) return false;
  return true;
}

inline double ncc(const Image& a, const Image& b) {
  double ma = 0, mb = 0;
  for (size_t i = 0; i < a.v.size(); i++) {
    ma += a.v[i];
    mb += b.v[i];
  }
  ma /= double(a.pixels());
  mb /= double(b.pixels());
  double num = 0, da = 0, db = 0;
  for (size_t i = 0; i < a.v.size(); i++) {
    const double xa = a.v[i] - ma, xb = b.v[i] - mb;
    num += xa * xb;
    da += xa * xa;
    db += xb * xb;
  }
  return num / std::sqrt(da * db);
}

// Central finite differences against tape gradients, in double. The builder
// receives the tape (or null) and the current inputs and returns the scalar
// loss; every element of every listed input is probed.
inline double fd_max_rel_err(
    std::vector<Tensor64*> inputs,
    const std::function<Tensor64(Tape64*, const std::vector<Tensor64*>&)>& builder,
    double step = 1e-4) {
  Tape64 tape;
  std::vector<int> ids;
  for (Tensor64* t : inputs) ids.push_back(tape.param(*t));
  Tensor64 loss = builder(&tape, inputs);
  tape.backward(loss.node);

  double worst = 0;
  for (size_t k = 0; k < inputs.size(); k++) {
    const TensorT<double>* grad = tape.grad(ids[k]);
    Tensor64* t = inputs[k];
    for (std::int64_t i = 0; i < t->elems(); i++) {
      const double saved = t->data()[i];
      t->mutable_data()[i] = saved + step;
      const double lp = builder(nullptr, inputs).data()[0];
      t->mutable_data()[i] = saved - step;
      const double lm = builder(nullptr, inputs).data()[0];
      t->mutable_data()[i] = saved;
      const double fd = (lp - lm) / (2 * step);
      const double an = grad ? grad->data()[i] : 0.0;
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

}  // namespace ivnac::testing
