#pragma once

#include "ivnac/kernels.hpp"
#include "ivnac/tensor.hpp"

// Serial reference implementations: straight loop transcriptions kept
// deliberately naive and independent of the fast kernels. Tests use them as
// oracles; the benchmark target compares them against the OpenMP kernels.
// Not part of the production path.
namespace ivnac::ref {

// cross-correlation with zero padding, stride 1
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight,
                  const std::vector<T>& bias, std::int64_t pad);

template <typename T>
TensorT<T> conv2d_grad_input(const TensorT<T>& gout, const TensorT<T>& weight,
                             Shape4 input_shape, std::int64_t pad);

template <typename T>
TensorT<T> conv2d_grad_weight(const TensorT<T>& input, const TensorT<T>& gout,
                              Shape4 weight_shape, std::int64_t pad);

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);

// A pointwise affine stand-in for a coupling subnet: u -> gain*u + offset.
template <typename T>
struct AffineMap {
  T gain, offset;
  T operator()(T u) const { return gain * u + offset; }
};

// Scalar-loop evaluation of the two-pass affine coupling law with affine
// stand-ins for the four subnets and the soft log-scale clamp.
template <typename T>
void coupling_forward_affine(const TensorT<T>& x1, const TensorT<T>& x2, AffineMap<T> s1,
                             AffineMap<T> t1, AffineMap<T> s2, AffineMap<T> t2, T alpha,
                             TensorT<T>& y1, TensorT<T>& y2);

}  // namespace ivnac::ref
