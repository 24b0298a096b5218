#pragma once

#include <cstdint>

#include "ivnac/tensor.hpp"

// Numeric kernels behind the tensor ops. All kernels are data-parallel with
// OpenMP across *independent output elements*: each output value is produced
// by exactly one thread with a fixed serial accumulation order, so results
// are bitwise identical for any thread count.
namespace ivnac::kernels {

struct ConvDims {
  std::int64_t n, cin, cout, h, w;  // input geometry
  std::int64_t k, pad;              // square kernel, symmetric zero padding

  std::int64_t hout() const { return h + 2 * pad - k + 1; }
  std::int64_t wout() const { return w + 2 * pad - k + 1; }
};

// Zero-pads every (n, c) plane into a (h + 2*pad) x (w + 2*pad) buffer.
template <typename T>
void pad_planes(const T* in, T* out, std::int64_t n, std::int64_t c, std::int64_t h,
                std::int64_t w, std::int64_t pad);

// out[n,co,.,.] = bias[co] + cross-correlation(in, weight[co])
// `padded` is the pad_planes buffer of the input.
template <typename T>
void conv2d_forward(const T* padded, const T* weight, const T* bias, T* out,
                    const ConvDims& d);

// gw[co,ci,kh,kw] = sum_{n,y,x} padded_in[n,ci,y+kh,x+kw] * gout[n,co,y,x]
template <typename T>
void conv2d_grad_weight(const T* padded_in, const T* gout, T* gweight, const ConvDims& d);

// gb[co] = sum over gout[n,co,.,.]
template <typename T>
void conv2d_grad_bias(const T* gout, T* gbias, const ConvDims& d);

// Rearranges weight [Co,Ci,k,k] into [Ci,Co,k,k] with both kernel axes
// flipped; correlating the output gradient with this gives the input
// gradient via conv2d_forward at padding k - 1 - pad.
template <typename T>
void transpose_flip_weight(const T* weight, T* out, std::int64_t cout, std::int64_t cin,
                           std::int64_t k);

// y[n,i,.,.] = sum_j m[i*c+j] * x[n,j,.,.]   (per-pixel channel mixing)
template <typename T>
void channel_matmul(const T* x, const T* m, T* y, std::int64_t n, std::int64_t c,
                    std::int64_t hw);

template <typename T>
void channel_matmul_grad_m(const T* x, const T* gy, T* gm, std::int64_t n, std::int64_t c,
                           std::int64_t hw);

// y[n,c,.,.] = x[n,c,.,.] * scale[c] + bias[c]
template <typename T>
void channel_affine(const T* x, const T* scale, const T* bias, T* y, std::int64_t n,
                    std::int64_t c, std::int64_t hw);

// gscale[c] = sum gy*x over (n,.,.), gbias[c] = sum gy
template <typename T>
void channel_affine_grad_sb(const T* x, const T* gy, T* gscale, T* gbias, std::int64_t n,
                            std::int64_t c, std::int64_t hw);

enum class Binary { add, sub, mul };

template <typename T>
void binary_ew(Binary op, const T* a, const T* b, T* out, std::int64_t n);

template <typename T>
void exp_ew(const T* a, T* out, std::int64_t n);

template <typename T>
void leaky_relu_ew(const T* a, T* out, std::int64_t n, T slope);

// soft clamp alpha * tanh(x / alpha): keeps log-scales inside [-alpha, alpha]
template <typename T>
void soft_clamp_ew(const T* a, T* out, std::int64_t n, T alpha);

template <typename T>
void scale_add_ew(const T* a, T* out, std::int64_t n, T mul, T add);

// serial fixed-order sum
template <typename T>
T sum_all(const T* a, std::int64_t n);

// Throws NumericError naming `op` if any value is NaN/Inf.
template <typename T>
void check_finite(const T* a, std::int64_t n, const char* op);

}  // namespace ivnac::kernels
