#include "ivnac/kernels.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <string>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace ivnac::kernels {

template <typename T>
void pad_planes(const T* in, T* out, std::int64_t n, std::int64_t c, std::int64_t h,
                std::int64_t w, std::int64_t pad) {
  const std::int64_t pw = w + 2 * pad, ph = h + 2 * pad;
  const std::int64_t hw = h * w, phw = ph * pw;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t ni = 0; ni < n; ni++) {
    for (std::int64_t ci = 0; ci < c; ci++) {
      T* p = out + (ni * c + ci) * phw;
      const T* src = in + (ni * c + ci) * hw;
      std::memset(p, 0, sizeof(T) * size_t(pad * pw));
      std::memset(p + (ph - pad) * pw, 0, sizeof(T) * size_t(pad * pw));
      for (std::int64_t y = 0; y < h; y++) {
        T* row = p + (y + pad) * pw;
        for (std::int64_t x = 0; x < pad; x++) row[x] = T(0);
        for (std::int64_t x = 0; x < pad; x++) row[pw - 1 - x] = T(0);
        std::memcpy(row + pad, src + y * w, sizeof(T) * size_t(w));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// conv2d, generic path
// ---------------------------------------------------------------------------

template <typename T>
static void conv2d_forward_generic(const T* padded, const T* weight, const T* bias, T* out,
                                   const ConvDims& d) {
  const std::int64_t ho = d.hout(), wo = d.wout();
  const std::int64_t pw = d.w + 2 * d.pad;
  const std::int64_t phw = (d.h + 2 * d.pad) * pw;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < d.n; n++) {
    for (std::int64_t co = 0; co < d.cout; co++) {
      T* o = out + (n * d.cout + co) * ho * wo;
      const T* pb = padded + n * d.cin * phw;
      for (std::int64_t y = 0; y < ho; y++) {
        T* orow = o + y * wo;
        for (std::int64_t x = 0; x < wo; x++) orow[x] = bias[co];
        for (std::int64_t ci = 0; ci < d.cin; ci++) {
          const T* plane = pb + ci * phw;
          const T* wp = weight + (co * d.cin + ci) * d.k * d.k;
          for (std::int64_t kh = 0; kh < d.k; kh++) {
            const T* prow = plane + (y + kh) * pw;
            for (std::int64_t kw = 0; kw < d.k; kw++) {
              const T wv = wp[kh * d.k + kw];
              const T* r = prow + kw;
#pragma omp simd
              for (std::int64_t x = 0; x < wo; x++) orow[x] += wv * r[x];
            }
          }
        }
      }
    }
  }
}

template <typename T>
static void conv2d_grad_weight_generic(const T* padded_in, const T* gout, T* gweight,
                                       const ConvDims& d) {
  const std::int64_t ho = d.hout(), wo = d.wout();
  const std::int64_t pw = d.w + 2 * d.pad;
  const std::int64_t phw = (d.h + 2 * d.pad) * pw;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t co = 0; co < d.cout; co++) {
    for (std::int64_t ci = 0; ci < d.cin; ci++) {
      T* gw = gweight + (co * d.cin + ci) * d.k * d.k;
      for (std::int64_t kh = 0; kh < d.k; kh++) {
        for (std::int64_t kw = 0; kw < d.k; kw++) {
          T acc = T(0);
          for (std::int64_t n = 0; n < d.n; n++) {
            const T* plane = padded_in + (n * d.cin + ci) * phw;
            const T* g = gout + (n * d.cout + co) * ho * wo;
            for (std::int64_t y = 0; y < ho; y++) {
              const T* prow = plane + (y + kh) * pw + kw;
              const T* grow = g + y * wo;
              T racc = T(0);
#pragma omp simd reduction(+ : racc)
              for (std::int64_t x = 0; x < wo; x++) racc += prow[x] * grow[x];
              acc += racc;
            }
          }
          gw[kh * d.k + kw] = acc;
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// conv2d, AVX-512 fast path for float 3x3 same-padding (the flow subnets)
// ---------------------------------------------------------------------------

#if defined(__AVX512F__)

static void conv3x3_forward_f32_avx512(const float* padded, const float* weight,
                                       const float* bias, float* out, const ConvDims& d) {
  const std::int64_t H = d.h, W = d.w;
  const std::int64_t pw = W + 2, phw = (H + 2) * pw, hw = H * W;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < d.n; n++) {
    for (std::int64_t cb = 0; cb < d.cout; cb += 4) {
      const int nco = int(cb + 4 <= d.cout ? 4 : d.cout - cb);
      const float* pb = padded + n * d.cin * phw;
      for (std::int64_t y = 0; y < H; y++) {
        std::int64_t x0 = 0;
        // full 32-wide tiles, 4 output channels per pass
        for (; x0 + 32 <= W; x0 += 32) {
          __m512 acc[4][2];
          for (int c = 0; c < nco; c++) acc[c][0] = acc[c][1] = _mm512_set1_ps(bias[cb + c]);
          for (std::int64_t ci = 0; ci < d.cin; ci++) {
            const float* prow = pb + ci * phw + y * pw + x0;
            const float* wp = weight + (cb * d.cin + ci) * 9;
            for (int k = 0; k < 9; k++) {
              const float* r = prow + (k / 3) * pw + (k % 3);
              const __m512 v0 = _mm512_loadu_ps(r);
              const __m512 v1 = _mm512_loadu_ps(r + 16);
              for (int c = 0; c < nco; c++) {
                const __m512 wv = _mm512_set1_ps(wp[std::int64_t(c) * d.cin * 9 + k]);
                acc[c][0] = _mm512_fmadd_ps(wv, v0, acc[c][0]);
                acc[c][1] = _mm512_fmadd_ps(wv, v1, acc[c][1]);
              }
            }
          }
          for (int c = 0; c < nco; c++) {
            float* o = out + (n * d.cout + cb + c) * hw + y * W + x0;
            _mm512_storeu_ps(o, acc[c][0]);
            _mm512_storeu_ps(o + 16, acc[c][1]);
          }
        }
        if (x0 < W) {
          const int rem = int(W - x0);
          const __mmask16 m0 = rem >= 16 ? __mmask16(0xFFFF) : __mmask16((1u << rem) - 1);
          const __mmask16 m1 = rem > 16 ? __mmask16((1u << (rem - 16)) - 1) : __mmask16(0);
          __m512 acc[4][2];
          for (int c = 0; c < nco; c++) acc[c][0] = acc[c][1] = _mm512_set1_ps(bias[cb + c]);
          for (std::int64_t ci = 0; ci < d.cin; ci++) {
            const float* prow = pb + ci * phw + y * pw + x0;
            const float* wp = weight + (cb * d.cin + ci) * 9;
            for (int k = 0; k < 9; k++) {
              const float* r = prow + (k / 3) * pw + (k % 3);
              const __m512 v0 = _mm512_maskz_loadu_ps(m0, r);
              const __m512 v1 = m1 ? _mm512_maskz_loadu_ps(m1, r + 16) : _mm512_setzero_ps();
              for (int c = 0; c < nco; c++) {
                const __m512 wv = _mm512_set1_ps(wp[std::int64_t(c) * d.cin * 9 + k]);
                acc[c][0] = _mm512_fmadd_ps(wv, v0, acc[c][0]);
                acc[c][1] = _mm512_fmadd_ps(wv, v1, acc[c][1]);
              }
            }
          }
          for (int c = 0; c < nco; c++) {
            float* o = out + (n * d.cout + cb + c) * hw + y * W + x0;
            _mm512_mask_storeu_ps(o, m0, acc[c][0]);
            if (m1) _mm512_mask_storeu_ps(o + 16, m1, acc[c][1]);
          }
        }
      }
    }
  }
}

static void conv3x3_grad_weight_f32_avx512(const float* padded_in, const float* gout,
                                           float* gweight, const ConvDims& d) {
  const std::int64_t H = d.h, W = d.w;
  const std::int64_t pw = W + 2, phw = (H + 2) * pw, hw = H * W;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t co = 0; co < d.cout; co++) {
    for (std::int64_t ci = 0; ci < d.cin; ci++) {
      __m512 acc[9];
      for (auto& a : acc) a = _mm512_setzero_ps();
      for (std::int64_t n = 0; n < d.n; n++) {
        const float* plane = padded_in + (n * d.cin + ci) * phw;
        const float* g = gout + (n * d.cout + co) * hw;
        for (std::int64_t y = 0; y < H; y++) {
          const float* prow = plane + y * pw;
          const float* grow = g + y * W;
          std::int64_t x0 = 0;
          for (; x0 + 16 <= W; x0 += 16) {
            const __m512 gv = _mm512_loadu_ps(grow + x0);
            for (int k = 0; k < 9; k++) {
              const __m512 iv = _mm512_loadu_ps(prow + (k / 3) * pw + (k % 3) + x0);
              acc[k] = _mm512_fmadd_ps(gv, iv, acc[k]);
            }
          }
          if (x0 < W) {
            const __mmask16 m = __mmask16((1u << (W - x0)) - 1);
            const __m512 gv = _mm512_maskz_loadu_ps(m, grow + x0);
            for (int k = 0; k < 9; k++) {
              const __m512 iv = _mm512_maskz_loadu_ps(m, prow + (k / 3) * pw + (k % 3) + x0);
              acc[k] = _mm512_fmadd_ps(gv, iv, acc[k]);
            }
          }
        }
      }
      float* gw = gweight + (co * d.cin + ci) * 9;
      for (int k = 0; k < 9; k++) gw[k] = _mm512_reduce_add_ps(acc[k]);
    }
  }
}

#endif  // __AVX512F__

template <typename T>
void conv2d_forward(const T* padded, const T* weight, const T* bias, T* out,
                    const ConvDims& d) {
#if defined(__AVX512F__)
  if constexpr (std::is_same_v<T, float>) {
    if (d.k == 3 && d.pad == 1) {
      conv3x3_forward_f32_avx512(padded, weight, bias, out, d);
      return;
    }
  }
#endif
  conv2d_forward_generic(padded, weight, bias, out, d);
}

template <typename T>
void conv2d_grad_weight(const T* padded_in, const T* gout, T* gweight, const ConvDims& d) {
#if defined(__AVX512F__)
  if constexpr (std::is_same_v<T, float>) {
    if (d.k == 3 && d.pad == 1) {
      conv3x3_grad_weight_f32_avx512(padded_in, gout, gweight, d);
      return;
    }
  }
#endif
  conv2d_grad_weight_generic(padded_in, gout, gweight, d);
}

template <typename T>
void conv2d_grad_bias(const T* gout, T* gbias, const ConvDims& d) {
  const std::int64_t how = d.hout() * d.wout();
#pragma omp parallel for schedule(static)
  for (std::int64_t co = 0; co < d.cout; co++) {
    T acc = T(0);
    for (std::int64_t n = 0; n < d.n; n++) {
      const T* g = gout + (n * d.cout + co) * how;
      for (std::int64_t i = 0; i < how; i++) acc += g[i];
    }
    gbias[co] = acc;
  }
}

template <typename T>
void transpose_flip_weight(const T* weight, T* out, std::int64_t cout, std::int64_t cin,
                           std::int64_t k) {
  const std::int64_t kk = k * k;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t ci = 0; ci < cin; ci++)
    for (std::int64_t co = 0; co < cout; co++) {
      const T* src = weight + (co * cin + ci) * kk;
      T* dst = out + (ci * cout + co) * kk;
      for (std::int64_t i = 0; i < kk; i++) dst[i] = src[kk - 1 - i];
    }
}

// ---------------------------------------------------------------------------
// channel mixing / affine
// ---------------------------------------------------------------------------

template <typename T>
void channel_matmul(const T* x, const T* m, T* y, std::int64_t n, std::int64_t c,
                    std::int64_t hw) {
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t ni = 0; ni < n; ni++) {
    for (std::int64_t i = 0; i < c; i++) {
      T* out = y + (ni * c + i) * hw;
      for (std::int64_t p = 0; p < hw; p++) out[p] = T(0);
      for (std::int64_t j = 0; j < c; j++) {
        const T mv = m[i * c + j];
        const T* in = x + (ni * c + j) * hw;
#pragma omp simd
        for (std::int64_t p = 0; p < hw; p++) out[p] += mv * in[p];
      }
    }
  }
}

template <typename T>
void channel_matmul_grad_m(const T* x, const T* gy, T* gm, std::int64_t n, std::int64_t c,
                           std::int64_t hw) {
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t i = 0; i < c; i++) {
    for (std::int64_t j = 0; j < c; j++) {
      T acc = T(0);
      for (std::int64_t ni = 0; ni < n; ni++) {
        const T* g = gy + (ni * c + i) * hw;
        const T* in = x + (ni * c + j) * hw;
        T racc = T(0);
#pragma omp simd reduction(+ : racc)
        for (std::int64_t p = 0; p < hw; p++) racc += g[p] * in[p];
        acc += racc;
      }
      gm[i * c + j] = acc;
    }
  }
}

template <typename T>
void channel_affine(const T* x, const T* scale, const T* bias, T* y, std::int64_t n,
                    std::int64_t c, std::int64_t hw) {
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t ni = 0; ni < n; ni++)
    for (std::int64_t ci = 0; ci < c; ci++) {
      const T s = scale[ci], b = bias[ci];
      const T* in = x + (ni * c + ci) * hw;
      T* out = y + (ni * c + ci) * hw;
#pragma omp simd
      for (std::int64_t p = 0; p < hw; p++) out[p] = in[p] * s + b;
    }
}

template <typename T>
void channel_affine_grad_sb(const T* x, const T* gy, T* gscale, T* gbias, std::int64_t n,
                            std::int64_t c, std::int64_t hw) {
#pragma omp parallel for schedule(static)
  for (std::int64_t ci = 0; ci < c; ci++) {
    T gs = T(0), gb = T(0);
    for (std::int64_t ni = 0; ni < n; ni++) {
      const T* in = x + (ni * c + ci) * hw;
      const T* g = gy + (ni * c + ci) * hw;
      for (std::int64_t p = 0; p < hw; p++) {
        gs += g[p] * in[p];
        gb += g[p];
      }
    }
    gscale[ci] = gs;
    gbias[ci] = gb;
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
void binary_ew(Binary op, const T* a, const T* b, T* out, std::int64_t n) {
  switch (op) {
    case Binary::add:
#pragma omp parallel for simd schedule(static)
      for (std::int64_t i = 0; i < n; i++) out[i] = a[i] + b[i];
      break;
    case Binary::sub:
#pragma omp parallel for simd schedule(static)
      for (std::int64_t i = 0; i < n; i++) out[i] = a[i] - b[i];
      break;
    case Binary::mul:
#pragma omp parallel for simd schedule(static)
      for (std::int64_t i = 0; i < n; i++) out[i] = a[i] * b[i];
      break;
  }
}

template <typename T>
void exp_ew(const T* a, T* out, std::int64_t n) {
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; i++) out[i] = std::exp(a[i]);
}

template <typename T>
void leaky_relu_ew(const T* a, T* out, std::int64_t n, T slope) {
#pragma omp parallel for simd schedule(static)
  for (std::int64_t i = 0; i < n; i++) out[i] = a[i] > T(0) ? a[i] : slope * a[i];
}

template <typename T>
void soft_clamp_ew(const T* a, T* out, std::int64_t n, T alpha) {
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; i++) out[i] = alpha * std::tanh(a[i] / alpha);
}

template <typename T>
void scale_add_ew(const T* a, T* out, std::int64_t n, T mul, T add) {
#pragma omp parallel for simd schedule(static)
  for (std::int64_t i = 0; i < n; i++) out[i] = a[i] * mul + add;
}

template <typename T>
T sum_all(const T* a, std::int64_t n) {
  T acc = T(0);
  for (std::int64_t i = 0; i < n; i++) acc += a[i];
  return acc;
}

template <typename T>
void check_finite(const T* a, std::int64_t n, const char* op) {
  std::int64_t bad = -1;
  if constexpr (std::is_same_v<T, float>) {
    // exponent-bits test vectorizes; std::isfinite does not
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; i++) {
      const auto bits = std::bit_cast<std::uint32_t>(a[i]);
      if ((bits & 0x7F800000u) == 0x7F800000u) {
#pragma omp critical
        bad = bad < 0 ? i : std::min(bad, i);
      }
    }
  } else {
    for (std::int64_t i = 0; i < n; i++)
      if (!std::isfinite(a[i])) {
        bad = i;
        break;
      }
  }
  if (bad >= 0)
    throw NumericError(std::string(op) + ": non-finite value at flat index " +
                       std::to_string(bad));
}

#define IVNAC_INSTANTIATE(T)                                                               \
  template void pad_planes<T>(const T*, T*, std::int64_t, std::int64_t, std::int64_t,     \
                              std::int64_t, std::int64_t);                                 \
  template void conv2d_forward<T>(const T*, const T*, const T*, T*, const ConvDims&);      \
  template void conv2d_grad_weight<T>(const T*, const T*, T*, const ConvDims&);           \
  template void conv2d_grad_bias<T>(const T*, T*, const ConvDims&);                       \
  template void transpose_flip_weight<T>(const T*, T*, std::int64_t, std::int64_t,        \
                                         std::int64_t);                                   \
  template void channel_matmul<T>(const T*, const T*, T*, std::int64_t, std::int64_t,     \
                                  std::int64_t);                                          \
  template void channel_matmul_grad_m<T>(const T*, const T*, T*, std::int64_t,            \
                                         std::int64_t, std::int64_t);                     \
  template void channel_affine<T>(const T*, const T*, const T*, T*, std::int64_t,         \
                                  std::int64_t, std::int64_t);                            \
  template void channel_affine_grad_sb<T>(const T*, const T*, T*, T*, std::int64_t,       \
                                          std::int64_t, std::int64_t);                    \
  template void binary_ew<T>(Binary, const T*, const T*, T*, std::int64_t);               \
  template void exp_ew<T>(const T*, T*, std::int64_t);                                    \
  template void leaky_relu_ew<T>(const T*, T*, std::int64_t, T);                          \
  template void soft_clamp_ew<T>(const T*, T*, std::int64_t, T);                          \
  template void scale_add_ew<T>(const T*, T*, std::int64_t, T, T);                        \
  template T sum_all<T>(const T*, std::int64_t);                                          \
  template void check_finite<T>(const T*, std::int64_t, const char*);

IVNAC_INSTANTIATE(float)
IVNAC_INSTANTIATE(double)
#undef IVNAC_INSTANTIATE

}  // namespace ivnac::kernels
