#include "ivnac/ref.hpp"

#include <cmath>

namespace ivnac::ref {

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight,
                  const std::vector<T>& bias, std::int64_t pad) {
  const Shape4 xs = input.shape(), ws = weight.shape();
  const std::int64_t k = ws.h;
  const std::int64_t ho = xs.h + 2 * pad - k + 1, wo = xs.w + 2 * pad - k + 1;
  TensorT<T> out({xs.n, ws.n, ho, wo});
  for (std::int64_t n = 0; n < xs.n; n++)
    for (std::int64_t co = 0; co < ws.n; co++)
      for (std::int64_t y = 0; y < ho; y++)
        for (std::int64_t x = 0; x < wo; x++) {
          T acc = bias[size_t(co)];
          for (std::int64_t ci = 0; ci < xs.c; ci++)
            for (std::int64_t kh = 0; kh < k; kh++)
              for (std::int64_t kw = 0; kw < k; kw++) {
                const std::int64_t iy = y + kh - pad, ix = x + kw - pad;
                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                acc += input.at(n, ci, iy, ix) * weight.at(co, ci, kh, kw);
              }
          out.set(n, co, y, x, acc);
        }
  return out;
}

template <typename T>
TensorT<T> conv2d_grad_input(const TensorT<T>& gout, const TensorT<T>& weight,
                             Shape4 input_shape, std::int64_t pad) {
  const Shape4 ws = weight.shape(), gs = gout.shape();
  const std::int64_t k = ws.h;
  TensorT<T> gin(input_shape);
  for (std::int64_t n = 0; n < gs.n; n++)
    for (std::int64_t co = 0; co < gs.c; co++)
      for (std::int64_t y = 0; y < gs.h; y++)
        for (std::int64_t x = 0; x < gs.w; x++) {
          const T g = gout.at(n, co, y, x);
          for (std::int64_t ci = 0; ci < ws.c; ci++)
            for (std::int64_t kh = 0; kh < k; kh++)
              for (std::int64_t kw = 0; kw < k; kw++) {
                const std::int64_t iy = y + kh - pad, ix = x + kw - pad;
                if (iy < 0 || iy >= input_shape.h || ix < 0 || ix >= input_shape.w) continue;
                gin.set(n, ci, iy, ix,
                        gin.at(n, ci, iy, ix) + g * weight.at(co, ci, kh, kw));
              }
        }
  return gin;
}

template <typename T>
TensorT<T> conv2d_grad_weight(const TensorT<T>& input, const TensorT<T>& gout,
                              Shape4 weight_shape, std::int64_t pad) {
  const Shape4 xs = input.shape(), gs = gout.shape();
  const std::int64_t k = weight_shape.h;
  TensorT<T> gw(weight_shape);
  for (std::int64_t n = 0; n < gs.n; n++)
    for (std::int64_t co = 0; co < gs.c; co++)
      for (std::int64_t y = 0; y < gs.h; y++)
        for (std::int64_t x = 0; x < gs.w; x++) {
          const T g = gout.at(n, co, y, x);
          for (std::int64_t ci = 0; ci < xs.c; ci++)
            for (std::int64_t kh = 0; kh < k; kh++)
              for (std::int64_t kw = 0; kw < k; kw++) {
                const std::int64_t iy = y + kh - pad, ix = x + kw - pad;
                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                gw.set(co, ci, kh, kw,
                       gw.at(co, ci, kh, kw) + g * input.at(n, ci, iy, ix));
              }
        }
  return gw;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  TensorT<T> out(a.shape());
  T* o = out.mutable_data();
  for (std::int64_t i = 0; i < a.elems(); i++) o[i] = a.data()[i] * b.data()[i];
  return out;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  TensorT<T> out(a.shape());
  T* o = out.mutable_data();
  for (std::int64_t i = 0; i < a.elems(); i++) o[i] = a.data()[i] + b.data()[i];
  return out;
}

template <typename T>
void coupling_forward_affine(const TensorT<T>& x1, const TensorT<T>& x2, AffineMap<T> s1,
                             AffineMap<T> t1, AffineMap<T> s2, AffineMap<T> t2, T alpha,
                             TensorT<T>& y1, TensorT<T>& y2) {
  auto clamp = [alpha](T v) { return alpha * std::tanh(v / alpha); };
  y1 = TensorT<T>(x1.shape());
  y2 = TensorT<T>(x2.shape());
  T* o1 = y1.mutable_data();
  T* o2 = y2.mutable_data();
  for (std::int64_t i = 0; i < x1.elems(); i++) {
    const T a = x1.data()[i], b = x2.data()[i];
    const T v1 = a * std::exp(clamp(s1(b))) + t1(b);
    const T v2 = b * std::exp(clamp(s2(v1))) + t2(v1);
    o1[i] = v1;
    o2[i] = v2;
  }
}

#define IVNAC_REF_INSTANTIATE(T)                                                        \
  template TensorT<T> conv2d<T>(const TensorT<T>&, const TensorT<T>&,                   \
                                const std::vector<T>&, std::int64_t);                   \
  template TensorT<T> conv2d_grad_input<T>(const TensorT<T>&, const TensorT<T>&,        \
                                           Shape4, std::int64_t);                       \
  template TensorT<T> conv2d_grad_weight<T>(const TensorT<T>&, const TensorT<T>&,       \
                                            Shape4, std::int64_t);                      \
  template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&);                     \
  template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);                     \
  template void coupling_forward_affine<T>(const TensorT<T>&, const TensorT<T>&,        \
                                           AffineMap<T>, AffineMap<T>, AffineMap<T>,    \
                                           AffineMap<T>, T, TensorT<T>&, TensorT<T>&);

IVNAC_REF_INSTANTIATE(float)
IVNAC_REF_INSTANTIATE(double)
#undef IVNAC_REF_INSTANTIATE

}  // namespace ivnac::ref
