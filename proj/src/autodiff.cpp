#include "ivnac/autodiff.hpp"

#include <cmath>

#include "ivnac/kernels.hpp"

namespace ivnac {

template <typename T>
int TapeT<T>::push(TensorT<T> value, std::vector<int> inputs, BackwardFn fn, bool req) {
  for (int id : inputs) req = req || nodes_[size_t(id)].requires_grad;
  nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(fn), req});
  const int id = int(nodes_.size()) - 1;
  nodes_.back().value.node = id;
  return id;
}

template <typename T>
int TapeT<T>::record(TensorT<T>&& output, std::vector<int>&& inputs, BackwardFn fn) {
  return push(std::move(output), std::move(inputs), std::move(fn), false);
}

template <typename T>
void TapeT<T>::accumulate(int id, TensorT<T>&& g) {
  auto& slot = grads_[size_t(id)];
  if (slot.elems() == 0) {
    slot = std::move(g);
    return;
  }
  kernels::binary_ew<T>(kernels::Binary::add, slot.data(), g.data(), slot.mutable_data(),
                        slot.elems());
}

template <typename T>
void TapeT<T>::backward(int loss_id) {
  if (ran_backward_) throw ContractError("tape backward may run only once");
  ran_backward_ = true;
  if (loss_id < 0 || size_t(loss_id) >= nodes_.size())
    throw ContractError("backward: unknown node id");
  if (!(nodes_[size_t(loss_id)].value.shape() == Shape4{1, 1, 1, 1}))
    throw ContractError("backward: loss must be scalar, got shape " +
                        nodes_[size_t(loss_id)].value.shape().str());
  grads_.assign(nodes_.size(), TensorT<T>());
  grads_[size_t(loss_id)] = TensorT<T>::scalar(T(1));
  for (int i = loss_id; i >= 0; i--) {
    Node& node = nodes_[size_t(i)];
    TensorT<T>& g = grads_[size_t(i)];
    if (g.elems() == 0 || !node.requires_grad) continue;
    if (!node.backward) continue;  // leaf: retain gradient
    node.backward(*this, node.inputs, g);
    g = TensorT<T>();  // interior gradients are not retained
  }
}

template <typename T>
const TensorT<T>* TapeT<T>::grad(int id) const {
  if (id < 0 || size_t(id) >= grads_.size()) return nullptr;
  const auto& g = grads_[size_t(id)];
  return g.elems() == 0 ? nullptr : &g;
}

template class TapeT<float>;
template class TapeT<double>;

namespace ops {

namespace {

// grow-only scratch for padded conv inputs; ops fully overwrite it
template <typename T>
std::vector<T>& conv_scratch(size_t n, int which) {
  thread_local std::vector<T> bufs[2];
  auto& buf = bufs[which];
  if (buf.size() < n) buf.resize(n);
  return buf;
}

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (!(a.shape() == b.shape()))
    throw ContractError(std::string(op) + ": dimension mismatch " + a.shape().str() +
                        " vs " + b.shape().str());
}

// copy channels [c0, c0+len) of src into dst channel offset dc0
template <typename T>
void copy_channels(const TensorT<T>& src, std::int64_t c0, std::int64_t len,
                   TensorT<T>& dst, std::int64_t dc0) {
  const Shape4 ss = src.shape(), ds = dst.shape();
  const std::int64_t hw = ss.hw();
  T* out = dst.mutable_data();
  const T* in = src.data();
  for (std::int64_t n = 0; n < ss.n; n++)
    for (std::int64_t c = 0; c < len; c++)
      std::copy(in + ((n * ss.c + c0 + c) * hw), in + ((n * ss.c + c0 + c + 1) * hw),
                out + ((n * ds.c + dc0 + c) * hw));
}

// add channels of `g` into channels [c0, c0+len) of an (n, cfull, h, w) tensor
template <typename T>
TensorT<T> embed_channels(const TensorT<T>& g, std::int64_t cfull, std::int64_t c0) {
  const Shape4 gs = g.shape();
  TensorT<T> out({gs.n, cfull, gs.h, gs.w});
  copy_channels(g, 0, gs.c, out, c0);
  return out;
}

}  // namespace

template <typename T>
TensorT<T> conv2d(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& weight,
                  const TensorT<T>& bias, std::int64_t pad) {
  const Shape4 xs = x.shape(), ws = weight.shape();
  if (ws.h != ws.w || ws.h % 2 == 0)
    throw ContractError("conv2d: kernel must be square with odd size, got " + ws.str());
  if (ws.c != xs.c)
    throw ContractError("conv2d: dimension mismatch, input channels " +
                        std::to_string(xs.c) + " vs weight " + std::to_string(ws.c));
  if (bias.elems() != ws.n)
    throw ContractError("conv2d: bias length " + std::to_string(bias.elems()) +
                        " vs output channels " + std::to_string(ws.n));
  if (pad < 0 || pad >= ws.h)
    throw ContractError("conv2d: padding must lie in [0, k-1]");

  const kernels::ConvDims d{xs.n, xs.c, ws.n, xs.h, xs.w, ws.h, pad};
  if (d.hout() <= 0 || d.wout() <= 0)
    throw ContractError("conv2d: kernel larger than padded input");
  std::vector<T>& padded =
      conv_scratch<T>(size_t(xs.n * xs.c * (xs.h + 2 * pad) * (xs.w + 2 * pad)), 0);
  kernels::pad_planes<T>(x.data(), padded.data(), xs.n, xs.c, xs.h, xs.w, pad);
  TensorT<T> out({xs.n, ws.n, d.hout(), d.wout()});
  kernels::conv2d_forward<T>(padded.data(), weight.data(), bias.data(), out.mutable_data(),
                             d);
  kernels::check_finite<T>(out.data(), out.elems(), "conv2d");
  if (!tape) return out;

  const int xi = tape->node_for(x), wi = tape->node_for(weight), bi = tape->node_for(bias);
  tape->record(
      std::move(out), {xi, wi, bi},
      [d](TapeT<T>& t, const std::vector<int>& in, const TensorT<T>& g) {
        const TensorT<T>& xv = t.value(in[0]);
        const TensorT<T>& wv = t.value(in[1]);
        if (t.requires_grad(in[0])) {
          // correlate g with channel-transposed, flipped kernels
          TensorT<T> wt({d.cin, d.cout, d.k, d.k});
          kernels::transpose_flip_weight<T>(wv.data(), wt.mutable_data(), d.cout, d.cin,
                                            d.k);
          const std::int64_t fpad = d.k - 1 - d.pad;
          const kernels::ConvDims bd{d.n, d.cout, d.cin, d.hout(), d.wout(), d.k, fpad};
          std::vector<T>& gp = conv_scratch<T>(
              size_t(d.n * d.cout * (d.hout() + 2 * fpad) * (d.wout() + 2 * fpad)), 0);
          kernels::pad_planes<T>(g.data(), gp.data(), d.n, d.cout, d.hout(), d.wout(),
                                 fpad);
          TensorT<T> gx({d.n, d.cin, d.h, d.w});
          std::vector<T> zero_bias(size_t(d.cin), T(0));
          kernels::conv2d_forward<T>(gp.data(), wt.data(), zero_bias.data(),
                                     gx.mutable_data(), bd);
          t.accumulate(in[0], std::move(gx));
        }
        if (t.requires_grad(in[1])) {
          std::vector<T>& padded_in = conv_scratch<T>(
              size_t(d.n * d.cin * (d.h + 2 * d.pad) * (d.w + 2 * d.pad)), 1);
          kernels::pad_planes<T>(xv.data(), padded_in.data(), d.n, d.cin, d.h, d.w, d.pad);
          TensorT<T> gw({d.cout, d.cin, d.k, d.k});
          kernels::conv2d_grad_weight<T>(padded_in.data(), g.data(), gw.mutable_data(), d);
          t.accumulate(in[1], std::move(gw));
        }
        if (t.requires_grad(in[2])) {
          TensorT<T> gb({1, d.cout, 1, 1});
          kernels::conv2d_grad_bias<T>(g.data(), gb.mutable_data(), d);
          t.accumulate(in[2], std::move(gb));
        }
      });
  return tape->value(int(tape->size()) - 1);
}

namespace {

template <typename T, typename Fwd, typename Bwd>
TensorT<T> unary_op(TapeT<T>* tape, const TensorT<T>& a, const char* name, Fwd fwd,
                    Bwd bwd) {
  TensorT<T> out(a.shape());
  fwd(a.data(), out.mutable_data(), a.elems());
  kernels::check_finite<T>(out.data(), out.elems(), name);
  if (!tape) return out;
  const int ai = tape->node_for(a);
  const int oi = tape->record(std::move(out), {ai},
                              [bwd](TapeT<T>& t, const std::vector<int>& in,
                                    const TensorT<T>& g) {
                                if (!t.requires_grad(in[0])) return;
                                t.accumulate(in[0], bwd(t, in[0], g));
                              });
  return tape->value(oi);
}

}  // namespace

template <typename T>
TensorT<T> add(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  require_same_shape(a, b, "add");
  TensorT<T> out(a.shape());
  kernels::binary_ew<T>(kernels::Binary::add, a.data(), b.data(), out.mutable_data(),
                        a.elems());
  kernels::check_finite<T>(out.data(), out.elems(), "add");
  if (!tape) return out;
  const int ai = tape->node_for(a), bi = tape->node_for(b);
  const int oi = tape->record(
      std::move(out), {ai, bi},
      [](TapeT<T>& t, const std::vector<int>& in, const TensorT<T>& g) {
        if (t.requires_grad(in[0])) t.accumulate(in[0], TensorT<T>(g));
        if (t.requires_grad(in[1])) t.accumulate(in[1], TensorT<T>(g));
      });
  return tape->value(oi);
}

template <typename T>
TensorT<T> sub(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  require_same_shape(a, b, "sub");
  TensorT<T> out(a.shape());
  kernels::binary_ew<T>(kernels::Binary::sub, a.data(), b.data(), out.mutable_data(),
                        a.elems());
  kernels::check_finite<T>(out.data(), out.elems(), "sub");
  if (!tape) return out;
  const int ai = tape->node_for(a), bi = tape->node_for(b);
  const int oi = tape->record(
      std::move(out), {ai, bi},
      [](TapeT<T>& t, const std::vector<int>& in, const TensorT<T>& g) {
        if (t.requires_grad(in[0])) t.accumulate(in[0], TensorT<T>(g));
        if (t.requires_grad(in[1])) {
          TensorT<T> ng(g.shape());
          kernels::scale_add_ew<T>(g.data(), ng.mutable_data(), g.elems(), T(-1), T(0));
          t.accumulate(in[1], std::move(ng));
        }
      });
  return tape->value(oi);
}

template <typename T>
TensorT<T> mul(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  require_same_shape(a, b, "mul");
  TensorT<T> out(a.shape());
  kernels::binary_ew<T>(kernels::Binary::mul, a.data(), b.data(), out.mutable_data(),
                        a.elems());
  kernels::check_finite<T>(out.data(), out.elems(), "mul");
  if (!tape) return out;
  const int ai = tape->node_for(a), bi = tape->node_for(b);
  const int oi = tape->record(
      std::move(out), {ai, bi},
      [](TapeT<T>& t, const std::vector<int>& in, const TensorT<T>& g) {
        if (t.requires_grad(in[0])) {
          TensorT<T> ga(g.shape());
          kernels::binary_ew<T>(kernels::Binary::mul, g.data(), t.value(in[1]).data(),
                                ga.mutable_data(), g.elems());
          t.accumulate(in[0], std::move(ga));
        }
        if (t.requires_grad(in[1])) {
          TensorT<T> gb(g.shape());
          kernels::binary_ew<T>(kernels::Binary::mul, g.data(), t.value(in[0]).data(),
                                gb.mutable_data(), g.elems());
          t.accumulate(in[1], std::move(gb));
        }
      });
  return tape->value(oi);
}

template <typename T>
TensorT<T> exp(TapeT<T>* tape, const TensorT<T>& a) {
  return unary_op<T>(
      tape, a, "exp",
      [](const T* in, T* out, std::int64_t n) { kernels::exp_ew<T>(in, out, n); },
      [](TapeT<T>& t, int self_in, const TensorT<T>& g) {
        // d/da exp(a) = exp(a), recomputed from the saved input
        const TensorT<T>& av = t.value(self_in);
        TensorT<T> y(av.shape());
        kernels::exp_ew<T>(av.data(), y.mutable_data(), av.elems());
        TensorT<T> ga(g.shape());
        kernels::binary_ew<T>(kernels::Binary::mul, g.data(), y.data(), ga.mutable_data(),
                              g.elems());
        return ga;
      });
}

template <typename T>
TensorT<T> leaky_relu(TapeT<T>* tape, const TensorT<T>& a, T slope) {
  if (!(slope > T(0) && slope < T(1)))
    throw ContractError("leaky_relu: slope must lie in (0,1)");
  return unary_op<T>(
      tape, a, "leaky_relu",
      [slope](const T* in, T* out, std::int64_t n) {
        kernels::leaky_relu_ew<T>(in, out, n, slope);
      },
      [slope](TapeT<T>& t, int self_in, const TensorT<T>& g) {
        const TensorT<T>& av = t.value(self_in);
        TensorT<T> ga(g.shape());
        const T* gp = g.data();
        const T* ap = av.data();
        T* o = ga.mutable_data();
        const std::int64_t n = g.elems();
        // derivative at exactly 0 takes the negative-branch slope
#pragma omp parallel for simd schedule(static)
        for (std::int64_t i = 0; i < n; i++) o[i] = ap[i] > T(0) ? gp[i] : slope * gp[i];
        return ga;
      });
}

template <typename T>
TensorT<T> soft_clamp(TapeT<T>* tape, const TensorT<T>& a, T alpha) {
  if (!(alpha > T(0))) throw ContractError("soft_clamp: alpha must be positive");
  return unary_op<T>(
      tape, a, "soft_clamp",
      [alpha](const T* in, T* out, std::int64_t n) {
        kernels::soft_clamp_ew<T>(in, out, n, alpha);
      },
      [alpha](TapeT<T>& t, int self_in, const TensorT<T>& g) {
        const TensorT<T>& av = t.value(self_in);
        TensorT<T> ga(g.shape());
        const T* gp = g.data();
        const T* ap = av.data();
        T* o = ga.mutable_data();
        const std::int64_t n = g.elems();
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < n; i++) {
          const T th = std::tanh(ap[i] / alpha);
          o[i] = gp[i] * (T(1) - th * th);
        }
        return ga;
      });
}

template <typename T>
TensorT<T> mul_scalar(TapeT<T>* tape, const TensorT<T>& a, T factor) {
  return unary_op<T>(
      tape, a, "mul_scalar",
      [factor](const T* in, T* out, std::int64_t n) {
        kernels::scale_add_ew<T>(in, out, n, factor, T(0));
      },
      [factor](TapeT<T>&, int, const TensorT<T>& g) {
        TensorT<T> ga(g.shape());
        kernels::scale_add_ew<T>(g.data(), ga.mutable_data(), g.elems(), factor, T(0));
        return ga;
      });
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> split_at(TapeT<T>* tape, const TensorT<T>& x,
                                           std::int64_t c0) {
  const Shape4 xs = x.shape();
  if (c0 <= 0 || c0 >= xs.c)
    throw ContractError("split_at: channel cut " + std::to_string(c0) +
                        " outside (0," + std::to_string(xs.c) + ")");
  TensorT<T> front({xs.n, c0, xs.h, xs.w});
  TensorT<T> back({xs.n, xs.c - c0, xs.h, xs.w});
  copy_channels(x, 0, c0, front, 0);
  copy_channels(x, c0, xs.c - c0, back, 0);
  if (!tape) return {std::move(front), std::move(back)};
  const int xi = tape->node_for(x);
  const std::int64_t cfull = xs.c;
  const int fi = tape->record(std::move(front), {xi},
                              [cfull](TapeT<T>& t, const std::vector<int>& in,
                                      const TensorT<T>& g) {
                                if (!t.requires_grad(in[0])) return;
                                t.accumulate(in[0], embed_channels(g, cfull, 0));
                              });
  const int bi = tape->record(std::move(back), {xi},
                              [cfull, c0](TapeT<T>& t, const std::vector<int>& in,
                                          const TensorT<T>& g) {
                                if (!t.requires_grad(in[0])) return;
                                t.accumulate(in[0], embed_channels(g, cfull, c0));
                              });
  return {tape->value(fi), tape->value(bi)};
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> split_half(TapeT<T>* tape, const TensorT<T>& x) {
  if (x.shape().c % 2 != 0)
    throw ContractError("split_half: dimension error, channel count " +
                        std::to_string(x.shape().c) + " is odd");
  return split_at(tape, x, x.shape().c / 2);
}

template <typename T>
TensorT<T> concat(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  const Shape4 as = a.shape(), bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w)
    throw ContractError("concat: dimension mismatch " + as.str() + " vs " + bs.str());
  TensorT<T> out({as.n, as.c + bs.c, as.h, as.w});
  copy_channels(a, 0, as.c, out, 0);
  copy_channels(b, 0, bs.c, out, as.c);
  if (!tape) return out;
  const int ai = tape->node_for(a), bi = tape->node_for(b);
  const std::int64_t ca = as.c, cb = bs.c;
  const int oi = tape->record(
      std::move(out), {ai, bi},
      [ca, cb](TapeT<T>& t, const std::vector<int>& in, const TensorT<T>& g) {
        const Shape4 gs = g.shape();
        if (t.requires_grad(in[0])) {
          TensorT<T> ga({gs.n, ca, gs.h, gs.w});
          copy_channels(g, 0, ca, ga, 0);
          t.accumulate(in[0], std::move(ga));
        }
        if (t.requires_grad(in[1])) {
          TensorT<T> gb({gs.n, cb, gs.h, gs.w});
          copy_channels(g, ca, cb, gb, 0);
          t.accumulate(in[1], std::move(gb));
        }
      });
  return tape->value(oi);
}

template <typename T>
TensorT<T> replicate_channels(TapeT<T>* tape, const TensorT<T>& x, std::int64_t c) {
  const Shape4 xs = x.shape();
  if (xs.c != 1) throw ContractError("replicate_channels: input must have one channel");
  if (c < 2 || c % 2 != 0)
    throw ContractError("replicate_channels: channel count must be even and >= 2, got " +
                        std::to_string(c));
  TensorT<T> out({xs.n, c, xs.h, xs.w});
  for (std::int64_t ci = 0; ci < c; ci++) copy_channels(x, 0, 1, out, ci);
  if (!tape) return out;
  const int xi = tape->node_for(x);
  const int oi = tape->record(
      std::move(out), {xi},
      [](TapeT<T>& t, const std::vector<int>& in, const TensorT<T>& g) {
        if (!t.requires_grad(in[0])) return;
        const Shape4 gs = g.shape();
        TensorT<T> gx({gs.n, 1, gs.h, gs.w});
        T* o = gx.mutable_data();
        const T* gp = g.data();
        const std::int64_t hw = gs.hw();
        for (std::int64_t n = 0; n < gs.n; n++)
          for (std::int64_t ci = 0; ci < gs.c; ci++)
            for (std::int64_t p = 0; p < hw; p++)
              o[n * hw + p] += gp[(n * gs.c + ci) * hw + p];
        t.accumulate(in[0], std::move(gx));
      });
  return tape->value(oi);
}

template <typename T>
TensorT<T> channel_affine(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& scale,
                          const TensorT<T>& bias) {
  const Shape4 xs = x.shape();
  if (scale.elems() != xs.c || bias.elems() != xs.c)
    throw ContractError("channel_affine: scale/bias length must equal channel count");
  TensorT<T> out(xs);
  kernels::channel_affine<T>(x.data(), scale.data(), bias.data(), out.mutable_data(), xs.n,
                             xs.c, xs.hw());
  kernels::check_finite<T>(out.data(), out.elems(), "channel_affine");
  if (!tape) return out;
  const int xi = tape->node_for(x), si = tape->node_for(scale), bi = tape->node_for(bias);
  const int oi = tape->record(
      std::move(out), {xi, si, bi},
      [](TapeT<T>& t, const std::vector<int>& in, const TensorT<T>& g) {
        const TensorT<T>& xv = t.value(in[0]);
        const TensorT<T>& sv = t.value(in[1]);
        const Shape4 gs = g.shape();
        if (t.requires_grad(in[0])) {
          TensorT<T> gx(gs);
          std::vector<T> zero(size_t(gs.c), T(0));
          kernels::channel_affine<T>(g.data(), sv.data(), zero.data(), gx.mutable_data(),
                                     gs.n, gs.c, gs.hw());
          t.accumulate(in[0], std::move(gx));
        }
        if (t.requires_grad(in[1]) || t.requires_grad(in[2])) {
          TensorT<T> gsc({1, gs.c, 1, 1});
          TensorT<T> gb({1, gs.c, 1, 1});
          kernels::channel_affine_grad_sb<T>(xv.data(), g.data(), gsc.mutable_data(),
                                             gb.mutable_data(), gs.n, gs.c, gs.hw());
          if (t.requires_grad(in[1])) t.accumulate(in[1], std::move(gsc));
          if (t.requires_grad(in[2])) t.accumulate(in[2], std::move(gb));
        }
      });
  return tape->value(oi);
}

template <typename T>
TensorT<T> channel_matmul(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& m) {
  const Shape4 xs = x.shape(), ms = m.shape();
  if (ms.n != xs.c || ms.c != xs.c || ms.h != 1 || ms.w != 1)
    throw ContractError("channel_matmul: matrix must be (C,C,1,1) with C = " +
                        std::to_string(xs.c) + ", got " + ms.str());
  TensorT<T> out(xs);
  kernels::channel_matmul<T>(x.data(), m.data(), out.mutable_data(), xs.n, xs.c, xs.hw());
  kernels::check_finite<T>(out.data(), out.elems(), "channel_matmul");
  if (!tape) return out;
  const int xi = tape->node_for(x), mi = tape->node_for(m);
  const int oi = tape->record(
      std::move(out), {xi, mi},
      [](TapeT<T>& t, const std::vector<int>& in, const TensorT<T>& g) {
        const TensorT<T>& xv = t.value(in[0]);
        const TensorT<T>& mv = t.value(in[1]);
        const Shape4 gs = g.shape();
        if (t.requires_grad(in[0])) {
          // gx[n,j] = sum_i m[i,j] * g[n,i]  (transpose mix)
          const std::int64_t c = gs.c;
          TensorT<T> mt({c, c, 1, 1});
          T* mtp = mt.mutable_data();
          for (std::int64_t i = 0; i < c; i++)
            for (std::int64_t j = 0; j < c; j++) mtp[j * c + i] = mv.data()[i * c + j];
          TensorT<T> gx(gs);
          kernels::channel_matmul<T>(g.data(), mt.data(), gx.mutable_data(), gs.n, c,
                                     gs.hw());
          t.accumulate(in[0], std::move(gx));
        }
        if (t.requires_grad(in[1])) {
          TensorT<T> gm({gs.c, gs.c, 1, 1});
          kernels::channel_matmul_grad_m<T>(xv.data(), g.data(), gm.mutable_data(), gs.n,
                                            gs.c, gs.hw());
          t.accumulate(in[1], std::move(gm));
        }
      });
  return tape->value(oi);
}

template <typename T>
TensorT<T> reciprocal(TapeT<T>* tape, const TensorT<T>& a) {
  return unary_op<T>(
      tape, a, "reciprocal",
      [](const T* in, T* out, std::int64_t n) {
        for (std::int64_t i = 0; i < n; i++) out[i] = T(1) / in[i];
      },
      [](TapeT<T>& t, int self_in, const TensorT<T>& g) {
        const TensorT<T>& av = t.value(self_in);
        TensorT<T> ga(g.shape());
        T* o = ga.mutable_data();
        for (std::int64_t i = 0; i < g.elems(); i++) {
          const T x = av.data()[i];
          o[i] = -g.data()[i] / (x * x);
        }
        return ga;
      });
}

namespace {

// row-major dense inverse by LU with partial pivoting; returns the
// infinity-norm condition estimate
template <typename T>
double lu_invert(const T* m, T* out, std::int64_t c) {
  std::vector<double> lu(static_cast<size_t>(c * c));
  std::vector<std::int64_t> piv(static_cast<size_t>(c), 0);
  for (std::int64_t i = 0; i < c * c; i++) lu[size_t(i)] = double(m[i]);
  for (std::int64_t i = 0; i < c; i++) piv[size_t(i)] = i;
  for (std::int64_t k = 0; k < c; k++) {
    std::int64_t p = k;
    for (std::int64_t i = k + 1; i < c; i++)
      if (std::abs(lu[size_t(i * c + k)]) > std::abs(lu[size_t(p * c + k)])) p = i;
    if (lu[size_t(p * c + k)] == 0.0) throw NumericError("matrix is singular");
    if (p != k) {
      for (std::int64_t j = 0; j < c; j++) std::swap(lu[size_t(p * c + j)], lu[size_t(k * c + j)]);
      std::swap(piv[size_t(p)], piv[size_t(k)]);
    }
    for (std::int64_t i = k + 1; i < c; i++) {
      lu[size_t(i * c + k)] /= lu[size_t(k * c + k)];
      for (std::int64_t j = k + 1; j < c; j++)
        lu[size_t(i * c + j)] -= lu[size_t(i * c + k)] * lu[size_t(k * c + j)];
    }
  }
  std::vector<double> col(static_cast<size_t>(c), 0.0), x(static_cast<size_t>(c), 0.0);
  std::vector<double> inv(size_t(c * c));
  for (std::int64_t j = 0; j < c; j++) {
    for (std::int64_t i = 0; i < c; i++) col[size_t(i)] = piv[size_t(i)] == j ? 1.0 : 0.0;
    for (std::int64_t i = 0; i < c; i++) {
      x[size_t(i)] = col[size_t(i)];
      for (std::int64_t k2 = 0; k2 < i; k2++) x[size_t(i)] -= lu[size_t(i * c + k2)] * x[size_t(k2)];
    }
    for (std::int64_t i = c - 1; i >= 0; i--) {
      for (std::int64_t k2 = i + 1; k2 < c; k2++) x[size_t(i)] -= lu[size_t(i * c + k2)] * x[size_t(k2)];
      x[size_t(i)] /= lu[size_t(i * c + i)];
      if (!std::isfinite(x[size_t(i)])) throw NumericError("matrix is singular");
    }
    for (std::int64_t i = 0; i < c; i++) inv[size_t(i * c + j)] = x[size_t(i)];
  }
  auto norm_inf = [c](const auto& a) {
    double best = 0;
    for (std::int64_t i = 0; i < c; i++) {
      double row = 0;
      for (std::int64_t j = 0; j < c; j++) row += std::abs(double(a[size_t(i * c + j)]));
      best = std::max(best, row);
    }
    return best;
  };
  double mnorm = 0;
  for (std::int64_t i = 0; i < c; i++) {
    double row = 0;
    for (std::int64_t j = 0; j < c; j++) row += std::abs(double(m[i * c + j]));
    mnorm = std::max(mnorm, row);
  }
  for (std::int64_t i = 0; i < c * c; i++) out[i] = T(inv[size_t(i)]);
  return mnorm * norm_inf(inv);
}

// row-major c x c product dst = a * b
template <typename T>
void matmul_small(const T* a, const T* b, T* dst, std::int64_t c) {
  for (std::int64_t i = 0; i < c; i++)
    for (std::int64_t j = 0; j < c; j++) {
      T acc = T(0);
      for (std::int64_t k = 0; k < c; k++) acc += a[i * c + k] * b[k * c + j];
      dst[i * c + j] = acc;
    }
}

}  // namespace

template <typename T>
TensorT<T> mat_inverse(TapeT<T>* tape, const TensorT<T>& m, double cond_limit) {
  const Shape4 ms = m.shape();
  if (ms.n != ms.c || ms.h != 1 || ms.w != 1)
    throw ContractError("mat_inverse: expected (C,C,1,1), got " + ms.str());
  TensorT<T> out(ms);
  const double cond = lu_invert<T>(m.data(), out.mutable_data(), ms.n);
  if (!std::isfinite(cond) || cond > cond_limit)
    throw NumericError("matrix condition estimate " + std::to_string(cond) +
                       " exceeds limit " + std::to_string(cond_limit));
  if (!tape) return out;
  const int mi = tape->node_for(m);
  const double limit = cond_limit;
  const int oi = tape->record(
      std::move(out), {mi},
      [limit](TapeT<T>& t, const std::vector<int>& in, const TensorT<T>& g) {
        if (!t.requires_grad(in[0])) return;
        // d(M^-1) in direction dM is -M^-1 dM M^-1, so the adjoint is
        // gM = -(M^-1)^T g (M^-1)^T
        const TensorT<T>& mv = t.value(in[0]);
        const std::int64_t c = mv.shape().n;
        TensorT<T> inv(mv.shape());
        lu_invert<T>(mv.data(), inv.mutable_data(), c);
        std::vector<T> invT(size_t(c * c)), tmp(size_t(c * c));
        for (std::int64_t i = 0; i < c; i++)
          for (std::int64_t j = 0; j < c; j++) invT[size_t(j * c + i)] = inv.data()[i * c + j];
        TensorT<T> gm(mv.shape());
        matmul_small<T>(invT.data(), g.data(), tmp.data(), c);
        matmul_small<T>(tmp.data(), invT.data(), gm.mutable_data(), c);
        kernels::scale_add_ew<T>(gm.data(), gm.mutable_data(), c * c, T(-1), T(0));
        t.accumulate(in[0], std::move(gm));
        (void)limit;
      });
  return tape->value(oi);
}

template <typename T>
TensorT<T> sum_all(TapeT<T>* tape, const TensorT<T>& a) {
  TensorT<T> out = TensorT<T>::scalar(kernels::sum_all<T>(a.data(), a.elems()));
  kernels::check_finite<T>(out.data(), 1, "sum_all");
  if (!tape) return out;
  const int ai = tape->node_for(a);
  const int oi = tape->record(
      std::move(out), {ai},
      [](TapeT<T>& t, const std::vector<int>& in, const TensorT<T>& g) {
        if (!t.requires_grad(in[0])) return;
        t.accumulate(in[0], TensorT<T>::full(t.value(in[0]).shape(), g.data()[0]));
      });
  return tape->value(oi);
}

template <typename T>
TensorT<T> mean_all(TapeT<T>* tape, const TensorT<T>& a) {
  if (a.elems() == 0) throw ContractError("mean_all: empty tensor");
  const T inv = T(1) / T(a.elems());
  TensorT<T> out = TensorT<T>::scalar(kernels::sum_all<T>(a.data(), a.elems()) * inv);
  kernels::check_finite<T>(out.data(), 1, "mean_all");
  if (!tape) return out;
  const int ai = tape->node_for(a);
  const int oi = tape->record(
      std::move(out), {ai},
      [inv](TapeT<T>& t, const std::vector<int>& in, const TensorT<T>& g) {
        if (!t.requires_grad(in[0])) return;
        t.accumulate(in[0], TensorT<T>::full(t.value(in[0]).shape(), g.data()[0] * inv));
      });
  return tape->value(oi);
}

template <typename T>
TensorT<T> mse(TapeT<T>* tape, const TensorT<T>& pred, const TensorT<T>& target) {
  require_same_shape(pred, target, "mse");
  TensorT<T> d = sub(tape, pred, target);
  return mean_all(tape, mul(tape, d, d));
}

#define IVNAC_OPS_INSTANTIATE(T)                                                          \
  template TensorT<T> conv2d<T>(TapeT<T>*, const TensorT<T>&, const TensorT<T>&,          \
                                const TensorT<T>&, std::int64_t);                         \
  template TensorT<T> add<T>(TapeT<T>*, const TensorT<T>&, const TensorT<T>&);            \
  template TensorT<T> sub<T>(TapeT<T>*, const TensorT<T>&, const TensorT<T>&);            \
  template TensorT<T> mul<T>(TapeT<T>*, const TensorT<T>&, const TensorT<T>&);            \
  template TensorT<T> exp<T>(TapeT<T>*, const TensorT<T>&);                               \
  template TensorT<T> leaky_relu<T>(TapeT<T>*, const TensorT<T>&, T);                     \
  template TensorT<T> soft_clamp<T>(TapeT<T>*, const TensorT<T>&, T);                     \
  template TensorT<T> mul_scalar<T>(TapeT<T>*, const TensorT<T>&, T);                     \
  template TensorT<T> reciprocal<T>(TapeT<T>*, const TensorT<T>&);                        \
  template TensorT<T> mat_inverse<T>(TapeT<T>*, const TensorT<T>&, double);               \
  template std::pair<TensorT<T>, TensorT<T>> split_at<T>(TapeT<T>*, const TensorT<T>&,    \
                                                         std::int64_t);                   \
  template std::pair<TensorT<T>, TensorT<T>> split_half<T>(TapeT<T>*, const TensorT<T>&); \
  template TensorT<T> concat<T>(TapeT<T>*, const TensorT<T>&, const TensorT<T>&);         \
  template TensorT<T> replicate_channels<T>(TapeT<T>*, const TensorT<T>&, std::int64_t);  \
  template TensorT<T> channel_affine<T>(TapeT<T>*, const TensorT<T>&, const TensorT<T>&,  \
                                        const TensorT<T>&);                               \
  template TensorT<T> channel_matmul<T>(TapeT<T>*, const TensorT<T>&, const TensorT<T>&); \
  template TensorT<T> sum_all<T>(TapeT<T>*, const TensorT<T>&);                           \
  template TensorT<T> mean_all<T>(TapeT<T>*, const TensorT<T>&);                          \
  template TensorT<T> mse<T>(TapeT<T>*, const TensorT<T>&, const TensorT<T>&);

IVNAC_OPS_INSTANTIATE(float)
IVNAC_OPS_INSTANTIATE(double)
#undef IVNAC_OPS_INSTANTIATE

}  // namespace ops
}  // namespace ivnac
