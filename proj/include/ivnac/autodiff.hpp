#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "ivnac/tensor.hpp"

namespace ivnac {

// Reverse-mode tape. Nodes are appended in execution order (inputs always
// precede consumers), each holding its output value, its input node ids and
// a backward closure. One tape serves one forward/backward cycle; gradients
// are retained for leaf nodes only.
template <typename T>
class TapeT {
 public:
  using BackwardFn =
      std::function<void(TapeT<T>&, const std::vector<int>&, const TensorT<T>&)>;

  // Leaf holding a constant; gradients are not traced through it.
  int leaf(const TensorT<T>& value) { return push(value, {}, nullptr, false); }

  // Leaf holding a trainable parameter; sets value.node for downstream ops.
  int param(TensorT<T>& value) {
    value.node = push(value, {}, nullptr, true);
    return value.node;
  }

  int record(TensorT<T>&& output, std::vector<int>&& inputs, BackwardFn fn);

  const TensorT<T>& value(int id) const { return nodes_[size_t(id)].value; }
  bool requires_grad(int id) const { return nodes_[size_t(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse accumulation from a scalar node. May be called once per tape.
  void backward(int loss_id);

  // Gradient of a leaf after backward; nullptr when unreached (i.e. zero).
  const TensorT<T>* grad(int id) const;

  void accumulate(int id, TensorT<T>&& g);

  // Node id for `x` on this tape: its recorded id when valid, otherwise a
  // fresh constant leaf. Buffer identity guards against ids from other tapes.
  int node_for(const TensorT<T>& x) {
    if (x.node >= 0 && size_t(x.node) < nodes_.size() &&
        nodes_[size_t(x.node)].value.same_buffer(x))
      return x.node;
    return leaf(x);
  }

 private:
  struct Node {
    TensorT<T> value;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad;
  };

  int push(TensorT<T> value, std::vector<int> inputs, BackwardFn fn, bool req);

  std::vector<Node> nodes_;
  std::vector<TensorT<T>> grads_;
  bool ran_backward_ = false;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

// Differentiable tensor operations. Every op runs eagerly through the
// OpenMP kernels; when `tape` is non-null the op also records a node so
// backward() can reach it. Outputs are checked for non-finite values.
namespace ops {

template <typename T>
TensorT<T> conv2d(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& weight,
                  const TensorT<T>& bias, std::int64_t pad);

template <typename T>
TensorT<T> add(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> sub(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> mul(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b);

template <typename T>
TensorT<T> exp(TapeT<T>* tape, const TensorT<T>& a);

template <typename T>
TensorT<T> leaky_relu(TapeT<T>* tape, const TensorT<T>& a, T slope);

// alpha * tanh(s / alpha); bounds log-scales to (-alpha, alpha)
template <typename T>
TensorT<T> soft_clamp(TapeT<T>* tape, const TensorT<T>& a, T alpha);

template <typename T>
TensorT<T> mul_scalar(TapeT<T>* tape, const TensorT<T>& a, T factor);

// channel split [0, c0) / [c0, C); inverse of concat
template <typename T>
std::pair<TensorT<T>, TensorT<T>> split_at(TapeT<T>* tape, const TensorT<T>& x,
                                           std::int64_t c0);

// equal-size channel split; C must be even
template <typename T>
std::pair<TensorT<T>, TensorT<T>> split_half(TapeT<T>* tape, const TensorT<T>& x);

template <typename T>
TensorT<T> concat(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b);

// replicates a single-channel image into `c` identical channels
template <typename T>
TensorT<T> replicate_channels(TapeT<T>* tape, const TensorT<T>& x, std::int64_t c);

// y[n,c] = x[n,c]*scale[c] + bias[c]; scale/bias shaped (1,C,1,1)
template <typename T>
TensorT<T> channel_affine(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& scale,
                          const TensorT<T>& bias);

// per-pixel channel mixing by matrix m shaped (C,C,1,1)
template <typename T>
TensorT<T> channel_matmul(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& m);

template <typename T>
TensorT<T> reciprocal(TapeT<T>* tape, const TensorT<T>& a);

// Inverse of a small dense matrix held as (C,C,1,1), by LU with partial
// pivoting. Throws NumericError when singular or when the infinity-norm
// condition estimate exceeds cond_limit.
template <typename T>
TensorT<T> mat_inverse(TapeT<T>* tape, const TensorT<T>& m, double cond_limit);

template <typename T>
TensorT<T> sum_all(TapeT<T>* tape, const TensorT<T>& a);

template <typename T>
TensorT<T> mean_all(TapeT<T>* tape, const TensorT<T>& a);

template <typename T>
TensorT<T> mse(TapeT<T>* tape, const TensorT<T>& pred, const TensorT<T>& target);

}  // namespace ops
}  // namespace ivnac
