#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ivnac/common.hpp"

namespace ivnac {

// Dense rank-4 shape (batch, channel, height, width).
struct Shape4 {
  std::int64_t n = 0, c = 0, h = 0, w = 0;

  std::int64_t elems() const { return n * c * h * w; }
  std::int64_t chw() const { return c * h * w; }
  std::int64_t hw() const { return h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

// Dense NCHW tensor with copy-on-write storage so tape nodes can share
// buffers with user-held values. `node` is the tape-node id when the tensor
// participates in gradient tracking (-1 otherwise).
template <typename T>
class TensorT {
 public:
  TensorT() : shape_{0, 0, 0, 0}, data_(std::make_shared<std::vector<T>>()) {}

  explicit TensorT(Shape4 s)
      : shape_(s), data_(std::make_shared<std::vector<T>>(size_t(s.elems()), T(0))) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
      throw ContractError("tensor shape must be nonnegative, got " + s.str());
  }

  TensorT(Shape4 s, std::vector<T> values) : shape_(s) {
    if (std::int64_t(values.size()) != s.elems())
      throw ContractError("tensor data length " + std::to_string(values.size()) +
                          " does not match shape " + s.str());
    data_ = std::make_shared<std::vector<T>>(std::move(values));
  }

  static TensorT zeros(Shape4 s) { return TensorT(s); }

  static TensorT full(Shape4 s, T value) {
    TensorT t(s);
    for (auto& v : *t.data_) v = value;
    return t;
  }

  static TensorT scalar(T value) { return full({1, 1, 1, 1}, value); }

  const Shape4& shape() const { return shape_; }
  std::int64_t elems() const { return shape_.elems(); }

  const T* data() const { return data_->data(); }
  const std::vector<T>& vec() const { return *data_; }

  // Mutable access detaches from shared storage first.
  T* mutable_data() {
    detach();
    return data_->data();
  }

  T at(std::int64_t ni, std::int64_t ci, std::int64_t hi, std::int64_t wi) const {
    return (*data_)[size_t(((ni * shape_.c + ci) * shape_.h + hi) * shape_.w + wi)];
  }

  void set(std::int64_t ni, std::int64_t ci, std::int64_t hi, std::int64_t wi, T v) {
    detach();
    (*data_)[size_t(((ni * shape_.c + ci) * shape_.h + hi) * shape_.w + wi)] = v;
  }

  bool same_buffer(const TensorT& other) const { return data_ == other.data_; }

  template <typename U>
  TensorT<U> cast() const {
    std::vector<U> out(data_->size());
    for (size_t i = 0; i < out.size(); i++) out[i] = U((*data_)[i]);
    return TensorT<U>(shape_, std::move(out));
  }

  int node = -1;

 private:
  void detach() {
    if (data_.use_count() > 1) data_ = std::make_shared<std::vector<T>>(*data_);
    node = -1;  // a mutated tensor no longer matches its recorded value
  }

  Shape4 shape_;
  std::shared_ptr<std::vector<T>> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace ivnac
