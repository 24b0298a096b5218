#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "ivnac/autodiff.hpp"
#include "ivnac/common.hpp"
#include "ivnac/tensor.hpp"

namespace ivnac {

// Architecture hyperparameters of the invertible translator.
struct FlowConfig {
  std::int64_t blocks = 8;
  std::int64_t channels = 2;  // augmented channel count C (even)
  std::int64_t hidden = 32;   // dense-subnet hidden width
  std::int64_t kernel = 3;
  double scale_clamp = 2.0;  // soft bound on coupling log-scales
  double leaky_slope = 0.2;
  double cond_limit = 1e6;  // channel-mix matrices refuse to invert above this

  void validate() const;
};

// Five stacked same-padding convolutions; the first four are followed by a
// leaky ReLU, the last is linear and starts at zero so a fresh network is
// the identity map.
template <typename T>
class DenseSubnetT {
 public:
  DenseSubnetT() = default;
  DenseSubnetT(std::int64_t cin, std::int64_t cout, const FlowConfig& cfg);

  void init_he(Rng& rng);
  void init_random(Rng& rng, double amp);

  TensorT<T> forward(TapeT<T>* tape, const TensorT<T>& x) const;

  struct Layer {
    TensorT<T> weight;  // (cout, cin, k, k)
    TensorT<T> bias;    // (1, cout, 1, 1)
  };
  std::array<Layer, 5> layers;

 private:
  std::int64_t kernel_ = 3;
  T slope_ = T(0.2);
};

// Two-pass affine coupling: the first channel half is rescaled/shifted from
// the second, then the second from the updated first. Log-scales pass
// through the soft clamp, so the closed-form inverse uses identical factors.
template <typename T>
class CouplingLayerT {
 public:
  CouplingLayerT() = default;
  CouplingLayerT(std::int64_t channels, const FlowConfig& cfg);

  std::pair<TensorT<T>, TensorT<T>> forward(TapeT<T>* tape, const TensorT<T>& x1,
                                            const TensorT<T>& x2) const;
  std::pair<TensorT<T>, TensorT<T>> inverse(TapeT<T>* tape, const TensorT<T>& y1,
                                            const TensorT<T>& y2) const;

  DenseSubnetT<T> scale_net1, shift_net1, scale_net2, shift_net2;
  T scale_clamp = T(2);
};

// Learnable per-pixel channel mixing by an invertible C x C matrix.
template <typename T>
class InvConv1x1T {
 public:
  InvConv1x1T() = default;
  explicit InvConv1x1T(std::int64_t channels, double cond_limit);

  void init_orthogonal(Rng& rng);

  TensorT<T> forward(TapeT<T>* tape, const TensorT<T>& x) const;
  TensorT<T> inverse(TapeT<T>* tape, const TensorT<T>& y) const;

  // drops the cached inverse; called after optimizer updates
  void invalidate() { cache_valid_ = false; }

  TensorT<T> weight;  // (C, C, 1, 1)

 private:
  const TensorT<T>& cached_inverse() const;

  double cond_limit_ = 1e6;
  mutable TensorT<T> inv_cache_;
  mutable bool cache_valid_ = false;
};

// Per-channel affine with data-dependent initialization to zero mean / unit
// variance on the first training batch.
template <typename T>
class ActNormT {
 public:
  ActNormT() = default;
  explicit ActNormT(std::int64_t channels);

  void init_identity();
  void init_random(Rng& rng);
  void init_from_batch(const TensorT<T>& x);
  void mark_initialized() { initialized_ = true; }  // loaded checkpoints

  TensorT<T> forward(TapeT<T>* tape, const TensorT<T>& x) const;
  TensorT<T> inverse(TapeT<T>* tape, const TensorT<T>& y) const;

  bool initialized() const { return initialized_; }

  TensorT<T> scale;  // (1, C, 1, 1), entries nonzero once initialized
  TensorT<T> bias;   // (1, C, 1, 1)

 private:
  void require_ready() const;
  bool initialized_ = false;
};

template <typename T>
struct FlowBlockT {
  ActNormT<T> actnorm;
  InvConv1x1T<T> mix;
  CouplingLayerT<T> coupling;

  TensorT<T> forward(TapeT<T>* tape, const TensorT<T>& x) const;
  TensorT<T> inverse(TapeT<T>* tape, const TensorT<T>& y) const;
};

// Synthetic-CT channel plus the latent channels carrying the information the
// CT plane alone cannot hold.
template <typename T>
struct LatentOutputT {
  TensorT<T> ct;  // (N, 1, H, W)
  TensorT<T> z;   // (N, C-1, H, W)
};

template <typename T>
class FlowModelT {
 public:
  FlowModelT() = default;
  explicit FlowModelT(const FlowConfig& cfg);

  // Zero-initialized couplings, identity channel mixes and actnorm: the
  // fresh model is exactly the identity map.
  static FlowModelT identity_init(const FlowConfig& cfg, std::uint64_t seed);
  // Training start: zero-initialized couplings, random orthogonal channel
  // mixes, actnorm left pending for data-dependent initialization.
  static FlowModelT training_init(const FlowConfig& cfg, std::uint64_t seed);
  // Fully random draw satisfying the layer invariants (tests, invert-check).
  static FlowModelT random_init(const FlowConfig& cfg, std::uint64_t seed);

  TensorT<T> forward(TapeT<T>* tape, const TensorT<T>& x_aug) const;
  TensorT<T> inverse(TapeT<T>* tape, const TensorT<T>& y_aug) const;

  // Data-dependent actnorm initialization; must run once before the first
  // taped forward pass of a training run.
  void init_actnorm(const TensorT<T>& first_batch);
  bool actnorm_ready() const;

  // Visits every parameter tensor in the serialization order:
  // per block actnorm scale, actnorm bias, mix matrix, then coupling subnets
  // scale1/shift1/scale2/shift2 each as five (weights, bias) pairs.
  void visit_params(const std::function<void(TensorT<T>&, const std::string&)>& fn);
  void visit_params(
      const std::function<void(const TensorT<T>&, const std::string&)>& fn) const;

  // Registers all parameters on a tape so gradients reach them.
  void bind_params(TapeT<T>& tape);
  void unbind_params();

  // Refreshes channel-mix caches and verifies invertibility after updates.
  void revalidate_mixes();

  const FlowConfig& config() const { return cfg_; }

  std::vector<FlowBlockT<T>> blocks;

 private:
  void check_input(const TensorT<T>& x) const;
  FlowConfig cfg_;
};

namespace flow {

// Replicates a one-channel image into `channels` identical copies.
template <typename T>
TensorT<T> augment(TapeT<T>* tape, const TensorT<T>& image, std::int64_t channels);

// Channel 0 is the synthetic CT; the rest are the latent channels.
template <typename T>
LatentOutputT<T> extract_ct(TapeT<T>* tape, const TensorT<T>& y_aug);

}  // namespace flow

using FlowModel = FlowModelT<float>;
using FlowModel64 = FlowModelT<double>;

}  // namespace ivnac
