#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "ivnac/dataset.hpp"
#include "ivnac/flow.hpp"
#include "ivnac/metrics.hpp"

namespace ivnac {

struct TrainConfig {
  std::int64_t epochs = 100;
  double base_lr = 1e-4;
  double lambda = 1.0;  // weight of the forward-direction loss term
  std::int64_t batch_size = 4;
  std::uint64_t seed = 1;
  std::int64_t halve_every = 10;  // epochs between learning-rate halvings
  double grad_clip = 0.0;         // global-norm clip; 0 disables
  bool identity_start = false;    // exact identity init instead of the training init
  FlowConfig flow;

  void validate() const;
};

// base_lr * 0.5^floor(epoch / halve_every), epoch counted from 0
double lr_at(std::int64_t epoch, const TrainConfig& cfg);

// lambda * MSE(ct-channel of f(augment(x_pet)), y_ct)
//   + MSE(channel 0 of f^-1(augment(y_ct)), x_pet)
// Parameters must already be bound when a tape is given.
template <typename T>
TensorT<T> loss_total(TapeT<T>* tape, const FlowModelT<T>& model, const TensorT<T>& x_pet,
                      const TensorT<T>& y_ct, T lambda);

// Adam with bias correction; moments are shaped like their parameter.
struct AdamState {
  std::vector<float> m, v;
  std::int64_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// One update of a single parameter tensor. Throws NumericError (naming
// `name`) on non-finite gradients.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double lr,
               const std::string& name);

class Adam {
 public:
  void step(FlowModel& model, Tape& tape, double lr, double grad_clip);
  std::int64_t steps() const { return steps_; }

 private:
  std::vector<AdamState> states_;
  std::int64_t steps_ = 0;
};

// Serialized model + normalization + training metadata ("IVCK" file).
struct Checkpoint {
  FlowConfig flow;
  std::int64_t height = 64, width = 64;
  Normalization norm;

  std::int64_t epoch = 0;  // epochs completed
  std::uint64_t seed = 0;
  double lambda = 1.0;
  double base_lr = 1e-4;
  std::int64_t halve_every = 10;
  std::int64_t batch_size = 4;
  double train_loss = 0.0;
  double val_psnr = 0.0;
  std::int64_t best_epoch = 0;

  FlowModel model;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct EpochLog {
  std::int64_t epoch = 0;  // 1-based in the emitted log
  double lr = 0, train_loss = 0, val_psnr = 0;
};

struct TrainResult {
  Checkpoint best, last;
  std::vector<EpochLog> log;
  std::string log_text;  // one tab-separated line per epoch
};

// Bidirectional training on normalized (NAC, CT) pairs. Fully deterministic
// for a fixed config; `progress` receives one line per epoch when given.
TrainResult train(const Volume& train_pairs, const Volume& val_pairs,
                  const Normalization& norm, const TrainConfig& cfg,
                  std::ostream* progress = nullptr);

// Synthetic CT for a batch of normalized NAC tensors; returns the
// normalized CT channel.
Tensor infer_ct_normalized(const Checkpoint& ck, const Tensor& pet_norm);

// Volume-level inference: NAC in (raw units unless `input_normalized`),
// synthetic CT out in HU.
Volume infer(const Checkpoint& ck, const Volume& nac, bool input_normalized);

// Synthetic-CT quality against the reference CT planes of a normalized pair
// file (the eval command and the training acceptance criterion).
metrics::MetricsReport evaluate_synthetic_ct(const Checkpoint& ck, const Volume& pairs);

// The full correction workflow on raw (activity, CT HU) pairs: simulate the
// attenuated emission data, correct once with the reference-CT mu map and
// once with the predicted-CT mu map, and compare the two corrections.
struct AcResult {
  Volume ac_pred, ac_ref, diff;
  metrics::MetricsReport report;  // ac_ref as reference vs ac_pred
};

AcResult correct_pipeline(const Checkpoint& ck, const Volume& raw_pairs,
                          const DatasetMeta& meta);

}  // namespace ivnac
