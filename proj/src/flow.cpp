#include "ivnac/flow.hpp"

#include <cmath>

namespace ivnac {

void FlowConfig::validate() const {
  if (blocks < 1) throw ContractError("flow config: blocks must be >= 1");
  if (channels < 2 || channels % 2 != 0)
    throw ContractError("flow config: channels must be even and >= 2, got " +
                        std::to_string(channels));
  if (hidden < 1) throw ContractError("flow config: hidden width must be >= 1");
  if (kernel < 1 || kernel % 2 == 0)
    throw ContractError("flow config: kernel must be odd, got " + std::to_string(kernel));
  if (!(scale_clamp > 0)) throw ContractError("flow config: scale_clamp must be positive");
  if (!(leaky_slope > 0 && leaky_slope < 1))
    throw ContractError("flow config: leaky_slope must lie in (0,1)");
}

namespace {

template <typename Fn>
auto tagged(std::int64_t block, Fn&& fn) {
  try {
    return fn();
  } catch (const ContractError& e) {
    throw ContractError("block " + std::to_string(block) + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError("block " + std::to_string(block) + ": " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// DenseSubnet
// ---------------------------------------------------------------------------

template <typename T>
DenseSubnetT<T>::DenseSubnetT(std::int64_t cin, std::int64_t cout, const FlowConfig& cfg)
    : kernel_(cfg.kernel), slope_(T(cfg.leaky_slope)) {
  const std::int64_t h = cfg.hidden, k = cfg.kernel;
  const std::int64_t plan[6] = {cin, h, h, h, h, cout};
  for (int i = 0; i < 5; i++) {
    layers[size_t(i)].weight = TensorT<T>({plan[i + 1], plan[i], k, k});
    layers[size_t(i)].bias = TensorT<T>({1, plan[i + 1], 1, 1});
  }
}

template <typename T>
void DenseSubnetT<T>::init_he(Rng& rng) {
  // Kaiming draw on the four hidden layers; the output layer stays zero so
  // the enclosing coupling starts as the identity.
  for (int i = 0; i < 4; i++) {
    auto& l = layers[size_t(i)];
    const Shape4 ws = l.weight.shape();
    const double fan_in = double(ws.c * ws.h * ws.w);
    const double gain = 2.0 / (1.0 + double(slope_) * double(slope_));
    const double stdev = std::sqrt(gain / fan_in);
    T* w = l.weight.mutable_data();
    for (std::int64_t j = 0; j < l.weight.elems(); j++) w[j] = T(stdev * rng.normal());
  }
}

template <typename T>
void DenseSubnetT<T>::init_random(Rng& rng, double amp) {
  for (auto& l : layers) {
    T* w = l.weight.mutable_data();
    const Shape4 ws = l.weight.shape();
    const double stdev = amp / std::sqrt(double(ws.c * ws.h * ws.w));
    for (std::int64_t j = 0; j < l.weight.elems(); j++) w[j] = T(stdev * rng.normal());
    T* b = l.bias.mutable_data();
    for (std::int64_t j = 0; j < l.bias.elems(); j++) b[j] = T(0.1 * amp * rng.normal());
  }
}

template <typename T>
TensorT<T> DenseSubnetT<T>::forward(TapeT<T>* tape, const TensorT<T>& x) const {
  const std::int64_t pad = (kernel_ - 1) / 2;
  TensorT<T> z = x;
  for (int i = 0; i < 5; i++) {
    z = ops::conv2d(tape, z, layers[size_t(i)].weight, layers[size_t(i)].bias, pad);
    if (i < 4) z = ops::leaky_relu(tape, z, slope_);
  }
  return z;
}

// ---------------------------------------------------------------------------
// CouplingLayer
// ---------------------------------------------------------------------------

template <typename T>
CouplingLayerT<T>::CouplingLayerT(std::int64_t channels, const FlowConfig& cfg)
    : scale_clamp(T(cfg.scale_clamp)) {
  const std::int64_t half = channels / 2;
  scale_net1 = DenseSubnetT<T>(half, half, cfg);
  shift_net1 = DenseSubnetT<T>(half, half, cfg);
  scale_net2 = DenseSubnetT<T>(half, half, cfg);
  shift_net2 = DenseSubnetT<T>(half, half, cfg);
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> CouplingLayerT<T>::forward(TapeT<T>* tape,
                                                             const TensorT<T>& x1,
                                                             const TensorT<T>& x2) const {
  TensorT<T> s1 = ops::soft_clamp(tape, scale_net1.forward(tape, x2), scale_clamp);
  TensorT<T> y1 = ops::add(tape, ops::mul(tape, x1, ops::exp(tape, s1)),
                           shift_net1.forward(tape, x2));
  TensorT<T> s2 = ops::soft_clamp(tape, scale_net2.forward(tape, y1), scale_clamp);
  TensorT<T> y2 = ops::add(tape, ops::mul(tape, x2, ops::exp(tape, s2)),
                           shift_net2.forward(tape, y1));
  return {std::move(y1), std::move(y2)};
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> CouplingLayerT<T>::inverse(TapeT<T>* tape,
                                                             const TensorT<T>& y1,
                                                             const TensorT<T>& y2) const {
  // x2 must come first: the second pass of the forward used y1, the first
  // pass used x2.
  TensorT<T> s2 = ops::soft_clamp(tape, scale_net2.forward(tape, y1), scale_clamp);
  TensorT<T> x2 = ops::mul(tape, ops::sub(tape, y2, shift_net2.forward(tape, y1)),
                           ops::exp(tape, ops::mul_scalar(tape, s2, T(-1))));
  TensorT<T> s1 = ops::soft_clamp(tape, scale_net1.forward(tape, x2), scale_clamp);
  TensorT<T> x1 = ops::mul(tape, ops::sub(tape, y1, shift_net1.forward(tape, x2)),
                           ops::exp(tape, ops::mul_scalar(tape, s1, T(-1))));
  return {std::move(x1), std::move(x2)};
}

// ---------------------------------------------------------------------------
// InvConv1x1
// ---------------------------------------------------------------------------

template <typename T>
InvConv1x1T<T>::InvConv1x1T(std::int64_t channels, double cond_limit)
    : weight({channels, channels, 1, 1}), cond_limit_(cond_limit) {
  T* w = weight.mutable_data();
  for (std::int64_t i = 0; i < channels; i++) w[i * channels + i] = T(1);
}

template <typename T>
void InvConv1x1T<T>::init_orthogonal(Rng& rng) {
  const std::int64_t c = weight.shape().n;
  // QR of a Gaussian draw by modified Gram-Schmidt
  std::vector<double> a(size_t(c * c));
  for (auto& v : a) v = rng.normal();
  for (std::int64_t j = 0; j < c; j++) {
    for (std::int64_t k = 0; k < j; k++) {
      double dot = 0;
      for (std::int64_t i = 0; i < c; i++) dot += a[size_t(i * c + k)] * a[size_t(i * c + j)];
      for (std::int64_t i = 0; i < c; i++) a[size_t(i * c + j)] -= dot * a[size_t(i * c + k)];
    }
    double norm = 0;
    for (std::int64_t i = 0; i < c; i++) norm += a[size_t(i * c + j)] * a[size_t(i * c + j)];
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw NumericError("degenerate draw during orthogonal init");
    for (std::int64_t i = 0; i < c; i++) a[size_t(i * c + j)] /= norm;
  }
  T* w = weight.mutable_data();
  for (std::int64_t i = 0; i < c * c; i++) w[i] = T(a[size_t(i)]);
  cache_valid_ = false;
}

template <typename T>
const TensorT<T>& InvConv1x1T<T>::cached_inverse() const {
  if (!cache_valid_) {
    inv_cache_ = ops::mat_inverse<T>(nullptr, weight, cond_limit_);
    cache_valid_ = true;
  }
  return inv_cache_;
}

template <typename T>
TensorT<T> InvConv1x1T<T>::forward(TapeT<T>* tape, const TensorT<T>& x) const {
  return ops::channel_matmul(tape, x, weight);
}

template <typename T>
TensorT<T> InvConv1x1T<T>::inverse(TapeT<T>* tape, const TensorT<T>& y) const {
  if (!tape) return ops::channel_matmul<T>(nullptr, y, cached_inverse());
  // On tape the inverse matrix is itself a recorded op so gradients reach
  // the weight through the inverse pass as well.
  TensorT<T> inv = ops::mat_inverse(tape, weight, cond_limit_);
  return ops::channel_matmul(tape, y, inv);
}

// ---------------------------------------------------------------------------
// ActNorm
// ---------------------------------------------------------------------------

template <typename T>
ActNormT<T>::ActNormT(std::int64_t channels)
    : scale(TensorT<T>::full({1, channels, 1, 1}, T(1))), bias({1, channels, 1, 1}) {}

template <typename T>
void ActNormT<T>::init_identity() {
  scale = TensorT<T>::full(scale.shape(), T(1));
  bias = TensorT<T>(bias.shape());
  initialized_ = true;
}

template <typename T>
void ActNormT<T>::init_random(Rng& rng) {
  T* s = scale.mutable_data();
  T* b = bias.mutable_data();
  for (std::int64_t i = 0; i < scale.elems(); i++) {
    const double mag = 0.5 + rng.uniform();  // in [0.5, 1.5], never zero
    s[i] = T(rng.uniform() < 0.5 ? -mag : mag);
    b[i] = T(0.5 * rng.normal());
  }
  initialized_ = true;
}

template <typename T>
void ActNormT<T>::init_from_batch(const TensorT<T>& x) {
  const Shape4 xs = x.shape();
  if (xs.c != scale.shape().c)
    throw ContractError("actnorm init: channel mismatch " + xs.str());
  const std::int64_t count = xs.n * xs.hw();
  T* s = scale.mutable_data();
  T* b = bias.mutable_data();
  for (std::int64_t c = 0; c < xs.c; c++) {
    double mean = 0;
    for (std::int64_t n = 0; n < xs.n; n++) {
      const T* p = x.data() + (n * xs.c + c) * xs.hw();
      for (std::int64_t i = 0; i < xs.hw(); i++) mean += double(p[i]);
    }
    mean /= double(count);
    double var = 0;
    for (std::int64_t n = 0; n < xs.n; n++) {
      const T* p = x.data() + (n * xs.c + c) * xs.hw();
      for (std::int64_t i = 0; i < xs.hw(); i++) {
        const double d = double(p[i]) - mean;
        var += d * d;
      }
    }
    var /= double(count);
    const double stdev = std::sqrt(var);
    if (stdev < 1e-5) {
      s[c] = T(1);
      b[c] = T(-mean);
    } else {
      s[c] = T(1.0 / stdev);
      b[c] = T(-mean / stdev);
    }
  }
  initialized_ = true;
}

template <typename T>
void ActNormT<T>::require_ready() const {
  if (!initialized_)
    throw ContractError("actnorm applied before data-dependent initialization");
  for (std::int64_t i = 0; i < scale.elems(); i++)
    if (scale.data()[i] == T(0)) throw ContractError("actnorm scale has a zero entry");
}

template <typename T>
TensorT<T> ActNormT<T>::forward(TapeT<T>* tape, const TensorT<T>& x) const {
  require_ready();
  return ops::channel_affine(tape, x, scale, bias);
}

template <typename T>
TensorT<T> ActNormT<T>::inverse(TapeT<T>* tape, const TensorT<T>& y) const {
  require_ready();
  TensorT<T> rs = ops::reciprocal(tape, scale);
  TensorT<T> nb = ops::mul_scalar(tape, ops::mul(tape, bias, rs), T(-1));
  return ops::channel_affine(tape, y, rs, nb);
}

// ---------------------------------------------------------------------------
// FlowBlock / FlowModel
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> FlowBlockT<T>::forward(TapeT<T>* tape, const TensorT<T>& x) const {
  TensorT<T> z = actnorm.forward(tape, x);
  z = mix.forward(tape, z);
  auto [z1, z2] = ops::split_half(tape, z);
  auto [y1, y2] = coupling.forward(tape, z1, z2);
  return ops::concat(tape, y1, y2);
}

template <typename T>
TensorT<T> FlowBlockT<T>::inverse(TapeT<T>* tape, const TensorT<T>& y) const {
  auto [y1, y2] = ops::split_half(tape, y);
  auto [z1, z2] = coupling.inverse(tape, y1, y2);
  TensorT<T> z = ops::concat(tape, z1, z2);
  z = mix.inverse(tape, z);
  return actnorm.inverse(tape, z);
}

template <typename T>
FlowModelT<T>::FlowModelT(const FlowConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  blocks.reserve(size_t(cfg.blocks));
  for (std::int64_t i = 0; i < cfg.blocks; i++) {
    FlowBlockT<T> b;
    b.actnorm = ActNormT<T>(cfg.channels);
    b.mix = InvConv1x1T<T>(cfg.channels, cfg.cond_limit);
    b.coupling = CouplingLayerT<T>(cfg.channels, cfg);
    blocks.push_back(std::move(b));
  }
}

template <typename T>
FlowModelT<T> FlowModelT<T>::identity_init(const FlowConfig& cfg, std::uint64_t seed) {
  FlowModelT m(cfg);
  Rng rng(seed);
  for (auto& b : m.blocks) {
    b.actnorm.init_identity();
    // mix weight stays at the constructor's identity matrix
    b.coupling.scale_net1.init_he(rng);
    b.coupling.shift_net1.init_he(rng);
    b.coupling.scale_net2.init_he(rng);
    b.coupling.shift_net2.init_he(rng);
  }
  return m;
}

template <typename T>
FlowModelT<T> FlowModelT<T>::training_init(const FlowConfig& cfg, std::uint64_t seed) {
  FlowModelT m(cfg);
  Rng rng(seed);
  for (auto& b : m.blocks) {
    b.mix.init_orthogonal(rng);
    b.coupling.scale_net1.init_he(rng);
    b.coupling.shift_net1.init_he(rng);
    b.coupling.scale_net2.init_he(rng);
    b.coupling.shift_net2.init_he(rng);
  }
  return m;
}

template <typename T>
FlowModelT<T> FlowModelT<T>::random_init(const FlowConfig& cfg, std::uint64_t seed) {
  FlowModelT m(cfg);
  Rng rng(seed);
  for (auto& b : m.blocks) {
    b.actnorm.init_random(rng);
    b.mix.init_orthogonal(rng);
    b.coupling.scale_net1.init_random(rng, 0.7);
    b.coupling.shift_net1.init_random(rng, 0.7);
    b.coupling.scale_net2.init_random(rng, 0.7);
    b.coupling.shift_net2.init_random(rng, 0.7);
  }
  return m;
}

template <typename T>
void FlowModelT<T>::check_input(const TensorT<T>& x) const {
  if (x.shape().c != cfg_.channels)
    throw ContractError("flow model: input has " + std::to_string(x.shape().c) +
                        " channels, model expects " + std::to_string(cfg_.channels));
}

template <typename T>
TensorT<T> FlowModelT<T>::forward(TapeT<T>* tape, const TensorT<T>& x_aug) const {
  check_input(x_aug);
  TensorT<T> z = x_aug;
  for (std::int64_t i = 0; i < std::int64_t(blocks.size()); i++)
    z = tagged(i, [&] { return blocks[size_t(i)].forward(tape, z); });
  return z;
}

template <typename T>
TensorT<T> FlowModelT<T>::inverse(TapeT<T>* tape, const TensorT<T>& y_aug) const {
  check_input(y_aug);
  TensorT<T> z = y_aug;
  for (std::int64_t i = std::int64_t(blocks.size()) - 1; i >= 0; i--)
    z = tagged(i, [&] { return blocks[size_t(i)].inverse(tape, z); });
  return z;
}

template <typename T>
void FlowModelT<T>::init_actnorm(const TensorT<T>& first_batch) {
  check_input(first_batch);
  TensorT<T> z = first_batch;
  for (auto& b : blocks) {
    if (!b.actnorm.initialized()) b.actnorm.init_from_batch(z);
    z = b.forward(nullptr, z);
  }
}

template <typename T>
bool FlowModelT<T>::actnorm_ready() const {
  for (const auto& b : blocks)
    if (!b.actnorm.initialized()) return false;
  return true;
}

template <typename T>
void FlowModelT<T>::visit_params(
    const std::function<void(TensorT<T>&, const std::string&)>& fn) {
  for (std::int64_t i = 0; i < std::int64_t(blocks.size()); i++) {
    auto& b = blocks[size_t(i)];
    const std::string p = "block" + std::to_string(i) + ".";
    fn(b.actnorm.scale, p + "actnorm.scale");
    fn(b.actnorm.bias, p + "actnorm.bias");
    fn(b.mix.weight, p + "mix.weight");
    auto subnet = [&](DenseSubnetT<T>& s, const std::string& name) {
      for (int l = 0; l < 5; l++) {
        fn(s.layers[size_t(l)].weight, p + "coupling." + name + ".conv" +
                                           std::to_string(l + 1) + ".weight");
        fn(s.layers[size_t(l)].bias,
           p + "coupling." + name + ".conv" + std::to_string(l + 1) + ".bias");
      }
    };
    subnet(b.coupling.scale_net1, "scale1");
    subnet(b.coupling.shift_net1, "shift1");
    subnet(b.coupling.scale_net2, "scale2");
    subnet(b.coupling.shift_net2, "shift2");
  }
}

template <typename T>
void FlowModelT<T>::visit_params(
    const std::function<void(const TensorT<T>&, const std::string&)>& fn) const {
  const_cast<FlowModelT<T>*>(this)->visit_params(
      [&fn](TensorT<T>& t, const std::string& name) { fn(t, name); });
}

template <typename T>
void FlowModelT<T>::bind_params(TapeT<T>& tape) {
  visit_params([&tape](TensorT<T>& t, const std::string&) { tape.param(t); });
}

template <typename T>
void FlowModelT<T>::unbind_params() {
  visit_params([](TensorT<T>& t, const std::string&) { t.node = -1; });
}

template <typename T>
void FlowModelT<T>::revalidate_mixes() {
  for (std::int64_t i = 0; i < std::int64_t(blocks.size()); i++) {
    blocks[size_t(i)].mix.invalidate();
    tagged(i, [&] { return blocks[size_t(i)].mix.inverse(nullptr, TensorT<T>(
                        {1, cfg_.channels, 1, 1})); });
  }
}

namespace flow {

template <typename T>
TensorT<T> augment(TapeT<T>* tape, const TensorT<T>& image, std::int64_t channels) {
  if (channels < 2 || channels % 2 != 0)
    throw ContractError("augment: channel count must be even and >= 2, got " +
                        std::to_string(channels));
  return ops::replicate_channels(tape, image, channels);
}

template <typename T>
LatentOutputT<T> extract_ct(TapeT<T>* tape, const TensorT<T>& y_aug) {
  if (y_aug.shape().c < 2)
    throw ContractError("extract_ct: need at least 2 channels, got " +
                        std::to_string(y_aug.shape().c));
  auto [ct, z] = ops::split_at(tape, y_aug, 1);
  return LatentOutputT<T>{std::move(ct), std::move(z)};
}

template TensorT<float> augment<float>(TapeT<float>*, const TensorT<float>&, std::int64_t);
template TensorT<double> augment<double>(TapeT<double>*, const TensorT<double>&,
                                         std::int64_t);
template LatentOutputT<float> extract_ct<float>(TapeT<float>*, const TensorT<float>&);
template LatentOutputT<double> extract_ct<double>(TapeT<double>*, const TensorT<double>&);

}  // namespace flow

template class DenseSubnetT<float>;
template class DenseSubnetT<double>;
template class CouplingLayerT<float>;
template class CouplingLayerT<double>;
template class InvConv1x1T<float>;
template class InvConv1x1T<double>;
template class ActNormT<float>;
template class ActNormT<double>;
template struct FlowBlockT<float>;
template struct FlowBlockT<double>;
template class FlowModelT<float>;
template class FlowModelT<double>;

}  // namespace ivnac
