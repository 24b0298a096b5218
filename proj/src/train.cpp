#include "ivnac/train.hpp"

#include "ivnac/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace ivnac {

void TrainConfig::validate() const {
  if (epochs < 1) throw ContractError("train config: epochs must be > 0");
  if (!(base_lr > 0)) throw ContractError("train config: base_lr must be > 0");
  if (lambda < 0) throw ContractError("train config: lambda must be >= 0");
  if (batch_size < 1) throw ContractError("train config: batch_size must be >= 1");
  if (halve_every < 1) throw ContractError("train config: halve_every must be >= 1");
  if (grad_clip < 0) throw ContractError("train config: grad_clip must be >= 0");
  flow.validate();
}

double lr_at(std::int64_t epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw ContractError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                        std::to_string(cfg.epochs) + ")");
  const std::int64_t halvings = epoch / cfg.halve_every;
  return cfg.base_lr * std::pow(0.5, double(halvings));
}

template <typename T>
TensorT<T> loss_total(TapeT<T>* tape, const FlowModelT<T>& model, const TensorT<T>& x_pet,
                      const TensorT<T>& y_ct, T lambda) {
  if (!(x_pet.shape() == y_ct.shape()))
    throw ContractError("loss_total: pair shapes differ, " + x_pet.shape().str() + " vs " +
                        y_ct.shape().str());
  if (x_pet.shape().c != 1)
    throw ContractError("loss_total: inputs must be single-channel images");
  const std::int64_t c = model.config().channels;

  TensorT<T> fwd = model.forward(tape, flow::augment(tape, x_pet, c));
  TensorT<T> ct_pred = flow::extract_ct(tape, fwd).ct;
  TensorT<T> l_fwd = ops::mse(tape, ct_pred, y_ct);

  TensorT<T> inv = model.inverse(tape, flow::augment(tape, y_ct, c));
  TensorT<T> pet_pred = ops::split_at(tape, inv, 1).first;
  TensorT<T> l_inv = ops::mse(tape, pet_pred, x_pet);

  return ops::add(tape, ops::mul_scalar(tape, l_fwd, lambda), l_inv);
}

template TensorT<float> loss_total<float>(TapeT<float>*, const FlowModelT<float>&,
                                          const TensorT<float>&, const TensorT<float>&,
                                          float);
template TensorT<double> loss_total<double>(TapeT<double>*, const FlowModelT<double>&,
                                            const TensorT<double>&, const TensorT<double>&,
                                            double);

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double lr,
               const std::string& name) {
  const std::int64_t n = param.elems();
  if (grad.elems() != 0 && grad.elems() != n)
    throw ContractError("adam_step: gradient shape differs from parameter " + name);
  if (state.m.empty()) {
    state.m.assign(size_t(n), 0.f);
    state.v.assign(size_t(n), 0.f);
  }
  state.t++;
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.t));
  if (grad.elems() == 0) return;  // unreached parameter: moments decay is moot
  for (std::int64_t i = 0; i < n; i++)
    if (!std::isfinite(grad.data()[i]))
      throw NumericError("non-finite gradient for parameter " + name);
  float* p = param.mutable_data();
  for (std::int64_t i = 0; i < n; i++) {
    const double g = grad.data()[i];
    const double m = state.beta1 * state.m[size_t(i)] + (1.0 - state.beta1) * g;
    const double v = state.beta2 * state.v[size_t(i)] + (1.0 - state.beta2) * g * g;
    state.m[size_t(i)] = float(m);
    state.v[size_t(i)] = float(v);
    const double mh = m / bc1;
    const double vh = v / bc2;
    p[i] = float(double(p[i]) - lr * mh / (std::sqrt(vh) + state.eps));
  }
}

void Adam::step(FlowModel& model, Tape& tape, double lr, double grad_clip) {
  struct Entry {
    Tensor* param;
    const Tensor* grad;
    std::string name;
  };
  std::vector<Entry> entries;
  model.visit_params([&](Tensor& t, const std::string& name) {
    entries.push_back(Entry{&t, tape.grad(t.node), name});
  });
  if (states_.empty()) states_.resize(entries.size());
  if (states_.size() != entries.size())
    throw ContractError("adam: parameter count changed between steps");

  double clip_factor = 1.0;
  if (grad_clip > 0) {
    double sq = 0;
    for (const auto& e : entries)
      if (e.grad)
        for (std::int64_t i = 0; i < e.grad->elems(); i++)
          sq += double(e.grad->data()[i]) * double(e.grad->data()[i]);
    const double norm = std::sqrt(sq);
    if (norm > grad_clip) clip_factor = grad_clip / norm;
  }

  for (size_t i = 0; i < entries.size(); i++) {
    auto& e = entries[i];
    if (e.grad && clip_factor != 1.0) {
      Tensor scaled(e.grad->shape());
      kernels::scale_add_ew<float>(e.grad->data(), scaled.mutable_data(), e.grad->elems(),
                                   float(clip_factor), 0.f);
      adam_step(*e.param, scaled, states_[i], lr, e.name);
    } else {
      adam_step(*e.param, e.grad ? *e.grad : Tensor(), states_[i], lr, e.name);
    }
  }
  steps_++;
}

// ---------------------------------------------------------------------------
// checkpoint serialization
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'I', 'V', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string hyper_text(const Checkpoint& ck) {
  std::ostringstream os;
  os << "blocks=" << ck.flow.blocks << "\n";
  os << "channels=" << ck.flow.channels << "\n";
  os << "hidden=" << ck.flow.hidden << "\n";
  os << "kernel=" << ck.flow.kernel << "\n";
  os << "scale_clamp=" << fmt_double(ck.flow.scale_clamp) << "\n";
  os << "leaky_slope=" << fmt_double(ck.flow.leaky_slope) << "\n";
  os << "cond_limit=" << fmt_double(ck.flow.cond_limit) << "\n";
  os << "height=" << ck.height << "\n";
  os << "width=" << ck.width << "\n";
  os << "pet_scale=" << fmt_double(ck.norm.pet_scale) << "\n";
  os << "ct_lo=" << fmt_double(ck.norm.ct_lo) << "\n";
  os << "ct_hi=" << fmt_double(ck.norm.ct_hi) << "\n";
  return os.str();
}

std::string meta_text(const Checkpoint& ck) {
  std::ostringstream os;
  os << "epoch=" << ck.epoch << "\n";
  os << "seed=" << ck.seed << "\n";
  os << "lambda=" << fmt_double(ck.lambda) << "\n";
  os << "base_lr=" << fmt_double(ck.base_lr) << "\n";
  os << "halve_every=" << ck.halve_every << "\n";
  os << "batch_size=" << ck.batch_size << "\n";
  os << "train_loss=" << fmt_double(ck.train_loss) << "\n";
  os << "val_psnr=" << fmt_double(ck.val_psnr) << "\n";
  os << "best_epoch=" << ck.best_epoch << "\n";
  return os.str();
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kCkptMagic, 4);
  put_u32(os, kCkptVersion);
  const std::string hp = hyper_text(ck);
  put_u32(os, std::uint32_t(hp.size()));
  os.write(hp.data(), std::streamsize(hp.size()));
  ck.model.visit_params([&os](const Tensor& t, const std::string&) {
    os.write(reinterpret_cast<const char*>(t.data()),
             std::streamsize(size_t(t.elems()) * sizeof(float)));
  });
  const std::string md = meta_text(ck);
  put_u32(os, std::uint32_t(md.size()));
  os.write(md.data(), std::streamsize(md.size()));
  if (!os) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw IoError("not a checkpoint file: " + path);
  if (get_u32(is) != kCkptVersion) throw IoError("unsupported checkpoint version: " + path);

  const std::uint32_t hp_len = get_u32(is);
  std::string hp(hp_len, '\0');
  is.read(hp.data(), hp_len);
  if (!is) throw IoError("truncated checkpoint header: " + path);
  auto kv = parse_kv(hp);
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError("checkpoint missing key '" + key + "': " + path);
    return it->second;
  };

  Checkpoint ck;
  ck.flow.blocks = std::stoll(need("blocks"));
  ck.flow.channels = std::stoll(need("channels"));
  ck.flow.hidden = std::stoll(need("hidden"));
  ck.flow.kernel = std::stoll(need("kernel"));
  ck.flow.scale_clamp = std::stod(need("scale_clamp"));
  ck.flow.leaky_slope = std::stod(need("leaky_slope"));
  ck.flow.cond_limit = std::stod(need("cond_limit"));
  ck.height = std::stoll(need("height"));
  ck.width = std::stoll(need("width"));
  ck.norm.pet_scale = std::stod(need("pet_scale"));
  ck.norm.ct_lo = std::stod(need("ct_lo"));
  ck.norm.ct_hi = std::stod(need("ct_hi"));

  ck.model = FlowModel(ck.flow);
  ck.model.visit_params([&is, &path](Tensor& t, const std::string& name) {
    is.read(reinterpret_cast<char*>(t.mutable_data()),
            std::streamsize(size_t(t.elems()) * sizeof(float)));
    if (!is) throw IoError("truncated parameters at " + name + ": " + path);
  });
  for (auto& b : ck.model.blocks) b.actnorm.mark_initialized();

  const std::uint32_t md_len = get_u32(is);
  std::string md(md_len, '\0');
  is.read(md.data(), md_len);
  if (!is) throw IoError("truncated checkpoint metadata: " + path);
  auto mkv = parse_kv(md);
  auto mneed = [&](const std::string& key) {
    auto it = mkv.find(key);
    if (it == mkv.end()) throw IoError("checkpoint missing key '" + key + "': " + path);
    return it->second;
  };
  ck.epoch = std::stoll(mneed("epoch"));
  ck.seed = std::stoull(mneed("seed"));
  ck.lambda = std::stod(mneed("lambda"));
  ck.base_lr = std::stod(mneed("base_lr"));
  ck.halve_every = std::stoll(mneed("halve_every"));
  ck.batch_size = std::stoll(mneed("batch_size"));
  ck.train_loss = std::stod(mneed("train_loss"));
  ck.val_psnr = std::stod(mneed("val_psnr"));
  ck.best_epoch = std::stoll(mneed("best_epoch"));

  char extra;
  if (is.read(&extra, 1)) throw IoError("trailing bytes after checkpoint: " + path);
  return ck;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

namespace {

void require_pairs(const Volume& vol, const char* which) {
  if (vol.count == 0) throw ContractError(std::string(which) + " dataset is empty");
  if (vol.channels != 2)
    throw ContractError(std::string(which) + " dataset must have 2 channels per record");
}

std::uint64_t record_hash(const Volume& vol, std::int64_t i) {
  const float* p = vol.data.data() + i * vol.channels * vol.h * vol.w;
  const size_t bytes = size_t(vol.channels * vol.h * vol.w) * sizeof(float);
  // FNV-1a
  std::uint64_t h = 1469598103934665603ULL;
  const auto* b = reinterpret_cast<const unsigned char*>(p);
  for (size_t k = 0; k < bytes; k++) {
    h ^= b[k];
    h *= 1099511628211ULL;
  }
  return h;
}

Tensor gather_batch(const Volume& vol, const std::vector<std::int64_t>& order,
                    std::int64_t start, std::int64_t n, std::int64_t channel) {
  Tensor t({n, 1, vol.h, vol.w});
  float* p = t.mutable_data();
  for (std::int64_t i = 0; i < n; i++) {
    const std::int64_t rec = order[size_t(start + i)];
    const float* src = vol.data.data() + (rec * vol.channels + channel) * vol.h * vol.w;
    std::copy(src, src + vol.h * vol.w, p + i * vol.h * vol.w);
  }
  return t;
}

double val_psnr_mean(const FlowModel& model, const Volume& val) {
  std::vector<double> vals;
  std::vector<std::int64_t> order(size_t(val.count));
  for (size_t i = 0; i < order.size(); i++) order[i] = std::int64_t(i);
  const std::int64_t chunk = 8;
  for (std::int64_t start = 0; start < std::int64_t(val.count); start += chunk) {
    const std::int64_t n = std::min<std::int64_t>(chunk, std::int64_t(val.count) - start);
    Tensor x = gather_batch(val, order, start, n, 0);
    Tensor aug = flow::augment<float>(nullptr, x, model.config().channels);
    Tensor ct = flow::extract_ct<float>(nullptr, model.forward(nullptr, aug)).ct;
    for (std::int64_t i = 0; i < n; i++) {
      const Image ref = val.plane(start + i, 1);
      const Image pred = Image::from_tensor(ct, i, 0);
      vals.push_back(metrics::psnr(ref, pred));
    }
  }
  return metrics::aggregate(vals).mean;
}

std::string log_line(const EpochLog& e) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%lld\t%.10g\t%.10g\t%.10g\n",
                static_cast<long long>(e.epoch), e.lr, e.train_loss, e.val_psnr);
  return buf;
}

Checkpoint make_checkpoint(const FlowModel& model, const TrainConfig& cfg,
                           const Normalization& norm, std::int64_t h, std::int64_t w,
                           std::int64_t epoch, double train_loss, double val_psnr,
                           std::int64_t best_epoch) {
  Checkpoint ck;
  ck.flow = cfg.flow;
  ck.height = h;
  ck.width = w;
  ck.norm = norm;
  ck.epoch = epoch;
  ck.seed = cfg.seed;
  ck.lambda = cfg.lambda;
  ck.base_lr = cfg.base_lr;
  ck.halve_every = cfg.halve_every;
  ck.batch_size = cfg.batch_size;
  ck.train_loss = train_loss;
  ck.val_psnr = val_psnr;
  ck.best_epoch = best_epoch;
  ck.model = model;
  return ck;
}

}  // namespace

TrainResult train(const Volume& train_pairs, const Volume& val_pairs,
                  const Normalization& norm, const TrainConfig& cfg,
                  std::ostream* progress) {
  cfg.validate();
  require_pairs(train_pairs, "training");
  require_pairs(val_pairs, "validation");
  if (train_pairs.h != val_pairs.h || train_pairs.w != val_pairs.w)
    throw ContractError("training/validation image sizes differ");

  {
    // disjointness audit by record hashing
    std::vector<std::uint64_t> train_hashes(train_pairs.count);
    for (std::int64_t i = 0; i < std::int64_t(train_pairs.count); i++)
      train_hashes[size_t(i)] = record_hash(train_pairs, i);
    std::sort(train_hashes.begin(), train_hashes.end());
    for (std::int64_t j = 0; j < std::int64_t(val_pairs.count); j++)
      if (std::binary_search(train_hashes.begin(), train_hashes.end(),
                             record_hash(val_pairs, j)))
        throw ContractError("validation split overlaps the training split (record " +
                            std::to_string(j) + ")");
  }

  FlowModel model = cfg.identity_start ? FlowModel::identity_init(cfg.flow, cfg.seed)
                                       : FlowModel::training_init(cfg.flow, cfg.seed);

  const std::int64_t count = std::int64_t(train_pairs.count);
  std::vector<std::int64_t> order(static_cast<size_t>(count), 0);
  auto shuffle_epoch = [&](std::int64_t epoch) {
    for (std::int64_t i = 0; i < count; i++) order[size_t(i)] = i;
    Rng rng(Rng::derive(cfg.seed, 0x5AFF1E00ULL + std::uint64_t(epoch)));
    for (std::int64_t i = count - 1; i > 0; i--) {
      const std::int64_t j = std::int64_t(rng.uniform_int(std::uint64_t(i + 1)));
      std::swap(order[size_t(i)], order[size_t(j)]);
    }
  };

  // data-dependent actnorm initialization on the first batch
  shuffle_epoch(0);
  {
    const std::int64_t n = std::min(cfg.batch_size, count);
    Tensor x0 = gather_batch(train_pairs, order, 0, n, 0);
    model.init_actnorm(flow::augment<float>(nullptr, x0, cfg.flow.channels));
  }

  Adam adam;
  TrainResult result;
  double best_psnr = -1e300;
  std::int64_t best_epoch = 0;
  FlowModel best_model = model;
  double last_epoch_loss = 0;

  for (std::int64_t epoch = 0; epoch < cfg.epochs; epoch++) {
    const double lr = lr_at(epoch, cfg);
    shuffle_epoch(epoch);
    double loss_sum = 0;
    std::int64_t batches = 0;
    for (std::int64_t start = 0; start < count; start += cfg.batch_size) {
      const std::int64_t n = std::min(cfg.batch_size, count - start);
      Tensor x = gather_batch(train_pairs, order, start, n, 0);
      Tensor y = gather_batch(train_pairs, order, start, n, 1);
      Tape tape;
      model.bind_params(tape);
      Tensor loss;
      try {
        loss = loss_total<float>(&tape, model, x, y, float(cfg.lambda));
        if (!std::isfinite(loss.data()[0]))
          throw NumericError("loss is not finite");
        tape.backward(loss.node);
        adam.step(model, tape, lr, cfg.grad_clip);
        model.revalidate_mixes();
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch + 1) + " batch " +
                           std::to_string(batches) + ": " + e.what());
      }
      model.unbind_params();
      loss_sum += double(loss.data()[0]);
      batches++;
    }
    last_epoch_loss = loss_sum / double(batches);
    const double vp = val_psnr_mean(model, val_pairs);

    EpochLog entry{epoch + 1, lr, last_epoch_loss, vp};
    result.log.push_back(entry);
    result.log_text += log_line(entry);
    if (progress) (*progress) << "epoch " << (epoch + 1) << "/" << cfg.epochs
                              << "  lr " << lr << "  loss " << last_epoch_loss
                              << "  val_psnr " << vp << std::endl;
    if (vp > best_psnr) {
      best_psnr = vp;
      best_epoch = epoch + 1;
      best_model = model;
    }
  }

  result.last = make_checkpoint(model, cfg, norm, train_pairs.h, train_pairs.w, cfg.epochs,
                                last_epoch_loss, result.log.back().val_psnr, best_epoch);
  result.best = make_checkpoint(best_model, cfg, norm, train_pairs.h, train_pairs.w,
                                best_epoch, last_epoch_loss, best_psnr, best_epoch);
  return result;
}

// ---------------------------------------------------------------------------
// inference and evaluation
// ---------------------------------------------------------------------------

Tensor infer_ct_normalized(const Checkpoint& ck, const Tensor& pet_norm) {
  const Shape4 s = pet_norm.shape();
  if (s.h != ck.height || s.w != ck.width)
    throw ContractError("infer: image size " + s.str() + " does not match checkpoint (" +
                        std::to_string(ck.height) + "x" + std::to_string(ck.width) + ")");
  if (s.c != 1) throw ContractError("infer: input must be single-channel");
  Tensor aug = flow::augment<float>(nullptr, pet_norm, ck.flow.channels);
  return flow::extract_ct<float>(nullptr, ck.model.forward(nullptr, aug)).ct;
}

Volume infer(const Checkpoint& ck, const Volume& nac, bool input_normalized) {
  if (nac.count == 0) throw ContractError("infer: empty input volume");
  Volume out = Volume::create(nac.count, 1, nac.h, nac.w);
  const std::int64_t chunk = 8;
  for (std::int64_t start = 0; start < std::int64_t(nac.count); start += chunk) {
    const std::int64_t n = std::min<std::int64_t>(chunk, std::int64_t(nac.count) - start);
    Tensor x({n, 1, nac.h, nac.w});
    float* p = x.mutable_data();
    for (std::int64_t i = 0; i < n; i++) {
      Image plane = nac.plane(start + i, 0);
      if (!input_normalized) plane = ck.norm.norm_pet(plane);
      std::copy(plane.v.begin(), plane.v.end(), p + i * nac.h * nac.w);
    }
    Tensor ct = infer_ct_normalized(ck, x);
    for (std::int64_t i = 0; i < n; i++)
      out.set_plane(start + i, 0, ck.norm.denorm_ct(Image::from_tensor(ct, i, 0)));
  }
  return out;
}

metrics::MetricsReport evaluate_synthetic_ct(const Checkpoint& ck, const Volume& pairs) {
  require_pairs(pairs, "evaluation");
  metrics::MetricsReport report;
  const std::int64_t chunk = 8;
  for (std::int64_t start = 0; start < std::int64_t(pairs.count); start += chunk) {
    const std::int64_t n = std::min<std::int64_t>(chunk, std::int64_t(pairs.count) - start);
    Tensor x({n, 1, pairs.h, pairs.w});
    float* p = x.mutable_data();
    for (std::int64_t i = 0; i < n; i++) {
      const float* src =
          pairs.data.data() + ((start + i) * pairs.channels + 0) * pairs.h * pairs.w;
      std::copy(src, src + pairs.h * pairs.w, p + i * pairs.h * pairs.w);
    }
    Tensor ct = infer_ct_normalized(ck, x);
    for (std::int64_t i = 0; i < n; i++) {
      const Image ref = pairs.plane(start + i, 1);
      const Image pred = Image::from_tensor(ct, i, 0);
      metrics::ImageMetrics row;
      row.id = start + i;
      row.psnr_db = metrics::psnr(ref, pred);
      row.ssim = metrics::ssim(ref, pred);
      row.rmse_pct = metrics::rmse_pct(ref, pred);
      row.mae_pct = metrics::mae_pct(ref, pred, metrics::brain_mask(ref)).pct;
      report.per_image.push_back(row);
    }
  }
  report.finalize();
  return report;
}

AcResult correct_pipeline(const Checkpoint& ck, const Volume& raw_pairs,
                          const DatasetMeta& meta) {
  require_pairs(raw_pairs, "correction");
  if (meta.normalized)
    throw ContractError("correct: input must be a raw (activity, CT HU) pair file");
  const Geometry& geom = meta.geom;
  geom.validate();
  if (raw_pairs.h != geom.height || raw_pairs.w != geom.width)
    throw ContractError("correct: volume size does not match its geometry");

  AcResult r;
  r.ac_pred = Volume::create(raw_pairs.count, 1, raw_pairs.h, raw_pairs.w);
  r.ac_ref = Volume::create(raw_pairs.count, 1, raw_pairs.h, raw_pairs.w);
  r.diff = Volume::create(raw_pairs.count, 1, raw_pairs.h, raw_pairs.w);

  for (std::int64_t i = 0; i < std::int64_t(raw_pairs.count); i++) {
    const Image activity = raw_pairs.plane(i, 0);
    const Image ct_ref = raw_pairs.plane(i, 1);
    const Image mu_ref = physics::hu_to_mu(ct_ref);
    const std::int64_t g = meta.index_offset + i;
    physics::NacSim sim = physics::simulate_nac(activity, mu_ref, geom,
                                                noise_seed(meta.seed, g), meta.counts_scale);

    Volume nac_vol = Volume::create(1, 1, raw_pairs.h, raw_pairs.w);
    nac_vol.set_plane(0, 0, sim.nac);
    Volume ct_pred_vol = infer(ck, nac_vol, /*input_normalized=*/false);
    const Image mu_pred = physics::hu_to_mu(ct_pred_vol.plane(0, 0));

    const Image ac_pred = physics::correct_pet(sim.attenuated, mu_pred, geom);
    const Image ac_ref = physics::correct_pet(sim.attenuated, mu_ref, geom);
    Image diff(ac_pred.h, ac_pred.w);
    for (size_t k = 0; k < diff.v.size(); k++) diff.v[k] = ac_pred.v[k] - ac_ref.v[k];

    metrics::ImageMetrics row;
    row.id = i;
    row.psnr_db = metrics::psnr(ac_ref, ac_pred);
    row.ssim = metrics::ssim(ac_ref, ac_pred);
    row.rmse_pct = metrics::rmse_pct(ac_ref, ac_pred);
    row.mae_pct = metrics::mae_pct(ac_ref, ac_pred, metrics::brain_mask(ac_ref)).pct;
    r.report.per_image.push_back(row);

    r.ac_pred.set_plane(i, 0, ac_pred);
    r.ac_ref.set_plane(i, 0, ac_ref);
    r.diff.set_plane(i, 0, diff);
  }
  r.report.finalize();
  return r;
}

}  // namespace ivnac
