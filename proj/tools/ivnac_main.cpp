// ivnac: synthetic-CT generation and PET attenuation correction on
// synthetic head phantoms, end to end from one binary.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ivnac/dataset.hpp"
#include "ivnac/gradcheck.hpp"
#include "ivnac/metrics.hpp"
#include "ivnac/physics.hpp"
#include "ivnac/train.hpp"

namespace {

constexpr const char* kVersion = "1.0.0";

using nlohmann::json;

// Written alongside every primary output so a run can be reproduced from its
// recorded configuration.
class Manifest {
 public:
  Manifest(const std::string& subcommand) {
    j_["tool"] = "ivnac";
    j_["version"] = kVersion;
    j_["subcommand"] = subcommand;
    start_ = std::chrono::steady_clock::now();
  }

  json& config() { return j_["config"]; }
  void add_input(const std::string& p) { j_["inputs"].push_back(p); }
  void add_output(const std::string& p) { j_["outputs"].push_back(p); }

  void write(const std::string& primary_output) {
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    j_["wall_seconds"] = wall;
    const std::string path = primary_output + ".manifest.json";
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw ivnac::IoError("cannot write manifest: " + path);
    os << j_.dump(2) << "\n";
  }

 private:
  json j_;
  std::chrono::steady_clock::time_point start_;
};

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("IVNAC_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

ivnac::Volume load_pairs(const std::string& path, bool want_normalized,
                         ivnac::DatasetMeta* meta_out) {
  ivnac::Volume vol = ivnac::read_ivnc(path);
  ivnac::DatasetMeta meta = ivnac::DatasetMeta::read(path);
  if (meta.normalized != want_normalized)
    throw ivnac::ContractError(path + (want_normalized
                                           ? " holds raw pairs; a normalized dataset is required"
                                           : " holds normalized pairs; a raw pair file is required"));
  if (meta_out) *meta_out = meta;
  return vol;
}

void write_eval_report(const std::string& path, const ivnac::metrics::MetricsReport& r) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ivnac::IoError("cannot write report: " + path);
  os << "# id psnr ssim rmse_pct mae_pct\n";
  char buf[200];
  for (const auto& row : r.per_image) {
    std::snprintf(buf, sizeof buf, "%lld %.6f %.6f %.6f %.6f\n",
                  static_cast<long long>(row.id), row.psnr_db, row.ssim, row.rmse_pct,
                  row.mae_pct);
    os << buf;
  }
  auto agg = [&](const char* name, const ivnac::metrics::Aggregate& a) {
    std::snprintf(buf, sizeof buf, "%s MEAN±STD %.6f±%.6f\n", name, a.mean, a.stddev);
    os << buf;
  };
  agg("psnr", r.psnr_db);
  agg("ssim", r.ssim);
  agg("rmse_pct", r.rmse_pct);
  agg("mae_pct", r.mae_pct);
}

void write_eval_kv(const std::string& path, const ivnac::metrics::MetricsReport& r) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ivnac::IoError("cannot write report: " + path);
  char buf[200];
  auto kv = [&](const char* name, double v) {
    std::snprintf(buf, sizeof buf, "%s=%.10g\n", name, v);
    os << buf;
  };
  kv("psnr_mean", r.psnr_db.mean);
  kv("psnr_std", r.psnr_db.stddev);
  kv("ssim_mean", r.ssim.mean);
  kv("ssim_std", r.ssim.stddev);
  kv("rmse_pct_mean", r.rmse_pct.mean);
  kv("rmse_pct_std", r.rmse_pct.stddev);
  kv("mae_pct_mean", r.mae_pct.mean);
  kv("mae_pct_std", r.mae_pct.stddev);
  os << "n_images=" << r.per_image.size() << "\n";
}

// ---------------------------------------------------------------------------

int cmd_phantom_gen(CLI::App& app) {
  auto* cmd = app.add_subcommand("phantom-gen",
                                 "Generate paired NAC-PET / CT head phantom datasets");
  struct O {
    std::int64_t count = 10;
    std::int64_t size = 64;
    std::uint64_t seed = 1;
    std::string out, raw_out, out_dir;
    std::int64_t n_train = 0, n_val = 0, n_test = 0;
    double counts_scale = 2e4;
    bool no_noise = false;
    std::int64_t angles = 90, bins = 96;
    double pixel_cm = 0.4;
    int threads = 0;
  };
  auto opt = std::make_shared<O>();
  cmd->add_option("--count", opt->count, "Sample count (single-file mode)")
      ->capture_default_str();
  cmd->add_option("--size", opt->size, "Image size in pixels")->capture_default_str();
  cmd->add_option("--seed", opt->seed, "Generator seed")->capture_default_str();
  cmd->add_option("--out", opt->out, "Output dataset file (single-file mode)");
  cmd->add_option("--raw-out", opt->raw_out,
                  "Also write the raw (activity, CT HU) pairs here");
  cmd->add_option("--out-dir", opt->out_dir, "Output directory (split mode)");
  cmd->add_option("--train", opt->n_train, "Training split size (split mode)");
  cmd->add_option("--val", opt->n_val, "Validation split size (split mode)");
  cmd->add_option("--test", opt->n_test, "Test split size (split mode)");
  cmd->add_option("--counts-scale", opt->counts_scale,
                  "Expected counts per unit sinogram value")
      ->capture_default_str();
  cmd->add_flag("--no-noise", opt->no_noise, "Disable Poisson noise");
  cmd->add_option("--angles", opt->angles, "Projection angles")->capture_default_str();
  cmd->add_option("--bins", opt->bins, "Detector bins")->capture_default_str();
  cmd->add_option("--pixel-cm", opt->pixel_cm, "Pixel size in cm")->capture_default_str();
  cmd->add_option("--threads", opt->threads, "Worker threads (default 1; IVNAC_THREADS)");

  cmd->callback([opt, cmd] {
    omp_set_num_threads(resolve_threads(opt->threads));
    const bool split_mode = !opt->out_dir.empty();
    if (split_mode == !opt->out.empty())
      throw ivnac::ContractError("phantom-gen: use exactly one of --out or --out-dir");

    ivnac::Geometry geom;
    geom.height = opt->size;
    geom.width = opt->size;
    geom.n_angles = opt->angles;
    geom.n_bins = opt->bins;
    geom.pixel_cm = opt->pixel_cm;
    const ivnac::PhantomSpec spec = ivnac::PhantomSpec{}.scaled_to(opt->size);
    const double counts = opt->no_noise ? ivnac::physics::kNoiselessCounts
                                        : opt->counts_scale;

    Manifest man("phantom-gen");
    man.config() = {{"size", opt->size},
                    {"seed", opt->seed},
                    {"counts_scale", counts},
                    {"angles", opt->angles},
                    {"bins", opt->bins},
                    {"pixel_cm", opt->pixel_cm},
                    {"cli", cmd->config_to_str(true, false)}};

    if (split_mode) {
      ivnac::SplitConfig cfg;
      cfg.n_train = opt->n_train > 0 ? opt->n_train : 200;
      cfg.n_val = opt->n_val > 0 ? opt->n_val : 20;
      cfg.n_test = opt->n_test > 0 ? opt->n_test : 40;
      cfg.seed = opt->seed;
      cfg.counts_scale = counts;
      cfg.geom = geom;
      cfg.spec = spec;
      const auto paths = ivnac::build_dataset(cfg, opt->out_dir);
      man.add_output(paths.train);
      man.add_output(paths.val);
      man.add_output(paths.test);
      man.add_output(paths.test_raw);
      man.write(paths.train);
      std::cout << "wrote " << paths.train << " " << paths.val << " " << paths.test << " "
                << paths.test_raw << "\n";
    } else {
      ivnac::BuildConfig cfg;
      cfg.count = opt->count;
      cfg.seed = opt->seed;
      cfg.counts_scale = counts;
      cfg.geom = geom;
      cfg.spec = spec;
      ivnac::build_single(cfg, opt->out, opt->raw_out);
      man.add_output(opt->out);
      if (!opt->raw_out.empty()) man.add_output(opt->raw_out);
      man.write(opt->out);
      std::cout << "wrote " << opt->out << "\n";
    }
  });
  return 0;
}

int cmd_train(CLI::App& app) {
  auto* cmd = app.add_subcommand("train", "Train the invertible translator");
  struct O {
    std::string data, val, ckpt, best_ckpt, log;
    ivnac::TrainConfig cfg;
    int threads = 0;
  };
  auto opt = std::make_shared<O>();
  cmd->add_option("--data", opt->data, "Training pair file")->required();
  cmd->add_option("--val", opt->val, "Validation pair file")->required();
  cmd->add_option("--ckpt", opt->ckpt, "Final checkpoint path")->required();
  cmd->add_option("--best-ckpt", opt->best_ckpt,
                  "Best-validation checkpoint path (default <ckpt>.best)");
  cmd->add_option("--log", opt->log, "Loss log path (default <ckpt>.log)");
  cmd->add_option("--epochs", opt->cfg.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--lr", opt->cfg.base_lr, "Initial learning rate")->capture_default_str();
  cmd->add_option("--lambda", opt->cfg.lambda, "Forward-loss weight")->capture_default_str();
  cmd->add_option("--batch", opt->cfg.batch_size, "Batch size")->capture_default_str();
  cmd->add_option("--seed", opt->cfg.seed, "Training seed")->capture_default_str();
  cmd->add_option("--halve-every", opt->cfg.halve_every, "Epochs between lr halvings")
      ->capture_default_str();
  cmd->add_option("--grad-clip", opt->cfg.grad_clip, "Global gradient-norm clip (0 = off)")
      ->capture_default_str();
  cmd->add_option("--blocks", opt->cfg.flow.blocks, "Invertible blocks")
      ->capture_default_str();
  cmd->add_option("--channels", opt->cfg.flow.channels, "Augmented channel count")
      ->capture_default_str();
  cmd->add_option("--hidden", opt->cfg.flow.hidden, "Subnet hidden width")
      ->capture_default_str();
  cmd->add_option("--clamp", opt->cfg.flow.scale_clamp, "Coupling log-scale clamp")
      ->capture_default_str();
  cmd->add_option("--threads", opt->threads, "Worker threads (default 1; IVNAC_THREADS)");

  cmd->callback([opt, cmd] {
    omp_set_num_threads(resolve_threads(opt->threads));
    Manifest man("train");
    man.config() = {{"seed", opt->cfg.seed},
                    {"epochs", opt->cfg.epochs},
                    {"cli", cmd->config_to_str(true, false)}};
    man.add_input(opt->data);
    man.add_input(opt->val);

    ivnac::DatasetMeta meta;
    ivnac::Volume train_pairs = load_pairs(opt->data, true, &meta);
    ivnac::Volume val_pairs = load_pairs(opt->val, true, nullptr);

    ivnac::TrainResult res =
        ivnac::train(train_pairs, val_pairs, meta.norm, opt->cfg, &std::cerr);

    const std::string best_path =
        opt->best_ckpt.empty() ? opt->ckpt + ".best" : opt->best_ckpt;
    const std::string log_path = opt->log.empty() ? opt->ckpt + ".log" : opt->log;
    ivnac::save_checkpoint(res.last, opt->ckpt);
    ivnac::save_checkpoint(res.best, best_path);
    std::ofstream os(log_path, std::ios::trunc);
    if (!os) throw ivnac::IoError("cannot write log: " + log_path);
    os << res.log_text;
    os.close();

    man.add_output(opt->ckpt);
    man.add_output(best_path);
    man.add_output(log_path);
    man.write(opt->ckpt);
    std::cout << "final val_psnr " << res.log.back().val_psnr << " dB, best epoch "
              << res.best.best_epoch << "\n";
  });
  return 0;
}

int cmd_infer(CLI::App& app) {
  auto* cmd = app.add_subcommand("infer", "Synthetic CT from NAC-PET images");
  struct O {
    std::string ckpt, input, data, out;
    int threads = 0;
  };
  auto opt = std::make_shared<O>();
  cmd->add_option("--ckpt", opt->ckpt, "Checkpoint")->required();
  cmd->add_option("--input", opt->input, "Raw NAC volume (unnormalized intensities)");
  cmd->add_option("--data", opt->data, "Normalized pair file (uses the NAC plane)");
  cmd->add_option("--out", opt->out, "Output synthetic-CT volume (HU)")->required();
  cmd->add_option("--threads", opt->threads, "Worker threads (default 1; IVNAC_THREADS)");

  cmd->callback([opt, cmd] {
    omp_set_num_threads(resolve_threads(opt->threads));
    if (opt->input.empty() == opt->data.empty())
      throw ivnac::ContractError("infer: use exactly one of --input or --data");
    Manifest man("infer");
    man.config() = {{"cli", cmd->config_to_str(true, false)}};
    man.add_input(opt->ckpt);

    const ivnac::Checkpoint ck = ivnac::load_checkpoint(opt->ckpt);
    ivnac::Volume out;
    if (!opt->data.empty()) {
      man.add_input(opt->data);
      ivnac::Volume pairs = load_pairs(opt->data, true, nullptr);
      ivnac::Volume nac = ivnac::Volume::create(pairs.count, 1, pairs.h, pairs.w);
      for (std::int64_t i = 0; i < std::int64_t(pairs.count); i++)
        nac.set_plane(i, 0, pairs.plane(i, 0));
      out = ivnac::infer(ck, nac, /*input_normalized=*/true);
    } else {
      man.add_input(opt->input);
      ivnac::Volume nac = ivnac::read_ivnc(opt->input);
      out = ivnac::infer(ck, nac, /*input_normalized=*/false);
    }
    ivnac::write_ivnc(opt->out, out);
    man.add_output(opt->out);
    man.write(opt->out);
    std::cout << "wrote " << opt->out << " (" << out.count << " images)\n";
  });
  return 0;
}

int cmd_correct(CLI::App& app) {
  auto* cmd = app.add_subcommand(
      "correct", "Attenuation-correct PET with predicted and reference CT");
  struct O {
    std::string ckpt, raw, out_dir;
    int threads = 0;
  };
  auto opt = std::make_shared<O>();
  cmd->add_option("--ckpt", opt->ckpt, "Checkpoint")->required();
  cmd->add_option("--raw", opt->raw, "Raw (activity, CT HU) pair file")->required();
  cmd->add_option("--out-dir", opt->out_dir, "Output directory")->required();
  cmd->add_option("--threads", opt->threads, "Worker threads (default 1; IVNAC_THREADS)");

  cmd->callback([opt, cmd] {
    omp_set_num_threads(resolve_threads(opt->threads));
    Manifest man("correct");
    man.config() = {{"cli", cmd->config_to_str(true, false)}};
    man.add_input(opt->ckpt);
    man.add_input(opt->raw);

    const ivnac::Checkpoint ck = ivnac::load_checkpoint(opt->ckpt);
    ivnac::DatasetMeta meta;
    ivnac::Volume raw = load_pairs(opt->raw, false, &meta);
    ivnac::AcResult res = ivnac::correct_pipeline(ck, raw, meta);

    std::error_code ec;
    std::filesystem::create_directories(opt->out_dir, ec);
    if (ec) throw ivnac::IoError("cannot create directory " + opt->out_dir);
    const std::string p_pred = opt->out_dir + "/ac_pred.ivnc";
    const std::string p_ref = opt->out_dir + "/ac_ref.ivnc";
    const std::string p_diff = opt->out_dir + "/ac_diff.ivnc";
    const std::string p_report = opt->out_dir + "/ac_report.txt";
    const std::string p_kv = opt->out_dir + "/ac_report.kv";
    ivnac::write_ivnc(p_pred, res.ac_pred);
    ivnac::write_ivnc(p_ref, res.ac_ref);
    ivnac::write_ivnc(p_diff, res.diff);
    write_eval_report(p_report, res.report);
    write_eval_kv(p_kv, res.report);
    for (const auto& p : {p_pred, p_ref, p_diff, p_report, p_kv}) man.add_output(p);
    man.write(p_pred);
    std::printf("brain-mask MAE %.4f%% ± %.4f%%, AC-PET PSNR %.2f dB over %zu images\n",
                res.report.mae_pct.mean, res.report.mae_pct.stddev,
                res.report.psnr_db.mean, res.report.per_image.size());
  });
  return 0;
}

int cmd_eval(CLI::App& app) {
  auto* cmd = app.add_subcommand("eval", "Synthetic-CT quality metrics on a pair file");
  struct O {
    std::string ckpt, data, out, kv;
    int threads = 0;
  };
  auto opt = std::make_shared<O>();
  cmd->add_option("--ckpt", opt->ckpt, "Checkpoint")->required();
  cmd->add_option("--data", opt->data, "Normalized pair file")->required();
  cmd->add_option("--out", opt->out, "Report path")->required();
  cmd->add_option("--kv", opt->kv, "Machine-readable report path (default <out>.kv)");
  cmd->add_option("--threads", opt->threads, "Worker threads (default 1; IVNAC_THREADS)");

  cmd->callback([opt, cmd] {
    omp_set_num_threads(resolve_threads(opt->threads));
    Manifest man("eval");
    man.config() = {{"cli", cmd->config_to_str(true, false)}};
    man.add_input(opt->ckpt);
    man.add_input(opt->data);

    const ivnac::Checkpoint ck = ivnac::load_checkpoint(opt->ckpt);
    ivnac::Volume pairs = load_pairs(opt->data, true, nullptr);
    const auto report = ivnac::evaluate_synthetic_ct(ck, pairs);
    write_eval_report(opt->out, report);
    const std::string kv_path = opt->kv.empty() ? opt->out + ".kv" : opt->kv;
    write_eval_kv(kv_path, report);
    man.add_output(opt->out);
    man.add_output(kv_path);
    man.write(opt->out);
    std::printf("psnr %.3f±%.3f ssim %.4f±%.4f rmse%% %.3f±%.3f mae%% %.3f±%.3f (n=%zu)\n",
                report.psnr_db.mean, report.psnr_db.stddev, report.ssim.mean,
                report.ssim.stddev, report.rmse_pct.mean, report.rmse_pct.stddev,
                report.mae_pct.mean, report.mae_pct.stddev, report.per_image.size());
  });
  return 0;
}

int cmd_invert_check(CLI::App& app) {
  auto* cmd = app.add_subcommand("invert-check",
                                 "Round-trip error of forward/inverse passes");
  struct O {
    std::string ckpt;
    std::int64_t trials = 100;
    double tol = 1e-4;
    std::uint64_t seed = 1;
    std::int64_t size = 64;
    ivnac::FlowConfig flow;
    int threads = 0;
  };
  auto opt = std::make_shared<O>();
  cmd->add_option("--ckpt", opt->ckpt, "Checkpoint (omit to draw random models)");
  cmd->add_option("--trials", opt->trials, "Round-trip trials")->capture_default_str();
  cmd->add_option("--tol", opt->tol, "Max-abs tolerance")->capture_default_str();
  cmd->add_option("--seed", opt->seed, "Seed")->capture_default_str();
  cmd->add_option("--size", opt->size, "Image size (random-model mode)")
      ->capture_default_str();
  cmd->add_option("--blocks", opt->flow.blocks, "Blocks (random-model mode)")
      ->capture_default_str();
  cmd->add_option("--channels", opt->flow.channels, "Channels (random-model mode)")
      ->capture_default_str();
  cmd->add_option("--hidden", opt->flow.hidden, "Hidden width (random-model mode)")
      ->capture_default_str();
  cmd->add_option("--threads", opt->threads, "Worker threads (default 1; IVNAC_THREADS)");

  cmd->callback([opt] {
    omp_set_num_threads(resolve_threads(opt->threads));
    double max_fi = 0, max_if = 0;
    std::int64_t size = opt->size;
    ivnac::FlowModel from_ckpt;
    if (!opt->ckpt.empty()) {
      const ivnac::Checkpoint ck = ivnac::load_checkpoint(opt->ckpt);
      from_ckpt = ck.model;
      size = ck.height;
    }
    for (std::int64_t t = 0; t < opt->trials; t++) {
      const ivnac::FlowModel model =
          !opt->ckpt.empty()
              ? from_ckpt
              : ivnac::FlowModel::random_init(opt->flow,
                                              ivnac::Rng::derive(opt->seed, 7000 + t));
      ivnac::Rng rng(ivnac::Rng::derive(opt->seed, t));
      ivnac::Tensor x({1, model.config().channels, size, size});
      float* p = x.mutable_data();
      for (std::int64_t i = 0; i < x.elems(); i++) p[i] = float(rng.uniform());
      const ivnac::Tensor y = model.forward(nullptr, x);
      const ivnac::Tensor xr = model.inverse(nullptr, y);
      const ivnac::Tensor yr = model.forward(nullptr, model.inverse(nullptr, y));
      for (std::int64_t i = 0; i < x.elems(); i++) {
        max_fi = std::max(max_fi, double(std::abs(xr.data()[i] - x.data()[i])));
        max_if = std::max(max_if, double(std::abs(yr.data()[i] - y.data()[i])));
      }
    }
    std::printf("max |f^-1(f(x)) - x| = %.3g\nmax |f(f^-1(y)) - y| = %.3g\n", max_fi,
                max_if);
    if (max_fi >= opt->tol || max_if >= opt->tol)
      throw ivnac::NumericError("round-trip error exceeds tolerance " +
                                std::to_string(opt->tol));
    std::cout << "round-trip within tolerance " << opt->tol << "\n";
  });
  return 0;
}

int cmd_gradcheck(CLI::App& app) {
  auto* cmd = app.add_subcommand(
      "gradcheck", "Backward pass vs central finite differences (64-bit mode)");
  struct O {
    std::int64_t size = 8;
    std::uint64_t seed = 1;
    int samples = 5;
    double tol = 1e-4;
    ivnac::FlowConfig flow;
    int threads = 0;
  };
  auto opt = std::make_shared<O>();
  opt->flow.blocks = 2;
  opt->flow.hidden = 8;
  cmd->add_option("--size", opt->size, "Toy image size")->capture_default_str();
  cmd->add_option("--seed", opt->seed, "Seed")->capture_default_str();
  cmd->add_option("--samples", opt->samples, "Probes per parameter group")
      ->capture_default_str();
  cmd->add_option("--tol", opt->tol, "Max relative error")->capture_default_str();
  cmd->add_option("--blocks", opt->flow.blocks, "Blocks")->capture_default_str();
  cmd->add_option("--hidden", opt->flow.hidden, "Hidden width")->capture_default_str();
  cmd->add_option("--threads", opt->threads, "Worker threads (default 1; IVNAC_THREADS)");

  cmd->callback([opt] {
    omp_set_num_threads(resolve_threads(opt->threads));
    const auto res =
        ivnac::gradcheck_model(opt->flow, opt->size, opt->seed, opt->samples);
    for (const auto& g : res.groups)
      std::printf("%-40s max rel err %.3g\n", g.name.c_str(), g.max_rel_err);
    std::printf("overall max rel err %.3g over %zu parameter groups\n", res.max_rel_err,
                res.groups.size());
    if (res.max_rel_err >= opt->tol)
      throw ivnac::NumericError("gradient check failed at tolerance " +
                                std::to_string(opt->tol));
  });
  return 0;
}

int cmd_profile_dump(CLI::App& app) {
  auto* cmd = app.add_subcommand("profile-dump",
                                 "Dump row/column intensity profiles as CSV");
  struct O {
    std::string input, out;
    std::int64_t index = 0;
    std::int64_t row = -1, col = -1;
  };
  auto opt = std::make_shared<O>();
  cmd->add_option("--input", opt->input, "Image container")->required();
  cmd->add_option("--out", opt->out, "CSV output")->required();
  cmd->add_option("--index", opt->index, "Image index in the container")
      ->capture_default_str();
  cmd->add_option("--row", opt->row, "Row to dump (default center)");
  cmd->add_option("--col", opt->col, "Column to dump (default center)");

  cmd->callback([opt, cmd] {
    Manifest man("profile-dump");
    man.config() = {{"cli", cmd->config_to_str(true, false)}};
    man.add_input(opt->input);
    const ivnac::Volume vol = ivnac::read_ivnc(opt->input);
    const ivnac::Image img = vol.plane(opt->index, 0);
    const std::int64_t row = opt->row < 0 ? img.h / 2 : opt->row;
    const std::int64_t col = opt->col < 0 ? img.w / 2 : opt->col;
    if (row >= img.h || col >= img.w)
      throw ivnac::ContractError("profile-dump: row/col outside the image");
    std::ofstream os(opt->out, std::ios::trunc);
    if (!os) throw ivnac::IoError("cannot write: " + opt->out);
    os << "# image=" << opt->index << " row=" << row << " col=" << col << "\n";
    os << "pos,row_value,col_value\n";
    const std::int64_t n = std::max(img.h, img.w);
    char buf[96];
    for (std::int64_t i = 0; i < n; i++) {
      std::string rv, cv;
      if (i < img.w) {
        std::snprintf(buf, sizeof buf, "%.8g", img.at(row, i));
        rv = buf;
      }
      if (i < img.h) {
        std::snprintf(buf, sizeof buf, "%.8g", img.at(i, col));
        cv = buf;
      }
      os << i << "," << rv << "," << cv << "\n";
    }
    man.add_output(opt->out);
    man.write(opt->out);
    std::cout << "wrote " << opt->out << "\n";
  });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Invertible-network synthetic CT generation and PET attenuation "
               "correction on synthetic head phantoms"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  cmd_phantom_gen(app);
  cmd_train(app);
  cmd_infer(app);
  cmd_correct(app);
  cmd_eval(app);
  cmd_invert_check(app);
  cmd_gradcheck(app);
  cmd_profile_dump(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const ivnac::ContractError& e) {
    std::cerr << "ERR:contract: " << e.what() << "\n";
    return 1;
  } catch (const ivnac::IoError& e) {
    std::cerr << "ERR:io: " << e.what() << "\n";
    return 2;
  } catch (const ivnac::NumericError& e) {
    std::cerr << "ERR:numeric: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
