// Acceptance suite: exercises the full pipeline end to end and prints one
// pass/fail line per criterion. Returns nonzero if any criterion fails.

#include <omp.h>
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ivnac/dataset.hpp"
#include "ivnac/gradcheck.hpp"
#include "ivnac/metrics.hpp"
#include "ivnac/physics.hpp"
#include "ivnac/train.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace ivnac;
using ivnac::testing::ncc;
using ivnac::testing::random_tensor;

namespace {

struct Criterion {
  int id;
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<Criterion> g_results;

void record(int id, const std::string& name, bool pass, const std::string& detail) {
  g_results.push_back({id, name, pass, detail});
  std::printf("[%s] criterion %d (%s): %s\n", pass ? "PASS" : "FAIL", id, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string work_dir() {
  static const std::string dir = [] {
    const auto p = fs::temp_directory_path() / "ivnac_acceptance";
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
  }();
  return dir;
}

int run_cli(const std::string& args, const std::string& log_name) {
  const std::string log = work_dir() + "/" + log_name;
  const std::string cmd =
      std::string(IVNAC_BIN) + " " + args + " >" + log + " 2>" + log + ".err";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return {};
  return std::string(std::istreambuf_iterator<char>(is), {});
}

Image make_disc(const Geometry& g, double radius_cm, float value) {
  Image img(g.height, g.width);
  for (std::int64_t y = 0; y < g.height; y++)
    for (std::int64_t x = 0; x < g.width; x++) {
      const double dy = (y - (g.height - 1) / 2.0) * g.pixel_cm;
      const double dx = (x - (g.width - 1) / 2.0) * g.pixel_cm;
      if (dy * dy + dx * dx <= radius_cm * radius_cm) img.at(y, x) = value;
    }
  return img;
}

char buf[512];

// --------------------------------------------------------------------------

void criterion_1_invertibility() {
  const auto t0 = std::chrono::steady_clock::now();
  FlowConfig cfg;  // defaults: 8 blocks, C=2, hidden 32
  double worst_fi = 0, worst_if = 0;
  for (std::uint64_t draw = 0; draw < 100; draw++) {
    FlowModel model = FlowModel::random_init(cfg, Rng::derive(1, draw));
    Tensor x = random_tensor<float>({1, 2, 64, 64}, Rng::derive(2, draw));
    Tensor y = model.forward(nullptr, x);
    Tensor xr = model.inverse(nullptr, y);
    Tensor yr = model.forward(nullptr, xr);
    for (std::int64_t i = 0; i < x.elems(); i++) {
      worst_fi = std::max(worst_fi, double(std::abs(xr.data()[i] - x.data()[i])));
      worst_if = std::max(worst_if, double(std::abs(yr.data()[i] - y.data()[i])));
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_fi < 1e-4 && worst_if < 1e-4;
  std::snprintf(buf, sizeof buf,
                "100 draws: max|f^-1(f(x))-x|=%.3g, max|f(f^-1(y))-y|=%.3g (tol 1e-4), "
                "%.1f s",
                worst_fi, worst_if, secs);
  record(1, "invertibility", pass, buf);
}

void criterion_2_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  FlowConfig cfg;
  cfg.blocks = 2;
  cfg.hidden = 8;
  const GradCheckResult res = gradcheck_model(cfg, 8, 1, 5);
  bool pass = true;
  for (const auto& grp : res.groups) pass = pass && grp.max_rel_err < 1e-4;
  std::snprintf(buf, sizeof buf,
                "%zu parameter groups, max rel err %.3g (tol 1e-4), %.1f s",
                res.groups.size(), res.max_rel_err, seconds_since(t0));
  record(2, "gradient correctness", pass, buf);
}

void criterion_3_hu_to_mu() {
  using physics::mu_at;
  bool pass = mu_at(0.0) == 0.096;
  pass = pass && mu_at(-1000.0) == 0.0;
  const double oracle = 0.096 * (1.0 + (1000.0 / 1000.0) * (0.158 * (0.172 - 0.096)) /
                                           (0.172 * (0.326 - 0.158)));
  const double err1000 = std::abs(mu_at(1000.0) - oracle);
  pass = pass && err1000 < 1e-9;
  // continuity and monotonicity over a 4097-point sweep
  double prev = -1;
  bool monotone = true;
  for (int i = 0; i <= 4096; i++) {
    const double hu = -1024.0 + (3000.0 + 1024.0) * double(i) / 4096.0;
    const double m = mu_at(hu);
    if (m < prev) monotone = false;
    prev = m;
  }
  const double cont = std::max(std::abs(mu_at(-1e-12) - 0.096),
                               std::abs(mu_at(1e-12) - 0.096));
  pass = pass && monotone && cont < 1e-12;
  std::snprintf(buf, sizeof buf,
                "mu(0)=%.6g, mu(-1000)=%.6g, |mu(1000)-hand|=%.2g, monotone=%d over "
                "4097 points",
                mu_at(0.0), mu_at(-1000.0), err1000, int(monotone));
  record(3, "HU-to-mu exactness", pass, buf);
}

void criterion_4_metric_identities() {
  using namespace ivnac::metrics;
  Image ref = [] {
    Image img(32, 32);
    Rng rng(4);
    for (auto& v : img.v) v = float(rng.uniform(0.1, 1.0));
    return img;
  }();
  bool pass = psnr(ref, ref) == kPsnrCapDb;
  pass = pass && std::abs(ssim(ref, ref) - 1.0) < 1e-12;
  pass = pass && rmse_pct(ref, ref) == 0.0;
  BrainMask all;
  all.h = ref.h;
  all.w = ref.w;
  all.m.assign(size_t(ref.pixels()), 1);
  pass = pass && mae_pct(ref, ref, all).pct == 0.0;

  // hand-computed examples
  Image r2(8, 8);
  for (auto& v : r2.v) v = 0.4f;
  r2.v[0] = 1.0f;
  Image p2 = r2;
  for (auto& v : p2.v) v += 0.1f;
  pass = pass && std::abs(psnr(r2, p2) - 20.0) < 1e-5;
  Image p3 = r2;
  for (auto& v : p3.v) v += 0.05f;
  pass = pass && std::abs((psnr(r2, p3) - psnr(r2, p2)) - 20.0 * std::log10(2.0)) < 1e-4;

  Image rr(1, 2), pp(1, 2);
  rr.v = {10.f, 0.f};
  pp.v = {13.f, 4.f};
  pass = pass && std::abs(rmse_pct(rr, pp) - 100.0 * std::sqrt(12.5) / 10.0) < 1e-6;

  Image mr(1, 2), mp(1, 2);
  mr.v = {2.f, 4.f};
  mp.v = {1.f, 4.f};
  BrainMask bm;
  bm.h = 1;
  bm.w = 2;
  bm.m = {1, 1};
  pass = pass && std::abs(mae_pct(mr, mp, bm).pct - 25.0) < 1e-6;
  mr.v = {2.f, 0.f};
  mp.v = {1.f, 0.f};
  bm.m = {1, 0};
  pass = pass && std::abs(mae_pct(mr, mp, bm).pct - 50.0) < 1e-6;

  const Aggregate agg = aggregate({20.0, 24.0});
  pass = pass && std::abs(agg.mean - 22.0) < 1e-12 && std::abs(agg.stddev - 2.0) < 1e-12;

  record(4, "metric identities", pass,
         pass ? "caps, identities and hand cases all match to 1e-6"
              : "a hand-computed case diverged");
}

void criterion_5_physics_roundtrip() {
  Geometry g;
  const Image d = make_disc(g, 8.0, 1.f);
  const Image rec = physics::fbp(physics::radon(d, g), g);
  const double corr = ncc(d, rec);

  // noiseless attenuate-then-correct is the identity on sinograms
  const Image water = make_disc(g, 10.0, 0.096f);
  Sinogram emission = physics::radon(d, g);
  Sinogram factors = physics::acf(water, g);
  double worst_rel = 0;
  for (size_t i = 0; i < emission.v.size(); i++) {
    const double back = (double(emission.v[i]) / factors.v[i]) * factors.v[i];
    worst_rel = std::max(worst_rel, std::abs(back - emission.v[i]) /
                                        std::max(1.0, double(emission.v[i])));
  }

  // 20 cm water, central ray
  double central = 0;
  for (std::int64_t b = 0; b < g.n_bins; b++) {
    const double t = (double(b) - (double(g.n_bins) - 1) / 2) * g.bin_spacing_cm();
    if (std::abs(t) < 0.21) central = factors.at(0, b);
  }
  const double expect = std::exp(1.92);
  const double acf_rel = std::abs(central - expect) / expect;

  const bool pass = corr > 0.95 && worst_rel < 1e-6 && acf_rel < 0.01;
  std::snprintf(buf, sizeof buf,
                "fbp(radon(disc)) NCC=%.4f (>0.95), sino round-trip rel err %.2g "
                "(<1e-6), ACF central %.4f vs e^1.92=%.4f (rel %.4f < 0.01)",
                corr, worst_rel, central, expect, acf_rel);
  record(5, "physics round-trip", pass, buf);
}

struct TrainedArtifacts {
  std::string dir, ckpt_best, ckpt_last, log, test, test_raw;
  bool ok = false;
};

TrainedArtifacts criterion_6_training() {
  TrainedArtifacts art;
  art.dir = work_dir() + "/full";
  const auto t0 = std::chrono::steady_clock::now();

  int rc = run_cli("phantom-gen --train 200 --val 20 --test 40 --size 64 --seed 1 "
                   "--out-dir " + art.dir,
                   "gen_full.log");
  if (rc != 0) {
    record(6, "end-to-end training", false, "phantom-gen failed rc=" + std::to_string(rc));
    return art;
  }
  const double gen_secs = seconds_since(t0);

  art.ckpt_last = art.dir + "/model.ivck";
  art.ckpt_best = art.ckpt_last + ".best";
  art.log = art.ckpt_last + ".log";
  art.test = art.dir + "/test.ivnc";
  art.test_raw = art.dir + "/test_raw.ivnc";

  const auto t1 = std::chrono::steady_clock::now();
  rc = run_cli("train --data " + art.dir + "/train.ivnc --val " + art.dir +
                   "/val.ivnc --epochs 30 --seed 1 --threads " +
                   std::to_string(omp_get_max_threads()) + " --ckpt " + art.ckpt_last,
               "train_full.log");
  const double train_secs = seconds_since(t1);
  if (rc != 0) {
    record(6, "end-to-end training", false, "train failed rc=" + std::to_string(rc));
    return art;
  }

  const Checkpoint best = load_checkpoint(art.ckpt_best);
  const Volume test_pairs = read_ivnc(art.test);
  const metrics::MetricsReport rep = evaluate_synthetic_ct(best, test_pairs);
  const bool pass = rep.ssim.mean >= 0.85 && rep.psnr_db.mean >= 24.0;
  std::snprintf(buf, sizeof buf,
                "test split (n=40): SSIM %.4f±%.4f (>=0.85), PSNR %.2f±%.2f dB (>=24); "
                "gen %.0f s, train %.0f s (30 epochs, 200 pairs)",
                rep.ssim.mean, rep.ssim.stddev, rep.psnr_db.mean, rep.psnr_db.stddev,
                gen_secs, train_secs);
  record(6, "end-to-end training", pass, buf);
  art.ok = true;
  return art;
}

void criterion_7_ac(const TrainedArtifacts& art) {
  if (!art.ok) {
    record(7, "end-to-end attenuation correction", false,
           "skipped: training artifacts unavailable");
    return;
  }
  const Checkpoint best = load_checkpoint(art.ckpt_best);
  const Volume raw = read_ivnc(art.test_raw);
  const DatasetMeta meta = DatasetMeta::read(art.test_raw);
  const AcResult res = correct_pipeline(best, raw, meta);
  const bool pass = res.report.mae_pct.mean <= 2.0 && res.report.psnr_db.mean >= 30.0;
  std::snprintf(buf, sizeof buf,
                "predicted-CT vs reference-CT correction over %zu images: brain-mask "
                "MAE %.3f%%±%.3f%% (<=2%%), PSNR %.2f±%.2f dB (>=30)",
                res.report.per_image.size(), res.report.mae_pct.mean,
                res.report.mae_pct.stddev, res.report.psnr_db.mean,
                res.report.psnr_db.stddev);
  record(7, "end-to-end attenuation correction", pass, buf);
}

void criterion_8_schedule_loss(const TrainedArtifacts& art) {
  TrainConfig cfg;
  cfg.epochs = 100;
  bool pass = std::abs(lr_at(5, cfg) - 1e-4) < 1e-12;
  pass = pass && std::abs(lr_at(15, cfg) - 5e-5) < 1e-12;
  pass = pass && std::abs(lr_at(25, cfg) - 2.5e-5) < 1e-12;

  // affinity of the loss in lambda
  FlowConfig toy;
  toy.blocks = 2;
  toy.hidden = 8;
  FlowModel model = FlowModel::random_init(toy, 8);
  Tensor x = random_tensor<float>({2, 1, 8, 8}, 9, 0.0, 1.0);
  Tensor y = random_tensor<float>({2, 1, 8, 8}, 10, 0.0, 1.0);
  const double l0 = loss_total<float>(nullptr, model, x, y, 0.f).data()[0];
  const double l1 = loss_total<float>(nullptr, model, x, y, 1.f).data()[0];
  const double l2 = loss_total<float>(nullptr, model, x, y, 2.f).data()[0];
  const double affinity = std::abs((l2 - l1) - (l1 - l0));
  pass = pass && affinity < 1e-6;

  // convergence: epoch-30 mean loss under half of epoch-1
  double first = 0, last = 0;
  bool have_log = false;
  if (art.ok) {
    std::istringstream is(slurp(art.log));
    std::string line;
    std::vector<double> losses;
    while (std::getline(is, line)) {
      std::istringstream ls(line);
      double ep, lr, loss, vp;
      if (ls >> ep >> lr >> loss >> vp) losses.push_back(loss);
    }
    if (losses.size() >= 30) {
      first = losses.front();
      last = losses[29];
      have_log = true;
    }
  }
  pass = pass && have_log && last < 0.5 * first;
  std::snprintf(buf, sizeof buf,
                "lr(5,15,25)=(%.2g,%.2g,%.2g), lambda-affinity %.2g (<1e-6), "
                "epoch-30/epoch-1 loss %.4g/%.4g = %.2f%% (<50%%)",
                lr_at(5, cfg), lr_at(15, cfg), lr_at(25, cfg), affinity, last, first,
                have_log ? 100.0 * last / first : -1.0);
  record(8, "schedule and loss plumbing", pass, buf);
}

void criterion_9_reproducibility() {
  const std::string dir = work_dir() + "/repro";
  fs::create_directories(dir);
  bool pass = true;
  std::string detail;

  // dataset bytes from (spec, seed)
  pass = pass && run_cli("phantom-gen --count 8 --size 64 --seed 11 --out " + dir +
                             "/a.ivnc --raw-out " + dir + "/a_raw.ivnc",
                         "gen_a.log") == 0;
  pass = pass && run_cli("phantom-gen --count 8 --size 64 --seed 11 --out " + dir +
                             "/b.ivnc --raw-out " + dir + "/b_raw.ivnc",
                         "gen_b.log") == 0;
  const bool data_same = !slurp(dir + "/a.ivnc").empty() &&
                         slurp(dir + "/a.ivnc") == slurp(dir + "/b.ivnc") &&
                         slurp(dir + "/a_raw.ivnc") == slurp(dir + "/b_raw.ivnc");
  pass = pass && data_same;

  // byte-identical checkpoints and loss logs across two identical runs
  pass = pass && run_cli("phantom-gen --train 8 --val 2 --test 2 --size 64 --seed 12 "
                         "--out-dir " + dir + "/ds",
                         "gen_ds.log") == 0;
  const std::string targs = "train --data " + dir + "/ds/train.ivnc --val " + dir +
                            "/ds/val.ivnc --epochs 2 --seed 3 --threads 2 --ckpt ";
  pass = pass && run_cli(targs + dir + "/r1.ivck", "train_r1.log") == 0;
  pass = pass && run_cli(targs + dir + "/r2.ivck", "train_r2.log") == 0;
  const bool ckpt_same = !slurp(dir + "/r1.ivck").empty() &&
                         slurp(dir + "/r1.ivck") == slurp(dir + "/r2.ivck");
  const bool log_same = !slurp(dir + "/r1.ivck.log").empty() &&
                        slurp(dir + "/r1.ivck.log") == slurp(dir + "/r2.ivck.log");
  pass = pass && ckpt_same && log_same;

  std::snprintf(buf, sizeof buf,
                "dataset bytes identical=%d, checkpoint bytes identical=%d, loss log "
                "identical=%d",
                int(data_same), int(ckpt_same), int(log_same));
  record(9, "reproducibility", pass, buf);
}

}  // namespace

int main() {
  omp_set_num_threads(std::min(4, omp_get_num_procs()));
  std::printf("acceptance suite, %d worker threads\n", omp_get_max_threads());

  criterion_3_hu_to_mu();
  criterion_4_metric_identities();
  criterion_5_physics_roundtrip();
  criterion_1_invertibility();
  criterion_2_gradients();
  criterion_9_reproducibility();
  const TrainedArtifacts art = criterion_6_training();
  criterion_7_ac(art);
  criterion_8_schedule_loss(art);

  int failed = 0;
  std::printf("\n==== acceptance summary ====\n");
  std::vector<Criterion> sorted = g_results;
  std::sort(sorted.begin(), sorted.end(),
            [](const Criterion& a, const Criterion& b) { return a.id < b.id; });
  for (const auto& c : sorted) {
    std::printf("criterion %d [%s] %s\n", c.id, c.pass ? "PASS" : "FAIL", c.name.c_str());
    failed += c.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", int(sorted.size()) - failed, sorted.size());
  return failed == 0 ? 0 : 1;
}
