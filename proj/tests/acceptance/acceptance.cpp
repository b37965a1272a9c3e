// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.
//   acceptance [--overfit-steps N] [--overfit-json path]
#include <Eigen/SVD>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "exposura/fileio.hpp"
#include "exposura/gradcheck.hpp"
#include "exposura/imaging.hpp"
#include "exposura/metrics.hpp"
#include "exposura/network.hpp"
#include "exposura/nn.hpp"
#include "fixtures.hpp"
#include "matting_fixture.hpp"
#include "overfit.hpp"
#include "pristine.hpp"

namespace fs = std::filesystem;
using namespace exposura;

namespace {

int failures = 0;

void report(bool pass, const std::string& name, const std::string& detail) {
  std::printf("%s %-22s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool gradient_suite() {
  const auto r = run_gradcheck();
  double worst = 0;
  std::string worst_op;
  for (const auto& row : r.rows)
    if (row.max_rel_error >= worst) {
      worst = row.max_rel_error;
      worst_op = row.op;
    }
  const bool pass = r.all_pass() && r.seconds < 120;
  report(pass, "gradient-suite",
         fmt("%zu checks, worst %.2e (%s) < 1e-4, %.1f s < 120 s", r.rows.size(), worst, worst_op.c_str(), r.seconds));
  return pass;
}

bool architecture() {
  GeneratorConfig g;
  const auto gw = init_generator(g, 1);
  const auto x = testing::random_tensor<float>(Shape{1, 3, 512, 512}, 2);
  const auto out = generator_forward(x, gw, g);
  const bool g_ok = out.bottleneck.shape() == Shape{1, 512, 16, 16} && out.image.shape() == x.shape();

  DiscriminatorConfig d;
  const auto dw = init_discriminator(d, 3);
  auto sn = init_spectral_states(dw, 3);
  DiscriminatorOptions opts{&sn};
  const auto scales = discriminator_forward(x, dw, d, opts);
  std::string maps;
  bool d_ok = scales.size() == 3;
  const std::int64_t want[3] = {64, 32, 16};
  for (std::size_t s = 0; s < scales.size(); ++s) {
    const auto& m = scales[s].patch_map.shape();
    maps += (s ? "," : "") + std::to_string(m[2]) + "x" + std::to_string(m[3]);
    d_ok = d_ok && s < 3 && m == Shape{1, 1, want[s], want[s]};
  }
  const auto& b = out.bottleneck.shape();
  report(g_ok && d_ok, "architecture",
         fmt("512x512 input: bottleneck %lldx%lldx%lld, patch maps {%s}", (long long)b[1], (long long)b[2],
             (long long)b[3], maps.c_str()));
  return g_ok && d_ok;
}

bool spectral_norm() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(2, 32);
  std::uniform_real_distribution<double> val(-1, 1);
  double worst_sigma = 0, worst_top = 0;
  for (int i = 0; i < 100; ++i) {
    const int rows = dim(rng), cols = dim(rng);
    Tensor<double> w(Shape{rows, cols});
    for (double& v : w.mutable_data()) v = val(rng);
    Eigen::MatrixXd m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        w.raw(), rows, cols);
    const double truth = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
    SpectralNormState st = make_spectral_state(w.shape(), static_cast<std::uint64_t>(i));
    st.n_power_iterations = 2000;
    double sigma = 0;
    const auto wn = spectral_normalize(w, st, true, &sigma);
    Eigen::MatrixXd mn = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        wn.raw(), rows, cols);
    const double top = Eigen::JacobiSVD<Eigen::MatrixXd>(mn).singularValues()(0);
    worst_sigma = std::max(worst_sigma, std::abs(sigma - truth));
    worst_top = std::max(worst_top, std::abs(top - 1.0));
  }
  const bool pass = worst_sigma < 1e-3 && worst_top <= 1e-3;
  report(pass, "spectral-norm",
         fmt("100 matrices <= 32x32: max |sigma - svd| %.2e < 1e-3, max |sigma_max(W/sigma) - 1| %.2e <= 1e-3",
             worst_sigma, worst_top));
  return pass;
}

std::pair<bool, bool> overfit(int steps, const std::string& json_path) {
  const auto r = testing::run_overfit(steps);
  if (!json_path.empty()) write_file_atomic(json_path, r.to_json());
  const double ratio = r.l1_final / r.l1_start;
  const double gain = r.psnr_final - r.psnr_start;
  const bool ok = ratio < 0.25 && gain >= 10.0 && r.seconds < 15 * 60;
  report(ok, "overfit",
         fmt("%d steps: L1 %.4f -> %.4f (%.1f%% < 25%%), PSNR %.2f -> %.2f dB (+%.2f >= 10), %.0f s < 900 s", steps,
             r.l1_start, r.l1_final, 100 * ratio, r.psnr_start, r.psnr_final, gain, r.seconds));
  const bool id = r.l1_identity <= r.l1_shifted;
  report(id, "identity-preservation", fmt("EV-0 inputs L1 %.4f <= shifted inputs L1 %.4f", r.l1_identity, r.l1_shifted));
  return {ok, id};
}

bool metric_oracles() {
  const ImageBuffer a(32, 32, 3, 100.0f / 255.0f), b(32, 32, 3, 101.0f / 255.0f);
  const double p = psnr(a, b);
  const bool psnr_ok = std::abs(p - 48.1308) < 1e-4;

  const auto img = testing::random_image(48, 48, 3, 5);
  const double s = ssim(img, img);
  const bool ssim_ok = std::abs(s - 1.0) < 1e-12;

  std::mt19937_64 rng(9);
  std::vector<double> gauss(100000), lap(100000);
  std::normal_distribution<double> n(0, 1);
  std::exponential_distribution<double> e(1);
  std::bernoulli_distribution coin(0.5);
  for (double& v : gauss) v = n(rng);
  for (double& v : lap) v = coin(rng) ? e(rng) : -e(rng);
  const double ag = fit_aggd(gauss).alpha, al = fit_aggd(lap).alpha;
  const bool aggd_ok = std::abs(ag - 2) <= 0.2 && std::abs(al - 1) <= 0.1;

  const PristineModel model = testing::bundled_pristine_model();
  int monotone = 0;
  for (int k = 0; k < 5; ++k) {
    const auto photo = testing::test_photo(k);
    std::mt19937_64 nr(100 + k);
    double prev = niqe(photo, model);
    bool ok = true;
    for (double sigma : {0.02, 0.05, 0.1}) {
      std::normal_distribution<float> nd(0.0f, static_cast<float>(sigma));
      std::vector<float> d = photo.data;
      for (float& v : d) v += nd(nr);
      const double score = niqe(ImageBuffer(photo.width, photo.height, 3, std::move(d)), model);
      ok = ok && score >= prev;
      prev = score;
    }
    monotone += ok;
  }
  const bool pass = psnr_ok && ssim_ok && aggd_ok && monotone == 5;
  report(pass, "metric-oracles",
         fmt("PSNR %.4f dB (48.1308), SSIM(a,a) %.12f, AGGD alpha %.3f (2) / %.3f (1), NIQE monotone on %d/5 photos", p,
             s, ag, al, monotone));
  return pass;
}

bool ev_simulator() {
  const auto img = testing::random_image(64, 64, 3, 11);
  const bool identity = ev_shift(img, 0.0).data == img.data;
  double worst = 0;
  bool monotone = true;
  auto brighter = img;
  for (float& v : brighter.data) v = std::min(1.0f, v + 0.03f);
  for (double ev : kEvTags) {
    if (ev == 0) continue;
    const auto up = ev_shift(img, ev);
    const auto back = ev_shift(up, -ev);
    for (std::size_t i = 0; i < img.data.size(); ++i)
      if (up.data[i] > 0.0f && up.data[i] < 1.0f) worst = std::max(worst, double(std::abs(back.data[i] - img.data[i])));
    const auto sb = ev_shift(brighter, ev);
    for (std::size_t i = 0; i < img.data.size(); ++i) monotone = monotone && up.data[i] <= sb.data[i];
  }
  const bool pass = identity && worst <= 1e-4 && monotone;
  report(pass, "ev-simulator",
         fmt("ev=0 bitwise %s, unclipped round trip max err %.2e <= 1e-4, ordering %s", identity ? "yes" : "no", worst,
             monotone ? "preserved" : "violated"));
  return pass;
}

bool run_cli(std::vector<std::string> args, std::string* out_text = nullptr) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (out_text) *out_text = out.str();
  if (code != 0) std::fprintf(stderr, "%s", err.str().c_str());
  return code == 0;
}

std::string slurp(const fs::path& p) {
  const auto b = read_file(p);
  return std::string(b.begin(), b.end());
}

bool matting_harness() {
  testing::TempDir dir("matting");
  const auto manifest = testing::write_matting_fixture(dir.path());
  const bool ran = run_cli({"matting-eval", (dir / "pred").string(), (dir / "gt").string(), manifest.string(), "--out",
                            (dir / "rep").string()});
  if (!ran) {
    report(false, "matting-harness", "matting-eval failed");
    return false;
  }
  // Parse the CSV grid: dataset,condition,metric,<ev columns>,avg.
  const auto expect = testing::matting_expectation();
  std::istringstream in(slurp(dir / "rep/matting.csv"));
  std::string line;
  std::getline(in, line);
  std::vector<std::string> head;
  {
    std::istringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) head.push_back(c);
  }
  int checked = 0, wrong = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    if (cells.size() != head.size()) {
      ++wrong;
      continue;
    }
    const char cond = cells[1][0];
    const bool mse = cells[2].rfind("mse", 0) == 0;
    for (std::size_t k = 3; k < head.size(); ++k) {
      if (cells[k].empty()) continue;
      const double got = std::stod(cells[k]);
      double want;
      if (head[k] == "avg") {
        const auto& a = expect.average.at(cond);
        want = mse ? a.first : a.second;
      } else {
        const auto it = expect.cells.find({cond, std::stod(head[k])});
        if (it == expect.cells.end()) {
          ++wrong;
          continue;
        }
        want = mse ? it->second.first : it->second.second;
      }
      ++checked;
      if (std::abs(got - want) > 1e-4) ++wrong;
    }
  }
  const bool pass = checked == 12 && wrong == 0;
  report(pass, "matting-harness", fmt("2-image fixture: %d/12 grid cells (E/C x EV -1,+1 x MSE/MAE, Avg) match", checked - wrong));
  return pass;
}

bool determinism() {
  testing::TempDir dir("determinism");
  for (int i = 0; i < 3; ++i) {
    const auto t = synthesize_scene(64, 64, 300 + static_cast<std::uint64_t>(i));
    fs::create_directories(dir / "data/target");
    fs::create_directories(dir / "data/input");
    const std::string stem = "scene" + std::to_string(i);
    save_image(t, dir / ("data/target/" + stem + ".png"));
    save_image(ev_shift(t, i == 0 ? -1.0 : 1.5), dir / ("data/input/" + stem + "_" + format_ev_tag(i == 0 ? -1.0 : 1.5) + ".png"));
  }
  write_file_atomic(dir / "cfg.txt", std::string_view("steps = 6\ncheckpoint_every = 3\nencoder_channels = 16,32,32,64,64\n"
                                                      "residual_blocks = 2\ndisc_base_channels = 8\nseed = 17\n"));
  bool same = true;
  for (const char* run : {"a", "b"}) {
    same = same && run_cli({"train", "--config", (dir / "cfg.txt").string(), "--data-root", (dir / "data").string(),
                            "--out", (dir / run).string(), "--seed", "17"});
    same = same && run_cli({"infer", "--checkpoint", (dir / run / "checkpoint_000006.expw").string(), "--data-root",
                            (dir / "data/input").string(), "--out", (dir / run / "pred").string()});
    fs::create_directories(dir / run / "gt");
    for (const auto& e : fs::directory_iterator(dir / "data/input")) {
      const auto tag = parse_ev_tag(e.path().stem().string());
      fs::copy_file(dir / "data/target" / (tag->stem + ".png"), dir / run / "gt" / e.path().filename());
    }
    same = same && run_cli({"eval", (dir / run / "pred").string(), (dir / run / "gt").string(), "--out",
                            (dir / run / "report").string()});
  }
  int files = 0, equal = 0;
  for (const char* f : {"checkpoint_000003.expw", "checkpoint_000006.expw", "losses.csv", "report/metrics.csv",
                        "report/metrics.json"}) {
    ++files;
    if (same && read_file(dir / "a" / f) == read_file(dir / "b" / f)) ++equal;
  }
  const bool pass = same && equal == files;
  report(pass, "determinism", fmt("two consecutive seeded runs: %d/%d checkpoint and report files bitwise equal", equal, files));
  return pass;
}

}  // namespace

int main(int argc, char** argv) {
  int overfit_steps = 2000;
  std::string overfit_json;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--overfit-steps") && i + 1 < argc) overfit_steps = std::atoi(argv[++i]);
    else if (!std::strcmp(argv[i], "--overfit-json") && i + 1 < argc) overfit_json = argv[++i];
    else {
      std::fprintf(stderr, "usage: acceptance [--overfit-steps N] [--overfit-json path]\n");
      return 2;
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  bool all = true;
  auto guard = [&](const char* name, auto&& fn) {
    try {
      all = fn() && all;
    } catch (const std::exception& e) {
      report(false, name, std::string("threw: ") + e.what());
      all = false;
    }
  };
  guard("gradient-suite", gradient_suite);
  guard("architecture", architecture);
  guard("spectral-norm", spectral_norm);
  guard("metric-oracles", metric_oracles);
  guard("ev-simulator", ev_simulator);
  guard("matting-harness", matting_harness);
  guard("determinism", determinism);
  guard("overfit", [&] {
    auto [a, b] = overfit(overfit_steps, overfit_json);
    return a && b;
  });
  report(all, "full-scale-substitute",
         "full-scale numbers need a large training set and a pretrained VGG; passes iff every property suite above passes");
  std::printf("%d failure(s), %.0f s\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
