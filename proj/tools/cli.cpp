#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <thread>

#include "exposura/checkpoint.hpp"
#include "exposura/error.hpp"
#include "exposura/fileio.hpp"
#include "exposura/gradcheck.hpp"
#include "exposura/imaging.hpp"
#include "exposura/metrics.hpp"
#include "exposura/network.hpp"
#include "exposura/report.hpp"
#include "exposura/trainer.hpp"

namespace exposura::cli {

namespace fs = std::filesystem;

namespace {

int resolve_threads(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("EXPOSURA_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
    throw Error(std::string("EXPOSURA_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. The exception of
// the lowest failing index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int k = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  std::vector<std::thread> pool;
  for (int t = 1; t < k; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("no images in " + dir.string());
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());
}

std::vector<double> parse_evs(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    cell.erase(std::remove_if(cell.begin(), cell.end(), ::isspace), cell.end());
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (cell.empty() || used != cell.size()) throw FormatError("--evs: not a number: '" + cell + "'");
    if (std::find(kEvTags.begin(), kEvTags.end(), v) == kEvTags.end()) {
      throw FormatError("--evs: unsupported EV " + cell + " (allowed: -2.5 -2 -1.5 -1 0 +1 +1.5 +2 +2.5)");
    }
    out.push_back(v);
  }
  if (out.empty()) throw FormatError("--evs: empty list");
  return out;
}

struct Common {
  int threads = 0;
};

int cmd_train(const std::string& config_path, const fs::path& data_root, const fs::path& out_dir,
              const std::string& resume, std::optional<std::uint64_t> seed, std::ostream& out) {
  TrainConfig config = config_path.empty() ? TrainConfig{} : TrainConfig::load(config_path);
  if (seed) config.seed = *seed;
  config.validate();
  const auto index = index_dataset(data_root);
  const auto pairs = load_pairs(index);
  std::optional<TrainState> state;
  if (!resume.empty()) state = TrainState::from_checkpoint(load_weights(resume));
  ensure_dir(out_dir);
  write_file_atomic(out_dir / "config.txt", config.to_text());
  const auto result = run_training(config, pairs, out_dir, std::move(state));
  if (result.losses.empty()) {
    out << "nothing to do: checkpoint is already at step " << result.state.step << "\n";
    return kOk;
  }
  const auto& r = result.losses.back();
  out << "step " << r.step << ": adv_d " << r.adv_d << "  adv_g " << r.adv_g << "  fm " << r.fm << "  pixel "
      << r.pixel << "  perceptual " << r.perceptual << "\n";
  out << "checkpoint " << result.last_checkpoint.string() << "\n";
  return kOk;
}

int cmd_infer(const fs::path& checkpoint, const fs::path& input_dir, const fs::path& out_dir, int threads,
              std::ostream& out) {
  const ModelWeights g = select_prefix(load_weights(checkpoint), "g.");
  if (g.empty()) throw FormatError(checkpoint.string() + ": no generator tensors (g.*)");
  const GeneratorConfig cfg = GeneratorConfig::from_weights(g);
  check_layout(g, generator_layout(cfg), "g.");
  const auto inputs = list_images(input_dir);
  ensure_dir(out_dir);
  parallel_for(inputs.size(), threads, [&](std::size_t i) {
    ImageBuffer img = load_image(inputs[i]);
    if (img.channels != 3) throw DataError(inputs[i].string() + ": expected an RGB image");
    const int w = img.width, h = img.height;
    const int pad_r = (kGeneratorStride - w % kGeneratorStride) % kGeneratorStride;
    const int pad_b = (kGeneratorStride - h % kGeneratorStride) % kGeneratorStride;
    const ImageBuffer padded = pad_reflect(img, pad_b, pad_r);
    const Tensor<float> x = images_to_tensor<float>(std::span<const ImageBuffer>(&padded, 1));
    const Tensor<float> y = generator_forward(x, g, cfg).image;
    save_image(crop(tensor_to_image(y), 0, 0, w, h), out_dir / inputs[i].filename());
  });
  out << "wrote " << inputs.size() << " image(s) to " << out_dir.string() << "\n";
  return kOk;
}

int cmd_eval(const fs::path& pred, const fs::path& gt, const std::string& pristine, const std::string& ma,
             const fs::path& out_dir, std::ostream& out) {
  EvalOptions opts;
  std::optional<PristineModel> model;
  if (!pristine.empty()) {
    model = load_pristine_model(pristine);
    opts.pristine = &*model;
  }
  if (!ma.empty()) {
    if (!model) throw DataError("--ma-scores needs --pristine-model (PI combines Ma and NIQE)");
    opts.ma_scores = read_ma_scores(ma);
  }
  const MetricReport report = evaluate_directories(pred, gt, opts);
  const std::string text = report.to_text();
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_file_atomic(out_dir / "metrics.csv", report.to_csv());
    write_file_atomic(out_dir / "metrics.json", report.to_json());
    write_file_atomic(out_dir / "metrics.txt", text);
  }
  out << text;
  return kOk;
}

int cmd_simulate_ev(const fs::path& input_dir, const std::string& evs_text, const fs::path& out_dir, int threads,
                    std::ostream& out) {
  const auto evs = parse_evs(evs_text);
  const auto inputs = list_images(input_dir);
  ensure_dir(out_dir);
  std::vector<std::vector<std::string>> written(inputs.size());
  parallel_for(inputs.size(), threads, [&](std::size_t i) {
    const fs::path& in = inputs[i];
    std::optional<ImageBuffer> img;
    for (double ev : evs) {
      const fs::path dst = out_dir / (in.stem().string() + "_" + format_ev_tag(ev) + in.extension().string());
      if (ev == 0.0) {
        write_file_atomic(dst, read_file(in));
      } else {
        if (!img) img = load_image(in);
        save_image(ev_shift(*img, ev), dst);
      }
      written[i].push_back(dst.filename().string());
    }
  });
  nlohmann::json meta{{"simulator", std::string(kEvSimulatorVersion)}, {"evs", evs}, {"files", nlohmann::json::array()}};
  for (std::size_t i = 0; i < inputs.size(); ++i)
    meta["files"].push_back({{"source", inputs[i].filename().string()}, {"outputs", written[i]}});
  write_file_atomic(out_dir / "simulate_ev.json", meta.dump(2) + "\n");
  out << "wrote " << inputs.size() * evs.size() << " image(s) to " << out_dir.string() << " (" << kEvSimulatorVersion
      << ")\n";
  return kOk;
}

int cmd_matting_eval(const fs::path& pred_root, const fs::path& gt_dir, const fs::path& manifest,
                     const fs::path& out_dir, std::ostream& out) {
  const auto entries = read_matting_manifest(manifest, pred_root);
  const MattingGrid grid = evaluate_matting(entries, gt_dir);
  const std::string text = grid.to_text();
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_file_atomic(out_dir / "matting.csv", grid.to_csv());
    write_file_atomic(out_dir / "matting.json", grid.to_json());
    write_file_atomic(out_dir / "matting.txt", text);
  }
  out << text;
  return kOk;
}

int cmd_fit_pristine(const fs::path& dir, const fs::path& out_path, int patch_size, double threshold, int threads,
                     std::ostream& out) {
  const auto files = list_images(dir);
  std::vector<ImageBuffer> images(files.size());
  parallel_for(files.size(), threads, [&](std::size_t i) { images[i] = load_image(files[i]); });
  const PristineModel model = fit_pristine(images, patch_size, threshold);
  if (out_path.has_parent_path()) ensure_dir(out_path.parent_path());
  save_pristine_model(model, out_path);
  out << "fitted pristine model on " << files.size() << " image(s) -> " << out_path.string() << "\n";
  return kOk;
}

int cmd_gradcheck(const std::string& fault, const fs::path& out_dir, std::ostream& out) {
  const GradcheckReport report = run_gradcheck(GradcheckOptions{}, fault);
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_file_atomic(out_dir / "gradcheck.csv", report.to_csv());
  }
  out << report.to_text();
  return report.all_pass() ? kOk : kNumericError;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"exposura: exposure correction with an adversarially trained encoder-decoder"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  int threads = 0;
  std::string config, data_root, out_path, checkpoint, evs, pristine, ma, fault;
  std::string pred_dir, gt_dir, manifest;
  std::uint64_t seed = 0;
  int patch_size = 96;
  double threshold = 0.75;

  auto add_threads = [&](CLI::App* c) {
    c->add_option("--threads", threads, "Worker threads (fallback: EXPOSURA_THREADS, then 1)")->check(CLI::PositiveNumber);
  };

  auto* train = app.add_subcommand("train", "Train generator and discriminator");
  train->add_option("--config", config, "key = value training config")->check(CLI::ExistingFile);
  train->add_option("--data-root", data_root, "Dataset root with input/ and target/")->required();
  train->add_option("--out", out_path, "Output directory for checkpoints and losses.csv")->required();
  train->add_option("--checkpoint", checkpoint, "Resume from this training checkpoint")->check(CLI::ExistingFile);
  auto* seed_opt = train->add_option("--seed", seed, "Override the config seed");
  add_threads(train);

  auto* infer = app.add_subcommand("infer", "Correct every image of a directory");
  infer->add_option("--checkpoint", checkpoint, "Generator or training checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--data-root", data_root, "Directory of input images")->required();
  infer->add_option("--out", out_path, "Output directory")->required();
  add_threads(infer);

  auto* eval = app.add_subcommand("eval", "PSNR/SSIM (and NIQE/PI) of predictions against ground truth");
  eval->add_option("pred", pred_dir, "Directory of predictions")->required();
  eval->add_option("gt", gt_dir, "Directory of ground-truth images")->required();
  eval->add_option("--pristine-model", pristine, "NIQE pristine model")->check(CLI::ExistingFile);
  eval->add_option("--ma-scores", ma, "CSV image,ma; enables the PI column")->check(CLI::ExistingFile);
  eval->add_option("--out", out_path, "Directory for metrics.{csv,json,txt}");
  add_threads(eval);

  auto* sim = app.add_subcommand("simulate-ev", "Write EV-shifted copies named <stem>_<tag>.<ext>");
  sim->add_option("--data-root", data_root, "Directory of source images")->required();
  sim->add_option("--evs", evs, "Comma-separated EVs, e.g. -1,+1")->required();
  sim->add_option("--out", out_path, "Output directory")->required();
  add_threads(sim);

  auto* matting = app.add_subcommand("matting-eval", "MSE/MAE (x1e3) grid per condition and EV");
  matting->add_option("pred_root", pred_dir, "Root that relative manifest paths resolve against")->required();
  matting->add_option("gt", gt_dir, "Ground-truth alpha root (<gt>/<dataset>/<image>)")->required();
  matting->add_option("manifest", manifest, "CSV dataset,condition,ev,image,pred")->required()->check(CLI::ExistingFile);
  matting->add_option("--out", out_path, "Directory for matting.{csv,json,txt}");

  auto* fit = app.add_subcommand("fit-pristine", "Fit a NIQE pristine model to a folder of images");
  fit->add_option("--data-root", data_root, "Directory of pristine images")->required();
  fit->add_option("--out", out_path, "Model file to write")->required();
  fit->add_option("--patch-size", patch_size, "Patch size")->check(CLI::Range(8, 1024));
  fit->add_option("--sharpness", threshold, "Keep patches above this fraction of the sharpest")->check(CLI::Range(0.0, 1.0));
  add_threads(fit);

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  grad->add_option("--out", out_path, "Directory for gradcheck.csv");
  grad->add_option("--inject-fault", fault, "Corrupt this op's backward (negative control)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? kOk : kUsage;
  }

  try {
    const int nthreads = resolve_threads(threads);
    if (*train) {
      std::optional<std::uint64_t> s;
      if (seed_opt->count()) s = seed;
      return cmd_train(config, data_root, out_path, checkpoint, s, out);
    }
    if (*infer) return cmd_infer(checkpoint, data_root, out_path, nthreads, out);
    if (*eval) return cmd_eval(pred_dir, gt_dir, pristine, ma, out_path, out);
    if (*sim) return cmd_simulate_ev(data_root, evs, out_path, nthreads, out);
    if (*matting) return cmd_matting_eval(pred_dir, gt_dir, manifest, out_path, out);
    if (*fit) return cmd_fit_pristine(data_root, out_path, patch_size, threshold, nthreads, out);
    if (*grad) return cmd_gradcheck(fault, out_path, out);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

}  // namespace exposura::cli
