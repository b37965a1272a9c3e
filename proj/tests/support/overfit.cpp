#include "overfit.hpp"

#include <chrono>
#include <cmath>
#include <nlohmann/json.hpp>

#include "exposura/metrics.hpp"

namespace exposura::testing {

std::vector<TrainingPair> overfit_pairs() {
  std::vector<TrainingPair> pairs;
  for (int i = 0; i < 4; ++i) {
    const ImageBuffer scene = synthesize_scene(64, 64, 100 + static_cast<std::uint64_t>(i));
    for (double ev : {-1.0, 0.0, 1.0}) pairs.push_back({ev_shift(scene, ev), scene});
  }
  return pairs;
}

namespace {

struct Eval {
  double l1_shifted = 0, psnr_shifted = 0, l1_identity = 0;
};

Eval evaluate(const TrainState& state, const TrainConfig& config, const std::vector<TrainingPair>& pairs) {
  Eval e;
  int n_shift = 0, n_id = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto x = images_to_tensor<float>(std::span<const ImageBuffer>(&pairs[i].input, 1));
    const ImageBuffer out = tensor_to_image(generator_forward(x, state.generator, config.generator).image);
    double l1 = 0;
    for (std::size_t k = 0; k < out.data.size(); ++k) l1 += std::abs(out.data[k] - pairs[i].target.data[k]);
    l1 /= static_cast<double>(out.data.size());
    if (i % 3 == 1) {
      e.l1_identity += l1;
      ++n_id;
    } else {
      e.l1_shifted += l1;
      e.psnr_shifted += psnr(out, pairs[i].target);
      ++n_shift;
    }
  }
  e.l1_shifted /= n_shift;
  e.psnr_shifted /= n_shift;
  e.l1_identity /= n_id;
  return e;
}

}  // namespace

OverfitResult run_overfit(int steps, std::uint64_t seed) {
  TrainConfig config;
  config.steps = steps;
  config.seed = seed;
  config.crop_size = 64;
  const auto pairs = overfit_pairs();
  const FeatureExtractor extractor = make_feature_extractor(config);
  TrainState state = TrainState::initialize(config);

  OverfitResult r;
  r.steps = steps;
  const Eval start = evaluate(state, config, pairs);
  r.l1_start = start.l1_shifted;
  r.psnr_start = start.psnr_shifted;
  const auto t0 = std::chrono::steady_clock::now();
  while (state.step < steps) {
    const auto batch = sample_batch(pairs, config, state.step);
    r.losses.push_back(train_step(state, batch, config, extractor));
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const Eval end = evaluate(state, config, pairs);
  r.l1_final = end.l1_shifted;
  r.psnr_final = end.psnr_shifted;
  r.l1_identity = end.l1_identity;
  r.l1_shifted = end.l1_shifted;
  r.generator_hash = weights_hash(state.generator);
  return r;
}

std::string OverfitResult::to_json() const {
  nlohmann::json j{{"steps", steps},
                   {"seconds", seconds},
                   {"l1_start", l1_start},
                   {"l1_final", l1_final},
                   {"l1_ratio", l1_final / l1_start},
                   {"psnr_start", psnr_start},
                   {"psnr_final", psnr_final},
                   {"psnr_gain", psnr_final - psnr_start},
                   {"l1_identity", l1_identity},
                   {"l1_shifted", l1_shifted},
                   {"generator_hash", std::to_string(generator_hash)}};
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& l : losses)
    if (l.step % 100 == 0 || l.step == 1) curve.push_back({l.step, l.adv_d, l.adv_g, l.fm, l.pixel, l.perceptual});
  j["loss_curve_every_100"] = curve;
  return j.dump(2) + "\n";
}

}  // namespace exposura::testing
