#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "exposura/imaging.hpp"
#include "exposura/losses.hpp"
#include "exposura/network.hpp"
#include "exposura/tape.hpp"

namespace exposura {

struct TrainConfig {
  int steps = 2000;
  int batch_size = 1;
  int crop_size = 64;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  int checkpoint_every = 500;
  bool flip = true;
  LossWeights loss_weights;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  std::uint64_t perceptual_seed = 1234;
  /// Optional checkpoint holding "p.stage*" tensors for the perceptual net.
  std::string perceptual_weights;

  void validate() const;
  /// `key = value` lines; '#' starts a comment. Unknown keys are errors.
  static TrainConfig parse(std::string_view text);
  static TrainConfig load(const std::filesystem::path& path);
  std::string to_text() const;
};

struct TrainState {
  std::int64_t step = 0;
  ModelWeights generator;
  ModelWeights discriminator;
  SpectralStates spectral;
  ModelWeights adam_g_m, adam_g_v, adam_d_m, adam_d_v;

  static TrainState initialize(const TrainConfig& config);
  /// Everything needed to resume, in the checkpoint container: "g.*",
  /// "d.*", "sn.<weight>.u/.v", "opt.{g,d}.{m,v}.<param>", "train.step".
  ModelWeights to_checkpoint() const;
  static TrainState from_checkpoint(const ModelWeights& weights);
};

struct LossRecord {
  std::int64_t step = 0;
  double adv_d = 0;
  double adv_g = 0;
  double fm = 0;
  double pixel = 0;
  double perceptual = 0;
};

struct TrainingPair {
  ImageBuffer input;
  ImageBuffer target;
};

/// FNV-1a over names, shapes and raw values.
std::uint64_t weights_hash(const ModelWeights& weights);

/// One Adam step in place; `t` is the 1-based step count. Parameters without
/// an entry in `grads` are left alone.
void adam_update(ModelWeights& params, ModelWeights& m, ModelWeights& v, const ModelWeights& grads, double lr,
                 double beta1, double beta2, double epsilon, std::int64_t t);

/// Gradients of the watched copies, keyed by parameter name.
ModelWeights named_gradients(const Gradients<float>& grads, const ModelWeights& watched);

/// A taped generator forward. Owns its tape so the update can release every
/// reference to the weights before writing them.
struct GeneratorPass {
  std::unique_ptr<Tape<float>> tape;
  ModelWeights watched;
  Tensor<float> fake;
};
GeneratorPass generator_pass(const TrainState& state, const Tensor<float>& input, const TrainConfig& config);

/// LSGAN discriminator step on real targets and detached fakes. Touches only
/// the discriminator, its spectral vectors and its moments. Returns adv_d.
double discriminator_update(TrainState& state, const Tensor<float>& fake, const Tensor<float>& target,
                            const TrainConfig& config);

struct GeneratorLosses {
  double adversarial = 0;
  double feature_matching = 0;
  double pixel = 0;
  double perceptual = 0;
};

/// Generator step on a pass made from the current weights. Touches only the
/// generator and its moments.
GeneratorLosses generator_update(TrainState& state, GeneratorPass pass, const Tensor<float>& target,
                                 const TrainConfig& config, const FeatureExtractor& extractor);

/// Stacks the batch (already cropped) and runs one D then one G update.
/// Throws NumericError naming the first non-finite loss term.
LossRecord train_step(TrainState& state, std::span<const TrainingPair> batch, const TrainConfig& config,
                      const FeatureExtractor& extractor);

/// Batch for `step`: dataset positions follow a per-epoch permutation keyed
/// by (seed, epoch); crops and flips draw from a stream keyed by (seed, step).
std::vector<TrainingPair> sample_batch(std::span<const TrainingPair> dataset, const TrainConfig& config,
                                       std::int64_t step);

FeatureExtractor make_feature_extractor(const TrainConfig& config);

struct TrainResult {
  TrainState state;
  std::vector<LossRecord> losses;
  std::filesystem::path last_checkpoint;
};

/// Trains from `state` (fresh or resumed) until config.steps. Writes
/// `checkpoint_<step>.expw` every checkpoint_every steps and at the end, and
/// rewrites `losses.csv` alongside (earlier rows up to the resume point are
/// kept).
TrainResult run_training(const TrainConfig& config, std::span<const TrainingPair> dataset,
                         const std::filesystem::path& out_dir, std::optional<TrainState> resume = std::nullopt,
                         const std::function<void(const LossRecord&)>& on_step = {});

/// Loads every pair of an indexed dataset.
std::vector<TrainingPair> load_pairs(const DatasetIndex& index);

std::string loss_csv_header();
std::string loss_csv_row(const LossRecord& r);
std::vector<LossRecord> read_loss_csv(const std::filesystem::path& path);

}  // namespace exposura
