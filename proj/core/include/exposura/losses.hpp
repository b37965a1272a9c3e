#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "exposura/network.hpp"
#include "exposura/tensor.hpp"

namespace exposura {

struct LossWeights {
  double lambda_pixel = 0.5;
  double beta_perceptual = 1.0;
  double lambda_fm = 10.0;
  std::array<double, 5> perceptual_coeffs{1.0 / 32, 1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0};

  void validate() const;
};

/// Frozen five-stage conv pyramid (k3 s2 p1 + relu, 16/32/64/128/128
/// channels) standing in for a pretrained perceptual network. Tensors are
/// named "p.stage1.w" .. "p.stage5.b" and can be imported from a checkpoint.
class FeatureExtractor {
 public:
  static constexpr std::array<std::int64_t, 5> kChannels{16, 32, 64, 128, 128};

  FeatureExtractor() = default;
  static FeatureExtractor seeded(std::uint64_t seed);
  static FeatureExtractor from_weights(const ModelWeights& weights);

  bool initialized() const { return !weights_.empty(); }
  const ModelWeights& weights() const { return weights_; }

  /// Activations at the five tap points, for an (N, 3, H, W) image in [-1, 1].
  template <typename T>
  std::array<Tensor<T>, 5> features(const Tensor<T>& image) const;

 private:
  ModelWeights weights_;
  WeightMap<double> weights64_;
};

/// Discriminator features: [scale][layer].
template <typename T>
using FeaturePyramid = std::vector<std::vector<Tensor<T>>>;

/// Least-squares objective: mean over scales of
/// sq_mean(D(real) - 1) + sq_mean(D(fake)).
template <typename T>
Tensor<T> adversarial_loss_d(std::span<const Tensor<T>> real_maps, std::span<const Tensor<T>> fake_maps);

/// Mean over scales of sq_mean(D(fake) - 1).
template <typename T>
Tensor<T> adversarial_loss_g(std::span<const Tensor<T>> fake_maps);

/// Average over every (scale, layer) pair of abs_mean(real - fake).
template <typename T>
Tensor<T> feature_matching_loss(const FeaturePyramid<T>& real, const FeaturePyramid<T>& fake);

/// sum_i c_i * abs_mean(L_i(fake) - L_i(real)).
template <typename T>
Tensor<T> perceptual_loss(const Tensor<T>& fake, const Tensor<T>& real, const FeatureExtractor& extractor,
                          const std::array<double, 5>& coeffs);

/// abs_mean(fake - real).
template <typename T>
Tensor<T> pixel_loss(const Tensor<T>& fake, const Tensor<T>& real);

template <typename T>
struct GeneratorLossParts {
  Tensor<T> adversarial;
  Tensor<T> feature_matching;
  Tensor<T> pixel;
  Tensor<T> perceptual;
};

/// adversarial + lambda_fm * feature_matching + lambda_pixel * pixel
/// + beta_perceptual * perceptual.
template <typename T>
Tensor<T> total_generator_loss(const GeneratorLossParts<T>& parts, const LossWeights& weights);

}  // namespace exposura
