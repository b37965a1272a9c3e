#include "exposura/losses.hpp"

#include <cmath>
#include <random>

#include "exposura/error.hpp"
#include "exposura/ops.hpp"

namespace exposura {

void LossWeights::validate() const {
  if (lambda_pixel < 0 || beta_perceptual < 0 || lambda_fm < 0) throw Error("loss weights must be >= 0");
  for (double c : perceptual_coeffs) {
    if (c < 0) throw Error("perceptual coefficients must be >= 0");
  }
}

namespace {

std::string stage(int i) { return "p.stage" + std::to_string(i); }

}  // namespace

FeatureExtractor FeatureExtractor::seeded(std::uint64_t seed) {
  ModelWeights w;
  std::mt19937_64 rng(seed);
  std::int64_t prev = 3;
  for (int i = 1; i <= 5; ++i) {
    const auto c = kChannels[static_cast<std::size_t>(i - 1)];
    const float bound = std::sqrt(6.0f / static_cast<float>(prev * 9));
    std::uniform_real_distribution<float> dist(-bound, bound);
    std::vector<float> v(static_cast<std::size_t>(c * prev * 9));
    for (auto& e : v) e = dist(rng);
    w.emplace(stage(i) + ".w", Tensor<float>(Shape{c, prev, 3, 3}, std::move(v)));
    w.emplace(stage(i) + ".b", Tensor<float>(Shape{c}, 0.0f));
    prev = c;
  }
  return from_weights(w);
}

FeatureExtractor FeatureExtractor::from_weights(const ModelWeights& weights) {
  FeatureExtractor fx;
  std::int64_t prev = 3;
  for (int i = 1; i <= 5; ++i) {
    auto w = weights.find(stage(i) + ".w");
    auto b = weights.find(stage(i) + ".b");
    if (w == weights.end() || b == weights.end()) {
      throw ShapeError("feature extractor: missing tensors for " + stage(i));
    }
    const Shape& s = w->second.shape();
    if (s.size() != 4 || s[1] != prev || s[2] != s[3] || b->second.shape() != Shape{s[0]}) {
      throw ShapeError("feature extractor: " + stage(i) + " has incompatible shapes " + shape_str(s) + " / " +
                       shape_str(b->second.shape()));
    }
    fx.weights_.emplace(w->first, w->second);
    fx.weights_.emplace(b->first, b->second);
    prev = s[0];
  }
  fx.weights64_ = weights_cast<double>(fx.weights_);
  return fx;
}

template <typename T>
std::array<Tensor<T>, 5> FeatureExtractor::features(const Tensor<T>& image) const {
  if (!initialized()) throw Error("perceptual loss: feature extractor is not initialized");
  const WeightMap<T>* w;
  if constexpr (std::is_same_v<T, float>) {
    w = &weights_;
  } else {
    w = &weights64_;
  }
  std::array<Tensor<T>, 5> taps;
  Tensor<T> h = image;
  for (int i = 1; i <= 5; ++i) {
    const auto& wt = w->at(stage(i) + ".w");
    h = relu(conv2d(h, wt, w->at(stage(i) + ".b"), 2, static_cast<int>(wt.dim(2) / 2)));
    taps[static_cast<std::size_t>(i - 1)] = h;
  }
  return taps;
}

template <typename T>
Tensor<T> adversarial_loss_d(std::span<const Tensor<T>> real_maps, std::span<const Tensor<T>> fake_maps) {
  if (real_maps.empty() || real_maps.size() != fake_maps.size()) {
    throw ShapeError("adversarial loss: " + std::to_string(real_maps.size()) + " real vs " +
                     std::to_string(fake_maps.size()) + " fake scales");
  }
  Tensor<T> total;
  for (std::size_t s = 0; s < real_maps.size(); ++s) {
    Tensor<T> term = add(sq_mean(add_scalar(real_maps[s], T(-1))), sq_mean(fake_maps[s]));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, T(1) / static_cast<T>(real_maps.size()));
}

template <typename T>
Tensor<T> adversarial_loss_g(std::span<const Tensor<T>> fake_maps) {
  if (fake_maps.empty()) throw ShapeError("adversarial loss: no scales");
  Tensor<T> total;
  for (const auto& m : fake_maps) {
    Tensor<T> term = sq_mean(add_scalar(m, T(-1)));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, T(1) / static_cast<T>(fake_maps.size()));
}

template <typename T>
Tensor<T> feature_matching_loss(const FeaturePyramid<T>& real, const FeaturePyramid<T>& fake) {
  if (real.empty() || real.size() != fake.size()) {
    throw ShapeError("feature matching: " + std::to_string(real.size()) + " real vs " + std::to_string(fake.size()) +
                     " fake scales");
  }
  Tensor<T> total;
  std::size_t count = 0;
  for (std::size_t s = 0; s < real.size(); ++s) {
    if (real[s].empty() || real[s].size() != fake[s].size()) {
      throw ShapeError("feature matching: scale " + std::to_string(s) + " has " + std::to_string(real[s].size()) +
                       " real vs " + std::to_string(fake[s].size()) + " fake layers");
    }
    for (std::size_t l = 0; l < real[s].size(); ++l) {
      Tensor<T> term = abs_mean(sub(real[s][l], fake[s][l]));
      total = total.defined() ? add(total, term) : term;
      ++count;
    }
  }
  return scale(total, T(1) / static_cast<T>(count));
}

template <typename T>
Tensor<T> perceptual_loss(const Tensor<T>& fake, const Tensor<T>& real, const FeatureExtractor& extractor,
                          const std::array<double, 5>& coeffs) {
  if (fake.shape() != real.shape()) {
    throw ShapeError("perceptual loss: " + shape_str(fake.shape()) + " vs " + shape_str(real.shape()));
  }
  const auto ff = extractor.features(fake);
  const auto fr = extractor.features(real);
  Tensor<T> total;
  for (std::size_t i = 0; i < 5; ++i) {
    Tensor<T> term = scale(abs_mean(sub(ff[i], fr[i])), static_cast<T>(coeffs[i]));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

template <typename T>
Tensor<T> pixel_loss(const Tensor<T>& fake, const Tensor<T>& real) {
  if (fake.shape() != real.shape()) {
    throw ShapeError("pixel loss: " + shape_str(fake.shape()) + " vs " + shape_str(real.shape()));
  }
  return abs_mean(sub(fake, real));
}

template <typename T>
Tensor<T> total_generator_loss(const GeneratorLossParts<T>& parts, const LossWeights& weights) {
  weights.validate();
  Tensor<T> total = parts.adversarial;
  total = add(total, scale(parts.feature_matching, static_cast<T>(weights.lambda_fm)));
  total = add(total, scale(parts.pixel, static_cast<T>(weights.lambda_pixel)));
  total = add(total, scale(parts.perceptual, static_cast<T>(weights.beta_perceptual)));
  return total;
}

#define EXPOSURA_INSTANTIATE_LOSSES(T)                                                                         \
  template std::array<Tensor<T>, 5> FeatureExtractor::features(const Tensor<T>&) const;                       \
  template Tensor<T> adversarial_loss_d(std::span<const Tensor<T>>, std::span<const Tensor<T>>);               \
  template Tensor<T> adversarial_loss_g(std::span<const Tensor<T>>);                                           \
  template Tensor<T> feature_matching_loss(const FeaturePyramid<T>&, const FeaturePyramid<T>&);                \
  template Tensor<T> perceptual_loss(const Tensor<T>&, const Tensor<T>&, const FeatureExtractor&,              \
                                     const std::array<double, 5>&);                                            \
  template Tensor<T> pixel_loss(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> total_generator_loss(const GeneratorLossParts<T>&, const LossWeights&);

EXPOSURA_INSTANTIATE_LOSSES(float)
EXPOSURA_INSTANTIATE_LOSSES(double)

}  // namespace exposura
