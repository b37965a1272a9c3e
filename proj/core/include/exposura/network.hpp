#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "exposura/nn.hpp"
#include "exposura/tensor.hpp"

namespace exposura {

/// Named parameter bag. Names follow "g.enc.0.w", "g.res.2.conv1.b",
/// "d.scale1.layer3.w"; std::map keeps iteration lexicographic.
template <typename T>
using WeightMap = std::map<std::string, Tensor<T>>;
using ModelWeights = WeightMap<float>;

using SpectralStates = std::map<std::string, SpectralNormState>;

inline constexpr int kGeneratorStride = 32;  // five stride-2 encoder stages

struct GeneratorConfig {
  std::array<std::int64_t, 5> encoder_channels{64, 128, 256, 512, 512};
  int n_residual_blocks = 4;

  void validate() const;
  /// Throws ShapeError naming the padding needed when an extent is not a
  /// multiple of 32.
  void validate_input(const Shape& nchw) const;
  /// Recovers the configuration from generator tensor shapes.
  static GeneratorConfig from_weights(const ModelWeights& weights);
};

struct DiscriminatorConfig {
  int n_scales = 3;
  std::int64_t base_channels = 64;
  int n_layers = 5;

  void validate() const;
  static DiscriminatorConfig from_weights(const ModelWeights& weights);
};

/// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), gamma = 1,
/// beta = 0. Each tensor draws from a stream keyed by (seed, name).
ModelWeights init_generator(const GeneratorConfig& cfg, std::uint64_t seed);
ModelWeights init_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed);
SpectralStates init_spectral_states(const ModelWeights& discriminator, std::uint64_t seed);

/// Shapes every generator / discriminator tensor must have.
std::map<std::string, Shape> generator_layout(const GeneratorConfig& cfg);
std::map<std::string, Shape> discriminator_layout(const DiscriminatorConfig& cfg);

/// Throws ShapeError listing the first missing, extra or mis-shaped tensor.
void check_layout(const ModelWeights& weights, const std::map<std::string, Shape>& layout, const std::string& prefix);

template <typename T>
struct GeneratorOutput {
  Tensor<T> image;       // same shape as the input, in [-1, 1]
  Tensor<T> bottleneck;  // encoder output before the residual blocks
};

/// Encoder (5 x conv k4 s2 -> instance norm -> relu), residual blocks, and a
/// mirrored transposed-conv decoder ending in tanh. Encoder stage i's output
/// is added to the input of decoder stage 4 - i (i = 0..3).
template <typename T>
GeneratorOutput<T> generator_forward(const Tensor<T>& x, const WeightMap<T>& w, const GeneratorConfig& cfg);

template <typename T>
struct DiscriminatorScale {
  Tensor<T> patch_map;               // (N, 1, H/8, W/8) at this scale's input
  std::vector<Tensor<T>> features;   // one activation per layer; the last is patch_map
};

struct DiscriminatorOptions {
  SpectralStates* spectral = nullptr;
  /// Advance the power iteration of every layer before use.
  bool update_spectral = false;
  /// Called with (weight name, sigma) each time a normalized weight is used.
  std::function<void(const std::string&, double)> on_spectral;
};

/// Three PatchGAN discriminators on the input average-pooled by 1, 2 and 4.
/// Each has layers k4 s2 (x3), k3 s1, k1 s1, leaky relu 0.2 between them,
/// and every conv weight spectrally normalized.
template <typename T>
std::vector<DiscriminatorScale<T>> discriminator_forward(const Tensor<T>& x, const WeightMap<T>& w,
                                                        const DiscriminatorConfig& cfg, DiscriminatorOptions& opts);

/// Registers every tensor on the tape; the result shares storage.
template <typename T>
WeightMap<T> watch_all(Tape<T>& tape, const WeightMap<T>& weights);

template <typename To, typename From>
WeightMap<To> weights_cast(const WeightMap<From>& w) {
  WeightMap<To> out;
  for (const auto& [name, t] : w) out.emplace(name, tensor_cast<To>(t));
  return out;
}

/// Subset of entries whose names start with `prefix`.
ModelWeights select_prefix(const ModelWeights& weights, const std::string& prefix);

}  // namespace exposura
