#pragma once

#include <cstdint>
#include <vector>

#include "exposura/tensor.hpp"

namespace exposura {

inline constexpr double kInstanceNormEpsilon = 1e-5;

/// Learned per-channel affine applied after spatial standardization.
template <typename T>
struct InstanceNormState {
  Tensor<T> gamma;
  Tensor<T> beta;
  double epsilon = kInstanceNormEpsilon;
};

/// Per (instance, channel): gamma * (x - mean) / sqrt(var + eps) + beta,
/// with mean and biased variance taken over the spatial positions.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& input, const InstanceNormState<T>& state);

/// Persistent singular-vector estimates for one weight matrix.
struct SpectralNormState {
  std::vector<float> u;  // length out_features, unit norm
  std::vector<float> v;  // length in_features, unit norm
  int n_power_iterations = 1;
};

/// Seeded random unit vectors sized for a weight of the given shape
/// (flattened to out_features x rest).
SpectralNormState make_spectral_state(const Shape& weight_shape, std::uint64_t seed);

/// Runs the configured number of power iterations on `state` when `update`
/// is set, then returns weight / sigma with sigma = u^T W v. The division is
/// differentiable with u and v held constant. `sigma_out` receives sigma.
template <typename T>
Tensor<T> spectral_normalize(const Tensor<T>& weight, SpectralNormState& state, bool update = true,
                             double* sigma_out = nullptr);

/// W / (u^T W v) with fixed u, v; the differentiable core of spectral_normalize.
template <typename T>
Tensor<T> spectral_divide(const Tensor<T>& weight, const std::vector<float>& u, const std::vector<float>& v,
                          double* sigma_out = nullptr);

struct ResidualBlockConfig {
  std::int64_t channels = 0;
  int kernel = 3;
  bool norm = true;
};

template <typename T>
struct ResidualBlockWeights {
  Tensor<T> conv1_w, conv1_b;
  InstanceNormState<T> norm1;
  Tensor<T> conv2_w, conv2_b;
  InstanceNormState<T> norm2;
};

/// x + F(x) with F = pad -> conv -> norm -> relu -> pad -> conv -> norm,
/// reflection padding of kernel / 2 keeping the spatial extent.
template <typename T>
Tensor<T> residual_block(const Tensor<T>& input, const ResidualBlockConfig& cfg, const ResidualBlockWeights<T>& w);

}  // namespace exposura
