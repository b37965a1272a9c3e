#include "exposura/nn.hpp"

#include <cmath>
#include <random>

#include "exposura/error.hpp"
#include "exposura/ops.hpp"

namespace exposura {

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& input, const InstanceNormState<T>& state) {
  if (input.rank() != 4) throw ShapeError("instance_norm: input must be rank 4, got " + shape_str(input.shape()));
  const std::int64_t n = input.dim(0), c = input.dim(1), m = input.dim(2) * input.dim(3);
  if (state.gamma.numel() != c || state.beta.numel() != c) {
    throw ShapeError("instance_norm: input " + shape_str(input.shape()) + " has " + std::to_string(c) +
                     " channels but gamma/beta have " + std::to_string(state.gamma.numel()) + "/" +
                     std::to_string(state.beta.numel()));
  }
  if (!(state.epsilon > 0)) throw ShapeError("instance_norm: epsilon must be positive");

  Tensor<T> xhat(input.shape());
  Tensor<T> out(input.shape());
  std::vector<T> rstd(static_cast<std::size_t>(n * c));
  const T* x = input.raw();
  T* xh = xhat.mutable_data().data();
  T* y = out.mutable_data().data();
  const T* gamma = state.gamma.raw();
  const T* beta = state.beta.raw();
  for (std::int64_t p = 0; p < n * c; ++p) {
    const T* xp = x + p * m;
    T mu = 0;
    for (std::int64_t i = 0; i < m; ++i) mu += xp[i];
    mu /= static_cast<T>(m);
    T var = 0;
    for (std::int64_t i = 0; i < m; ++i) var += (xp[i] - mu) * (xp[i] - mu);
    var /= static_cast<T>(m);
    const T r = T(1) / std::sqrt(var + static_cast<T>(state.epsilon));
    rstd[static_cast<std::size_t>(p)] = r;
    const std::int64_t ch = p % c;
    for (std::int64_t i = 0; i < m; ++i) {
      xh[p * m + i] = (xp[i] - mu) * r;
      y[p * m + i] = gamma[ch] * xh[p * m + i] + beta[ch];
    }
  }

  return record_op<T>(
      "instance_norm", std::move(out), {&input, &state.gamma, &state.beta},
      [xhat, rstd = std::move(rstd), gamma_t = state.gamma.detach(), n, c, m](
          const Tensor<T>& g, std::span<const bool> needs, std::span<Tensor<T>> gin) {
        const T* gd = g.raw();
        const T* xh = xhat.raw();
        const T* gamma = gamma_t.raw();
        Tensor<T> gx, gg, gb;
        if (needs[0]) gx = Tensor<T>(xhat.shape());
        if (needs[1]) gg = Tensor<T>(gamma_t.shape());
        if (needs[2]) gb = Tensor<T>(gamma_t.shape());
        T* gxd = needs[0] ? gx.mutable_data().data() : nullptr;
        T* ggd = needs[1] ? gg.mutable_data().data() : nullptr;
        T* gbd = needs[2] ? gb.mutable_data().data() : nullptr;
        for (std::int64_t p = 0; p < n * c; ++p) {
          const std::int64_t ch = p % c;
          T sum_g = 0, sum_gx = 0;
          for (std::int64_t i = 0; i < m; ++i) {
            sum_g += gd[p * m + i];
            sum_gx += gd[p * m + i] * xh[p * m + i];
          }
          if (ggd) ggd[ch] += sum_gx;
          if (gbd) gbd[ch] += sum_g;
          if (gxd) {
            const T k = gamma[ch] * rstd[static_cast<std::size_t>(p)] / static_cast<T>(m);
            for (std::int64_t i = 0; i < m; ++i) {
              gxd[p * m + i] = k * (static_cast<T>(m) * gd[p * m + i] - sum_g - xh[p * m + i] * sum_gx);
            }
          }
        }
        if (needs[0]) gin[0] = std::move(gx);
        if (needs[1]) gin[1] = std::move(gg);
        if (needs[2]) gin[2] = std::move(gb);
      });
}

namespace {

constexpr double kSigmaFloor = 1e-12;

// Normalizes in place; leaves the vector alone when it has no direction.
bool normalize(std::vector<double>& x) {
  double s = 0;
  for (double e : x) s += e * e;
  s = std::sqrt(s);
  if (s < kSigmaFloor) return false;
  for (double& e : x) e /= s;
  return true;
}

std::int64_t rows_of(const Shape& s) { return s.at(0); }
std::int64_t cols_of(const Shape& s) { return shape_numel(s) / s.at(0); }

}  // namespace

SpectralNormState make_spectral_state(const Shape& weight_shape, std::uint64_t seed) {
  const auto rows = rows_of(weight_shape);
  const auto cols = cols_of(weight_shape);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](std::int64_t n) {
    std::vector<double> x(static_cast<std::size_t>(n));
    for (auto& e : x) e = normal(rng);
    if (!normalize(x)) x.assign(x.size(), 1.0 / std::sqrt(static_cast<double>(n)));
    return std::vector<float>(x.begin(), x.end());
  };
  SpectralNormState s;
  s.u = draw(rows);
  s.v = draw(cols);
  return s;
}

template <typename T>
Tensor<T> spectral_divide(const Tensor<T>& weight, const std::vector<float>& u, const std::vector<float>& v,
                          double* sigma_out) {
  const auto rows = rows_of(weight.shape());
  const auto cols = cols_of(weight.shape());
  if (static_cast<std::int64_t>(u.size()) != rows || static_cast<std::int64_t>(v.size()) != cols) {
    throw ShapeError("spectral_normalize: state vectors (" + std::to_string(u.size()) + ", " +
                     std::to_string(v.size()) + ") do not fit weight " + shape_str(weight.shape()));
  }
  const T* w = weight.raw();
  double sigma = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    double acc = 0;
    for (std::int64_t k = 0; k < cols; ++k) acc += static_cast<double>(w[r * cols + k]) * v[static_cast<std::size_t>(k)];
    sigma += u[static_cast<std::size_t>(r)] * acc;
  }
  const bool guarded = sigma < kSigmaFloor;
  if (guarded) sigma = kSigmaFloor;
  if (sigma_out) *sigma_out = sigma;

  const T s = static_cast<T>(sigma);
  Tensor<T> out(weight.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = w[i] / s;

  return record_op<T>(
      "spectral_normalize", std::move(out), {&weight},
      [wv = weight.detach(), u, v, s, guarded, rows, cols](const Tensor<T>& g, std::span<const bool>,
                                                           std::span<Tensor<T>> gin) {
        // d(W/s) = G/s - <G, W>/s^2 * u v^T, the second term vanishing when s is clamped.
        const T* gd = g.raw();
        const T* w = wv.raw();
        T inner = 0;
        if (!guarded) {
          for (std::int64_t i = 0; i < rows * cols; ++i) inner += gd[i] * w[i];
        }
        const T k = inner / (s * s);
        Tensor<T> gw(wv.shape());
        auto d = gw.mutable_data();
        for (std::int64_t r = 0; r < rows; ++r) {
          for (std::int64_t c = 0; c < cols; ++c) {
            const std::size_t i = static_cast<std::size_t>(r * cols + c);
            d[i] = gd[i] / s - k * static_cast<T>(u[static_cast<std::size_t>(r)]) *
                                   static_cast<T>(v[static_cast<std::size_t>(c)]);
          }
        }
        gin[0] = std::move(gw);
      });
}

template <typename T>
Tensor<T> spectral_normalize(const Tensor<T>& weight, SpectralNormState& state, bool update, double* sigma_out) {
  if (!weight.defined()) throw ShapeError("spectral_normalize: undefined weight");
  const auto rows = rows_of(weight.shape());
  const auto cols = cols_of(weight.shape());
  if (static_cast<std::int64_t>(state.u.size()) != rows || static_cast<std::int64_t>(state.v.size()) != cols) {
    throw ShapeError("spectral_normalize: state vectors (" + std::to_string(state.u.size()) + ", " +
                     std::to_string(state.v.size()) + ") do not fit weight " + shape_str(weight.shape()));
  }
  if (update) {
    if (state.n_power_iterations < 1) throw ShapeError("spectral_normalize: need at least one power iteration");
    const T* w = weight.raw();
    std::vector<double> u(state.u.begin(), state.u.end());
    std::vector<double> v(state.v.begin(), state.v.end());
    for (int it = 0; it < state.n_power_iterations; ++it) {
      std::vector<double> nv(static_cast<std::size_t>(cols), 0.0);
      for (std::int64_t r = 0; r < rows; ++r) {
        const double ur = u[static_cast<std::size_t>(r)];
        for (std::int64_t c = 0; c < cols; ++c) nv[static_cast<std::size_t>(c)] += w[r * cols + c] * ur;
      }
      if (normalize(nv)) v = std::move(nv);
      std::vector<double> nu(static_cast<std::size_t>(rows), 0.0);
      for (std::int64_t r = 0; r < rows; ++r) {
        double acc = 0;
        for (std::int64_t c = 0; c < cols; ++c) acc += w[r * cols + c] * v[static_cast<std::size_t>(c)];
        nu[static_cast<std::size_t>(r)] = acc;
      }
      if (normalize(nu)) u = std::move(nu);
    }
    state.u.assign(u.begin(), u.end());
    state.v.assign(v.begin(), v.end());
  }
  return spectral_divide(weight, state.u, state.v, sigma_out);
}

template <typename T>
Tensor<T> residual_block(const Tensor<T>& input, const ResidualBlockConfig& cfg, const ResidualBlockWeights<T>& w) {
  if (input.rank() != 4 || input.dim(1) != cfg.channels) {
    throw ShapeError("residual_block: input " + shape_str(input.shape()) + " does not have " +
                     std::to_string(cfg.channels) + " channels");
  }
  const int pad = cfg.kernel / 2;
  Tensor<T> h = conv2d(reflect_pad(input, pad), w.conv1_w, w.conv1_b, 1, 0);
  if (cfg.norm) h = instance_norm(h, w.norm1);
  h = relu(h);
  h = conv2d(reflect_pad(h, pad), w.conv2_w, w.conv2_b, 1, 0);
  if (cfg.norm) h = instance_norm(h, w.norm2);
  return add(input, h);
}

#define EXPOSURA_INSTANTIATE_NN(T)                                                                          \
  template Tensor<T> instance_norm(const Tensor<T>&, const InstanceNormState<T>&);                          \
  template Tensor<T> spectral_normalize(const Tensor<T>&, SpectralNormState&, bool, double*);               \
  template Tensor<T> spectral_divide(const Tensor<T>&, const std::vector<float>&, const std::vector<float>&, \
                                     double*);                                                              \
  template Tensor<T> residual_block(const Tensor<T>&, const ResidualBlockConfig&, const ResidualBlockWeights<T>&);

EXPOSURA_INSTANTIATE_NN(float)
EXPOSURA_INSTANTIATE_NN(double)

}  // namespace exposura
