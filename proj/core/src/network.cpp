#include "exposura/network.hpp"

#include <cmath>
#include <random>

#include "exposura/error.hpp"
#include "exposura/ops.hpp"
#include "exposura/tape.hpp"

namespace exposura {

namespace {

constexpr float kDiscriminatorSlope = 0.2f;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::mt19937_64 stream_for(std::uint64_t seed, const std::string& name) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(fnv1a(name)), static_cast<std::uint32_t>(fnv1a(name) >> 32)};
  return std::mt19937_64(seq);
}


bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

ModelWeights init_from_layout(const std::map<std::string, Shape>& layout, std::uint64_t seed,
                              const std::map<std::string, std::int64_t>& bias_fan_in) {
  ModelWeights w;
  for (const auto& [name, shape] : layout) {
    if (ends_with(name, ".gamma")) {
      w.emplace(name, Tensor<float>(shape, 1.0f));
      continue;
    }
    if (ends_with(name, ".beta")) {
      w.emplace(name, Tensor<float>(shape, 0.0f));
      continue;
    }
    std::int64_t fi = 0;
    if (ends_with(name, ".w")) {
      fi = shape[1] * shape[2] * shape[3];
    } else {
      fi = bias_fan_in.at(name);
    }
    const float bound = 1.0f / std::sqrt(static_cast<float>(fi));
    auto rng = stream_for(seed, name);
    std::uniform_real_distribution<float> dist(-bound, bound);
    std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& e : v) e = dist(rng);
    w.emplace(name, Tensor<float>(shape, std::move(v)));
  }
  return w;
}

std::map<std::string, std::int64_t> bias_fan_ins(const std::map<std::string, Shape>& layout) {
  std::map<std::string, std::int64_t> out;
  for (const auto& [name, shape] : layout) {
    if (!ends_with(name, ".w")) continue;
    out[name.substr(0, name.size() - 2) + ".b"] = shape[1] * shape[2] * shape[3];
  }
  return out;
}

template <typename T>
const Tensor<T>& get(const WeightMap<T>& w, const std::string& name) {
  auto it = w.find(name);
  if (it == w.end()) throw ShapeError("missing weight tensor '" + name + "'");
  return it->second;
}

template <typename T>
InstanceNormState<T> norm_state(const WeightMap<T>& w, const std::string& prefix) {
  return InstanceNormState<T>{get(w, prefix + ".gamma"), get(w, prefix + ".beta"), kInstanceNormEpsilon};
}

std::string enc(int i) { return "g.enc." + std::to_string(i); }
std::string dec(int i) { return "g.dec." + std::to_string(i); }
std::string res(int i) { return "g.res." + std::to_string(i); }
std::string dlayer(int s, int l) { return "d.scale" + std::to_string(s) + ".layer" + std::to_string(l); }

struct DiscLayerGeom {
  int kernel, stride, pad;
};
constexpr DiscLayerGeom kDiscLayers[5] = {{4, 2, 1}, {4, 2, 1}, {4, 2, 1}, {3, 1, 1}, {1, 1, 0}};

}  // namespace

void GeneratorConfig::validate() const {
  for (auto c : encoder_channels) {
    if (c < 1) throw ShapeError("generator: encoder channel counts must be >= 1");
  }
  if (n_residual_blocks < 0) throw ShapeError("generator: n_residual_blocks must be >= 0");
}

void GeneratorConfig::validate_input(const Shape& s) const {
  if (s.size() != 4 || s[1] != 3) throw ShapeError("generator: expected (N, 3, H, W) input, got " + shape_str(s));
  const auto h = s[2], w = s[3];
  if (h % kGeneratorStride != 0 || w % kGeneratorStride != 0) {
    const auto ph = (kGeneratorStride - h % kGeneratorStride) % kGeneratorStride;
    const auto pw = (kGeneratorStride - w % kGeneratorStride) % kGeneratorStride;
    throw ShapeError("generator: input " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not a multiple of 32; pad by " + std::to_string(ph) + " rows and " + std::to_string(pw) +
                     " columns to " + std::to_string(h + ph) + "x" + std::to_string(w + pw));
  }
}

GeneratorConfig GeneratorConfig::from_weights(const ModelWeights& weights) {
  GeneratorConfig cfg;
  for (int i = 0; i < 5; ++i) {
    auto it = weights.find(enc(i) + ".w");
    if (it == weights.end()) throw ShapeError("checkpoint has no generator tensor '" + enc(i) + ".w'");
    cfg.encoder_channels[static_cast<std::size_t>(i)] = it->second.dim(0);
  }
  cfg.n_residual_blocks = 0;
  while (weights.count(res(cfg.n_residual_blocks) + ".conv1.w")) ++cfg.n_residual_blocks;
  check_layout(weights, generator_layout(cfg), "g.");
  return cfg;
}

void DiscriminatorConfig::validate() const {
  if (n_scales != 3) throw ShapeError("discriminator: n_scales must be 3");
  if (n_layers != 5) throw ShapeError("discriminator: n_layers must be 5");
  if (base_channels < 1) throw ShapeError("discriminator: base_channels must be >= 1");
}

DiscriminatorConfig DiscriminatorConfig::from_weights(const ModelWeights& weights) {
  DiscriminatorConfig cfg;
  auto it = weights.find(dlayer(1, 1) + ".w");
  if (it == weights.end()) throw ShapeError("checkpoint has no discriminator tensor '" + dlayer(1, 1) + ".w'");
  cfg.base_channels = it->second.dim(0);
  check_layout(weights, discriminator_layout(cfg), "d.");
  return cfg;
}

std::map<std::string, Shape> generator_layout(const GeneratorConfig& cfg) {
  cfg.validate();
  std::map<std::string, Shape> l;
  const auto& ch = cfg.encoder_channels;
  std::int64_t prev = 3;
  for (int i = 0; i < 5; ++i) {
    const auto c = ch[static_cast<std::size_t>(i)];
    l[enc(i) + ".w"] = {c, prev, 4, 4};
    l[enc(i) + ".b"] = {c};
    l[enc(i) + ".norm.gamma"] = {c};
    l[enc(i) + ".norm.beta"] = {c};
    prev = c;
  }
  const auto bc = ch[4];
  for (int j = 0; j < cfg.n_residual_blocks; ++j) {
    for (const char* conv : {".conv1", ".conv2"}) {
      l[res(j) + conv + ".w"] = {bc, bc, 3, 3};
      l[res(j) + conv + ".b"] = {bc};
    }
    for (const char* norm : {".norm1", ".norm2"}) {
      l[res(j) + norm + ".gamma"] = {bc};
      l[res(j) + norm + ".beta"] = {bc};
    }
  }
  // Decoder stage i maps ch[4 - i] to ch[3 - i]; the last one to RGB.
  for (int i = 0; i < 5; ++i) {
    const auto in = ch[static_cast<std::size_t>(4 - i)];
    const auto out = i < 4 ? ch[static_cast<std::size_t>(3 - i)] : 3;
    l[dec(i) + ".w"] = {in, out, 4, 4};
    l[dec(i) + ".b"] = {out};
    if (i < 4) {
      l[dec(i) + ".norm.gamma"] = {out};
      l[dec(i) + ".norm.beta"] = {out};
    }
  }
  return l;
}

std::map<std::string, Shape> discriminator_layout(const DiscriminatorConfig& cfg) {
  cfg.validate();
  std::map<std::string, Shape> l;
  const auto b = cfg.base_channels;
  const std::int64_t channels[6] = {3, b, 2 * b, 4 * b, 8 * b, 1};
  for (int s = 1; s <= cfg.n_scales; ++s) {
    for (int k = 1; k <= cfg.n_layers; ++k) {
      const auto& g = kDiscLayers[k - 1];
      l[dlayer(s, k) + ".w"] = {channels[k], channels[k - 1], g.kernel, g.kernel};
      l[dlayer(s, k) + ".b"] = {channels[k]};
    }
  }
  return l;
}

void check_layout(const ModelWeights& weights, const std::map<std::string, Shape>& layout, const std::string& prefix) {
  for (const auto& [name, shape] : layout) {
    auto it = weights.find(name);
    if (it == weights.end()) throw ShapeError("missing tensor '" + name + "' (expected " + shape_str(shape) + ")");
    if (it->second.shape() != shape) {
      throw ShapeError("shape mismatch for '" + name + "': expected " + shape_str(shape) + ", got " +
                       shape_str(it->second.shape()));
    }
  }
  for (const auto& [name, t] : weights) {
    if (name.rfind(prefix, 0) == 0 && !layout.count(name)) {
      throw ShapeError("unexpected tensor '" + name + "' " + shape_str(t.shape()) + " for this configuration");
    }
  }
}

ModelWeights init_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
  auto layout = generator_layout(cfg);
  // Transposed weights (in, out, k, k) take out * k * k as fan-in.
  return init_from_layout(layout, seed, bias_fan_ins(layout));
}

ModelWeights init_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  auto layout = discriminator_layout(cfg);
  return init_from_layout(layout, seed, bias_fan_ins(layout));
}

SpectralStates init_spectral_states(const ModelWeights& discriminator, std::uint64_t seed) {
  SpectralStates states;
  for (const auto& [name, t] : discriminator) {
    if (name.rfind("d.", 0) != 0 || !ends_with(name, ".w")) continue;
    states.emplace(name, make_spectral_state(t.shape(), seed ^ fnv1a(name)));
  }
  return states;
}

ModelWeights select_prefix(const ModelWeights& weights, const std::string& prefix) {
  ModelWeights out;
  for (const auto& [name, t] : weights) {
    if (name.rfind(prefix, 0) == 0) out.emplace(name, t);
  }
  return out;
}

template <typename T>
WeightMap<T> watch_all(Tape<T>& tape, const WeightMap<T>& weights) {
  WeightMap<T> out;
  for (const auto& [name, t] : weights) out.emplace(name, tape.watch(t));
  return out;
}

template <typename T>
GeneratorOutput<T> generator_forward(const Tensor<T>& x, const WeightMap<T>& w, const GeneratorConfig& cfg) {
  cfg.validate();
  cfg.validate_input(x.shape());

  std::array<Tensor<T>, 5> skips;
  Tensor<T> h = x;
  for (int i = 0; i < 5; ++i) {
    h = conv2d(h, get(w, enc(i) + ".w"), get(w, enc(i) + ".b"), 2, 1);
    h = relu(instance_norm(h, norm_state(w, enc(i) + ".norm")));
    skips[static_cast<std::size_t>(i)] = h;
  }
  GeneratorOutput<T> out;
  out.bottleneck = h;

  ResidualBlockConfig rcfg{cfg.encoder_channels[4], 3, true};
  for (int j = 0; j < cfg.n_residual_blocks; ++j) {
    ResidualBlockWeights<T> rw{get(w, res(j) + ".conv1.w"), get(w, res(j) + ".conv1.b"),
                               norm_state(w, res(j) + ".norm1"), get(w, res(j) + ".conv2.w"),
                               get(w, res(j) + ".conv2.b"), norm_state(w, res(j) + ".norm2")};
    h = residual_block(h, rcfg, rw);
  }

  for (int i = 0; i < 5; ++i) {
    if (i > 0) h = add(h, skips[static_cast<std::size_t>(4 - i)]);
    h = conv2d_transposed(h, get(w, dec(i) + ".w"), get(w, dec(i) + ".b"), 2, 1);
    if (i < 4) h = relu(instance_norm(h, norm_state(w, dec(i) + ".norm")));
  }
  out.image = tanh(h);
  return out;
}

template <typename T>
std::vector<DiscriminatorScale<T>> discriminator_forward(const Tensor<T>& x, const WeightMap<T>& w,
                                                        const DiscriminatorConfig& cfg, DiscriminatorOptions& opts) {
  cfg.validate();
  if (x.rank() != 4 || x.dim(1) != 3) throw ShapeError("discriminator: expected (N, 3, H, W) input, got " + shape_str(x.shape()));
  if (x.dim(2) % kGeneratorStride != 0 || x.dim(3) % kGeneratorStride != 0) {
    throw ShapeError("discriminator: input extents of " + shape_str(x.shape()) + " must be multiples of 32");
  }
  if (opts.spectral == nullptr) throw Error("discriminator: spectral-norm states are required");

  std::vector<DiscriminatorScale<T>> scales;
  for (int s = 1; s <= cfg.n_scales; ++s) {
    Tensor<T> h = downsample_avg(x, 1 << (s - 1));
    DiscriminatorScale<T> out;
    for (int k = 1; k <= cfg.n_layers; ++k) {
      const std::string name = dlayer(s, k) + ".w";
      auto st = opts.spectral->find(name);
      if (st == opts.spectral->end()) throw Error("discriminator: no spectral-norm state for '" + name + "'");
      double sigma = 0;
      Tensor<T> wn = spectral_normalize(get(w, name), st->second, opts.update_spectral, &sigma);
      if (opts.on_spectral) opts.on_spectral(name, sigma);
      const auto& g = kDiscLayers[k - 1];
      h = conv2d(h, wn, get(w, dlayer(s, k) + ".b"), g.stride, g.pad);
      if (k < cfg.n_layers) h = leaky_relu(h, static_cast<T>(kDiscriminatorSlope));
      out.features.push_back(h);
    }
    out.patch_map = h;
    scales.push_back(std::move(out));
  }
  return scales;
}

#define EXPOSURA_INSTANTIATE_NET(T)                                                                          \
  template GeneratorOutput<T> generator_forward(const Tensor<T>&, const WeightMap<T>&, const GeneratorConfig&); \
  template std::vector<DiscriminatorScale<T>> discriminator_forward(const Tensor<T>&, const WeightMap<T>&,     \
                                                                    const DiscriminatorConfig&,                \
                                                                    DiscriminatorOptions&);                    \
  template WeightMap<T> watch_all(Tape<T>&, const WeightMap<T>&);

EXPOSURA_INSTANTIATE_NET(float)
EXPOSURA_INSTANTIATE_NET(double)

}  // namespace exposura
