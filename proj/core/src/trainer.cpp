#include "exposura/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "exposura/checkpoint.hpp"
#include "exposura/error.hpp"
#include "exposura/fileio.hpp"
#include "exposura/ops.hpp"

namespace exposura {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename V>
V parse_number(const std::string& key, const std::string& text) {
  V v{};
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    throw FormatError("config: bad value for " + key + ": '" + text + "'");
  }
  return v;
}

template <typename V, std::size_t N>
std::array<V, N> parse_list(const std::string& key, const std::string& text) {
  std::array<V, N> out{};
  std::istringstream is(text);
  std::string cell;
  std::size_t i = 0;
  while (std::getline(is, cell, ',')) {
    if (i == N) throw FormatError("config: " + key + " takes " + std::to_string(N) + " values");
    out[i++] = parse_number<V>(key, trim(cell));
  }
  if (i != N) throw FormatError("config: " + key + " takes " + std::to_string(N) + " values");
  return out;
}

std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename A>
std::string join(const A& a) {
  std::string s;
  for (const auto& v : a) s += (s.empty() ? "" : ",") + num(static_cast<double>(v));
  return s;
}

std::mt19937_64 keyed_rng(std::uint64_t seed, std::uint64_t key, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32), stream};
  return std::mt19937_64(seq);
}

void check_finite(const char* term, double v) {
  if (!std::isfinite(v)) throw NumericError("non-finite loss term " + std::string(term) + " (" + num(v) + ")");
}

ModelWeights zeros_like(const ModelWeights& w) {
  ModelWeights out;
  for (const auto& [name, t] : w) out.emplace(name, Tensor<float>(t.shape(), 0.0f));
  return out;
}

void put_prefixed(ModelWeights& out, const std::string& prefix, const ModelWeights& src) {
  for (const auto& [name, t] : src) out.emplace(prefix + name, t);
}

ModelWeights take_prefixed(const ModelWeights& src, const std::string& prefix) {
  ModelWeights out;
  for (const auto& [name, t] : src)
    if (name.starts_with(prefix)) out.emplace(name.substr(prefix.size()), t);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (steps < 1) throw Error("config: steps must be >= 1");
  if (batch_size < 1) throw Error("config: batch_size must be >= 1");
  if (crop_size < kGeneratorStride || crop_size % kGeneratorStride != 0) {
    throw Error("config: crop_size must be a multiple of 32 and >= 32, got " + std::to_string(crop_size));
  }
  if (!(lr_g >= 0) || !(lr_d >= 0)) throw Error("config: learning rates must be >= 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw Error("config: Adam betas must lie in [0, 1)");
  }
  if (checkpoint_every < 1) throw Error("config: checkpoint_every must be >= 1");
  loss_weights.validate();
  generator.validate();
  discriminator.validate();
}

TrainConfig TrainConfig::parse(std::string_view text) {
  TrainConfig c;
  std::istringstream is{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string val = trim(std::string_view(line).substr(eq + 1));
    if (key == "steps") c.steps = parse_number<int>(key, val);
    else if (key == "batch_size") c.batch_size = parse_number<int>(key, val);
    else if (key == "crop_size") c.crop_size = parse_number<int>(key, val);
    else if (key == "lr_g") c.lr_g = parse_number<double>(key, val);
    else if (key == "lr_d") c.lr_d = parse_number<double>(key, val);
    else if (key == "adam_beta1") c.adam_beta1 = parse_number<double>(key, val);
    else if (key == "adam_beta2") c.adam_beta2 = parse_number<double>(key, val);
    else if (key == "adam_epsilon") c.adam_epsilon = parse_number<double>(key, val);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, val);
    else if (key == "checkpoint_every") c.checkpoint_every = parse_number<int>(key, val);
    else if (key == "flip") {
      if (val != "true" && val != "false") throw FormatError("config: flip must be true or false");
      c.flip = val == "true";
    } else if (key == "lambda_pixel") c.loss_weights.lambda_pixel = parse_number<double>(key, val);
    else if (key == "beta_perceptual") c.loss_weights.beta_perceptual = parse_number<double>(key, val);
    else if (key == "lambda_fm") c.loss_weights.lambda_fm = parse_number<double>(key, val);
    else if (key == "perceptual_coeffs") c.loss_weights.perceptual_coeffs = parse_list<double, 5>(key, val);
    else if (key == "encoder_channels") c.generator.encoder_channels = parse_list<std::int64_t, 5>(key, val);
    else if (key == "residual_blocks") c.generator.n_residual_blocks = parse_number<int>(key, val);
    else if (key == "disc_scales") c.discriminator.n_scales = parse_number<int>(key, val);
    else if (key == "disc_base_channels") c.discriminator.base_channels = parse_number<std::int64_t>(key, val);
    else if (key == "perceptual_seed") c.perceptual_seed = parse_number<std::uint64_t>(key, val);
    else if (key == "perceptual_weights") c.perceptual_weights = val;
    else throw FormatError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string TrainConfig::to_text() const {
  std::string s;
  auto kv = [&](const char* k, const std::string& v) { s += std::string(k) + " = " + v + "\n"; };
  kv("steps", std::to_string(steps));
  kv("batch_size", std::to_string(batch_size));
  kv("crop_size", std::to_string(crop_size));
  kv("lr_g", num(lr_g));
  kv("lr_d", num(lr_d));
  kv("adam_beta1", num(adam_beta1));
  kv("adam_beta2", num(adam_beta2));
  kv("adam_epsilon", num(adam_epsilon));
  kv("seed", std::to_string(seed));
  kv("checkpoint_every", std::to_string(checkpoint_every));
  kv("flip", flip ? "true" : "false");
  kv("lambda_pixel", num(loss_weights.lambda_pixel));
  kv("beta_perceptual", num(loss_weights.beta_perceptual));
  kv("lambda_fm", num(loss_weights.lambda_fm));
  kv("perceptual_coeffs", join(loss_weights.perceptual_coeffs));
  kv("encoder_channels", join(generator.encoder_channels));
  kv("residual_blocks", std::to_string(generator.n_residual_blocks));
  kv("disc_scales", std::to_string(discriminator.n_scales));
  kv("disc_base_channels", std::to_string(discriminator.base_channels));
  kv("perceptual_seed", std::to_string(perceptual_seed));
  if (!perceptual_weights.empty()) kv("perceptual_weights", perceptual_weights);
  return s;
}

TrainState TrainState::initialize(const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.generator = init_generator(config.generator, config.seed);
  s.discriminator = init_discriminator(config.discriminator, config.seed);
  s.spectral = init_spectral_states(s.discriminator, config.seed);
  s.adam_g_m = zeros_like(s.generator);
  s.adam_g_v = zeros_like(s.generator);
  s.adam_d_m = zeros_like(s.discriminator);
  s.adam_d_v = zeros_like(s.discriminator);
  return s;
}

ModelWeights TrainState::to_checkpoint() const {
  ModelWeights out;
  put_prefixed(out, "", generator);
  put_prefixed(out, "", discriminator);
  for (const auto& [name, sn] : spectral) {
    out.emplace("sn." + name + ".u", Tensor<float>(Shape{static_cast<std::int64_t>(sn.u.size())}, sn.u));
    out.emplace("sn." + name + ".v", Tensor<float>(Shape{static_cast<std::int64_t>(sn.v.size())}, sn.v));
  }
  put_prefixed(out, "opt.g.m.", adam_g_m);
  put_prefixed(out, "opt.g.v.", adam_g_v);
  put_prefixed(out, "opt.d.m.", adam_d_m);
  put_prefixed(out, "opt.d.v.", adam_d_v);
  // step = lo + 4096 * hi
  out.emplace("train.step", Tensor<float>(Shape{2}, std::vector<float>{static_cast<float>(step % 4096),
                                                                      static_cast<float>(step / 4096)}));
  return out;
}

TrainState TrainState::from_checkpoint(const ModelWeights& w) {
  TrainState s;
  s.generator = select_prefix(w, "g.");
  s.discriminator = select_prefix(w, "d.");
  if (s.generator.empty() || s.discriminator.empty()) {
    throw FormatError("checkpoint lacks generator or discriminator tensors");
  }
  check_layout(s.generator, generator_layout(GeneratorConfig::from_weights(s.generator)), "g.");
  check_layout(s.discriminator, discriminator_layout(DiscriminatorConfig::from_weights(s.discriminator)), "d.");
  auto step = w.find("train.step");
  if (step == w.end() || step->second.numel() != 2) throw FormatError("checkpoint lacks training state (train.step)");
  s.step = static_cast<std::int64_t>(step->second.data()[0]) + 4096 * static_cast<std::int64_t>(step->second.data()[1]);
  for (const auto& [name, t] : s.discriminator) {
    if (t.rank() != 4) continue;
    auto u = w.find("sn." + name + ".u");
    auto v = w.find("sn." + name + ".v");
    if (u == w.end() || v == w.end()) throw FormatError("checkpoint lacks spectral vectors for " + name);
    SpectralNormState sn;
    sn.u.assign(u->second.data().begin(), u->second.data().end());
    sn.v.assign(v->second.data().begin(), v->second.data().end());
    if (static_cast<std::int64_t>(sn.u.size()) != t.dim(0) ||
        static_cast<std::int64_t>(sn.v.size()) != t.numel() / t.dim(0)) {
      throw FormatError("checkpoint spectral vectors for " + name + " have wrong lengths");
    }
    s.spectral.emplace(name, std::move(sn));
  }
  auto moments = [&](const std::string& prefix, const ModelWeights& params) {
    ModelWeights m = take_prefixed(w, prefix);
    for (const auto& [name, t] : params) {
      auto it = m.find(name);
      if (it == m.end() || it->second.shape() != t.shape()) {
        throw FormatError("checkpoint optimizer state " + prefix + name + " missing or mis-shaped");
      }
    }
    if (m.size() != params.size()) throw FormatError("checkpoint has stray optimizer tensors under " + prefix);
    return m;
  };
  s.adam_g_m = moments("opt.g.m.", s.generator);
  s.adam_g_v = moments("opt.g.v.", s.generator);
  s.adam_d_m = moments("opt.d.m.", s.discriminator);
  s.adam_d_v = moments("opt.d.v.", s.discriminator);
  return s;
}

std::uint64_t weights_hash(const ModelWeights& weights) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : weights) {
    mix(name.data(), name.size());
    mix(t.shape().data(), t.shape().size() * sizeof(std::int64_t));
    mix(t.raw(), static_cast<std::size_t>(t.numel()) * sizeof(float));
  }
  return h;
}

void adam_update(ModelWeights& params, ModelWeights& m, ModelWeights& v, const ModelWeights& grads, double lr,
                 double beta1, double beta2, double epsilon, std::int64_t t) {
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  // Bias corrections folded into the step size and epsilon.
  const float step = static_cast<float>(lr * std::sqrt(c2) / c1);
  const float eps = static_cast<float>(epsilon * std::sqrt(c2));
  const float b1 = static_cast<float>(beta1), b2 = static_cast<float>(beta2);
  for (auto& [name, p] : params) {
    const auto g = grads.find(name);
    if (g == grads.end()) continue;
    if (g->second.shape() != p.shape()) throw ShapeError("adam: gradient shape mismatch for " + name);
    // Scalar form on purpose: rounding must not depend on buffer alignment.
    float* pd = p.mutable_data().data();
    float* md = m.at(name).mutable_data().data();
    float* vd = v.at(name).mutable_data().data();
    const float* gd = g->second.raw();
    const std::size_t n = static_cast<std::size_t>(p.numel());
    for (std::size_t i = 0; i < n; ++i) {
      const float mi = b1 * md[i] + (1 - b1) * gd[i];
      const float vi = b2 * vd[i] + (1 - b2) * gd[i] * gd[i];
      md[i] = mi;
      vd[i] = vi;
      pd[i] -= step * mi / (std::sqrt(vi) + eps);
    }
  }
}

ModelWeights named_gradients(const Gradients<float>& grads, const ModelWeights& watched) {
  ModelWeights out;
  for (const auto& [name, t] : watched)
    if (const Tensor<float>* g = grads.find(t)) out.emplace(name, *g);
  return out;
}

GeneratorPass generator_pass(const TrainState& state, const Tensor<float>& input, const TrainConfig& config) {
  GeneratorPass pass;
  pass.tape = std::make_unique<Tape<float>>();
  pass.watched = watch_all(*pass.tape, state.generator);
  pass.fake = generator_forward(input, pass.watched, config.generator).image;
  return pass;
}

double discriminator_update(TrainState& state, const Tensor<float>& fake, const Tensor<float>& target,
                            const TrainConfig& config) {
  ModelWeights grads;
  double value = 0;
  {
    Tape<float> tape;
    const ModelWeights watched = watch_all(tape, state.discriminator);
    const Tensor<float> parts[2] = {target.detach(), fake.detach()};
    const Tensor<float> both = concat_batch<float>(parts);
    DiscriminatorOptions opts;
    opts.spectral = &state.spectral;
    opts.update_spectral = true;
    const auto scales = discriminator_forward(both, watched, config.discriminator, opts);
    const std::int64_t n = target.dim(0);
    std::vector<Tensor<float>> real_maps, fake_maps;
    for (const auto& s : scales) {
      real_maps.push_back(slice_batch(s.patch_map, 0, n));
      fake_maps.push_back(slice_batch(s.patch_map, n, n));
    }
    const Tensor<float> loss = adversarial_loss_d<float>(real_maps, fake_maps);
    value = loss.item();
    check_finite("adv_d", value);
    grads = named_gradients(tape.backward(loss), watched);
  }
  adam_update(state.discriminator, state.adam_d_m, state.adam_d_v, grads, config.lr_d, config.adam_beta1,
              config.adam_beta2, config.adam_epsilon, state.step + 1);
  return value;
}

GeneratorLosses generator_update(TrainState& state, GeneratorPass pass, const Tensor<float>& target,
                                 const TrainConfig& config, const FeatureExtractor& extractor) {
  if (!pass.tape || !pass.fake.on_tape()) throw Error("generator_update: pass has no taped output");
  GeneratorLosses out;
  ModelWeights grads;
  {
    DiscriminatorOptions opts;
    opts.spectral = &state.spectral;
    opts.update_spectral = false;
    const Tensor<float> real = target.detach();
    const auto fake_scales = discriminator_forward(pass.fake, state.discriminator, config.discriminator, opts);
    const auto real_scales = discriminator_forward(real, state.discriminator, config.discriminator, opts);
    std::vector<Tensor<float>> fake_maps;
    FeaturePyramid<float> real_feats, fake_feats;
    for (std::size_t s = 0; s < fake_scales.size(); ++s) {
      fake_maps.push_back(fake_scales[s].patch_map);
      fake_feats.push_back(fake_scales[s].features);
      real_feats.push_back(real_scales[s].features);
    }
    GeneratorLossParts<float> parts;
    parts.adversarial = adversarial_loss_g<float>(fake_maps);
    parts.feature_matching = feature_matching_loss(real_feats, fake_feats);
    parts.pixel = pixel_loss(pass.fake, real);
    parts.perceptual = perceptual_loss(pass.fake, real, extractor, config.loss_weights.perceptual_coeffs);
    out = {parts.adversarial.item(), parts.feature_matching.item(), parts.pixel.item(), parts.perceptual.item()};
    check_finite("adv_g", out.adversarial);
    check_finite("fm", out.feature_matching);
    check_finite("pixel", out.pixel);
    check_finite("perceptual", out.perceptual);
    const Tensor<float> total = total_generator_loss(parts, config.loss_weights);
    check_finite("total", total.item());
    grads = named_gradients(pass.tape->backward(total), pass.watched);
  }
  pass.fake = {};
  pass.watched.clear();
  pass.tape.reset();
  adam_update(state.generator, state.adam_g_m, state.adam_g_v, grads, config.lr_g, config.adam_beta1,
              config.adam_beta2, config.adam_epsilon, state.step + 1);
  return out;
}

LossRecord train_step(TrainState& state, std::span<const TrainingPair> batch, const TrainConfig& config,
                      const FeatureExtractor& extractor) {
  if (batch.empty()) throw DataError("train_step: empty batch");
  std::vector<ImageBuffer> inputs, targets;
  for (const auto& p : batch) {
    if (p.input.width != config.crop_size || p.input.height != config.crop_size || !p.input.same_size(p.target)) {
      throw ShapeError("train_step: batch images must be " + std::to_string(config.crop_size) + "x" +
                       std::to_string(config.crop_size) + " crops");
    }
    inputs.push_back(p.input);
    targets.push_back(p.target);
  }
  const Tensor<float> x = images_to_tensor<float>(inputs);
  const Tensor<float> y = images_to_tensor<float>(targets);

  GeneratorPass pass = generator_pass(state, x, config);
  LossRecord rec;
  rec.adv_d = discriminator_update(state, pass.fake, y, config);
  const GeneratorLosses g = generator_update(state, std::move(pass), y, config, extractor);
  rec.adv_g = g.adversarial;
  rec.fm = g.feature_matching;
  rec.pixel = g.pixel;
  rec.perceptual = g.perceptual;
  ++state.step;
  rec.step = state.step;
  return rec;
}

std::vector<TrainingPair> sample_batch(std::span<const TrainingPair> dataset, const TrainConfig& config,
                                       std::int64_t step) {
  if (dataset.empty()) throw DataError("training set is empty");
  const auto n = static_cast<std::int64_t>(dataset.size());
  std::map<std::int64_t, std::vector<std::size_t>> perms;
  auto perm = [&](std::int64_t epoch) -> const std::vector<std::size_t>& {
    auto it = perms.find(epoch);
    if (it != perms.end()) return it->second;
    std::vector<std::size_t> p(dataset.size());
    std::iota(p.begin(), p.end(), std::size_t{0});
    auto rng = keyed_rng(config.seed, static_cast<std::uint64_t>(epoch), 1);
    std::shuffle(p.begin(), p.end(), rng);
    return perms.emplace(epoch, std::move(p)).first->second;
  };
  auto rng = keyed_rng(config.seed, static_cast<std::uint64_t>(step), 2);
  std::vector<TrainingPair> out;
  for (int b = 0; b < config.batch_size; ++b) {
    const std::int64_t k = step * config.batch_size + b;
    const TrainingPair& src = dataset[perm(k / n)[static_cast<std::size_t>(k % n)]];
    if (src.input.width < config.crop_size || src.input.height < config.crop_size) {
      throw DataError("training image " + std::to_string(src.input.width) + "x" + std::to_string(src.input.height) +
                      " is smaller than crop_size " + std::to_string(config.crop_size));
    }
    CropPair c = random_crop_pair(src.input, src.target, config.crop_size, rng);
    if (config.flip && std::uniform_int_distribution<int>(0, 1)(rng) == 1) {
      c.input = flip_horizontal(c.input);
      c.target = flip_horizontal(c.target);
    }
    out.push_back({std::move(c.input), std::move(c.target)});
  }
  return out;
}

FeatureExtractor make_feature_extractor(const TrainConfig& config) {
  if (!config.perceptual_weights.empty()) return FeatureExtractor::from_weights(load_weights(config.perceptual_weights));
  return FeatureExtractor::seeded(config.perceptual_seed);
}

std::string loss_csv_header() { return "step,adv_d,adv_g,fm,pixel,perceptual"; }

std::string loss_csv_row(const LossRecord& r) {
  return std::to_string(r.step) + "," + num(r.adv_d) + "," + num(r.adv_g) + "," + num(r.fm) + "," + num(r.pixel) +
         "," + num(r.perceptual);
}

std::vector<LossRecord> read_loss_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != loss_csv_header()) {
    throw FormatError(path.string() + ": not a loss CSV");
  }
  std::vector<LossRecord> out;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::istringstream is(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(is, cell, ',')) cells.push_back(trim(cell));
    if (cells.size() != 6) throw FormatError(path.string() + ": malformed row '" + line + "'");
    LossRecord r;
    r.step = parse_number<std::int64_t>("step", cells[0]);
    r.adv_d = parse_number<double>("adv_d", cells[1]);
    r.adv_g = parse_number<double>("adv_g", cells[2]);
    r.fm = parse_number<double>("fm", cells[3]);
    r.pixel = parse_number<double>("pixel", cells[4]);
    r.perceptual = parse_number<double>("perceptual", cells[5]);
    out.push_back(r);
  }
  return out;
}

std::vector<TrainingPair> load_pairs(const DatasetIndex& index) {
  if (index.records.empty()) throw DataError("dataset is empty");
  std::vector<TrainingPair> out;
  std::map<std::filesystem::path, ImageBuffer> targets;
  for (const auto& r : index.records) {
    auto it = targets.find(r.target);
    if (it == targets.end()) it = targets.emplace(r.target, load_image(r.target)).first;
    ImageBuffer in = load_image(r.input);
    if (!in.same_size(it->second) || in.channels != 3) {
      throw DataError("pair " + r.input.string() + " / " + r.target.string() + " must be RGB images of equal size");
    }
    out.push_back({std::move(in), it->second});
  }
  return out;
}

TrainResult run_training(const TrainConfig& config, std::span<const TrainingPair> dataset,
                         const std::filesystem::path& out_dir, std::optional<TrainState> resume,
                         const std::function<void(const LossRecord&)>& on_step) {
  config.validate();
  if (dataset.empty()) throw DataError("training set is empty");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw DataError("cannot create output directory " + out_dir.string());
  }
  const auto probe = out_dir / ".write_probe";
  write_file_atomic(probe, std::string_view("ok"));
  std::filesystem::remove(probe, ec);

  TrainResult result;
  result.state = resume ? std::move(*resume) : TrainState::initialize(config);
  TrainState& state = result.state;
  const auto csv_path = out_dir / "losses.csv";
  if (resume && std::filesystem::exists(csv_path)) {
    for (const auto& r : read_loss_csv(csv_path))
      if (r.step <= state.step) result.losses.push_back(r);
  }
  const FeatureExtractor extractor = make_feature_extractor(config);

  auto flush_csv = [&] {
    std::string text = loss_csv_header() + "\n";
    for (const auto& r : result.losses) text += loss_csv_row(r) + "\n";
    write_file_atomic(csv_path, text);
  };
  while (state.step < config.steps) {
    const auto batch = sample_batch(dataset, config, state.step);
    const LossRecord rec = train_step(state, batch, config, extractor);
    result.losses.push_back(rec);
    if (on_step) on_step(rec);
    if (state.step % config.checkpoint_every == 0 || state.step == config.steps) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_%06lld.expw", static_cast<long long>(state.step));
      result.last_checkpoint = out_dir / name;
      save_weights(state.to_checkpoint(), result.last_checkpoint);
      flush_csv();
    }
  }
  return result;
}

}  // namespace exposura
