#include "exposura/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <random>

#include "exposura/error.hpp"
#include "exposura/losses.hpp"
#include "exposura/network.hpp"
#include "exposura/nn.hpp"
#include "exposura/ops.hpp"
#include "exposura/tape.hpp"

namespace exposura {

namespace {

using T64 = Tensor<double>;

// Values in [-1, -0.05] U [0.05, 1] so kinks at zero are out of reach.
T64 random_tensor(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return T64(shape, std::move(v));
}

double weighted_sum(const T64& out, const T64& r) { return std::inner_product(out.data().begin(), out.data().end(), r.data().begin(), 0.0); }

}  // namespace

double gradcheck_error(const GradcheckFn& f, const std::vector<T64>& inputs, const GradcheckOptions& options) {
  std::mt19937_64 rng(options.seed);
  const T64 probe_out = f(inputs);
  const T64 r = random_tensor(probe_out.shape(), rng);

  Tape<double> tape;
  std::vector<T64> watched;
  for (const auto& t : inputs) watched.push_back(tape.watch(t));
  const T64 out = f(watched);
  const T64 loss = sum(mul(out, r));
  const auto grads = tape.backward(loss);

  struct Probe {
    double max_a = 0, max_n = 0, max_d = 0;
  };
  std::vector<Probe> probes(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const T64 zero(inputs[i].shape(), 0.0);
    const T64& analytic = grads.contains(watched[i]) ? grads.at(watched[i]) : zero;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(inputs[i].numel()));
    std::iota(idx.begin(), idx.end(), std::int64_t{0});
    if (options.max_probes > 0 && static_cast<std::int64_t>(idx.size()) > options.max_probes) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(options.max_probes));
    }
    Probe& p = probes[i];
    for (std::int64_t k : idx) {
      std::vector<T64> probe(inputs);
      const double x0 = inputs[i].data()[static_cast<std::size_t>(k)];
      probe[i].mutable_data()[static_cast<std::size_t>(k)] = x0 + options.step;
      const double up = weighted_sum(f(probe), r);
      probe[i].mutable_data()[static_cast<std::size_t>(k)] = x0 - options.step;
      const double down = weighted_sum(f(probe), r);
      const double numeric = (up - down) / (2 * options.step);
      const double a = analytic.data()[static_cast<std::size_t>(k)];
      p.max_a = std::max(p.max_a, std::abs(a));
      p.max_n = std::max(p.max_n, std::abs(numeric));
      p.max_d = std::max(p.max_d, std::abs(a - numeric));
    }
  }
  double global = 0;
  for (const auto& p : probes) global = std::max({global, p.max_a, p.max_n});
  const double floor = std::max(1e-6, 1e-3 * global);
  double worst = 0;
  for (const auto& p : probes) worst = std::max(worst, p.max_d / std::max({p.max_a, p.max_n, floor}));
  return worst;
}

bool GradcheckReport::all_pass() const {
  return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.pass; });
}

std::string GradcheckReport::to_text() const {
  std::size_t w = 2;
  for (const auto& r : rows) w = std::max(w, r.op.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %13s  %7s  %s\n", static_cast<int>(w), "op", "max rel error", "probes", "result");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %13.3e  %7lld  %s\n", static_cast<int>(w), r.op.c_str(), r.max_rel_error,
                  static_cast<long long>(r.probes), r.pass ? "PASS" : "FAIL");
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "tolerance %.1e, %.1f s, %s\n", tolerance, seconds, all_pass() ? "all passed" : "FAILED");
  out += buf;
  return out;
}

std::string GradcheckReport::to_csv() const {
  std::string out = "op,max_rel_error,probes,pass\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6e,%lld,%d\n", r.op.c_str(), r.max_rel_error, static_cast<long long>(r.probes),
                  r.pass ? 1 : 0);
    out += buf;
  }
  return out;
}

std::vector<std::string> gradcheck_op_names() {
  return {"conv2d",       "conv2d_transposed", "instance_norm", "relu",           "leaky_relu",  "tanh",
          "add",          "sub",               "mul",           "scale",          "add_scalar",  "sum",
          "mean",         "abs_mean",          "sq_mean",       "downsample_avg", "reflect_pad", "concat_batch",
          "slice_batch",  "spectral_normalize"};
}

GradcheckReport run_gradcheck(const GradcheckOptions& options, const std::string& fault_op) {
  if (!fault_op.empty()) {
    const auto names = gradcheck_op_names();
    if (std::find(names.begin(), names.end(), fault_op) == names.end()) {
      throw Error("gradcheck: unknown op '" + fault_op + "'");
    }
  }
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report;
  report.tolerance = options.tolerance;
  std::mt19937_64 rng(options.seed);
  auto rnd = [&](const Shape& s) { return random_tensor(s, rng); };

  auto check = [&](const std::string& name, const GradcheckFn& f, const std::vector<T64>& inputs) {
    GradcheckRow row;
    row.op = name;
    {
      std::optional<ScopedGradientFault> fault;
      if (!fault_op.empty()) fault.emplace(fault_op);
      row.max_rel_error = gradcheck_error(f, inputs, options);
    }
    for (const auto& t : inputs) {
      row.probes += options.max_probes > 0 ? std::min<std::int64_t>(t.numel(), options.max_probes) : t.numel();
    }
    row.pass = std::isfinite(row.max_rel_error) && row.max_rel_error < options.tolerance;
    report.rows.push_back(row);
  };

  check("conv2d k4 s2 p1", [](const auto& in) { return conv2d(in[0], in[1], in[2], 2, 1); },
        {rnd({2, 3, 8, 8}), rnd({4, 3, 4, 4}), rnd({4})});
  check("conv2d k3 s1 p1 (direct)",
        [](const auto& in) { return conv2d(in[0], in[1], in[2], 1, 1, ConvPath::kDirect); },
        {rnd({1, 2, 6, 5}), rnd({3, 2, 3, 3}), rnd({3})});
  check("conv2d_transposed k4 s2 p1", [](const auto& in) { return conv2d_transposed(in[0], in[1], in[2], 2, 1); },
        {rnd({2, 4, 4, 4}), rnd({4, 3, 4, 4}), rnd({3})});
  check("instance_norm",
        [](const auto& in) { return instance_norm(in[0], InstanceNormState<double>{in[1], in[2]}); },
        {rnd({2, 3, 5, 4}), rnd({3}), rnd({3})});
  check("relu", [](const auto& in) { return relu(in[0]); }, {rnd({2, 3, 4, 4})});
  check("leaky_relu", [](const auto& in) { return leaky_relu(in[0], 0.2); }, {rnd({2, 3, 4, 4})});
  check("tanh", [](const auto& in) { return tanh(in[0]); }, {rnd({2, 3, 4, 4})});
  check("add (broadcast)", [](const auto& in) { return add(in[0], in[1]); }, {rnd({2, 3, 4, 4}), rnd({1, 3, 1, 4})});
  check("sub (broadcast)", [](const auto& in) { return sub(in[0], in[1]); }, {rnd({2, 3, 4, 4}), rnd({3, 1, 1})});
  check("mul (broadcast)", [](const auto& in) { return mul(in[0], in[1]); }, {rnd({2, 3, 4, 4}), rnd({2, 1, 4, 1})});
  check("scale", [](const auto& in) { return scale(in[0], 1.7); }, {rnd({3, 4})});
  check("add_scalar", [](const auto& in) { return add_scalar(in[0], -0.3); }, {rnd({3, 4})});
  check("sum", [](const auto& in) { return sum(in[0]); }, {rnd({2, 3, 4})});
  check("mean", [](const auto& in) { return mean(in[0]); }, {rnd({2, 3, 4})});
  check("abs_mean", [](const auto& in) { return abs_mean(in[0]); }, {rnd({2, 3, 4})});
  check("sq_mean", [](const auto& in) { return sq_mean(in[0]); }, {rnd({2, 3, 4})});
  check("downsample_avg", [](const auto& in) { return downsample_avg(in[0], 2); }, {rnd({2, 3, 8, 6})});
  check("reflect_pad", [](const auto& in) { return reflect_pad(in[0], 1); }, {rnd({1, 2, 4, 5})});
  check("concat_batch",
        [](const auto& in) { return concat_batch<double>(std::span<const T64>(in.data(), 2)); },
        {rnd({1, 2, 3, 3}), rnd({2, 2, 3, 3})});
  check("slice_batch", [](const auto& in) { return slice_batch(in[0], 1, 2); }, {rnd({4, 2, 3, 3})});
  {
    const T64 w = rnd({5, 3, 2, 2});
    SpectralNormState st = make_spectral_state(w.shape(), 11);
    st.n_power_iterations = 30;
    spectral_normalize(w, st, true);
    check("spectral_normalize", [st](const auto& in) mutable { return spectral_normalize(in[0], st, false); }, {w});
  }
  check("residual_block",
        [](const auto& in) {
          ResidualBlockWeights<double> w{in[1], in[2], {in[3], in[4]}, in[5], in[6], {in[7], in[8]}};
          return residual_block(in[0], ResidualBlockConfig{3}, w);
        },
        {rnd({1, 3, 5, 5}), rnd({3, 3, 3, 3}), rnd({3}), rnd({3}), rnd({3}), rnd({3, 3, 3, 3}), rnd({3}), rnd({3}),
         rnd({3})});

  // Loss terms.
  check("loss adversarial_d",
        [](const auto& in) {
          return adversarial_loss_d<double>(std::span<const T64>(in.data(), 2), std::span<const T64>(in.data() + 2, 2));
        },
        {rnd({2, 1, 4, 4}), rnd({2, 1, 2, 2}), rnd({2, 1, 4, 4}), rnd({2, 1, 2, 2})});
  check("loss adversarial_g",
        [](const auto& in) { return adversarial_loss_g<double>(std::span<const T64>(in.data(), 2)); },
        {rnd({2, 1, 4, 4}), rnd({2, 1, 2, 2})});
  check("loss feature_matching",
        [](const auto& in) {
          FeaturePyramid<double> real{{in[0], in[1]}, {in[2], in[3]}};
          FeaturePyramid<double> fake{{in[4], in[5]}, {in[6], in[7]}};
          return feature_matching_loss(real, fake);
        },
        {rnd({1, 2, 4, 4}), rnd({1, 1, 2, 2}), rnd({1, 2, 2, 2}), rnd({1, 1, 1, 1}), rnd({1, 2, 4, 4}),
         rnd({1, 1, 2, 2}), rnd({1, 2, 2, 2}), rnd({1, 1, 1, 1})});
  check("loss pixel", [](const auto& in) { return pixel_loss(in[0], in[1]); }, {rnd({1, 3, 6, 6}), rnd({1, 3, 6, 6})});
  const FeatureExtractor extractor = FeatureExtractor::seeded(5);
  const LossWeights lw;
  check("loss perceptual",
        [&](const auto& in) { return perceptual_loss(in[0], in[1], extractor, lw.perceptual_coeffs); },
        {rnd({1, 3, 32, 32}), rnd({1, 3, 32, 32})});
  check("loss total",
        [&](const auto& in) { return total_generator_loss(GeneratorLossParts<double>{in[0], in[1], in[2], in[3]}, lw); },
        {rnd({1}), rnd({1}), rnd({1}), rnd({1})});

  // Full networks on 32x32 inputs with narrow channels.
  {
    GeneratorConfig gc;
    gc.encoder_channels = {4, 4, 4, 4, 4};
    gc.n_residual_blocks = 1;
    const auto w = init_generator(gc, 3);
    std::vector<std::string> names;
    std::vector<T64> inputs{rnd({1, 3, 32, 32})};
    for (const auto& [n, t] : w) {
      names.push_back(n);
      inputs.push_back(rnd(t.shape()));
    }
    check("generator 32x32",
          [&](const auto& in) {
            WeightMap<double> m;
            for (std::size_t i = 0; i < names.size(); ++i) m.emplace(names[i], in[i + 1]);
            return generator_forward(in[0], m, gc).image;
          },
          inputs);
  }
  {
    DiscriminatorConfig dc;
    dc.base_channels = 4;
    const ModelWeights wf = init_discriminator(dc, 4);
    SpectralStates states = init_spectral_states(wf, 4);
    const auto w = weights_cast<double>(wf);
    const T64 x = rnd({1, 3, 32, 32});
    {
      DiscriminatorOptions warm{&states, true, {}};
      for (int i = 0; i < 5; ++i) discriminator_forward(x, w, dc, warm);
    }
    std::vector<std::string> names;
    std::vector<T64> inputs{x};
    for (const auto& [n, t] : w) {
      names.push_back(n);
      inputs.push_back(t);
    }
    check("discriminator 32x32",
          [&](const auto& in) {
            WeightMap<double> m;
            for (std::size_t i = 0; i < names.size(); ++i) m.emplace(names[i], in[i + 1]);
            DiscriminatorOptions opts{&states, false, {}};
            const auto scales = discriminator_forward(in[0], m, dc, opts);
            std::mt19937_64 r(99);
            T64 total;
            for (const auto& s : scales) {
              for (const auto& feat : s.features) {
                const T64 term = sum(mul(feat, random_tensor(feat.shape(), r)));
                total = total.defined() ? add(total, term) : term;
              }
            }
            return total;
          },
          inputs);
  }

  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace exposura
