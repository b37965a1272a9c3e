#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "exposura/tensor.hpp"

namespace exposura {

using GradcheckFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

struct GradcheckOptions {
  double step = 1e-5;        // central-difference step
  double tolerance = 1e-4;   // on the relative error below
  /// Entries probed per input tensor; 0 probes all of them.
  int max_probes = 0;
  std::uint64_t seed = 7;
};

/// Compares reverse-mode gradients of sum(f(inputs) * R), R fixed random,
/// with central differences at probed entries. Returns the worst over input
/// tensors of max|analytic - numeric| / max(|analytic|_inf, |numeric|_inf, floor)
/// where floor = max(1e-6, 1e-3 * largest gradient entry over all inputs), so
/// tensors whose true gradient vanishes (a bias ahead of a norm) compare
/// at the scale of the whole check.
double gradcheck_error(const GradcheckFn& f, const std::vector<Tensor<double>>& inputs, const GradcheckOptions& options);

struct GradcheckRow {
  std::string op;
  double max_rel_error = 0;
  bool pass = false;
  std::int64_t probes = 0;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  double tolerance = 0;
  double seconds = 0;
  bool all_pass() const;
  std::string to_text() const;
  std::string to_csv() const;
};

/// Every differentiable op, the five loss terms and the full generator and
/// discriminator (32x32 input, narrow channels). With `fault_op` set, that
/// op's backward is deliberately corrupted.
GradcheckReport run_gradcheck(const GradcheckOptions& options = {}, const std::string& fault_op = {});

/// Names accepted as `fault_op`.
std::vector<std::string> gradcheck_op_names();

}  // namespace exposura
