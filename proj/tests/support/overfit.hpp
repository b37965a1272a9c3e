#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "exposura/trainer.hpp"

namespace exposura::testing {

struct OverfitResult {
  int steps = 0;
  double seconds = 0;
  // Over the 8 shifted pairs (EV -1 and +1 of 4 scenes).
  double l1_start = 0;
  double l1_final = 0;
  double psnr_start = 0;
  double psnr_final = 0;
  // Final mean L1 to target, EV 0 inputs vs shifted inputs.
  double l1_identity = 0;
  double l1_shifted = 0;
  std::vector<LossRecord> losses;
  std::uint64_t generator_hash = 0;

  std::string to_json() const;
};

/// 4 scenes x EV {-1, 0, +1}, 64x64, default network and optimizer.
std::vector<TrainingPair> overfit_pairs();
OverfitResult run_overfit(int steps, std::uint64_t seed = 0);

}  // namespace exposura::testing
