#pragma once

#include <vector>

#include "exposura/metrics.hpp"

namespace exposura::testing {

inline constexpr int kCorpusScenes = 40;
inline constexpr int kCorpusExtent = 480;
inline constexpr std::uint64_t kCorpusSeed = 1000;

/// The images the bundled pristine model was fitted on, as they read back
/// from 8-bit PNG: each scene followed by its mirror image.
std::vector<ImageBuffer> pristine_corpus();

/// Scenes outside the corpus standing in for test photographs.
ImageBuffer test_photo(int k);

/// data/niqe/pristine_synthetic.expw from the source tree.
PristineModel bundled_pristine_model();

}  // namespace exposura::testing
