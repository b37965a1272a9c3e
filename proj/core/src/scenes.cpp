#include <algorithm>
#include <cmath>
#include <random>

#include "exposura/imaging.hpp"

namespace exposura {

namespace {

// Bilinearly interpolated lattice noise at one octave.
class ValueNoise {
 public:
  ValueNoise(int cells, std::mt19937_64& rng) : cells_(cells), grid_(static_cast<std::size_t>((cells + 1) * (cells + 1))) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for (auto& g : grid_) g = u(rng);
  }
  float operator()(float x, float y) const {
    const float fx = x * static_cast<float>(cells_), fy = y * static_cast<float>(cells_);
    const int ix = std::min(static_cast<int>(fx), cells_ - 1), iy = std::min(static_cast<int>(fy), cells_ - 1);
    const float tx = smooth(fx - static_cast<float>(ix)), ty = smooth(fy - static_cast<float>(iy));
    const float a = at(ix, iy), b = at(ix + 1, iy), c = at(ix, iy + 1), d = at(ix + 1, iy + 1);
    return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
  }

 private:
  static float smooth(float t) { return t * t * (3 - 2 * t); }
  float at(int x, int y) const { return grid_[static_cast<std::size_t>(y * (cells_ + 1) + x)]; }
  int cells_;
  std::vector<float> grid_;
};

}  // namespace

ImageBuffer synthesize_scene(int width, int height, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);

  // Sky-to-ground gradient in two random tints.
  float top[3], bottom[3];
  for (int c = 0; c < 3; ++c) {
    top[c] = 0.35f + 0.4f * u(rng);
    bottom[c] = 0.15f + 0.35f * u(rng);
  }
  ImageBuffer img(width, height, 3);
  for (int y = 0; y < height; ++y) {
    const float t = static_cast<float>(y) / static_cast<float>(std::max(1, height - 1));
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = top[c] * (1 - t) + bottom[c] * t;
  }

  // Soft-edged ellipses and boxes.
  const int n_shapes = 5 + static_cast<int>(u(rng) * 6);
  for (int s = 0; s < n_shapes; ++s) {
    const float cx = u(rng), cy = u(rng);
    const float rx = 0.05f + 0.25f * u(rng), ry = 0.05f + 0.25f * u(rng);
    const bool box = u(rng) < 0.4f;
    const float soft = 0.01f + 0.05f * u(rng);
    float col[3];
    for (float& c : col) c = 0.05f + 0.85f * u(rng);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const float dx = (static_cast<float>(x) / width - cx) / rx;
        const float dy = (static_cast<float>(y) / height - cy) / ry;
        const float d = box ? std::max(std::abs(dx), std::abs(dy)) : std::sqrt(dx * dx + dy * dy);
        const float a = std::clamp((1.0f - d) / (soft / std::min(rx, ry)), 0.0f, 1.0f);
        if (a <= 0) continue;
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = img.at(x, y, c) * (1 - a) + col[c] * a;
      }
    }
  }

  // 1/f texture: octaves with amplitude halving as frequency doubles.
  std::vector<ValueNoise> octaves;
  for (int cells = 4; cells <= std::max(width, height) / 2; cells *= 2) octaves.emplace_back(cells, rng);
  const float strength = 0.08f + 0.08f * u(rng);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      float n = 0, amp = 1;
      for (const auto& o : octaves) {
        n += amp * o(static_cast<float>(x) / width, static_cast<float>(y) / height);
        amp *= 0.5f;
      }
      const float lum = 1.0f + strength * n;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = std::clamp(img.at(x, y, c) * lum, 0.0f, 1.0f);
    }
  }
  return img;
}

}  // namespace exposura
