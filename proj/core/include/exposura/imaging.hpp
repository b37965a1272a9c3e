#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "exposura/tensor.hpp"

namespace exposura {

/// Interleaved H x W x C image, C in {1, 3}, values clamped to [0, 1]
/// (sRGB-encoded when C == 3).
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, int c, float fill = 0.0f);
  /// Clamps `values` into [0, 1]; NaN becomes 0.
  ImageBuffer(int w, int h, int c, std::vector<float> values);

  bool empty() const { return data.empty(); }
  float& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  bool same_size(const ImageBuffer& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

/// Version tag written to metadata of anything produced by ev_shift.
inline constexpr std::string_view kEvSimulatorVersion = "ev-sim v1";

float srgb_decode(float v);
float srgb_encode(float v);
ImageBuffer srgb_decode(const ImageBuffer& img);
ImageBuffer srgb_encode(const ImageBuffer& img);

/// Linear-light exposure change by 2^ev with hard clipping, an explicit
/// stand-in for an editor's exposure slider. ev == 0 returns the input.
ImageBuffer ev_shift(const ImageBuffer& img, double ev);

/// Rec.601 luma of a 3-channel image (copy for 1-channel input).
ImageBuffer to_gray(const ImageBuffer& img);

ImageBuffer flip_horizontal(const ImageBuffer& img);
ImageBuffer crop(const ImageBuffer& img, int x, int y, int w, int h);
/// Mirror-extends the bottom and right edges.
ImageBuffer pad_reflect(const ImageBuffer& img, int bottom, int right);

// I/O. ".png" is 8-bit gray/RGB (alpha dropped); ".imgf" is the raw float
// format: "IMGF" | u32 version (1) | u32 w, h, c | f32 planes, little-endian.
ImageBuffer load_image(const std::filesystem::path& path);
void save_image(const ImageBuffer& img, const std::filesystem::path& path);
bool is_image_file(const std::filesystem::path& path);

/// Stacks 3-channel images into an (N, 3, H, W) tensor mapped to [-1, 1].
template <typename T>
Tensor<T> images_to_tensor(std::span<const ImageBuffer> images);
/// Batch item `index` of an (N, 3, H, W) tensor in [-1, 1], mapped back to [0, 1].
template <typename T>
ImageBuffer tensor_to_image(const Tensor<T>& t, std::int64_t index = 0);

/// Same window cut from both images.
struct CropPair {
  ImageBuffer input;
  ImageBuffer target;
};
CropPair random_crop_pair(const ImageBuffer& input, const ImageBuffer& target, int size, std::mt19937_64& rng);

// Dataset layout: <root>/input/<stem>_<tag>.<ext> paired with
// <root>/target/<stem>.<ext>. Tags are "0", "P<ev>" or "N<ev>".
inline constexpr std::array<double, 9> kEvTags{-2.5, -2.0, -1.5, -1.0, 0.0, 1.0, 1.5, 2.0, 2.5};

struct EvTag {
  std::string stem;
  double ev = 0.0;
};
std::optional<EvTag> parse_ev_tag(std::string_view file_stem);
std::string format_ev_tag(double ev);

enum class Split { kTrain, kVal, kTest };

struct DatasetRecord {
  std::filesystem::path input;
  std::filesystem::path target;
  double ev = 0.0;
};

struct DatasetIndex {
  std::vector<DatasetRecord> records;
  Split split = Split::kTrain;
};

struct DatasetLayout {
  std::string input_dir = "input";
  std::string target_dir = "target";
};

/// Records sorted by input path. All pairing problems (missing target, bad
/// tag, unused target) are reported together in one DataError.
DatasetIndex index_dataset(const std::filesystem::path& root, const DatasetLayout& layout = {},
                           Split split = Split::kTrain);

/// Deterministic procedural scene (sky gradient, soft shapes, 1/f texture)
/// used for fixtures, smoke runs and the bundled pristine model.
ImageBuffer synthesize_scene(int width, int height, std::uint64_t seed);

}  // namespace exposura
