#include "exposura/imaging.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "exposura/error.hpp"
#include "exposura/fileio.hpp"

namespace exposura {

namespace {

float clamp01(float v) {
  if (!(v > 0.0f)) return 0.0f;
  return v < 1.0f ? v : 1.0f;
}

void check_dims(int w, int h, int c) {
  if (w < 1 || h < 1 || (c != 1 && c != 3)) {
    throw ShapeError("image must be at least 1x1 with 1 or 3 channels, got " + std::to_string(w) + "x" +
                     std::to_string(h) + "x" + std::to_string(c));
  }
}

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return e;
}

// Mirror index into [0, n) for any offset, period 2(n - 1).
int mirror(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

ImageBuffer::ImageBuffer(int w, int h, int c, float fill) : width(w), height(h), channels(c) {
  check_dims(w, h, c);
  data.assign(static_cast<std::size_t>(w) * h * c, clamp01(fill));
}

ImageBuffer::ImageBuffer(int w, int h, int c, std::vector<float> values)
    : width(w), height(h), channels(c), data(std::move(values)) {
  check_dims(w, h, c);
  if (data.size() != static_cast<std::size_t>(w) * h * c) {
    throw ShapeError("image " + std::to_string(w) + "x" + std::to_string(h) + "x" + std::to_string(c) + " needs " +
                     std::to_string(static_cast<std::size_t>(w) * h * c) + " values, got " +
                     std::to_string(data.size()));
  }
  for (auto& v : data) v = clamp01(v);
}

float srgb_decode(float v) {
  if (v <= 0.04045f) return v / 12.92f;
  return static_cast<float>(std::pow((static_cast<double>(v) + 0.055) / 1.055, 2.4));
}

float srgb_encode(float v) {
  if (v <= 0.0031308f) return v * 12.92f;
  return static_cast<float>(1.055 * std::pow(static_cast<double>(v), 1.0 / 2.4) - 0.055);
}

ImageBuffer srgb_decode(const ImageBuffer& img) {
  ImageBuffer out = img;
  for (auto& v : out.data) v = clamp01(srgb_decode(v));
  return out;
}

ImageBuffer srgb_encode(const ImageBuffer& img) {
  ImageBuffer out = img;
  for (auto& v : out.data) v = clamp01(srgb_encode(v));
  return out;
}

ImageBuffer ev_shift(const ImageBuffer& img, double ev) {
  if (img.channels != 3) throw ShapeError("ev_shift: expected a 3-channel image");
  if (ev == 0.0) return img;
  const double gain = std::exp2(ev);
  ImageBuffer out = img;
  for (auto& v : out.data) {
    const double lin = static_cast<double>(srgb_decode(v)) * gain;
    v = clamp01(srgb_encode(static_cast<float>(std::min(lin, 1.0))));
  }
  return out;
}

ImageBuffer to_gray(const ImageBuffer& img) {
  if (img.channels == 1) return img;
  ImageBuffer out(img.width, img.height, 1);
  for (std::size_t i = 0, n = static_cast<std::size_t>(img.width) * img.height; i < n; ++i) {
    const float* p = &img.data[i * 3];
    out.data[i] = clamp01(0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2]);
  }
  return out;
}

ImageBuffer flip_horizontal(const ImageBuffer& img) {
  ImageBuffer out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
  return out;
}

ImageBuffer crop(const ImageBuffer& img, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || w < 1 || h < 1 || x0 + w > img.width || y0 + h > img.height) {
    throw ShapeError("crop window out of bounds");
  }
  ImageBuffer out(w, h, img.channels);
  for (int y = 0; y < h; ++y) {
    const float* src = &img.data[(static_cast<std::size_t>(y0 + y) * img.width + x0) * img.channels];
    std::copy(src, src + static_cast<std::size_t>(w) * img.channels,
              out.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(y) * w * img.channels));
  }
  return out;
}

ImageBuffer pad_reflect(const ImageBuffer& img, int bottom, int right) {
  if (bottom < 0 || right < 0) throw ShapeError("pad_reflect: negative padding");
  ImageBuffer out(img.width + right, img.height + bottom, img.channels);
  for (int y = 0; y < out.height; ++y) {
    const int sy = mirror(y, img.height);
    for (int x = 0; x < out.width; ++x) {
      const int sx = mirror(x, img.width);
      for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(sx, sy, c);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PNG

namespace {

struct PngReadGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadGuard() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct PngWriteGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteGuard() { png_destroy_write_struct(&png, info ? &info : nullptr); }
};

struct MemReader {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos;
};

void png_read_mem(png_structp png, png_bytep out, png_size_t n) {
  auto* r = static_cast<MemReader*>(png_get_io_ptr(png));
  if (r->pos + n > r->bytes->size()) png_error(png, "unexpected end of data");
  std::memcpy(out, r->bytes->data() + r->pos, n);
  r->pos += n;
}

void png_write_mem(png_structp png, png_bytep in, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), in, in + n);
}

void png_flush_noop(png_structp) {}

[[noreturn]] void png_error_cb(png_structp png, png_const_charp msg) {
  (void)png;
  throw FormatError(std::string("png: ") + msg);
}

void png_warn_cb(png_structp, png_const_charp) {}

ImageBuffer decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw FormatError(name + ": not a PNG file");
  }
  PngReadGuard g;
  g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_cb, png_warn_cb);
  g.info = png_create_info_struct(g.png);
  MemReader reader{&bytes, 0};
  png_set_read_fn(g.png, &reader, png_read_mem);
  png_read_info(g.png, g.info);
  const int depth = png_get_bit_depth(g.png, g.info);
  const int color = png_get_color_type(g.png, g.info);
  if (depth == 16) throw FormatError(name + ": unsupported bit depth 16 (8-bit PNG only)");
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(g.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(g.png);
  if (png_get_valid(g.png, g.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(g.png);
  png_set_strip_alpha(g.png);
  png_read_update_info(g.png, g.info);
  const int w = static_cast<int>(png_get_image_width(g.png, g.info));
  const int h = static_cast<int>(png_get_image_height(g.png, g.info));
  const int c = png_get_channels(g.png, g.info);
  if (c != 1 && c != 3) throw FormatError(name + ": unsupported channel count " + std::to_string(c));
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(w) * h * c);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = pixels.data() + static_cast<std::size_t>(y) * w * c;
  png_read_image(g.png, rows.data());
  png_read_end(g.png, nullptr);
  std::vector<float> values(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) values[i] = static_cast<float>(pixels[i]) / 255.0f;
  return ImageBuffer(w, h, c, std::move(values));
}

std::vector<std::uint8_t> encode_png(const ImageBuffer& img) {
  PngWriteGuard g;
  g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_cb, png_warn_cb);
  g.info = png_create_info_struct(g.png);
  std::vector<std::uint8_t> out;
  png_set_write_fn(g.png, &out, png_write_mem, png_flush_noop);
  png_set_IHDR(g.png, g.info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(g.png, g.info);
  std::vector<std::uint8_t> pixels(img.data.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    // Round half up.
    pixels[i] = static_cast<std::uint8_t>(std::floor(clamp01(img.data[i]) * 255.0f + 0.5f));
  }
  for (int y = 0; y < img.height; ++y) {
    png_write_row(g.png, pixels.data() + static_cast<std::size_t>(y) * img.width * img.channels);
  }
  png_write_end(g.png, nullptr);
  return out;
}

// ---------------------------------------------------------------------------
// Raw float format

constexpr char kRawMagic[4] = {'I', 'M', 'G', 'F'};
constexpr std::uint32_t kRawVersion = 1;

ImageBuffer decode_raw(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  constexpr std::size_t header = 4 + 4 * 4;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kRawMagic, 4) != 0) {
    throw FormatError(name + ": not an IMGF raw image");
  }
  if (bytes.size() < header) throw FormatError(name + ": truncated IMGF header");
  std::uint32_t fields[4];
  std::memcpy(fields, bytes.data() + 4, sizeof(fields));
  if (fields[0] != kRawVersion) throw FormatError(name + ": unsupported IMGF version " + std::to_string(fields[0]));
  const int w = static_cast<int>(fields[1]), h = static_cast<int>(fields[2]), c = static_cast<int>(fields[3]);
  if (w < 1 || h < 1 || (c != 1 && c != 3)) throw FormatError(name + ": invalid IMGF dimensions");
  const std::size_t n = static_cast<std::size_t>(w) * h * c;
  if (bytes.size() != header + n * sizeof(float)) throw FormatError(name + ": IMGF payload size mismatch");
  std::vector<float> planar(n);
  std::memcpy(planar.data(), bytes.data() + header, n * sizeof(float));
  std::vector<float> interleaved(n);
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < plane; ++i) interleaved[i * c + ch] = planar[ch * plane + i];
  return ImageBuffer(w, h, c, std::move(interleaved));
}

std::vector<std::uint8_t> encode_raw(const ImageBuffer& img) {
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  std::vector<std::uint8_t> out(4 + 16 + img.data.size() * sizeof(float));
  std::memcpy(out.data(), kRawMagic, 4);
  const std::uint32_t fields[4] = {kRawVersion, static_cast<std::uint32_t>(img.width),
                                   static_cast<std::uint32_t>(img.height), static_cast<std::uint32_t>(img.channels)};
  std::memcpy(out.data() + 4, fields, sizeof(fields));
  std::vector<float> planar(img.data.size());
  for (int ch = 0; ch < img.channels; ++ch)
    for (std::size_t i = 0; i < plane; ++i) planar[ch * plane + i] = img.data[i * img.channels + ch];
  std::memcpy(out.data() + 20, planar.data(), planar.size() * sizeof(float));
  return out;
}

}  // namespace

bool is_image_file(const std::filesystem::path& path) {
  const auto e = lower_ext(path);
  return e == ".png" || e == ".imgf";
}

ImageBuffer load_image(const std::filesystem::path& path) {
  const auto ext = lower_ext(path);
  if (ext != ".png" && ext != ".imgf") {
    throw FormatError(path.string() + ": unsupported image container '" + ext + "'");
  }
  const auto bytes = read_file(path);
  return ext == ".png" ? decode_png(bytes, path.string()) : decode_raw(bytes, path.string());
}

void save_image(const ImageBuffer& img, const std::filesystem::path& path) {
  check_dims(img.width, img.height, img.channels);
  const auto ext = lower_ext(path);
  if (ext == ".png") {
    write_file_atomic(path, encode_png(img));
  } else if (ext == ".imgf") {
    write_file_atomic(path, encode_raw(img));
  } else {
    throw FormatError(path.string() + ": unsupported image container '" + ext + "'");
  }
}

template <typename T>
Tensor<T> images_to_tensor(std::span<const ImageBuffer> images) {
  if (images.empty()) throw ShapeError("images_to_tensor: no images");
  const auto& first = images[0];
  for (const auto& im : images) {
    if (im.channels != 3 || !im.same_size(first)) throw ShapeError("images_to_tensor: images must share one 3-channel size");
  }
  const std::int64_t n = static_cast<std::int64_t>(images.size());
  const std::int64_t h = first.height, w = first.width;
  std::vector<T> v(static_cast<std::size_t>(n * 3 * h * w));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
          v[static_cast<std::size_t>(((i * 3 + c) * h + y) * w + x)] =
              static_cast<T>(images[static_cast<std::size_t>(i)].data[static_cast<std::size_t>((y * w + x) * 3 + c)]) *
                  T(2) -
              T(1);
  return Tensor<T>(Shape{n, 3, h, w}, std::move(v));
}

template <typename T>
ImageBuffer tensor_to_image(const Tensor<T>& t, std::int64_t index) {
  if (t.rank() != 4 || t.dim(1) != 3 || index < 0 || index >= t.dim(0)) {
    throw ShapeError("tensor_to_image: need an (N, 3, H, W) tensor, got " + shape_str(t.shape()));
  }
  const int h = static_cast<int>(t.dim(2)), w = static_cast<int>(t.dim(3));
  std::vector<float> v(static_cast<std::size_t>(h) * w * 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        v[(static_cast<std::size_t>(y) * w + x) * 3 + c] = static_cast<float>((t.at(index, c, y, x) + T(1)) / T(2));
  return ImageBuffer(w, h, 3, std::move(v));
}

template Tensor<float> images_to_tensor(std::span<const ImageBuffer>);
template Tensor<double> images_to_tensor(std::span<const ImageBuffer>);
template ImageBuffer tensor_to_image(const Tensor<float>&, std::int64_t);
template ImageBuffer tensor_to_image(const Tensor<double>&, std::int64_t);

CropPair random_crop_pair(const ImageBuffer& input, const ImageBuffer& target, int size, std::mt19937_64& rng) {
  if (!input.same_size(target)) throw ShapeError("random_crop_pair: input and target sizes differ");
  if (size < 1 || input.width < size || input.height < size) {
    throw ShapeError("random_crop_pair: image " + std::to_string(input.width) + "x" + std::to_string(input.height) +
                     " is smaller than crop " + std::to_string(size));
  }
  std::uniform_int_distribution<int> dx(0, input.width - size);
  std::uniform_int_distribution<int> dy(0, input.height - size);
  const int x = dx(rng);
  const int y = dy(rng);
  return CropPair{crop(input, x, y, size, size), crop(target, x, y, size, size)};
}

}  // namespace exposura
