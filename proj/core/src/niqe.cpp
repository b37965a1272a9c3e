#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "exposura/checkpoint.hpp"
#include "exposura/error.hpp"
#include "exposura/metrics.hpp"

namespace exposura {

namespace {

struct Plane {
  int w = 0;
  int h = 0;
  std::vector<double> v;
  double& at(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
  double at(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

Plane gray_plane(const ImageBuffer& img) {
  const ImageBuffer g = to_gray(img);
  Plane p{g.width, g.height, std::vector<double>(g.data.size())};
  for (std::size_t i = 0; i < g.data.size(); ++i) p.v[i] = 255.0 * g.data[i];
  return p;
}

// 7x7 Gaussian (sigma 7/6), same-size output, replicated borders.
Plane gaussian_replicate(const Plane& src) {
  constexpr int kRadius = 3;
  std::array<double, 2 * kRadius + 1> k{};
  double s = 0;
  for (int i = -kRadius; i <= kRadius; ++i) {
    k[static_cast<std::size_t>(i + kRadius)] = std::exp(-(i * i) / (2.0 * (7.0 / 6.0) * (7.0 / 6.0)));
    s += k[static_cast<std::size_t>(i + kRadius)];
  }
  for (auto& x : k) x /= s;
  Plane tmp{src.w, src.h, std::vector<double>(src.v.size())};
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x) {
      double acc = 0;
      for (int i = -kRadius; i <= kRadius; ++i)
        acc += k[static_cast<std::size_t>(i + kRadius)] * src.at(std::clamp(x + i, 0, src.w - 1), y);
      tmp.at(x, y) = acc;
    }
  Plane out{src.w, src.h, std::vector<double>(src.v.size())};
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x) {
      double acc = 0;
      for (int i = -kRadius; i <= kRadius; ++i)
        acc += k[static_cast<std::size_t>(i + kRadius)] * tmp.at(x, std::clamp(y + i, 0, src.h - 1));
      out.at(x, y) = acc;
    }
  return out;
}

double cubic(double x) {
  const double a = std::abs(x), a2 = a * a, a3 = a2 * a;
  if (a <= 1) return 1.5 * a3 - 2.5 * a2 + 1;
  if (a <= 2) return -0.5 * a3 + 2.5 * a2 - 4 * a + 2;
  return 0;
}

// Antialiased bicubic x0.5 along one axis, symmetric borders.
std::vector<double> halve_1d(const std::vector<double>& in) {
  const int n = static_cast<int>(in.size());
  const int m = (n + 1) / 2;
  std::vector<double> out(static_cast<std::size_t>(m));
  for (int o = 0; o < m; ++o) {
    const double u = 2.0 * (o + 1) - 0.5;  // 1-based source coordinate
    const int first = static_cast<int>(std::floor(u - 4.0));
    double acc = 0, wsum = 0;
    for (int j = first; j <= first + 9; ++j) {
      const double w = 0.5 * cubic(0.5 * (u - j));
      if (w == 0) continue;
      int idx = j - 1;
      const int period = 2 * n;
      idx = ((idx % period) + period) % period;
      if (idx >= n) idx = period - 1 - idx;
      acc += w * in[static_cast<std::size_t>(idx)];
      wsum += w;
    }
    out[static_cast<std::size_t>(o)] = acc / wsum;
  }
  return out;
}

Plane halve(const Plane& p) {
  Plane rows{(p.w + 1) / 2, p.h, {}};
  rows.v.resize(static_cast<std::size_t>(rows.w) * rows.h);
  std::vector<double> line(static_cast<std::size_t>(p.w));
  for (int y = 0; y < p.h; ++y) {
    for (int x = 0; x < p.w; ++x) line[static_cast<std::size_t>(x)] = p.at(x, y);
    const auto r = halve_1d(line);
    for (int x = 0; x < rows.w; ++x) rows.at(x, y) = r[static_cast<std::size_t>(x)];
  }
  Plane out{rows.w, (p.h + 1) / 2, {}};
  out.v.resize(static_cast<std::size_t>(out.w) * out.h);
  std::vector<double> col(static_cast<std::size_t>(p.h));
  for (int x = 0; x < rows.w; ++x) {
    for (int y = 0; y < p.h; ++y) col[static_cast<std::size_t>(y)] = rows.at(x, y);
    const auto c = halve_1d(col);
    for (int y = 0; y < out.h; ++y) out.at(x, y) = c[static_cast<std::size_t>(y)];
  }
  return out;
}

// 18 features of one MSCN block; circular shifts stay inside the block.
void block_features(const Plane& mscn, int x0, int y0, int size, double* out) {
  std::vector<double> block(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) block[static_cast<std::size_t>(y) * size + x] = mscn.at(x0 + x, y0 + y);
  const AggdFit f = fit_aggd(block);
  out[0] = f.alpha;
  out[1] = (f.sigma_left + f.sigma_right) / 2;
  constexpr std::array<std::array<int, 2>, 4> kShifts{{{0, 1}, {1, 0}, {1, 1}, {1, -1}}};
  std::vector<double> prod(block.size());
  for (std::size_t s = 0; s < kShifts.size(); ++s) {
    const int dy = kShifts[s][0], dx = kShifts[s][1];
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const int sy = ((y - dy) % size + size) % size, sx = ((x - dx) % size + size) % size;
        prod[static_cast<std::size_t>(y) * size + x] =
            block[static_cast<std::size_t>(y) * size + x] * block[static_cast<std::size_t>(sy) * size + sx];
      }
    const AggdFit p = fit_aggd(prod);
    const double a = p.alpha;
    const double mean = (p.sigma_right - p.sigma_left) * std::exp(std::lgamma(2 / a) - std::lgamma(1 / a));
    double* o = out + 2 + 4 * s;
    o[0] = a;
    o[1] = mean;
    o[2] = p.sigma_left;
    o[3] = p.sigma_right;
  }
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& rows) {
  const Eigen::RowVectorXd mean = rows.colwise().mean();
  const Eigen::MatrixXd centered = rows.rowwise() - mean;
  if (rows.rows() < 2) return Eigen::MatrixXd::Zero(rows.cols(), rows.cols());
  return centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
}

}  // namespace

Eigen::MatrixXd niqe_patch_features(const ImageBuffer& gray, int patch_size, bool sharp_only,
                                    double sharpness_threshold) {
  if (patch_size < 8 || patch_size % 2 != 0) {
    throw ShapeError("niqe: patch size must be even and >= 8, got " + std::to_string(patch_size));
  }
  Plane im = gray_plane(gray);
  const int bx = im.w / patch_size, by = im.h / patch_size;
  if (bx * by == 0) {
    throw ShapeError("niqe: image " + std::to_string(im.w) + "x" + std::to_string(im.h) + " smaller than one " +
                     std::to_string(patch_size) + "px patch");
  }
  Plane cropped{bx * patch_size, by * patch_size, {}};
  cropped.v.resize(static_cast<std::size_t>(cropped.w) * cropped.h);
  for (int y = 0; y < cropped.h; ++y)
    for (int x = 0; x < cropped.w; ++x) cropped.at(x, y) = im.at(x, y);
  im = std::move(cropped);

  const int n_blocks = bx * by;
  Eigen::MatrixXd feats(n_blocks, kNiqeFeatures);
  std::vector<bool> valid(static_cast<std::size_t>(n_blocks), true);
  std::vector<double> sharpness(static_cast<std::size_t>(n_blocks), 0.0);
  for (int scale = 0; scale < 2; ++scale) {
    const Plane mu = gaussian_replicate(im);
    Plane sq{im.w, im.h, im.v};
    for (auto& v : sq.v) v *= v;
    const Plane mu_sq = gaussian_replicate(sq);
    Plane mscn{im.w, im.h, std::vector<double>(im.v.size())};
    Plane sigma{im.w, im.h, std::vector<double>(im.v.size())};
    for (std::size_t i = 0; i < im.v.size(); ++i) {
      sigma.v[i] = std::sqrt(std::abs(mu_sq.v[i] - mu.v[i] * mu.v[i]));
      mscn.v[i] = (im.v[i] - mu.v[i]) / (sigma.v[i] + 1.0);
    }
    const int size = patch_size >> scale;
    for (int b = 0; b < n_blocks; ++b) {
      const int x0 = (b % bx) * size, y0 = (b / bx) * size;
      if (scale == 0) {
        double s = 0;
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) s += sigma.at(x0 + x, y0 + y);
        sharpness[static_cast<std::size_t>(b)] = s / (size * size);
      }
      if (!valid[static_cast<std::size_t>(b)]) continue;
      double row[18];
      try {
        block_features(mscn, x0, y0, size, row);
      } catch (const NumericError&) {
        valid[static_cast<std::size_t>(b)] = false;
        continue;
      }
      for (int k = 0; k < 18; ++k) feats(b, scale * 18 + k) = row[k];
    }
    if (scale == 0) im = halve(im);
  }

  const double max_sharp = *std::max_element(sharpness.begin(), sharpness.end());
  std::vector<int> keep;
  for (int b = 0; b < n_blocks; ++b) {
    if (!valid[static_cast<std::size_t>(b)] || !feats.row(b).allFinite()) continue;
    if (sharp_only && !(sharpness[static_cast<std::size_t>(b)] > sharpness_threshold * max_sharp)) continue;
    keep.push_back(b);
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(keep.size()), kNiqeFeatures);
  for (std::size_t i = 0; i < keep.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = feats.row(keep[i]);
  return out;
}

PristineModel fit_pristine(std::span<const ImageBuffer> images, int patch_size, double sharpness_threshold) {
  if (images.empty()) throw DataError("fit_pristine: no images");
  std::vector<Eigen::MatrixXd> parts;
  Eigen::Index total = 0;
  for (const auto& img : images) {
    parts.push_back(niqe_patch_features(img, patch_size, true, sharpness_threshold));
    total += parts.back().rows();
  }
  if (total < 2) throw DataError("fit_pristine: fewer than two usable patches");
  Eigen::MatrixXd all(total, kNiqeFeatures);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    all.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  PristineModel m;
  m.mean = all.colwise().mean().transpose();
  m.cov = covariance(all);
  m.patch_size = patch_size;
  m.sharpness_threshold = sharpness_threshold;
  return m;
}

double niqe(const ImageBuffer& image, const PristineModel& model) {
  if (model.mean.size() != kNiqeFeatures || model.cov.rows() != kNiqeFeatures || model.cov.cols() != kNiqeFeatures) {
    throw FormatError("niqe: pristine model must hold a 36-vector and a 36x36 covariance");
  }
  const int bx = image.width / model.patch_size, by = image.height / model.patch_size;
  if (bx * by < 2) {
    throw ShapeError("niqe: image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                     " holds fewer than two " + std::to_string(model.patch_size) + "px patches");
  }
  const Eigen::MatrixXd feats = niqe_patch_features(image, model.patch_size, false);
  if (feats.rows() < 2) throw NumericError("niqe: fewer than two patches with defined statistics");
  const Eigen::VectorXd mu = feats.colwise().mean().transpose();
  const Eigen::MatrixXd cov = covariance(feats);
  const Eigen::VectorXd d = model.mean - mu;
  const Eigen::MatrixXd pooled = (model.cov + cov) / 2.0;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(pooled);
  const Eigen::VectorXd lambda = eig.eigenvalues();
  const double tol = kNiqeFeatures * std::numeric_limits<double>::epsilon() * lambda.cwiseAbs().maxCoeff();
  const Eigen::VectorXd proj = eig.eigenvectors().transpose() * d;
  double q = 0;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) > tol) q += proj(i) * proj(i) / lambda(i);
  }
  return std::sqrt(q);
}

void save_pristine_model(const PristineModel& model, const std::filesystem::path& path) {
  if (model.mean.size() != kNiqeFeatures || model.cov.rows() != kNiqeFeatures) {
    throw ShapeError("save_pristine_model: expected a 36-dim model");
  }
  ModelWeights w;
  // each double is stored as a float plus a float remainder
  auto split = [](const double* src, std::size_t n, std::vector<float>& hi, std::vector<float>& lo) {
    hi.resize(n);
    lo.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      hi[i] = static_cast<float>(src[i]);
      lo[i] = static_cast<float>(src[i] - static_cast<double>(hi[i]));
    }
  };
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cov_rm = model.cov;
  std::vector<float> mean, mean_lo, cov, cov_lo;
  split(model.mean.data(), kNiqeFeatures, mean, mean_lo);
  split(cov_rm.data(), kNiqeFeatures * kNiqeFeatures, cov, cov_lo);
  w.emplace("niqe.mean", Tensor<float>({kNiqeFeatures}, std::move(mean)));
  w.emplace("niqe.mean_lo", Tensor<float>({kNiqeFeatures}, std::move(mean_lo)));
  w.emplace("niqe.cov", Tensor<float>({kNiqeFeatures, kNiqeFeatures}, std::move(cov)));
  w.emplace("niqe.cov_lo", Tensor<float>({kNiqeFeatures, kNiqeFeatures}, std::move(cov_lo)));
  w.emplace("niqe.meta", Tensor<float>({2}, std::vector<float>{static_cast<float>(model.patch_size),
                                                              static_cast<float>(model.sharpness_threshold)}));
  save_weights(w, path);
}

PristineModel load_pristine_model(const std::filesystem::path& path) {
  const ModelWeights w = load_weights(path);
  for (const char* key : {"niqe.mean", "niqe.mean_lo", "niqe.cov", "niqe.cov_lo", "niqe.meta"}) {
    if (!w.contains(key)) throw FormatError(path.string() + ": not a pristine model (missing " + key + ")");
  }
  const auto& mean = w.at("niqe.mean");
  const auto& cov = w.at("niqe.cov");
  const auto& mean_lo = w.at("niqe.mean_lo");
  const auto& cov_lo = w.at("niqe.cov_lo");
  const auto& meta = w.at("niqe.meta");
  if (mean.shape() != Shape{kNiqeFeatures} || cov.shape() != Shape{kNiqeFeatures, kNiqeFeatures} ||
      mean_lo.shape() != mean.shape() || cov_lo.shape() != cov.shape() || meta.numel() != 2) {
    throw FormatError(path.string() + ": pristine model tensors have unexpected shapes");
  }
  PristineModel m;
  m.mean.resize(kNiqeFeatures);
  m.cov.resize(kNiqeFeatures, kNiqeFeatures);
  for (int i = 0; i < kNiqeFeatures; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    m.mean(i) = static_cast<double>(mean.data()[ui]) + static_cast<double>(mean_lo.data()[ui]);
    for (int j = 0; j < kNiqeFeatures; ++j) {
      const auto k = static_cast<std::size_t>(i * kNiqeFeatures + j);
      m.cov(i, j) = static_cast<double>(cov.data()[k]) + static_cast<double>(cov_lo.data()[k]);
    }
  }
  m.patch_size = static_cast<int>(meta.data()[0]);
  m.sharpness_threshold = meta.data()[1];
  return m;
}

}  // namespace exposura
