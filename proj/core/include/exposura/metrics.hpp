#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <limits>
#include <span>

#include "exposura/imaging.hpp"

namespace exposura {

/// Returned by psnr() for identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE) over every channel and pixel jointly.
double psnr(const ImageBuffer& a, const ImageBuffer& b, double peak = 1.0);

/// Mean SSIM on Rec.601 luma: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, over positions where the window fits.
double ssim(const ImageBuffer& a, const ImageBuffer& b);

struct AggdFit {
  double alpha = 0;
  double sigma_left = 0;
  double sigma_right = 0;
};

/// Asymmetric generalized Gaussian by moment matching: the shape is found on
/// a 0.2:0.001:10 grid of the ratio Gamma(2/a)^2 / (Gamma(1/a) Gamma(3/a)).
AggdFit fit_aggd(std::span<const double> samples);

/// Multivariate Gaussian of natural-scene statistics.
struct PristineModel {
  Eigen::VectorXd mean;  // 36
  Eigen::MatrixXd cov;   // 36 x 36
  int patch_size = 96;
  double sharpness_threshold = 0.75;
};

inline constexpr int kNiqeFeatures = 36;

/// Per-patch 36-dim features (18 per scale, two scales) of a gray image in
/// [0, 1]. With `sharp_only`, keeps patches whose mean local deviation
/// exceeds threshold * max over the image. Patches with undefined
/// statistics are dropped.
Eigen::MatrixXd niqe_patch_features(const ImageBuffer& gray, int patch_size, bool sharp_only = false,
                                    double sharpness_threshold = 0.75);

/// Mean and covariance of sharp-patch features pooled over `images`.
PristineModel fit_pristine(std::span<const ImageBuffer> images, int patch_size = 96, double sharpness_threshold = 0.75);

/// Distance between the image's feature Gaussian and the pristine one,
/// sqrt(d^T pinv((S_p + S_i) / 2) d). Needs at least two full patches.
double niqe(const ImageBuffer& image, const PristineModel& model);

/// 0.5 * ((10 - ma) + niqe). The Ma score comes from outside.
double perceptual_index(double niqe_score, double ma_score);

/// Matting errors are whole-image means scaled by 1e3.
inline constexpr double kMattingScale = 1000.0;

struct MattingError {
  double mse = 0;
  double mae = 0;
};
MattingError matting_error(const ImageBuffer& alpha_pred, const ImageBuffer& alpha_gt);

// Stored in the checkpoint container as "niqe.mean", "niqe.cov" and
// "niqe.meta" = [patch_size, sharpness_threshold].
void save_pristine_model(const PristineModel& model, const std::filesystem::path& path);
PristineModel load_pristine_model(const std::filesystem::path& path);

}  // namespace exposura
