#include "exposura/metrics.hpp"

#include <cmath>
#include <numeric>
#include <vector>

#include "exposura/error.hpp"

namespace exposura {

namespace {

void require_same(const char* what, const ImageBuffer& a, const ImageBuffer& b) {
  if (!a.same_size(b)) {
    throw ShapeError(std::string(what) + ": image sizes differ (" + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + "x" + std::to_string(a.channels) + " vs " + std::to_string(b.width) +
                     "x" + std::to_string(b.height) + "x" + std::to_string(b.channels) + ")");
  }
}

// Separable 'valid' filtering of a w x h plane with a normalized 1-D kernel.
std::vector<double> filter_valid(const std::vector<double>& src, int w, int h, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int i = 0; i < n; ++i) acc += k[static_cast<std::size_t>(i)] * src[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int i = 0; i < n; ++i) acc += k[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double s = 0;
  for (int i = 0; i < size; ++i) {
    const double d = i - c;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
    s += k[static_cast<std::size_t>(i)];
  }
  for (auto& v : k) v /= s;
  return k;
}

}  // namespace

double psnr(const ImageBuffer& a, const ImageBuffer& b, double peak) {
  require_same("psnr", a, b);
  double se = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.data.size());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
  require_same("ssim", a, b);
  constexpr int kWindow = 11;
  if (a.width < kWindow || a.height < kWindow) {
    throw ShapeError("ssim: images must be at least 11x11, got " + std::to_string(a.width) + "x" +
                     std::to_string(a.height));
  }
  const ImageBuffer ga = to_gray(a), gb = to_gray(b);
  const int w = a.width, h = a.height;
  std::vector<double> x(ga.data.begin(), ga.data.end()), y(gb.data.begin(), gb.data.end());
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto k = gaussian_kernel(kWindow, 1.5);
  const auto mx = filter_valid(x, w, h, k), my = filter_valid(y, w, h, k);
  const auto sxx = filter_valid(xx, w, h, k), syy = filter_valid(yy, w, h, k), sxy = filter_valid(xy, w, h, k);
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
    total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

AggdFit fit_aggd(std::span<const double> samples) {
  if (samples.size() < 2) throw NumericError("fit_aggd: need at least two samples");
  double left_sq = 0, right_sq = 0, abs_sum = 0, sq_sum = 0;
  std::size_t n_left = 0, n_right = 0;
  for (double v : samples) {
    if (v < 0) {
      left_sq += v * v;
      ++n_left;
    } else if (v > 0) {
      right_sq += v * v;
      ++n_right;
    }
    abs_sum += std::abs(v);
    sq_sum += v * v;
  }
  const bool all_equal = std::all_of(samples.begin(), samples.end(), [&](double v) { return v == samples[0]; });
  if (all_equal || sq_sum == 0.0) throw NumericError("fit_aggd: degenerate samples (all equal)");

  const double n = static_cast<double>(samples.size());
  const double left_std = n_left ? std::sqrt(left_sq / static_cast<double>(n_left)) : 0.0;
  const double right_std = n_right ? std::sqrt(right_sq / static_cast<double>(n_right)) : 0.0;
  const double rhat = (abs_sum / n) * (abs_sum / n) / (sq_sum / n);
  double rhat_norm = rhat;  // limit when one side is empty
  if (left_std > 0 && right_std > 0) {
    const double g = left_std / right_std;
    rhat_norm = rhat * (g * g * g + 1) * (g + 1) / ((g * g + 1) * (g * g + 1));
  }

  double best_alpha = 0.2, best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 9800; ++i) {
    const double a = 0.2 + 0.001 * i;
    const double r = std::exp(2 * std::lgamma(2 / a) - std::lgamma(1 / a) - std::lgamma(3 / a));
    const double d = (r - rhat_norm) * (r - rhat_norm);
    if (d < best) {
      best = d;
      best_alpha = a;
    }
  }
  const double scale = std::sqrt(std::exp(std::lgamma(1 / best_alpha) - std::lgamma(3 / best_alpha)));
  return AggdFit{best_alpha, left_std * scale, right_std * scale};
}

double perceptual_index(double niqe_score, double ma_score) { return 0.5 * ((10.0 - ma_score) + niqe_score); }

MattingError matting_error(const ImageBuffer& alpha_pred, const ImageBuffer& alpha_gt) {
  require_same("matting_error", alpha_pred, alpha_gt);
  double se = 0, ae = 0;
  for (std::size_t i = 0; i < alpha_pred.data.size(); ++i) {
    const double d = static_cast<double>(alpha_pred.data[i]) - static_cast<double>(alpha_gt.data[i]);
    se += d * d;
    ae += std::abs(d);
  }
  const double n = static_cast<double>(alpha_pred.data.size());
  return MattingError{se / n * kMattingScale, ae / n * kMattingScale};
}

}  // namespace exposura
