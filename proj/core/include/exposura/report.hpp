#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "exposura/metrics.hpp"

namespace exposura {

struct ImageMetrics {
  std::string id;
  double psnr = 0;
  double ssim = 0;
  std::optional<double> niqe;
  std::optional<double> pi;
  std::optional<double> matting_mse;
  std::optional<double> matting_mae;
};

/// Per-image rows plus an aggregate row of arithmetic means. Optional
/// columns appear only when every row has them.
struct MetricReport {
  std::vector<ImageMetrics> rows;

  ImageMetrics aggregate() const;
  bool has_niqe() const;
  bool has_pi() const;
  bool has_matting() const;

  std::string to_csv() const;
  /// Infinite PSNR is written as the string "inf".
  std::string to_json() const;
  std::string to_text() const;
};

/// Compares same-named images of two directories. Unmatched names in either
/// direction are listed together in one DataError. Ma scores are read from a
/// CSV with columns `image,ma`.
struct EvalOptions {
  const PristineModel* pristine = nullptr;
  std::optional<std::map<std::string, double>> ma_scores;
};
MetricReport evaluate_directories(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                                  const EvalOptions& options = {});
std::map<std::string, double> read_ma_scores(const std::filesystem::path& csv);

// Matting grid: rows (dataset, condition E|C), columns EV -2.5 ... +2.5, Avg.
struct MattingEntry {
  std::string dataset;
  char condition = 'E';
  double ev = 0;
  std::string image;
  std::filesystem::path pred;
};

/// Manifest CSV with header `dataset,condition,ev,image,pred`. Relative
/// `pred` paths resolve against `pred_root`.
std::vector<MattingEntry> read_matting_manifest(const std::filesystem::path& manifest,
                                                const std::filesystem::path& pred_root);

struct MattingCell {
  double mse = 0;
  double mae = 0;
  int count = 0;
};

struct MattingRow {
  std::string dataset;
  char condition = 'E';
  std::map<double, MattingCell> cells;  // keyed by EV
  MattingCell average;                  // mean over the present EV columns
};

struct MattingGrid {
  std::vector<MattingRow> rows;
  std::string to_csv() const;
  std::string to_json() const;
  std::string to_text() const;
};

/// Ground truth for an entry is `<gt_dir>/<dataset>/<image>`. Every
/// (condition, ev) cell of a dataset must cover the same images; all holes
/// and unreadable files are listed in one DataError.
MattingGrid evaluate_matting(const std::vector<MattingEntry>& entries, const std::filesystem::path& gt_dir);

}  // namespace exposura
