#include "exposura/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "exposura/error.hpp"
#include "exposura/fileio.hpp"

namespace exposura {

namespace {

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fixed(double v, int digits = 4) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

nlohmann::json json_num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || split_csv(line) != header) {
    std::string want;
    for (const auto& h : header) want += (want.empty() ? "" : ",") + h;
    throw FormatError(path.string() + ": expected header '" + want + "'");
  }
  std::vector<std::vector<std::string>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                        " columns, got " + std::to_string(cells.size()));
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0;
  const char* b = s.data();
  if (!s.empty() && s[0] == '+') ++b;
  const auto r = std::from_chars(b, s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError(where + ": not a number: '" + s + "'");
  return v;
}

template <typename Get>
std::optional<double> mean_of(const std::vector<ImageMetrics>& rows, Get get) {
  if (rows.empty()) return std::nullopt;
  double s = 0;
  for (const auto& r : rows) {
    const std::optional<double> v = get(r);
    if (!v) return std::nullopt;
    s += *v;
  }
  return s / static_cast<double>(rows.size());
}

std::string pad(const std::string& s, std::size_t w, bool left = false) {
  if (s.size() >= w) return s;
  return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
}

std::string ev_label(double ev) {
  if (ev == 0) return "0";
  std::ostringstream os;
  os << (ev > 0 ? "+" : "") << ev;
  return os.str();
}

}  // namespace

ImageMetrics MetricReport::aggregate() const {
  ImageMetrics a;
  a.id = "mean";
  a.psnr = mean_of(rows, [](const ImageMetrics& r) { return std::optional<double>(r.psnr); }).value_or(0);
  a.ssim = mean_of(rows, [](const ImageMetrics& r) { return std::optional<double>(r.ssim); }).value_or(0);
  a.niqe = mean_of(rows, [](const ImageMetrics& r) { return r.niqe; });
  a.pi = mean_of(rows, [](const ImageMetrics& r) { return r.pi; });
  a.matting_mse = mean_of(rows, [](const ImageMetrics& r) { return r.matting_mse; });
  a.matting_mae = mean_of(rows, [](const ImageMetrics& r) { return r.matting_mae; });
  return a;
}

bool MetricReport::has_niqe() const {
  return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.niqe.has_value(); });
}
bool MetricReport::has_pi() const {
  return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.pi.has_value(); });
}
bool MetricReport::has_matting() const {
  return !rows.empty() &&
         std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.matting_mse && r.matting_mae; });
}

std::string MetricReport::to_csv() const {
  std::string out = "id,psnr_db,ssim";
  if (has_niqe()) out += ",niqe";
  if (has_pi()) out += ",pi";
  if (has_matting()) out += ",matting_mse_x1e3,matting_mae_x1e3";
  out += '\n';
  auto emit = [&](const ImageMetrics& r) {
    out += r.id + "," + num(r.psnr) + "," + num(r.ssim);
    if (has_niqe()) out += "," + num(*r.niqe);
    if (has_pi()) out += "," + num(*r.pi);
    if (has_matting()) out += "," + num(*r.matting_mse) + "," + num(*r.matting_mae);
    out += '\n';
  };
  for (const auto& r : rows) emit(r);
  emit(aggregate());
  return out;
}

std::string MetricReport::to_json() const {
  auto row_json = [&](const ImageMetrics& r) {
    nlohmann::json j{{"id", r.id}, {"psnr_db", json_num(r.psnr)}, {"ssim", r.ssim}};
    if (has_niqe()) j["niqe"] = *r.niqe;
    if (has_pi()) j["pi"] = *r.pi;
    if (has_matting()) {
      j["matting_mse"] = *r.matting_mse;
      j["matting_mae"] = *r.matting_mae;
    }
    return j;
  };
  nlohmann::json j;
  j["images"] = nlohmann::json::array();
  for (const auto& r : rows) j["images"].push_back(row_json(r));
  j["aggregate"] = row_json(aggregate());
  j["meta"] = {{"psnr", "RGB jointly, peak 1.0; identical images give \"inf\""},
               {"ssim", "Rec.601 luma, 11x11 Gaussian sigma 1.5"}};
  if (has_matting()) j["meta"]["matting"] = "whole-image mean x1e3";
  return j.dump(2) + "\n";
}

std::string MetricReport::to_text() const {
  std::vector<std::vector<std::string>> table;
  std::vector<std::string> head{"image", "PSNR", "SSIM"};
  if (has_niqe()) head.push_back("NIQE");
  if (has_pi()) head.push_back("PI");
  if (has_matting()) {
    head.push_back("MSE(x1e3)");
    head.push_back("MAE(x1e3)");
  }
  table.push_back(head);
  auto add = [&](const ImageMetrics& r) {
    std::vector<std::string> c{r.id, fixed(r.psnr, 2), fixed(r.ssim, 4)};
    if (has_niqe()) c.push_back(fixed(*r.niqe, 3));
    if (has_pi()) c.push_back(fixed(*r.pi, 3));
    if (has_matting()) {
      c.push_back(fixed(*r.matting_mse, 2));
      c.push_back(fixed(*r.matting_mae, 2));
    }
    table.push_back(std::move(c));
  };
  for (const auto& r : rows) add(r);
  add(aggregate());
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& r : table)
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  std::string out;
  for (std::size_t k = 0; k < table.size(); ++k) {
    if (k + 1 == table.size()) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      out += std::string(total - 2, '-') + "\n";
    }
    for (std::size_t i = 0; i < table[k].size(); ++i) {
      out += pad(table[k][i], width[i], i == 0);
      out += i + 1 < table[k].size() ? "  " : "\n";
    }
  }
  return out;
}

std::map<std::string, double> read_ma_scores(const std::filesystem::path& csv) {
  std::map<std::string, double> out;
  for (const auto& row : read_csv(csv, {"image", "ma"})) {
    out[row[0]] = parse_double(row[1], csv.string());
  }
  return out;
}

namespace {

std::map<std::string, std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::map<std::string, std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) out[e.path().filename().string()] = e.path();
  }
  return out;
}

}  // namespace

MetricReport evaluate_directories(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                                  const EvalOptions& options) {
  const auto preds = list_images(pred_dir);
  const auto gts = list_images(gt_dir);
  std::vector<std::string> problems;
  for (const auto& [name, _] : preds)
    if (!gts.contains(name)) problems.push_back("prediction without ground truth: " + name);
  for (const auto& [name, _] : gts)
    if (!preds.contains(name)) problems.push_back("ground truth without prediction: " + name);
  if (options.ma_scores) {
    for (const auto& [name, _] : preds)
      if (!options.ma_scores->contains(name)) problems.push_back("no Ma score for: " + name);
  }
  if (preds.empty() && gts.empty()) problems.push_back("no images in " + pred_dir.string());
  if (!problems.empty()) {
    std::string msg = "eval: " + std::to_string(problems.size()) + " problem(s)";
    for (const auto& p : problems) msg += "\n  " + p;
    throw DataError(msg);
  }
  MetricReport report;
  for (const auto& [name, path] : preds) {
    const ImageBuffer p = load_image(path);
    const ImageBuffer g = load_image(gts.at(name));
    ImageMetrics m;
    m.id = name;
    m.psnr = psnr(p, g);
    m.ssim = ssim(p, g);
    if (options.pristine) {
      m.niqe = niqe(p, *options.pristine);
      if (options.ma_scores) m.pi = perceptual_index(*m.niqe, options.ma_scores->at(name));
    }
    report.rows.push_back(std::move(m));
  }
  return report;
}

std::vector<MattingEntry> read_matting_manifest(const std::filesystem::path& manifest,
                                                const std::filesystem::path& pred_root) {
  std::vector<MattingEntry> out;
  for (const auto& row : read_csv(manifest, {"dataset", "condition", "ev", "image", "pred"})) {
    MattingEntry e;
    e.dataset = row[0];
    if (row[1] != "E" && row[1] != "C") {
      throw FormatError(manifest.string() + ": condition must be E or C, got '" + row[1] + "'");
    }
    e.condition = row[1][0];
    e.ev = parse_double(row[2], manifest.string());
    if (std::find(kEvTags.begin(), kEvTags.end(), e.ev) == kEvTags.end()) {
      throw FormatError(manifest.string() + ": unsupported EV " + row[2]);
    }
    e.image = row[3];
    e.pred = std::filesystem::path(row[4]).is_absolute() ? std::filesystem::path(row[4]) : pred_root / row[4];
    out.push_back(std::move(e));
  }
  if (out.empty()) throw DataError(manifest.string() + ": manifest has no entries");
  return out;
}

MattingGrid evaluate_matting(const std::vector<MattingEntry>& entries, const std::filesystem::path& gt_dir) {
  using CellKey = std::pair<char, double>;
  std::map<std::string, std::set<std::string>> images;
  std::map<std::string, std::set<CellKey>> cells;
  std::map<std::tuple<std::string, char, double, std::string>, const MattingEntry*> by_key;
  std::vector<std::string> problems;
  for (const auto& e : entries) {
    images[e.dataset].insert(e.image);
    cells[e.dataset].insert({e.condition, e.ev});
    if (!by_key.emplace(std::make_tuple(e.dataset, e.condition, e.ev, e.image), &e).second) {
      problems.push_back("duplicate entry: " + e.dataset + " " + e.condition + " " + ev_label(e.ev) + " " + e.image);
    }
  }
  for (const auto& [ds, cellset] : cells)
    for (const auto& [cond, ev] : cellset)
      for (const auto& img : images[ds])
        if (!by_key.contains(std::make_tuple(ds, cond, ev, img)))
          problems.push_back("hole: " + ds + " " + cond + " " + ev_label(ev) + " " + img);

  auto load_alpha = [&](const std::filesystem::path& p) -> std::optional<ImageBuffer> {
    if (!std::filesystem::is_regular_file(p)) {
      problems.push_back("missing file: " + p.string());
      return std::nullopt;
    }
    try {
      ImageBuffer img = load_image(p);
      return img.channels == 1 ? img : to_gray(img);
    } catch (const Error& err) {
      problems.push_back(std::string("unreadable: ") + err.what());
      return std::nullopt;
    }
  };

  std::map<std::pair<std::string, std::string>, std::optional<ImageBuffer>> gt_cache;
  std::map<std::tuple<std::string, char, double>, MattingCell> sums;
  for (const auto& [key, e] : by_key) {
    auto& gt = gt_cache[{e->dataset, e->image}];
    if (!gt) gt = load_alpha(gt_dir / e->dataset / e->image);
    const auto pred = load_alpha(e->pred);
    if (!gt || !pred) continue;
    if (!pred->same_size(*gt)) {
      problems.push_back("size mismatch: " + e->pred.string());
      continue;
    }
    const MattingError err = matting_error(*pred, *gt);
    auto& c = sums[{e->dataset, e->condition, e->ev}];
    c.mse += err.mse;
    c.mae += err.mae;
    ++c.count;
  }
  if (!problems.empty()) {
    std::sort(problems.begin(), problems.end());
    problems.erase(std::unique(problems.begin(), problems.end()), problems.end());
    std::string msg = "matting-eval: " + std::to_string(problems.size()) + " problem(s)";
    for (const auto& p : problems) msg += "\n  " + p;
    throw DataError(msg);
  }

  MattingGrid grid;
  for (const auto& [ds, cellset] : cells) {
    for (char cond : {'E', 'C'}) {
      MattingRow row;
      row.dataset = ds;
      row.condition = cond;
      for (const auto& [c, ev] : cellset) {
        if (c != cond) continue;
        MattingCell cell = sums.at({ds, cond, ev});
        cell.mse /= cell.count;
        cell.mae /= cell.count;
        row.cells[ev] = cell;
      }
      if (row.cells.empty()) continue;
      for (const auto& [ev, cell] : row.cells) {
        row.average.mse += cell.mse;
        row.average.mae += cell.mae;
        row.average.count += cell.count;
      }
      row.average.mse /= static_cast<double>(row.cells.size());
      row.average.mae /= static_cast<double>(row.cells.size());
      grid.rows.push_back(std::move(row));
    }
  }
  return grid;
}

namespace {

std::vector<double> grid_columns(const MattingGrid& g) {
  std::set<double> evs;
  for (const auto& r : g.rows)
    for (const auto& [ev, _] : r.cells) evs.insert(ev);
  return {evs.begin(), evs.end()};
}

}  // namespace

std::string MattingGrid::to_csv() const {
  const auto cols = grid_columns(*this);
  std::string out = "dataset,condition,metric";
  for (double ev : cols) out += "," + ev_label(ev);
  out += ",avg\n";
  for (const auto& r : rows) {
    for (int m = 0; m < 2; ++m) {
      out += r.dataset + "," + r.condition + (m == 0 ? ",mse_x1e3" : ",mae_x1e3");
      for (double ev : cols) {
        out += ",";
        const auto it = r.cells.find(ev);
        if (it != r.cells.end()) out += num(m == 0 ? it->second.mse : it->second.mae);
      }
      out += "," + num(m == 0 ? r.average.mse : r.average.mae) + "\n";
    }
  }
  return out;
}

std::string MattingGrid::to_json() const {
  nlohmann::json j;
  j["meta"] = {{"scale", kMattingScale}, {"convention", "whole-image mean x1e3"}};
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row{{"dataset", r.dataset}, {"condition", std::string(1, r.condition)}};
    row["cells"] = nlohmann::json::array();
    for (const auto& [ev, c] : r.cells) row["cells"].push_back({{"ev", ev}, {"mse", c.mse}, {"mae", c.mae}, {"n", c.count}});
    row["avg"] = {{"mse", r.average.mse}, {"mae", r.average.mae}};
    j["rows"].push_back(std::move(row));
  }
  return j.dump(2) + "\n";
}

std::string MattingGrid::to_text() const {
  const auto cols = grid_columns(*this);
  std::vector<std::vector<std::string>> table;
  std::vector<std::string> head{"dataset", "", "metric"};
  for (double ev : cols) head.push_back(ev_label(ev));
  head.push_back("Avg");
  table.push_back(head);
  for (const auto& r : rows) {
    for (int m = 0; m < 2; ++m) {
      std::vector<std::string> line{m == 0 ? r.dataset : "", std::string(1, r.condition), m == 0 ? "MSE" : "MAE"};
      for (double ev : cols) {
        const auto it = r.cells.find(ev);
        line.push_back(it == r.cells.end() ? "-" : fixed(m == 0 ? it->second.mse : it->second.mae, 2));
      }
      line.push_back(fixed(m == 0 ? r.average.mse : r.average.mae, 2));
      table.push_back(std::move(line));
    }
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& r : table)
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  std::string out = "errors are whole-image means x1e3; E = manipulated input, C = corrected\n";
  for (const auto& r : table) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      out += pad(r[i], width[i], i < 3);
      out += i + 1 < r.size() ? "  " : "\n";
    }
  }
  return out;
}

}  // namespace exposura
