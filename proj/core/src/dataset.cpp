#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <map>
#include <set>

#include "exposura/error.hpp"
#include "exposura/imaging.hpp"

namespace exposura {

namespace {

bool is_known_ev(double ev) {
  return std::any_of(kEvTags.begin(), kEvTags.end(), [ev](double t) { return t == ev; });
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::optional<EvTag> parse_ev_tag(std::string_view stem) {
  const auto us = stem.rfind('_');
  if (us == std::string_view::npos || us == 0) return std::nullopt;
  const std::string_view tag = stem.substr(us + 1);
  EvTag out{std::string(stem.substr(0, us)), 0.0};
  if (tag == "0") return out;
  if (tag.size() < 2 || (tag[0] != 'P' && tag[0] != 'N')) return std::nullopt;
  const std::string_view digits = tag.substr(1);
  // digits[.digits]
  const auto dot = digits.find('.');
  auto all_digits = [](std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
  };
  if (dot == std::string_view::npos ? !all_digits(digits)
                                    : (!all_digits(digits.substr(0, dot)) || !all_digits(digits.substr(dot + 1)))) {
    return std::nullopt;
  }
  double magnitude = 0.0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), magnitude);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || magnitude == 0.0) return std::nullopt;
  out.ev = tag[0] == 'N' ? -magnitude : magnitude;
  return out;
}

std::string format_ev_tag(double ev) {
  if (ev == 0.0) return "0";
  std::ostringstream os;
  os << (ev < 0 ? 'N' : 'P') << std::abs(ev);
  return os.str();
}

DatasetIndex index_dataset(const std::filesystem::path& root, const DatasetLayout& layout, Split split) {
  const auto in_dir = root / layout.input_dir;
  const auto tgt_dir = root / layout.target_dir;
  if (!std::filesystem::is_directory(in_dir) || !std::filesystem::is_directory(tgt_dir)) {
    throw DataError("dataset root '" + root.string() + "' must contain '" + layout.input_dir + "/' and '" +
                    layout.target_dir + "/'");
  }
  const auto inputs = list_images(in_dir);
  const auto targets = list_images(tgt_dir);
  if (inputs.empty() && targets.empty()) throw DataError("dataset '" + root.string() + "' is empty");

  std::map<std::string, std::vector<std::filesystem::path>> by_stem;
  for (const auto& t : targets) by_stem[t.stem().string()].push_back(t);

  std::vector<std::string> problems;
  std::set<std::string> used;
  DatasetIndex index;
  index.split = split;
  for (const auto& in : inputs) {
    const auto tag = parse_ev_tag(in.stem().string());
    if (!tag) {
      problems.push_back("input without EV tag: " + in.filename().string());
      continue;
    }
    if (!is_known_ev(tag->ev)) {
      problems.push_back("input with unsupported EV " + format_ev_tag(tag->ev) + ": " + in.filename().string());
      continue;
    }
    auto it = by_stem.find(tag->stem);
    if (it == by_stem.end()) {
      problems.push_back("orphan input (no target '" + tag->stem + ".*'): " + in.filename().string());
      continue;
    }
    if (it->second.size() > 1) {
      problems.push_back("ambiguous target for " + in.filename().string() + ": several files named '" + tag->stem + ".*'");
      continue;
    }
    used.insert(tag->stem);
    index.records.push_back(DatasetRecord{in, it->second.front(), tag->ev});
  }
  for (const auto& [stem, files] : by_stem) {
    if (!used.count(stem)) {
      for (const auto& f : files) problems.push_back("orphan target (no input): " + f.filename().string());
    }
  }
  if (!problems.empty()) {
    std::string msg = "dataset '" + root.string() + "' has " + std::to_string(problems.size()) + " pairing problem(s):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw DataError(msg);
  }
  return index;
}

}  // namespace exposura
