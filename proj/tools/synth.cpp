// Writes procedural scenes, optionally as exposure-shifted training pairs.
#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "exposura/error.hpp"
#include "exposura/imaging.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"exposura-synth: procedural scenes and EV-shifted pairs"};
  std::string out;
  int count = 4, width = 64, height = 64;
  std::uint64_t seed = 1;
  std::vector<double> evs;
  bool mirror = false;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--count", count, "Number of scenes")->check(CLI::Range(1, 100000));
  app.add_option("--width", width, "Width")->check(CLI::Range(8, 8192));
  app.add_option("--height", height, "Height")->check(CLI::Range(8, 8192));
  app.add_option("--seed", seed, "Base seed");
  app.add_option("--pairs", evs, "Write <out>/input/<stem>_<tag>.png for these EVs and <out>/target/<stem>.png")
      ->delimiter(',');
  app.add_flag("--mirror", mirror, "Also write a horizontally flipped copy of each scene as <stem>_m.png");
  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path root(out);
    const fs::path target_dir = evs.empty() ? root : root / "target";
    fs::create_directories(target_dir);
    if (!evs.empty()) fs::create_directories(root / "input");
    for (int i = 0; i < count; ++i) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "scene_%03d", i);
      const auto img = exposura::synthesize_scene(width, height, seed + static_cast<std::uint64_t>(i));
      exposura::save_image(img, target_dir / (std::string(stem) + ".png"));
      if (mirror) exposura::save_image(exposura::flip_horizontal(img), target_dir / (std::string(stem) + "_m.png"));
      for (double ev : evs) {
        const auto name = std::string(stem) + "_" + exposura::format_ev_tag(ev) + ".png";
        exposura::save_image(exposura::ev_shift(img, ev), root / "input" / name);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
