#include <gtest/gtest.h>

#include <nlohmann/json.hpp>
#include <sstream>

#include "cli.hpp"
#include "exposura/checkpoint.hpp"
#include "exposura/fileio.hpp"
#include "exposura/imaging.hpp"
#include "exposura/metrics.hpp"
#include "exposura/network.hpp"
#include "fixtures.hpp"
#include "matting_fixture.hpp"

namespace exposura {
namespace {

namespace fs = std::filesystem;
using testing::random_image;
using testing::TempDir;

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  auto b = read_file(p);
  return std::string(b.begin(), b.end());
}

std::vector<std::string> csv_header(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line, cell;
  std::getline(in, line);
  std::vector<std::string> cols;
  std::istringstream ls(line);
  while (std::getline(ls, cell, ',')) cols.push_back(cell);
  return cols;
}

GeneratorConfig tiny_generator() {
  GeneratorConfig g;
  g.encoder_channels = {4, 4, 8, 8, 8};
  g.n_residual_blocks = 1;
  return g;
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, cli::kUsage);
  EXPECT_EQ(run({"bogus"}).code, cli::kUsage);
  EXPECT_EQ(run({"eval", "a", "b", "--no-such-flag"}).code, cli::kUsage);
  EXPECT_EQ(run({"infer", "--data-root", "x"}).code, cli::kUsage);
  EXPECT_EQ(run({"--help"}).code, cli::kOk);
}

TEST(Cli, DataErrors) {
  TempDir dir;
  fs::create_directories(dir / "a");
  fs::create_directories(dir / "b");
  save_image(random_image(16, 16, 3, 1), dir / "a/x.png");
  auto r = run({"eval", (dir / "a").string(), (dir / "b").string()});
  EXPECT_EQ(r.code, cli::kDataError);
  EXPECT_NE(r.err.find("x.png"), std::string::npos) << r.err;
}

TEST(Cli, InferKeepsSizeAndZeroGeneratorIsMidGray) {
  TempDir dir;
  auto w = init_generator(tiny_generator(), 1);
  for (auto& [name, t] : w) t = Tensor<float>(t.shape(), 0.0f);
  save_weights(w, dir / "g.expw");
  fs::create_directories(dir / "in");
  save_image(random_image(100, 77, 3, 2), dir / "in/odd.png");
  save_image(random_image(64, 32, 3, 3), dir / "in/even.png");
  auto r = run({"infer", "--checkpoint", (dir / "g.expw").string(), "--data-root", (dir / "in").string(), "--out",
                (dir / "out").string()});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  auto odd = load_image(dir / "out/odd.png");
  EXPECT_EQ(odd.width, 100);
  EXPECT_EQ(odd.height, 77);
  for (float v : odd.data) EXPECT_EQ(v, 128.0f / 255.0f);
  EXPECT_EQ(load_image(dir / "out/even.png").width, 64);
}

TEST(Cli, InferIsDeterministic) {
  TempDir dir;
  save_weights(init_generator(tiny_generator(), 4), dir / "g.expw");
  fs::create_directories(dir / "in");
  save_image(random_image(40, 50, 3, 5), dir / "in/a.png");
  for (const char* o : {"o1", "o2"})
    ASSERT_EQ(run({"infer", "--checkpoint", (dir / "g.expw").string(), "--data-root", (dir / "in").string(), "--out",
                   (dir / o).string(), "--threads", "2"})
                  .code,
              cli::kOk);
  EXPECT_EQ(read_file(dir / "o1/a.png"), read_file(dir / "o2/a.png"));
}

TEST(Cli, InferRejectsForeignCheckpoint) {
  TempDir dir;
  write_file_atomic(dir / "bad.expw", std::string_view("garbage"));
  fs::create_directories(dir / "in");
  EXPECT_EQ(run({"infer", "--checkpoint", (dir / "bad.expw").string(), "--data-root", (dir / "in").string(), "--out",
                 (dir / "o").string()})
                .code,
            cli::kDataError);
}

TEST(Cli, EvalIdenticalDirectories) {
  TempDir dir;
  fs::create_directories(dir / "d");
  for (int i = 0; i < 3; ++i) save_image(random_image(24, 24, 3, 10 + i), dir / ("d/im" + std::to_string(i) + ".png"));
  auto r = run({"eval", (dir / "d").string(), (dir / "d").string(), "--out", (dir / "rep").string()});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  auto cols = csv_header(dir / "rep/metrics.csv");
  EXPECT_EQ(cols, (std::vector<std::string>{"id", "psnr_db", "ssim"}));
  auto j = nlohmann::json::parse(slurp(dir / "rep/metrics.json"));
  for (const auto& row : j["images"]) {
    EXPECT_EQ(row["psnr_db"], "inf");
    EXPECT_DOUBLE_EQ(row["ssim"].get<double>(), 1.0);
  }
  EXPECT_TRUE(fs::exists(dir / "rep/metrics.txt"));
}

TEST(Cli, EvalAggregateIsMeanOfRows) {
  TempDir dir;
  fs::create_directories(dir / "p");
  fs::create_directories(dir / "g");
  for (int i = 0; i < 3; ++i) {
    auto g = random_image(32, 32, 3, 20 + i);
    save_image(g, dir / ("g/" + std::to_string(i) + ".png"));
    save_image(ev_shift(g, 0.5 * (i + 1)), dir / ("p/" + std::to_string(i) + ".png"));
  }
  ASSERT_EQ(run({"eval", (dir / "p").string(), (dir / "g").string(), "--out", (dir / "rep").string()}).code, cli::kOk);
  auto j = nlohmann::json::parse(slurp(dir / "rep/metrics.json"));
  ASSERT_EQ(j["images"].size(), 3u);
  double ps = 0, ss = 0;
  for (const auto& row : j["images"]) {
    ps += row["psnr_db"].get<double>();
    ss += row["ssim"].get<double>();
  }
  EXPECT_NEAR(j["aggregate"]["psnr_db"].get<double>(), ps / 3, 1e-9);
  EXPECT_NEAR(j["aggregate"]["ssim"].get<double>(), ss / 3, 1e-9);
}

TEST(Cli, EvalPiColumnOnlyWithMaScores) {
  TempDir dir;
  fs::create_directories(dir / "d");
  save_image(synthesize_scene(200, 200, 3), dir / "d/s.png");
  save_pristine_model(fit_pristine(std::vector<ImageBuffer>{synthesize_scene(256, 256, 4), synthesize_scene(256, 256, 5)}),
                      dir / "m.expw");
  const std::string d = (dir / "d").string(), m = (dir / "m.expw").string();
  ASSERT_EQ(run({"eval", d, d, "--pristine-model", m, "--out", (dir / "r1").string()}).code, cli::kOk);
  auto c1 = csv_header(dir / "r1/metrics.csv");
  EXPECT_NE(std::find(c1.begin(), c1.end(), "niqe"), c1.end());
  EXPECT_EQ(std::find(c1.begin(), c1.end(), "pi"), c1.end());
  write_file_atomic(dir / "ma.csv", std::string_view("image,ma\ns.png,6.5\n"));
  ASSERT_EQ(run({"eval", d, d, "--pristine-model", m, "--ma-scores", (dir / "ma.csv").string(), "--out",
                 (dir / "r2").string()})
                .code,
            cli::kOk);
  auto c2 = csv_header(dir / "r2/metrics.csv");
  EXPECT_NE(std::find(c2.begin(), c2.end(), "pi"), c2.end());
}

TEST(Cli, SimulateEvNamingAndIdentity) {
  TempDir dir;
  fs::create_directories(dir / "src");
  auto img = random_image(12, 9, 3, 30);
  save_image(img, dir / "src/shot.imgf");
  save_image(img, dir / "src/pic.png");
  auto r = run({"simulate-ev", "--data-root", (dir / "src").string(), "--evs", "-1,+1,0", "--out",
                (dir / "out").string()});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  for (const char* f : {"shot_N1.imgf", "shot_P1.imgf", "pic_N1.png", "pic_P1.png"})
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  EXPECT_EQ(read_file(dir / "out/shot_0.imgf"), read_file(dir / "src/shot.imgf"));
  EXPECT_EQ(load_image(dir / "out/shot_0.imgf").data, img.data);
  auto meta = nlohmann::json::parse(slurp(dir / "out/simulate_ev.json"));
  EXPECT_EQ(meta["simulator"], "ev-sim v1");
  auto up = load_image(dir / "out/shot_P1.imgf");
  EXPECT_LT(psnr(up, img), psnr(img, img));
  EXPECT_EQ(run({"simulate-ev", "--data-root", (dir / "src").string(), "--evs", "+3", "--out", (dir / "x").string()})
                .code,
            cli::kDataError);
}

TEST(Cli, MattingFixtureGrid) {
  TempDir dir;
  auto manifest = testing::write_matting_fixture(dir.path());
  auto r = run({"matting-eval", (dir / "pred").string(), (dir / "gt").string(), manifest.string(), "--out",
                (dir / "rep").string()});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  auto j = nlohmann::json::parse(slurp(dir / "rep/matting.json"));
  const auto expect = testing::matting_expectation();
  ASSERT_EQ(j["rows"].size(), 2u);
  for (const auto& row : j["rows"]) {
    const char cond = row["condition"].get<std::string>()[0];
    for (const auto& cell : row["cells"]) {
      auto want = expect.cells.at({cond, cell["ev"].get<double>()});
      EXPECT_NEAR(cell["mse"].get<double>(), want.first, 1e-4);
      EXPECT_NEAR(cell["mae"].get<double>(), want.second, 1e-4);
    }
    EXPECT_NEAR(row["avg"]["mse"].get<double>(), expect.average.at(cond).first, 1e-4);
    EXPECT_NEAR(row["avg"]["mae"].get<double>(), expect.average.at(cond).second, 1e-4);
  }
  EXPECT_TRUE(fs::exists(dir / "rep/matting.csv"));
}

TEST(Cli, MattingIdentityIsZeroAndHolesReported) {
  TempDir dir;
  auto manifest = testing::write_matting_fixture(dir.path());
  write_file_atomic(dir / "same.csv", std::string_view("dataset,condition,ev,image,pred\n"
                                                        "portraits,E,-2.5,a.png,portraits/a.png\n"
                                                        "portraits,E,-2.5,b.png,portraits/b.png\n"));
  auto r = run({"matting-eval", (dir / "gt").string(), (dir / "gt").string(), (dir / "same.csv").string(), "--out",
                (dir / "z").string()});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  auto j = nlohmann::json::parse(slurp(dir / "z/matting.json"));
  EXPECT_EQ(j["rows"][0]["avg"]["mse"].get<double>(), 0.0);
  EXPECT_EQ(j["rows"][0]["cells"][0]["mae"].get<double>(), 0.0);

  write_file_atomic(dir / "holes.csv", std::string_view("dataset,condition,ev,image,pred\n"
                                                         "portraits,E,-1,a.png,E_N1/a.png\n"
                                                         "portraits,E,-1,b.png,E_N1/b.png\n"
                                                         "portraits,C,-1,a.png,C_N1/a.png\n"));
  r = run({"matting-eval", (dir / "pred").string(), (dir / "gt").string(), (dir / "holes.csv").string()});
  EXPECT_EQ(r.code, cli::kDataError);
  EXPECT_NE(r.err.find("b.png"), std::string::npos) << r.err;
}

TEST(Cli, TrainSmokeAndResume) {
  TempDir dir;
  for (int i = 0; i < 2; ++i) {
    auto t = synthesize_scene(32, 32, 60 + static_cast<std::uint64_t>(i));
    const std::string stem = "s" + std::to_string(i);
    fs::create_directories(dir / "data/target");
    fs::create_directories(dir / "data/input");
    save_image(t, dir / ("data/target/" + stem + ".png"));
    save_image(ev_shift(t, -1.0), dir / ("data/input/" + stem + "_N1.png"));
  }
  write_file_atomic(dir / "cfg.txt", std::string_view("steps = 2\ncrop_size = 32\ncheckpoint_every = 1\n"
                                                      "encoder_channels = 4,4,8,8,8\nresidual_blocks = 1\n"
                                                      "disc_base_channels = 4\n"));
  auto r = run({"train", "--config", (dir / "cfg.txt").string(), "--data-root", (dir / "data").string(), "--out",
                (dir / "run").string()});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_NE(r.out.find("pixel"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "run/checkpoint_000002.expw"));
  EXPECT_TRUE(fs::exists(dir / "run/config.txt"));

  r = run({"train", "--config", (dir / "cfg.txt").string(), "--data-root", (dir / "data").string(), "--out",
           (dir / "run2").string(), "--checkpoint", (dir / "run/checkpoint_000001.expw").string()});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_EQ(read_file(dir / "run/checkpoint_000002.expw"), read_file(dir / "run2/checkpoint_000002.expw"));
}

TEST(Cli, FitPristineWritesModel) {
  TempDir dir;
  fs::create_directories(dir / "p");
  for (int i = 0; i < 2; ++i) save_image(synthesize_scene(192, 192, 80 + static_cast<std::uint64_t>(i)), dir / ("p/" + std::to_string(i) + ".png"));
  auto r = run({"fit-pristine", "--data-root", (dir / "p").string(), "--out", (dir / "m.expw").string(),
                "--patch-size", "48"});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  auto m = load_pristine_model(dir / "m.expw");
  EXPECT_EQ(m.patch_size, 48);
  EXPECT_EQ(m.mean.size(), kNiqeFeatures);
}

TEST(Cli, GradcheckNegativeControl) {
  auto r = run({"gradcheck", "--inject-fault", "tanh"});
  EXPECT_EQ(r.code, cli::kNumericError);
  EXPECT_NE(r.out.find("FAIL"), std::string::npos);
}

}  // namespace
}  // namespace exposura
