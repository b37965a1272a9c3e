#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "exposura/checkpoint.hpp"
#include "exposura/error.hpp"
#include "exposura/fileio.hpp"
#include "exposura/trainer.hpp"
#include "fixtures.hpp"

namespace exposura {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

TrainConfig small_config() {
  TrainConfig c;
  c.steps = 4;
  c.crop_size = 32;
  c.checkpoint_every = 2;
  c.generator.encoder_channels = {8, 8, 16, 16, 16};
  c.generator.n_residual_blocks = 1;
  c.discriminator.base_channels = 4;
  return c;
}

std::vector<TrainingPair> small_pairs() {
  std::vector<TrainingPair> out;
  for (int i = 0; i < 3; ++i) {
    auto target = synthesize_scene(40, 36, 50 + static_cast<std::uint64_t>(i));
    out.push_back({ev_shift(target, i == 1 ? 0.0 : (i == 0 ? -1.0 : 1.0)), target});
  }
  return out;
}

std::uint64_t spectral_hash(const SpectralStates& s) {
  ModelWeights w;
  for (const auto& [name, st] : s) {
    w.emplace(name + ".u", Tensor<float>(Shape{static_cast<std::int64_t>(st.u.size())}, st.u));
    w.emplace(name + ".v", Tensor<float>(Shape{static_cast<std::int64_t>(st.v.size())}, st.v));
  }
  return weights_hash(w);
}

class TrainerTest : public ::testing::Test {
 protected:
  TrainConfig cfg = small_config();
  std::vector<TrainingPair> pairs = small_pairs();
  FeatureExtractor ex = make_feature_extractor(cfg);
};

TEST_F(TrainerTest, ZeroLearningRateLeavesWeights) {
  cfg.lr_g = 0;
  cfg.lr_d = 0;
  auto state = TrainState::initialize(cfg);
  const auto g0 = weights_hash(state.generator), d0 = weights_hash(state.discriminator);
  auto rec = train_step(state, sample_batch(pairs, cfg, 0), cfg, ex);
  EXPECT_EQ(weights_hash(state.generator), g0);
  EXPECT_EQ(weights_hash(state.discriminator), d0);
  for (double v : {rec.adv_d, rec.adv_g, rec.fm, rec.pixel, rec.perceptual}) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(rec.step, 1);
}

TEST_F(TrainerTest, StepFromSerializedStateIsBitwiseRepeatable) {
  auto state = TrainState::initialize(cfg);
  train_step(state, sample_batch(pairs, cfg, 0), cfg, ex);
  const auto saved = encode_weights(state.to_checkpoint());
  auto a = TrainState::from_checkpoint(decode_weights(saved));
  auto b = TrainState::from_checkpoint(decode_weights(saved));
  auto batch = sample_batch(pairs, cfg, a.step);
  train_step(a, batch, cfg, ex);
  train_step(b, batch, cfg, ex);
  EXPECT_EQ(encode_weights(a.to_checkpoint()), encode_weights(b.to_checkpoint()));
}

TEST_F(TrainerTest, HalfStepsTouchOnlyTheirNetwork) {
  auto state = TrainState::initialize(cfg);
  for (int i = 0; i < 2; ++i) {
    auto batch = sample_batch(pairs, cfg, state.step);
    std::vector<ImageBuffer> in, tg;
    for (const auto& p : batch) {
      in.push_back(p.input);
      tg.push_back(p.target);
    }
    auto x = images_to_tensor<float>(in), y = images_to_tensor<float>(tg);
    GeneratorPass pass = generator_pass(state, x, cfg);

    const auto g_before = weights_hash(state.generator), gm = weights_hash(state.adam_g_m);
    const auto d_before = weights_hash(state.discriminator);
    discriminator_update(state, pass.fake, y, cfg);
    EXPECT_EQ(weights_hash(state.generator), g_before);
    EXPECT_EQ(weights_hash(state.adam_g_m), gm);
    EXPECT_NE(weights_hash(state.discriminator), d_before);

    const auto d_mid = weights_hash(state.discriminator), dm = weights_hash(state.adam_d_m);
    const auto sn = spectral_hash(state.spectral);
    generator_update(state, std::move(pass), y, cfg, ex);
    EXPECT_EQ(weights_hash(state.discriminator), d_mid);
    EXPECT_EQ(weights_hash(state.adam_d_m), dm);
    EXPECT_EQ(spectral_hash(state.spectral), sn);
    EXPECT_NE(weights_hash(state.generator), g_before);
    ++state.step;
  }
}

TEST_F(TrainerTest, NonFiniteLossNamesTerm) {
  auto state = TrainState::initialize(cfg);
  auto& b = state.generator.at("g.dec.4.b");
  b.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train_step(state, sample_batch(pairs, cfg, 0), cfg, ex);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite loss term"), std::string::npos) << e.what();
  }
}

TEST_F(TrainerTest, SingleStepRun) {
  TempDir dir;
  cfg.steps = 1;
  auto result = run_training(cfg, pairs, dir.path());
  EXPECT_EQ(result.losses.size(), 1u);
  EXPECT_EQ(read_loss_csv(dir / "losses.csv").size(), 1u);
  int checkpoints = 0;
  for (const auto& e : fs::directory_iterator(dir.path())) checkpoints += e.path().extension() == ".expw";
  EXPECT_EQ(checkpoints, 1);
  EXPECT_TRUE(fs::exists(dir / "checkpoint_000001.expw"));
}

TEST_F(TrainerTest, ResumeMatchesUninterrupted) {
  TempDir full, part;
  auto straight = run_training(cfg, pairs, full.path());
  auto cut = cfg;
  cut.steps = 2;
  run_training(cut, pairs, part.path());
  auto resumed_state = TrainState::from_checkpoint(load_weights(part / "checkpoint_000002.expw"));
  auto resumed = run_training(cfg, pairs, part.path(), std::move(resumed_state));
  EXPECT_EQ(read_file(full / "checkpoint_000004.expw"), read_file(part / "checkpoint_000004.expw"));
  EXPECT_EQ(read_file(full / "losses.csv"), read_file(part / "losses.csv"));
  EXPECT_EQ(resumed.losses.size(), 4u);
}

TEST_F(TrainerTest, RunsAreDeterministicAndFinite) {
  TempDir a, b;
  run_training(cfg, pairs, a.path());
  run_training(cfg, pairs, b.path());
  for (const char* f : {"checkpoint_000002.expw", "checkpoint_000004.expw", "losses.csv"})
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
  for (const auto& r : read_loss_csv(a / "losses.csv"))
    for (double v : {r.adv_d, r.adv_g, r.fm, r.pixel, r.perceptual}) EXPECT_TRUE(std::isfinite(v));
}

TEST_F(TrainerTest, EmptyDatasetAndUnwritableDir) {
  TempDir dir;
  EXPECT_THROW(run_training(cfg, std::vector<TrainingPair>{}, dir.path()), DataError);
  write_file_atomic(dir / "file", std::string_view("x"));
  EXPECT_THROW(run_training(cfg, pairs, dir / "file" / "sub"), DataError);
}

TEST_F(TrainerTest, SamplingIsSeededAndCoversEpoch) {
  auto a = sample_batch(pairs, cfg, 5), b = sample_batch(pairs, cfg, 5);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].input.data, b[0].input.data);
  EXPECT_EQ(a[0].input.width, 32);
  std::set<std::vector<float>> targets;
  for (int s = 0; s < 3; ++s) {
    auto x = sample_batch(pairs, cfg, s);
    targets.insert(x[0].target.data);
  }
  EXPECT_EQ(targets.size(), 3u);
}

TEST(TrainConfig, ParseAndRoundTrip) {
  auto c = TrainConfig::parse("# comment\nsteps = 7\nlr_g=1e-3\ncrop_size = 96\nencoder_channels = 8,8,8,8,8\n");
  EXPECT_EQ(c.steps, 7);
  EXPECT_DOUBLE_EQ(c.lr_g, 1e-3);
  EXPECT_EQ(c.crop_size, 96);
  auto back = TrainConfig::parse(c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_THROW(TrainConfig::parse("stepz = 3"), FormatError);
  EXPECT_THROW(TrainConfig::parse("crop_size = 48").validate(), Error);
  EXPECT_THROW(TrainConfig::parse("steps = 0").validate(), Error);
}

TEST(TrainState, CheckpointValidation) {
  auto cfg = small_config();
  auto w = TrainState::initialize(cfg).to_checkpoint();
  w.erase("train.step");
  EXPECT_THROW(TrainState::from_checkpoint(w), FormatError);
}

TEST(Adam, FirstStepMovesBySignTimesLr) {
  ModelWeights p{{"w", Tensor<float>(Shape{3}, {1.0f, 1.0f, 1.0f})}};
  ModelWeights m{{"w", Tensor<float>(Shape{3}, 0.0f)}}, v = m;
  ModelWeights g{{"w", Tensor<float>(Shape{3}, {0.5f, -2.0f, 0.0f})}};
  adam_update(p, m, v, g, 0.1, 0.5, 0.999, 1e-8, 1);
  EXPECT_NEAR(p.at("w").data()[0], 0.9f, 1e-6);
  EXPECT_NEAR(p.at("w").data()[1], 1.1f, 1e-6);
  EXPECT_EQ(p.at("w").data()[2], 1.0f);
}

}  // namespace
}  // namespace exposura
