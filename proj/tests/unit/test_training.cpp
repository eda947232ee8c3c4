#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/io/synthetic.hpp"
#include "fe4dgs/training/checkpoint.hpp"
#include "fe4dgs/training/trainer.hpp"
#include "tiny_model.hpp"

using namespace fe4dgs;

namespace {

using test_support::tiny_config;
using test_support::tiny_scene;

const std::vector<CameraFrame>& frames() { return tiny_scene().frames; }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

RenderOutput flat_render(std::size_t h, std::size_t w, double color, double depth, double alpha) {
  RenderOutput r;
  r.height = h;
  r.width = w;
  r.color = Tensor({h, w, 3}, color);
  r.depth = Tensor({h, w}, depth);
  r.alpha = Tensor({h, w}, alpha);
  r.feature = Tensor({h, w, 1});
  r.feature_dim = 1;
  return r;
}

CameraFrame flat_frame(std::size_t h, std::size_t w, double color, double depth) {
  CameraFrame f;
  f.height = h;
  f.width = w;
  f.intrinsics = make_intrinsics(10, 10, 1, 1);
  f.image = Tensor({h, w, 3}, color);
  f.depth = Tensor({h, w}, depth);
  f.mask = Tensor({h, w}, 1.0);
  return f;
}

}  // namespace

TEST(Loss, DefaultWeights) {
  const TrainConfig c;
  EXPECT_EQ(c.lambda_rgb, 1.0);
  EXPECT_EQ(c.lambda_depth, 0.01);
  EXPECT_EQ(c.lambda_feat, 1.0);
  EXPECT_EQ(c.lambda_tv, 0.03);
}

TEST(Loss, HandValuesForFlatImages) {
  const TrainConfig c;
  const LossBreakdown l = total_loss(flat_render(3, 4, 0.5, 2.0, 1.0), flat_frame(3, 4, 0.25, 3.0), nullptr, nullptr, c);
  EXPECT_NEAR(l.rgb, 0.25, 1e-15);
  EXPECT_NEAR(l.depth, 1.0, 1e-15);
  EXPECT_EQ(l.feat, 0.0);
  EXPECT_EQ(l.tv, 0.0);
  EXPECT_NEAR(l.total, 0.26, 1e-15);
}

TEST(Loss, DepthIgnoresLowAlphaAndMaskedPixels) {
  TrainConfig c;
  RenderOutput r = flat_render(2, 2, 0.0, 1.0, 1.0);
  CameraFrame f = flat_frame(2, 2, 0.0, 1.0);
  r.depth[0] = 10.0;  // alpha below threshold
  r.alpha[0] = 0.4;
  r.depth[1] = 7.0;   // outside the mask
  f.mask[1] = 0.0;
  r.depth[2] = 3.0;   // counted: |3 - 1| over 2 pixels
  EXPECT_NEAR(total_loss(r, f, nullptr, nullptr, c).depth, 1.0, 1e-15);
}

TEST(Loss, ColorCotangentIsScaledSign) {
  TrainConfig c;
  c.lambda_rgb = 2.0;
  LossGradients g;
  RenderOutput r = flat_render(2, 3, 0.5, 1.0, 1.0);
  r.color[4] = 0.1;
  total_loss(r, flat_frame(2, 3, 0.3, 1.0), nullptr, nullptr, c, &g);
  EXPECT_NEAR(g.render.color[0], 2.0 / 18.0, 1e-15);
  EXPECT_NEAR(g.render.color[4], -2.0 / 18.0, 1e-15);
}

TEST(Loss, ColorCotangentMatchesFiniteDifference) {
  TrainConfig c;
  c.lambda_depth = 0.3;
  RenderOutput r = flat_render(3, 3, 0.4, 2.0, 1.0);
  CameraFrame f = flat_frame(3, 3, 0.2, 1.0);
  Pcg32 rng(3);
  for (double& v : r.color.storage()) v = rng.uniform(0.0, 1.0);
  for (double& v : r.depth.storage()) v = rng.uniform(0.5, 2.5);
  LossGradients g;
  total_loss(r, f, nullptr, nullptr, c, &g);
  const double h = 1e-6;
  for (std::size_t k = 0; k < r.color.size(); ++k) {
    RenderOutput p = r, m = r;
    p.color[k] += h;
    m.color[k] -= h;
    const double fd = (total_loss(p, f, nullptr, nullptr, c).total - total_loss(m, f, nullptr, nullptr, c).total) / (2 * h);
    EXPECT_NEAR(g.render.color[k], fd, 1e-8);
  }
  for (std::size_t k = 0; k < r.depth.size(); ++k) {
    RenderOutput p = r, m = r;
    p.depth[k] += h;
    m.depth[k] -= h;
    const double fd = (total_loss(p, f, nullptr, nullptr, c).total - total_loss(m, f, nullptr, nullptr, c).total) / (2 * h);
    EXPECT_NEAR(g.render.depth[k], fd, 1e-8);
  }
}

TEST(Loss, BreakdownSumsToTotal) {
  TrainConfig c = tiny_config();
  TrainState s = initialize_state(c, frames());
  s.stage = Stage::kFine;
  const CameraFrame& f = frames()[1];
  const ModelRender m = render_model(s, f, c, f.features->height, f.features->width);
  const LossBreakdown l = total_loss(m.render, f, &m.decoded->features, &s.field, c);
  EXPECT_GT(l.feat, 0.0);
  EXPECT_GT(l.rgb, 0.0);
  EXPECT_NEAR(l.total, c.lambda_rgb * l.rgb + c.lambda_depth * l.depth + c.lambda_feat * l.feat + c.lambda_tv * l.tv,
              1e-12);
}

TEST(Loss, FeatureTermWithoutTeacherIsConfigError) {
  TrainConfig c;
  RenderOutput r = flat_render(2, 2, 0.0, 1.0, 1.0);
  const Tensor decoded({2, 2, 1});
  EXPECT_THROW(total_loss(r, flat_frame(2, 2, 0.0, 1.0), &decoded, nullptr, c), ConfigError);
}

TEST(Trainer, MissingFeaturesWithFeatureLossIsConfigError) {
  std::vector<CameraFrame> fs = frames();
  fs[1].features.reset();
  EXPECT_THROW(initialize_state(tiny_config(), fs), ConfigError);
  TrainConfig off = tiny_config();
  off.lambda_feat = 0.0;
  EXPECT_NO_THROW(initialize_state(off, fs));
}

TEST(Trainer, InitializationIsSeeded) {
  const TrainConfig c = tiny_config();
  EXPECT_TRUE(initialize_state(c, frames()) == initialize_state(c, frames()));
  TrainConfig d = c;
  d.seed = 12;
  EXPECT_FALSE(initialize_state(c, frames()) == initialize_state(d, frames()));
}

TEST(Trainer, ZeroIterationsLeaveStateUnchanged) {
  const TrainConfig c = tiny_config();
  TrainState s = initialize_state(c, frames());
  const TrainState before = s;
  EXPECT_EQ(train_coarse(s, frames(), c, 0), 0);
  EXPECT_TRUE(s == before);
}

TEST(Trainer, CoarseLossDecreases) {
  TrainConfig c = tiny_config();
  c.coarse_iters = 200;
  std::vector<CameraFrame> one{frames()[0]};
  TrainState s = initialize_state(c, one);
  std::vector<double> losses;
  train_coarse(s, one, c, 200, [&](const StepReport& r) {
    EXPECT_EQ(r.stage, Stage::kCoarse);
    losses.push_back(r.loss.total);
  });
  ASSERT_EQ(losses.size(), 200u);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 20; ++i) {
    head += losses[static_cast<std::size_t>(i)];
    tail += losses[losses.size() - 1 - static_cast<std::size_t>(i)];
  }
  EXPECT_LT(tail, 0.7 * head);
}

TEST(Trainer, CoarseStageLeavesNetworksAndGridUntouched) {
  const TrainConfig c = tiny_config();
  TrainState s = initialize_state(c, frames());
  const TrainState before = s;
  train_coarse(s, frames(), c, 4);
  EXPECT_TRUE(s.field == before.field);
  EXPECT_TRUE(s.decoder == before.decoder);
  EXPECT_EQ(s.cloud.features, before.cloud.features);
  EXPECT_NE(s.cloud.positions, before.cloud.positions);
}

TEST(Trainer, FirstFineRenderEqualsCoarseRender) {
  const TrainConfig c = tiny_config();
  TrainState s = initialize_state(c, frames());
  train_coarse(s, frames(), c, c.coarse_iters);
  train_steps(s, frames(), c, 0);
  detail::advance_if_complete(s, c, frames().size());
  ASSERT_EQ(s.stage, Stage::kFine);
  TrainState coarse = s;
  coarse.stage = Stage::kCoarse;
  for (const CameraFrame& f : frames()) {
    const RenderOutput a = render_model(s, f, c).render, b = render_model(coarse, f, c).render;
    EXPECT_LT(max_abs_diff(a.color, b.color), 1e-12);
    EXPECT_LT(max_abs_diff(a.depth, b.depth), 1e-12);
    EXPECT_LT(max_abs_diff(a.feature, b.feature), 1e-12);
  }
}

TEST(Trainer, StagesAdvanceInOrder) {
  const TrainConfig c = tiny_config();
  TrainState s = initialize_state(c, frames());
  std::vector<Stage> seen;
  train(s, frames(), c, [&](const StepReport& r) { seen.push_back(r.stage); });
  ASSERT_EQ(seen.size(), 12u);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(seen[i], i < 6 ? Stage::kCoarse : Stage::kFine);
  EXPECT_EQ(s.stage, Stage::kDone);
  EXPECT_THROW(train_step(s, frames(), c), ContractError);
}

TEST(Trainer, PsnrCapEndsCoarseStageEarly) {
  TrainConfig c = tiny_config();
  c.coarse_psnr_cap = 1.0;
  TrainState s = initialize_state(c, frames());
  EXPECT_EQ(train_coarse(s, frames(), c, 5), 1);
  EXPECT_EQ(s.stage, Stage::kFine);
}

TEST(Trainer, FeatureLossOffLeavesSemanticGroupsAtInit) {
  TrainConfig c = tiny_config();
  c.enable_feature_loss = false;
  TrainState s = initialize_state(c, frames());
  const TrainState before = s;
  train(s, frames(), c);
  EXPECT_EQ(s.cloud.size(), before.cloud.size());
  EXPECT_EQ(s.cloud.features, before.cloud.features);
  EXPECT_TRUE(s.decoder == before.decoder);
  const auto a = s.net.all()[kFeatFeatIndex]->params(), b = before.net.all()[kFeatFeatIndex]->params();
  EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  EXPECT_FALSE(s.field == before.field);
}

TEST(Trainer, FeatureLossOnTrainsSemanticGroups) {
  const TrainConfig c = tiny_config();
  TrainState s = initialize_state(c, frames());
  const TrainState before = s;
  std::vector<double> feat;
  train(s, frames(), c, [&](const StepReport& r) { feat.push_back(r.loss.feat); });
  EXPECT_NE(s.cloud.features, before.cloud.features);
  EXPECT_FALSE(s.decoder == before.decoder);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(feat[i], 0.0);
  for (std::size_t i = 6; i < 12; ++i) EXPECT_GT(feat[i], 0.0);
}

TEST(Trainer, PositionLearningRateScalesWithExtent) {
  const TrainConfig c = tiny_config();
  TrainState s = initialize_state(c, frames());
  const StepReport r = train_step(s, frames(), c);
  ASSERT_EQ(r.lr.front().first, "position");
  EXPECT_DOUBLE_EQ(r.lr.front().second, lr_at_step(c.lr.position, 0) * s.scene_extent);
}

TEST(Trainer, NonFiniteLossAbortsWithoutUpdating) {
  const TrainConfig c = tiny_config();
  std::vector<CameraFrame> fs = frames();
  TrainState s = initialize_state(c, fs);
  for (auto& f : fs) f.image[0] = std::nan("");
  const TrainState before = s;
  EXPECT_THROW(train_step(s, fs, c), NumericalError);
  EXPECT_TRUE(s == before);
}

TEST(Trainer, StepReportSerializesToJson) {
  const TrainConfig c = tiny_config();
  TrainState s = initialize_state(c, frames());
  const auto j = step_report_json(train_step(s, frames(), c));
  EXPECT_EQ(j["stage"], "coarse");
  EXPECT_TRUE(j.contains("loss"));
  EXPECT_TRUE(j["lr"].contains("position"));
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const TrainConfig c = tiny_config();
  TrainState s = initialize_state(c, frames());
  train_steps(s, frames(), c, 8);
  const auto bytes = encode_checkpoint(s);
  const TrainState back = decode_checkpoint(bytes);
  EXPECT_TRUE(back == s);
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, FileRoundTrip) {
  const TrainConfig c = tiny_config();
  const TrainState s = initialize_state(c, frames());
  const auto path = std::filesystem::temp_directory_path() / "fe4dgs_ckpt_roundtrip.bin";
  save_checkpoint(s, path);
  EXPECT_TRUE(load_checkpoint(path) == s);
  std::filesystem::remove(path);
}

TEST(Checkpoint, ResumeMatchesUnbrokenRun) {
  const TrainConfig c = tiny_config();
  TrainState unbroken = initialize_state(c, frames());
  train_steps(unbroken, frames(), c, 3);
  TrainState resumed = decode_checkpoint(encode_checkpoint(unbroken));
  // Ten steps cross the coarse-to-fine boundary.
  train_steps(unbroken, frames(), c, 10);
  train_steps(resumed, frames(), c, 10);
  EXPECT_TRUE(resumed == unbroken);
  EXPECT_EQ(encode_checkpoint(resumed), encode_checkpoint(unbroken));
}

TEST(Checkpoint, BadMagicIsFormatError) {
  auto bytes = encode_checkpoint(initialize_state(tiny_config(), frames()));
  bytes[1] = 'X';
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 1u);
  }
}

TEST(Checkpoint, VersionMismatchIsFormatError) {
  auto bytes = encode_checkpoint(initialize_state(tiny_config(), frames()));
  bytes[4] = 9;
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, TruncationAndTrailingBytesAreFormatErrors) {
  const auto bytes = encode_checkpoint(initialize_state(tiny_config(), frames()));
  for (std::size_t cut : {std::size_t{3}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(decode_checkpoint(std::vector<char>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut))),
                 FormatError)
        << cut;
  }
  auto longer = bytes;
  longer.push_back(0);
  EXPECT_THROW(decode_checkpoint(longer), FormatError);
}

TEST(Config, IniRoundTrip) {
  TrainConfig c = tiny_config();
  c.lambda_tv = 0.125;
  c.lr.grid.delay_steps = 17;
  c.density.percent_dense = 0.02;
  c.enable_hexplane = false;
  c.render.background = Vec3(0.1, 0.2, 0.3);
  const TrainConfig back = config_from_ini(config_to_ini(c));
  EXPECT_TRUE(back == c);
  EXPECT_EQ(back.lambda_tv, 0.125);
  EXPECT_EQ(back.lr.grid.delay_steps, 17);
  EXPECT_EQ(back.multires, c.multires);
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, PartialIniKeepsDefaults) {
  const TrainConfig c = config_from_ini("[loss]\nlambda_depth = 0.5\n");
  EXPECT_EQ(c.lambda_depth, 0.5);
  EXPECT_EQ(c.lambda_rgb, 1.0);
  EXPECT_EQ(c.fine_iters, 6000);
}

TEST(Config, UnknownKeyIsConfigError) {
  EXPECT_THROW(config_from_ini("[loss]\nlambda_colour = 1\n"), ConfigError);
  EXPECT_THROW(config_from_ini("[nosuch]\nx = 1\n"), ConfigError);
  EXPECT_THROW(config_from_ini("[loss]\nlambda_rgb = abc\n"), ConfigError);
}

TEST(Config, HashIgnoresThreadCount) {
  TrainConfig a = tiny_config(), b = tiny_config();
  b.render.threads = 4;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.lambda_rgb = 0.5;
  EXPECT_NE(config_hash(a), config_hash(b));
}
