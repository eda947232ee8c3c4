#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/io/dataset.hpp"
#include "fe4dgs/io/png.hpp"
#include "fe4dgs/io/synthetic.hpp"

using namespace fe4dgs;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("fe4dgs_" + tag + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

SyntheticParams small_params() {
  SyntheticParams p;
  p.width = 24;
  p.height = 20;
  p.frames = 4;
  p.feature_height = 10;
  p.feature_width = 12;
  p.teacher_channels = 6;
  return p;
}

}  // namespace

TEST(Png, RoundTrips8BitRgb) {
  TempDir dir("png8");
  PngImage img{5, 3, 3, 8, {}};
  for (std::size_t i = 0; i < 45; ++i) img.samples.push_back(static_cast<std::uint16_t>((i * 37) % 256));
  write_png(dir.path / "a.png", img);
  const PngImage back = read_png(dir.path / "a.png");
  EXPECT_EQ(back.width, 5u);
  EXPECT_EQ(back.height, 3u);
  EXPECT_EQ(back.channels, 3u);
  EXPECT_EQ(back.bit_depth, 8);
  EXPECT_EQ(back.samples, img.samples);
}

TEST(Png, RoundTrips16BitGray) {
  TempDir dir("png16");
  PngImage img{4, 4, 1, 16, {}};
  for (std::size_t i = 0; i < 16; ++i) img.samples.push_back(static_cast<std::uint16_t>(i * 4099));
  write_png(dir.path / "d.png", img);
  const PngImage back = read_png(dir.path / "d.png");
  EXPECT_EQ(back.bit_depth, 16);
  EXPECT_EQ(back.channels, 1u);
  EXPECT_EQ(back.samples, img.samples);
}

TEST(Png, MissingFileIsDataError) {
  EXPECT_THROW(read_png("/nonexistent/x.png"), DataError);
}

TEST(Synthetic, SameSeedGivesIdenticalScene) {
  const auto a = make_synthetic_scene(small_params()), b = make_synthetic_scene(small_params());
  ASSERT_EQ(a.frames.size(), b.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    EXPECT_EQ(a.frames[i].image, b.frames[i].image);
    EXPECT_EQ(a.frames[i].depth, b.frames[i].depth);
    EXPECT_EQ(*a.frames[i].features, *b.frames[i].features);
    EXPECT_EQ(a.labels[i], b.labels[i]);
  }
}

TEST(Synthetic, SameSeedGivesByteIdenticalDataset) {
  TempDir d1("synA"), d2("synB");
  write_dataset(d1.path, make_synthetic_scene(small_params()).frames, make_synthetic_scene(small_params()).labels);
  write_dataset(d2.path, make_synthetic_scene(small_params()).frames, make_synthetic_scene(small_params()).labels);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(d1.path)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), d1.path);
    EXPECT_EQ(slurp(e.path()), slurp(d2.path / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 4u * 5u);
}

TEST(Synthetic, ZeroMotionFramesAreIdentical) {
  auto p = small_params();
  p.motion_amplitude = 0.0;
  const auto s = make_synthetic_scene(p);
  for (std::size_t i = 1; i < s.frames.size(); ++i) {
    EXPECT_EQ(s.frames[i].image, s.frames[0].image);
    EXPECT_EQ(s.frames[i].depth, s.frames[0].depth);
    EXPECT_EQ(*s.frames[i].features, *s.frames[0].features);
  }
}

TEST(Synthetic, MovingScriptChangesFrames) {
  const auto s = make_synthetic_scene(small_params());
  EXPECT_NE(s.frames[1].image, s.frames[0].image);
}

TEST(Synthetic, DepthAtBlobCentreMatchesScript) {
  SyntheticParams p = small_params();
  p.width = p.height = 48;
  const auto s = make_synthetic_scene(p);
  for (std::size_t fi = 0; fi < s.frames.size(); ++fi) {
    const CameraFrame& f = s.frames[fi];
    for (std::size_t b = 1; b <= p.blobs; ++b) {
      const Vec3 c = s.blob_centres[b] + s.blob_offset(b, f.time);
      const double u = f.fx() * c.x() / c.z() + f.cx(), v = f.fy() * c.y() / c.z() + f.cy();
      const auto x = static_cast<std::size_t>(std::lround(u)), y = static_cast<std::size_t>(std::lround(v));
      ASSERT_LT(x, f.width);
      ASSERT_LT(y, f.height);
      EXPECT_NEAR(f.depth.at(y, x), c.z(), 1e-3) << "frame " << fi << " blob " << b;
      EXPECT_EQ(s.labels[fi].at(y, x), static_cast<int>(b));
    }
  }
}

TEST(Synthetic, TeacherFeaturesBlendClassPatterns) {
  const auto s = make_synthetic_scene(small_params());
  const FeatureMap& f = *s.frames[0].features;
  EXPECT_EQ(f.channels, 6u);
  EXPECT_EQ(f.height, 10u);
  EXPECT_EQ(f.width, 12u);
  for (std::size_t y = 0; y < f.height; ++y) {
    for (std::size_t x = 0; x < f.width; ++x) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 4; ++c) {
        EXPECT_GE(f.at(c, y, x), 0.0);
        sum += f.at(c, y, x);
      }
      EXPECT_LE(sum, 1.0 + 1e-12);
      for (std::size_t c = 4; c < 6; ++c) EXPECT_EQ(f.at(c, y, x), 0.0);
    }
  }
}

TEST(Synthetic, RejectsTooFewTeacherChannels) {
  auto p = small_params();
  p.teacher_channels = 3;
  EXPECT_THROW(make_synthetic_scene(p), ConfigError);
}

TEST(Llff, RoundTripsPoseAndIntrinsics) {
  CameraFrame f;
  f.width = 30;
  f.height = 20;
  f.intrinsics = make_intrinsics(25.0, 25.0, 14.5, 9.5);
  const Mat3 r = Eigen::AngleAxisd(0.3, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  f.extrinsics.topLeftCorner<3, 3>() = r;
  f.extrinsics.topRightCorner<3, 1>() = Vec3(0.1, -0.2, 0.5);
  const LlffRow row = camera_to_llff(f, 1.0, 5.0);
  CameraFrame g;
  g.width = 30;
  g.height = 20;
  llff_to_camera(row, g);
  EXPECT_LT((g.extrinsics - f.extrinsics).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((g.intrinsics - f.intrinsics).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Llff, IdentityPoseHasDownRightBackColumns) {
  CameraFrame f;
  f.width = f.height = 8;
  f.intrinsics = make_intrinsics(8, 8, 3.5, 3.5);
  const LlffRow row = camera_to_llff(f, 0.0, 0.0);
  // Row-major 3x5: column 0 = camera y (down), column 1 = x (right), column 2 = -z (back).
  EXPECT_EQ(row.v[0], 0.0);
  EXPECT_EQ(row.v[1], 1.0);
  EXPECT_EQ(row.v[5], 1.0);
  EXPECT_EQ(row.v[6], 0.0);
  EXPECT_EQ(row.v[12], -1.0);
  EXPECT_EQ(row.v[14], 8.0);
}

TEST(Dataset, WriteThenLoadPreservesFrames) {
  TempDir dir("ds");
  const auto s = make_synthetic_scene(small_params());
  write_dataset(dir.path, s.frames, s.labels);
  const Dataset ds = load_dataset(dir.path);
  ASSERT_EQ(ds.frames.size(), s.frames.size());
  ASSERT_TRUE(ds.has_labels());
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    const CameraFrame &a = ds.frames[i], &b = s.frames[i];
    EXPECT_EQ(a.time, b.time);
    EXPECT_LT((a.intrinsics - b.intrinsics).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((a.extrinsics - b.extrinsics).cwiseAbs().maxCoeff(), 1e-12);
    for (std::size_t k = 0; k < a.image.size(); ++k) EXPECT_NEAR(a.image[k], b.image[k], 0.5 / 255.0 + 1e-12);
    for (std::size_t k = 0; k < a.depth.size(); ++k) EXPECT_NEAR(a.depth[k], b.depth[k], 0.5e-3 + 1e-12);
    EXPECT_EQ(a.mask, Tensor({b.height, b.width}, 1.0));
    ASSERT_TRUE(a.features);
    for (std::size_t k = 0; k < a.features->data.size(); ++k) {
      EXPECT_NEAR(a.features->data[k], b.features->data[k], 1e-6);
    }
    EXPECT_EQ(*ds.labels[i], s.labels[i]);
  }
}

TEST(Dataset, MissingOptionalFilesUseDefaults) {
  TempDir dir("dsmin");
  fs::create_directories(dir.path / "images");
  for (std::size_t i = 0; i < 3; ++i) write_png(dir.path / "images" / frame_name(i, "png"), PngImage{6, 4, 3, 8, std::vector<std::uint16_t>(72, 128)});
  const Dataset ds = load_dataset(dir.path);
  ASSERT_EQ(ds.frames.size(), 3u);
  EXPECT_EQ(ds.frames[1].time, 0.5);
  EXPECT_EQ(ds.frames[0].extrinsics, Mat4::Identity());
  EXPECT_EQ(ds.frames[0].fx(), 6.0);
  EXPECT_TRUE(ds.frames[0].depth.empty());
  EXPECT_FALSE(ds.frames[0].features);
  EXPECT_FALSE(ds.has_labels());
}

TEST(Dataset, InconsistentFrameCountsAreDataErrors) {
  TempDir dir("dsbad");
  const auto s = make_synthetic_scene(small_params());
  write_dataset(dir.path, s.frames);
  fs::remove(dir.path / "masks" / frame_name(3, "png"));
  EXPECT_THROW(load_dataset(dir.path), DataError);
}

TEST(Dataset, NonUniformImageSizeIsDataError) {
  TempDir dir("dssize");
  fs::create_directories(dir.path / "images");
  write_png(dir.path / "images" / frame_name(0, "png"), PngImage{4, 4, 3, 8, std::vector<std::uint16_t>(48, 0)});
  write_png(dir.path / "images" / frame_name(1, "png"), PngImage{5, 4, 3, 8, std::vector<std::uint16_t>(60, 0)});
  EXPECT_THROW(load_dataset(dir.path), DataError);
}

TEST(Dataset, MalformedPoseRowIsDataError) {
  TempDir dir("dspose");
  const auto s = make_synthetic_scene(small_params());
  write_dataset(dir.path, s.frames);
  std::ofstream(dir.path / "poses_bounds.txt") << "1 2 3\n1 2 3\n1 2 3\n1 2 3\n";
  EXPECT_THROW(load_dataset(dir.path), DataError);
}

TEST(Split, EveryEighthOf63LeavesFiftyFiveForTraining) {
  const FrameSplit s = split_every_nth(63);
  EXPECT_EQ(s.train.size(), 55u);
  EXPECT_EQ(s.test, (std::vector<std::size_t>{0, 8, 16, 24, 32, 40, 48, 56}));
  EXPECT_EQ(s.train.front(), 1u);
  EXPECT_EQ(s.train.back(), 62u);
}

TEST(Split, PartitionIsDisjointAndComplete) {
  const FrameSplit s = split_every_nth(20, 8, 3);
  std::vector<int> seen(20, 0);
  for (auto i : s.train) ++seen[i];
  for (auto i : s.test) ++seen[i];
  for (int v : seen) EXPECT_EQ(v, 1);
  EXPECT_EQ(s.test, (std::vector<std::size_t>{3, 11, 19}));
}
