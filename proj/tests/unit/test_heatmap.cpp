#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "landmark_diffusion/heatmap.hpp"

namespace lmd {
namespace {

LandmarkSet one_point(double x, double y, int64_t w = 64, int64_t h = 64) {
  return LandmarkSet{{{x, y}}, {}, {w, h}};
}

// Direct per-pixel evaluation: G over the whole grid, its maximum, then the
// half-maximum comparison.
torch::Tensor brute_force_disk(Point p, int64_t h, int64_t w, double sigma) {
  std::vector<double> g(static_cast<size_t>(h * w));
  double peak = 0.0;
  for (int64_t j = 0; j < h; ++j)
    for (int64_t i = 0; i < w; ++i) {
      const double dx = static_cast<double>(i) - p.x, dy = static_cast<double>(j) - p.y;
      g[static_cast<size_t>(j * w + i)] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      peak = std::max(peak, g[static_cast<size_t>(j * w + i)]);
    }
  auto out = torch::zeros({h, w});
  auto acc = out.accessor<float, 2>();
  for (int64_t j = 0; j < h; ++j)
    for (int64_t i = 0; i < w; ++i)
      if (g[static_cast<size_t>(j * w + i)] > 0.5 * peak) acc[j][i] = 1.0f;
  return out;
}

TEST(Heatmap, CentreOfOnGridLandmarkIsSet) {
  auto s = encode_heatmaps(one_point(20, 31), 64, 64, 5.0);
  EXPECT_EQ(s.maps[0][31][20].item<float>(), 1.0f);
  EXPECT_FALSE(s.out_of_bounds[0]);
}

TEST(Heatmap, InteriorDiskHas109Pixels) {
  auto s = encode_heatmaps(one_point(32, 32), 64, 64, 5.0);
  EXPECT_EQ(s.maps.sum().item<double>(), 109.0);
  // Lattice points strictly inside radius^2 = 50 ln 2.
  int count = 0;
  for (int dx = -10; dx <= 10; ++dx)
    for (int dy = -10; dy <= 10; ++dy) count += dx * dx + dy * dy < 50.0 * std::log(2.0);
  EXPECT_EQ(count, 109);
}

TEST(Heatmap, PixelAtDistanceTenIsZero) {
  auto s = encode_heatmaps(one_point(32, 32), 64, 64, 5.0);
  EXPECT_EQ(s.maps[0][32][42].item<float>(), 0.0f);
  EXPECT_EQ(s.maps[0][22][32].item<float>(), 0.0f);
}

TEST(Heatmap, MatchesBruteForceBitwise) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> coord(-2.0, 66.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Point p{coord(rng), coord(rng)};
    const double sigma = trial % 2 ? 5.0 : 2.5;
    auto s = encode_heatmaps(one_point(p.x, p.y), 64, 64, sigma);
    auto expected = brute_force_disk(p, 64, 64, sigma);
    const bool inside = p.x >= 0 && p.y >= 0 && p.x < 64 && p.y < 64;
    if (!inside) expected.zero_();
    EXPECT_TRUE(torch::equal(s.maps[0], expected)) << p.x << "," << p.y;
    EXPECT_EQ(s.out_of_bounds[0], !inside);
  }
}

TEST(Heatmap, OutOfBoundsLandmarkGivesEmptyChannel) {
  LandmarkSet set{{{10, 10}, {-1, 5}, {70, 3}}, {}, {64, 64}};
  auto s = encode_heatmaps(set, 64, 64, 5.0);
  EXPECT_GT(s.maps[0].sum().item<double>(), 0.0);
  EXPECT_EQ(s.maps[1].sum().item<double>(), 0.0);
  EXPECT_EQ(s.maps[2].sum().item<double>(), 0.0);
  EXPECT_EQ(s.out_of_bounds, (std::vector<bool>{false, true, true}));
}

TEST(Heatmap, RejectsBadArguments) {
  EXPECT_THROW(encode_heatmaps(one_point(1, 1), 64, 64, 0.0), std::invalid_argument);
  EXPECT_THROW(encode_heatmaps(LandmarkSet{}, 64, 64, 5.0), std::invalid_argument);
  EXPECT_THROW(decode_centroid(HeatmapStack{torch::zeros({4, 4}), HeatmapEncoding::kBinaryGaussian, 5.0, {}}),
               std::invalid_argument);
}

TEST(Centroid, SymmetricSquareDecodesToCentre) {
  auto maps = torch::zeros({1, 8, 8});
  for (auto [x, y] : {std::pair{2, 2}, {2, 4}, {4, 2}, {4, 4}}) maps[0][y][x] = 1.0f;
  auto p = decode_centroid(HeatmapStack{maps, HeatmapEncoding::kBinaryGaussian, 5.0, {}});
  EXPECT_DOUBLE_EQ(p.points[0].x, 3.0);
  EXPECT_DOUBLE_EQ(p.points[0].y, 3.0);
}

TEST(Centroid, SinglePixelDecodesToItself) {
  auto maps = torch::zeros({1, 12, 12});
  maps[0][9][7] = 1.0f;
  auto p = decode_centroid(HeatmapStack{maps, HeatmapEncoding::kBinaryGaussian, 5.0, {}});
  EXPECT_DOUBLE_EQ(p.points[0].x, 7.0);
  EXPECT_DOUBLE_EQ(p.points[0].y, 9.0);
}

TEST(Centroid, FallsBackToArgmaxWhenNothingPasses) {
  auto maps = torch::full({1, 6, 6}, -5.0f);
  maps[0][1][4] = -1.0f;
  auto p = decode_centroid(HeatmapStack{maps, HeatmapEncoding::kLogits, 5.0, {}});
  EXPECT_DOUBLE_EQ(p.points[0].x, 4.0);
  EXPECT_DOUBLE_EQ(p.points[0].y, 1.0);
}

TEST(Centroid, LogitsThresholdAtZero) {
  auto maps = torch::full({1, 6, 6}, -3.0f);
  maps[0][2][2] = 2.0f;
  maps[0][2][4] = 0.5f;
  auto p = decode_centroid(HeatmapStack{maps, HeatmapEncoding::kLogits, 5.0, {}});
  EXPECT_DOUBLE_EQ(p.points[0].x, 3.0);
  EXPECT_DOUBLE_EQ(p.points[0].y, 2.0);
}

TEST(Centroid, EncodeDecodeRoundTripOnGrid) {
  // Disks clipped by the border pull the centroid inward, so stay 6 px from it.
  for (auto [x, y] : {std::pair{32, 32}, {7, 50}, {57, 6}}) {
    auto s = encode_heatmaps(one_point(x, y), 64, 64, 5.0);
    auto p = decode_centroid(s);
    EXPECT_LE(std::hypot(p.points[0].x - x, p.points[0].y - y), 0.5);
  }
}

TEST(Centroid, EncodeDecodeRoundTripOffGridInterior) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> coord(8.0, 56.0);
  for (int trial = 0; trial < 200; ++trial) {
    const double x = coord(rng), y = coord(rng);
    auto p = decode_centroid(encode_heatmaps(one_point(x, y), 64, 64, 5.0));
    EXPECT_LE(std::hypot(p.points[0].x - x, p.points[0].y - y), 0.5) << x << "," << y;
  }
}

TEST(Rescale, IdentityAndExamples) {
  auto set = LandmarkSet{{{100, 50}, {3.25, 7.5}}, {}, {200, 200}};
  auto same = rescale_landmarks(set, {200, 200}, {200, 200});
  EXPECT_EQ(same.points[0].x, 100);
  EXPECT_EQ(same.points[1].y, 7.5);
  auto half = rescale_landmarks(set, {200, 200}, {100, 100});
  EXPECT_DOUBLE_EQ(half.points[0].x, 50);
  EXPECT_DOUBLE_EQ(half.points[0].y, 25);
  EXPECT_EQ(half.image_size, (ImageSize{100, 100}));
}

TEST(Rescale, RoundTripWithinTolerance) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1000);
  for (int i = 0; i < 100; ++i) {
    auto set = LandmarkSet{{{u(rng), u(rng)}}, {}, {1935, 2400}};
    auto back = rescale_landmarks(rescale_landmarks(set, {1935, 2400}, {256, 256}), {256, 256}, {1935, 2400});
    EXPECT_NEAR(back.points[0].x, set.points[0].x, 1e-9);
    EXPECT_NEAR(back.points[0].y, set.points[0].y, 1e-9);
  }
  EXPECT_THROW(rescale_landmarks(LandmarkSet{}, {0, 5}, {5, 5}), std::invalid_argument);
}

}  // namespace
}  // namespace lmd
