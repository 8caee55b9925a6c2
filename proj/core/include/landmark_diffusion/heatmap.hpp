#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace lmd {

/// Pixel coordinates: origin top-left, x rightward, y downward.
struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct ImageSize {
  int64_t width = 0;
  int64_t height = 0;

  bool operator==(const ImageSize&) const = default;
};

struct LandmarkSet {
  std::vector<Point> points;
  std::vector<std::string> names;  // empty or one per point
  ImageSize image_size;

  size_t size() const { return points.size(); }
  bool in_bounds(size_t i) const;
};

enum class HeatmapEncoding { kBinaryGaussian, kLogits };

struct HeatmapStack {
  torch::Tensor maps;  // [N, H, W] float32
  HeatmapEncoding encoding = HeatmapEncoding::kBinaryGaussian;
  double sigma = 5.0;
  std::vector<bool> out_of_bounds;  // per channel; set by the encoder
};

/// Binary disk heatmaps: pixel (i, j) (column i, row j) is 1 iff
/// exp(-((i - x)^2 + (j - y)^2) / (2 sigma^2)) exceeds half the largest value
/// of that exponential over the grid, i.e. its value at the grid point
/// nearest the landmark. Out-of-bounds landmarks give an all-zero channel.
HeatmapStack encode_heatmaps(const LandmarkSet& landmarks, int64_t height, int64_t width,
                             double sigma = 5.0);

/// [B, N, H, W] binary targets for a batch of landmark sets.
torch::Tensor encode_heatmap_batch(const std::vector<LandmarkSet>& batch, int64_t height,
                                   int64_t width, double sigma = 5.0);

/// Per channel: probabilities (logistic of logits for kLogits), pixels with
/// p > 0.5, mean (x, y) of those pixels. Falls back to the argmax when no
/// pixel passes. Returns grid coordinates.
LandmarkSet decode_centroid(const HeatmapStack& stack);

/// Scales each axis by to/from.
LandmarkSet rescale_landmarks(const LandmarkSet& landmarks, ImageSize from, ImageSize to);

}  // namespace lmd
