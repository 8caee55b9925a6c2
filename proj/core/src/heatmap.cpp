#include "landmark_diffusion/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lmd {

bool LandmarkSet::in_bounds(size_t i) const {
  const auto& p = points.at(i);
  return std::isfinite(p.x) && std::isfinite(p.y) && p.x >= 0.0 && p.y >= 0.0 &&
         p.x < static_cast<double>(image_size.width) &&
         p.y < static_cast<double>(image_size.height);
}

HeatmapStack encode_heatmaps(const LandmarkSet& landmarks, int64_t height, int64_t width,
                             double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("heatmap sigma must be positive");
  if (landmarks.points.empty()) throw std::invalid_argument("cannot encode an empty landmark set");
  if (height <= 0 || width <= 0) throw std::invalid_argument("heatmap grid must be non-empty");

  const auto n = static_cast<int64_t>(landmarks.size());
  HeatmapStack stack;
  stack.sigma = sigma;
  stack.encoding = HeatmapEncoding::kBinaryGaussian;
  stack.maps = torch::zeros({n, height, width}, torch::kFloat32);
  stack.out_of_bounds.assign(landmarks.size(), false);
  auto acc = stack.maps.accessor<float, 3>();
  const double two_s2 = 2.0 * sigma * sigma;

  for (int64_t c = 0; c < n; ++c) {
    const auto& p = landmarks.points[c];
    const bool inside = std::isfinite(p.x) && std::isfinite(p.y) && p.x >= 0.0 && p.y >= 0.0 &&
                        p.x < static_cast<double>(width) && p.y < static_cast<double>(height);
    if (!inside) {
      stack.out_of_bounds[c] = true;
      continue;
    }
    const double nx = std::clamp(std::round(p.x), 0.0, static_cast<double>(width - 1));
    const double ny = std::clamp(std::round(p.y), 0.0, static_cast<double>(height - 1));
    const double peak = std::exp(-((nx - p.x) * (nx - p.x) + (ny - p.y) * (ny - p.y)) / two_s2);
    const double half = 0.5 * peak;
    // The disk radius is below 1.2 sigma; scan a slightly larger window.
    const auto reach = static_cast<int64_t>(std::ceil(2.0 * sigma)) + 1;
    const auto x0 = std::max<int64_t>(0, static_cast<int64_t>(nx) - reach);
    const auto x1 = std::min<int64_t>(width - 1, static_cast<int64_t>(nx) + reach);
    const auto y0 = std::max<int64_t>(0, static_cast<int64_t>(ny) - reach);
    const auto y1 = std::min<int64_t>(height - 1, static_cast<int64_t>(ny) + reach);
    for (int64_t j = y0; j <= y1; ++j) {
      for (int64_t i = x0; i <= x1; ++i) {
        const double dx = static_cast<double>(i) - p.x;
        const double dy = static_cast<double>(j) - p.y;
        if (std::exp(-(dx * dx + dy * dy) / two_s2) > half) acc[c][j][i] = 1.0f;
      }
    }
  }
  return stack;
}

torch::Tensor encode_heatmap_batch(const std::vector<LandmarkSet>& batch, int64_t height,
                                   int64_t width, double sigma) {
  std::vector<torch::Tensor> maps;
  maps.reserve(batch.size());
  for (const auto& set : batch) maps.push_back(encode_heatmaps(set, height, width, sigma).maps);
  return torch::stack(maps);
}

LandmarkSet decode_centroid(const HeatmapStack& stack) {
  if (!stack.maps.defined() || stack.maps.dim() != 3 || stack.maps.size(0) < 1)
    throw std::invalid_argument("decode_centroid expects an [N, H, W] stack with N >= 1");
  auto maps = stack.maps.detach().to(torch::kFloat64).contiguous();
  const auto n = maps.size(0), h = maps.size(1), w = maps.size(2);
  auto acc = maps.accessor<double, 3>();

  LandmarkSet out;
  out.image_size = {w, h};
  out.points.reserve(static_cast<size_t>(n));
  for (int64_t c = 0; c < n; ++c) {
    double sx = 0.0, sy = 0.0;
    int64_t count = 0;
    double best = -std::numeric_limits<double>::infinity();
    int64_t best_i = -1, best_j = -1;
    for (int64_t j = 0; j < h; ++j) {
      for (int64_t i = 0; i < w; ++i) {
        const double v = acc[c][j][i];
        if (std::isnan(v)) continue;
        const double p = stack.encoding == HeatmapEncoding::kLogits ? 1.0 / (1.0 + std::exp(-v)) : v;
        if (p > 0.5) {
          sx += static_cast<double>(i);
          sy += static_cast<double>(j);
          ++count;
        }
        if (v > best) {
          best = v;
          best_i = i;
          best_j = j;
        }
      }
    }
    if (best_i < 0) throw std::invalid_argument("heatmap channel " + std::to_string(c) + " is all NaN");
    if (count > 0) {
      out.points.push_back({sx / static_cast<double>(count), sy / static_cast<double>(count)});
    } else {
      out.points.push_back({static_cast<double>(best_i), static_cast<double>(best_j)});
    }
  }
  return out;
}

LandmarkSet rescale_landmarks(const LandmarkSet& landmarks, ImageSize from, ImageSize to) {
  if (from.width <= 0 || from.height <= 0)
    throw std::invalid_argument("rescale_landmarks: source size must be positive");
  if (to.width <= 0 || to.height <= 0)
    throw std::invalid_argument("rescale_landmarks: target size must be positive");
  const double sx = static_cast<double>(to.width) / static_cast<double>(from.width);
  const double sy = static_cast<double>(to.height) / static_cast<double>(from.height);
  LandmarkSet out = landmarks;
  out.image_size = to;
  for (auto& p : out.points) {
    p.x *= sx;
    p.y *= sy;
  }
  return out;
}

}  // namespace lmd
