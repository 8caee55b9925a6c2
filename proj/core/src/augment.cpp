#include "landmark_diffusion/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lmd {

AffineSample sample_affine(const AugmentationParams& params, ImageSize size, std::mt19937_64& rng) {
  auto uniform = [&](double half_range) {
    if (half_range <= 0.0) return 0.0;
    return std::uniform_real_distribution<double>(-half_range, half_range)(rng);
  };
  AffineSample s;
  s.rotation_deg = uniform(params.rotation_deg);
  s.scale = 1.0 + uniform(params.scale_delta);
  s.tx = uniform(params.translation) * static_cast<double>(size.width);
  s.ty = uniform(params.translation) * static_cast<double>(size.height);
  return s;
}

AffineMatrix affine_matrix(const AffineSample& s, ImageSize size) {
  const double theta = s.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta) * s.scale;
  const double n = std::sin(theta) * s.scale;
  const double cx = (static_cast<double>(size.width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(size.height) - 1.0) / 2.0;
  // p' = R (p - c) + c + t
  return {c, -n, cx - c * cx + n * cy + s.tx, n, c, cy - n * cx - c * cy + s.ty};
}

Point apply_affine(const AffineMatrix& m, Point p) {
  return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]};
}

std::pair<torch::Tensor, LandmarkSet> augment(const torch::Tensor& image,
                                              const LandmarkSet& landmarks,
                                              const AffineSample& sample) {
  const auto channels = image.size(0), h = image.size(1), w = image.size(2);
  const auto m = affine_matrix(sample, {w, h});

  LandmarkSet moved = landmarks;
  for (auto& p : moved.points) p = apply_affine(m, p);

  // Inverse of the 2x2 part for backward mapping of output pixels.
  const double det = m[0] * m[4] - m[1] * m[3];
  const double i00 = m[4] / det, i01 = -m[1] / det, i10 = -m[3] / det, i11 = m[0] / det;

  auto src = image.to(torch::kFloat32).contiguous();
  auto out = torch::empty_like(src);
  auto in_acc = src.accessor<float, 3>();
  auto out_acc = out.accessor<float, 3>();
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - m[2];
      const double dy = static_cast<double>(y) - m[5];
      const double sx = std::clamp(i00 * dx + i01 * dy, 0.0, static_cast<double>(w - 1));
      const double sy = std::clamp(i10 * dx + i11 * dy, 0.0, static_cast<double>(h - 1));
      const auto x0 = static_cast<int64_t>(std::floor(sx));
      const auto y0 = static_cast<int64_t>(std::floor(sy));
      const auto x1 = std::min(x0 + 1, w - 1);
      const auto y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      for (int64_t c = 0; c < channels; ++c) {
        const double top = in_acc[c][y0][x0] * (1.0 - fx) + in_acc[c][y0][x1] * fx;
        const double bottom = in_acc[c][y1][x0] * (1.0 - fx) + in_acc[c][y1][x1] * fx;
        out_acc[c][y][x] = static_cast<float>(top * (1.0 - fy) + bottom * fy);
      }
    }
  }
  return {out, moved};
}

}  // namespace lmd
