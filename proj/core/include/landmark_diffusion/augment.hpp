#pragma once

#include <array>
#include <random>
#include <utility>

#include <torch/torch.h>

#include "landmark_diffusion/heatmap.hpp"

namespace lmd {

/// Symmetric ranges around the identity transform.
struct AugmentationParams {
  double rotation_deg = 2.0;     // angle in [-r, r]
  double scale_delta = 0.02;     // factor in [1 - d, 1 + d]
  double translation = 0.02;     // shift in [-f, f] times the side length, per axis
};

struct AffineSample {
  double rotation_deg = 0.0;
  double scale = 1.0;
  double tx = 0.0;  // px
  double ty = 0.0;  // px
};

/// Row-major 2x3 matrix mapping source pixel coordinates to output coordinates.
using AffineMatrix = std::array<double, 6>;

AffineSample sample_affine(const AugmentationParams& params, ImageSize size, std::mt19937_64& rng);

/// Rotation and scale about the pixel-grid centre ((W-1)/2, (H-1)/2), then translation.
AffineMatrix affine_matrix(const AffineSample& sample, ImageSize size);

Point apply_affine(const AffineMatrix& m, Point p);

/// Warps a [C, H, W] image (bilinear, border replication) and maps the
/// landmarks through the same matrix. Landmarks may leave the image.
std::pair<torch::Tensor, LandmarkSet> augment(const torch::Tensor& image,
                                              const LandmarkSet& landmarks,
                                              const AffineSample& sample);

}  // namespace lmd
