#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace lmd {

/// Decodes PNG (any bit depth / color type) or binary/ASCII PGM into a
/// [1, H, W] float32 tensor in [0, 1]. Color inputs are averaged over channels.
torch::Tensor read_image(const std::filesystem::path& path);

/// Width and height from the file header without decoding pixels.
std::pair<int64_t, int64_t> probe_image_size(const std::filesystem::path& path);

/// Writes [1, H, W] or [H, W] grayscale, clipped to [0, 1], as 8-bit PNG.
void write_png_gray(const std::filesystem::path& path, const torch::Tensor& image);

/// Writes [3, H, W] RGB, clipped to [0, 1], as 8-bit PNG.
void write_png_rgb(const std::filesystem::path& path, const torch::Tensor& image);

/// Bilinear resize of a [C, H, W] image.
torch::Tensor resize_image(const torch::Tensor& image, int64_t height, int64_t width);

}  // namespace lmd
