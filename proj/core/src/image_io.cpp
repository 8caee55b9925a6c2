#include "landmark_diffusion/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <vector>

namespace lmd {
namespace {

using FilePtr = std::unique_ptr<FILE, int (*)(FILE*)>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode), &std::fclose);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return f;
}

torch::Tensor read_png(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw std::runtime_error(path.string() + " is not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw std::runtime_error("libpng initialisation failed");
  std::vector<png_bytep> rows;
  std::vector<uint16_t> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("failed to decode PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth < 8) png_set_packing(png);
  if (depth <= 8) png_set_expand_16(png);
  png_set_strip_alpha(png);
  png_set_swap(png);  // 16-bit samples in host (little-endian) order
  png_read_update_info(png, info);
  const auto width = static_cast<int64_t>(png_get_image_width(png, info));
  const auto height = static_cast<int64_t>(png_get_image_height(png, info));
  const auto channels = static_cast<int64_t>(png_get_channels(png, info));
  const size_t rowbytes = png_get_rowbytes(png, info);
  pixels.resize(static_cast<size_t>(height) * rowbytes / 2);
  rows.resize(static_cast<size_t>(height));
  for (int64_t y = 0; y < height; ++y)
    rows[y] = reinterpret_cast<png_bytep>(pixels.data()) + static_cast<size_t>(y) * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  auto out = torch::empty({1, height, width}, torch::kFloat32);
  auto acc = out.accessor<float, 3>();
  const size_t stride = rowbytes / 2;
  for (int64_t y = 0; y < height; ++y) {
    for (int64_t x = 0; x < width; ++x) {
      double sum = 0.0;
      for (int64_t c = 0; c < channels; ++c) sum += pixels[y * stride + x * channels + c];
      acc[0][y][x] = static_cast<float>(sum / static_cast<double>(channels) / 65535.0);
    }
  }
  return out;
}

torch::Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P2") throw std::runtime_error(path.string() + " is not a PGM file");
  auto next_int = [&]() {
    int64_t v = 0;
    while (in >> std::ws && in.peek() == '#') {
      std::string line;
      std::getline(in, line);
    }
    if (!(in >> v)) throw std::runtime_error("malformed PGM header in " + path.string());
    return v;
  };
  const int64_t width = next_int(), height = next_int(), maxval = next_int();
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535)
    throw std::runtime_error("invalid PGM dimensions in " + path.string());
  auto out = torch::empty({1, height, width}, torch::kFloat32);
  auto acc = out.accessor<float, 3>();
  if (magic == "P5") {
    in.get();
    const int64_t bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(static_cast<size_t>(width * height * bytes));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw std::runtime_error("truncated PGM payload in " + path.string());
    for (int64_t i = 0; i < width * height; ++i) {
      const double v = bytes == 2 ? (buf[2 * i] << 8 | buf[2 * i + 1]) : buf[i];
      acc[0][i / width][i % width] = static_cast<float>(v / static_cast<double>(maxval));
    }
  } else {
    for (int64_t i = 0; i < width * height; ++i)
      acc[0][i / width][i % width] = static_cast<float>(static_cast<double>(next_int()) / maxval);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const torch::Tensor& chw, int color_type) {
  auto img = (chw.detach().to(torch::kFloat32).clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8);
  img = img.permute({1, 2, 0}).contiguous();  // HWC
  const auto height = img.size(0), width = img.size(1), channels = img.size(2);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw std::runtime_error("libpng initialisation failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed to write PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  auto* base = img.data_ptr<uint8_t>();
  for (int64_t y = 0; y < height; ++y) png_write_row(png, base + y * width * channels);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

torch::Tensor read_image(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".pgm" || ext == ".PGM") return read_pgm(path);
  return read_png(path);
}

std::pair<int64_t, int64_t> probe_image_size(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".pgm" || ext == ".PGM") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string magic;
    in >> magic;
    int64_t dims[2] = {0, 0};
    for (auto& d : dims) {
      while (in >> std::ws && in.peek() == '#') {
        std::string line;
        std::getline(in, line);
      }
      if (!(in >> d)) throw std::runtime_error("malformed PGM header in " + path.string());
    }
    return {dims[0], dims[1]};
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  unsigned char head[24];
  in.read(reinterpret_cast<char*>(head), sizeof(head));
  if (!in || png_sig_cmp(head, 0, 8) != 0) throw std::runtime_error(path.string() + " is not a PNG file");
  auto be32 = [&](int at) {
    return static_cast<int64_t>(head[at]) << 24 | static_cast<int64_t>(head[at + 1]) << 16 |
           static_cast<int64_t>(head[at + 2]) << 8 | static_cast<int64_t>(head[at + 3]);
  };
  return {be32(16), be32(20)};
}

void write_png_gray(const std::filesystem::path& path, const torch::Tensor& image) {
  auto chw = image.dim() == 2 ? image.unsqueeze(0) : image;
  if (chw.dim() != 3 || chw.size(0) != 1) throw std::invalid_argument("write_png_gray expects [1, H, W]");
  write_png(path, chw, PNG_COLOR_TYPE_GRAY);
}

void write_png_rgb(const std::filesystem::path& path, const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw std::invalid_argument("write_png_rgb expects [3, H, W]");
  write_png(path, image, PNG_COLOR_TYPE_RGB);
}

torch::Tensor resize_image(const torch::Tensor& image, int64_t height, int64_t width) {
  if (image.size(1) == height && image.size(2) == width) return image;
  namespace F = torch::nn::functional;
  return F::interpolate(image.unsqueeze(0),
                        F::InterpolateFuncOptions()
                            .size(std::vector<int64_t>{height, width})
                            .mode(torch::kBilinear)
                            .align_corners(false)
                            .antialias(true))
      .squeeze(0);
}

}  // namespace lmd
