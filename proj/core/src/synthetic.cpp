#include "landmark_diffusion/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace lmd {
namespace {

struct Capsule {
  Point a, b;
  double radius;
  double level;
};

struct Ellipse {
  Point center;
  double rx, ry, angle;
  double level;
};

double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * vx), p.y - (a.y + t * vy));
}

// Soft edge of roughly one pixel.
double edge(double signed_inside) { return 1.0 / (1.0 + std::exp(-signed_inside / 0.6)); }

double ellipse_inside(Point p, const Ellipse& e) {
  const double c = std::cos(e.angle), s = std::sin(e.angle);
  const double dx = p.x - e.center.x, dy = p.y - e.center.y;
  const double u = (c * dx + s * dy) / e.rx, v = (-s * dx + c * dy) / e.ry;
  const double r = std::sqrt(u * u + v * v);
  return (1.0 - r) * std::min(e.rx, e.ry);
}

}  // namespace

std::shared_ptr<InMemorySource> generate_synthetic(size_t count, int64_t height, int64_t width,
                                                   int64_t num_landmarks, uint64_t seed,
                                                   const std::string& dataset_id) {
  if (height < 16 || width < 16) throw std::invalid_argument("synthetic grid must be at least 16x16");
  if (num_landmarks < 1) throw std::invalid_argument("synthetic data needs at least one landmark");

  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  std::normal_distribution<double> noise(0.0, 0.02);

  const double side = static_cast<double>(std::min(height, width));
  const double margin = 0.1 * side;
  const auto n = static_cast<size_t>(num_landmarks);

  std::vector<Sample> samples;
  samples.reserve(count);
  for (size_t idx = 0; idx < count; ++idx) {
    // Canonical chain pointing up-right, centred on the origin.
    std::vector<Point> joints;
    std::vector<Point> placed(n);
    double base_angle = 0.0;
    double scale = 1.0;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 1000) throw std::runtime_error("synthetic pose sampling failed to fit the grid");
      joints.assign(1, Point{0.0, 0.0});
      const double seg = n > 1 ? 0.55 * side / static_cast<double>(n - 1) : 0.0;
      double dir = -std::numbers::pi / 4.0;
      for (size_t j = 1; j < n; ++j) {
        dir += uni(-0.45, 0.45);
        const double len = seg * uni(0.85, 1.15);
        joints.push_back({joints.back().x + len * std::cos(dir), joints.back().y + len * std::sin(dir)});
      }
      double mx = 0, my = 0;
      for (const auto& p : joints) {
        mx += p.x;
        my += p.y;
      }
      mx /= static_cast<double>(n);
      my /= static_cast<double>(n);
      base_angle = uni(-0.5, 0.5);
      scale = uni(0.9, 1.1);
      const double cx = static_cast<double>(width) / 2.0 + uni(-0.08, 0.08) * side;
      const double cy = static_cast<double>(height) / 2.0 + uni(-0.08, 0.08) * side;
      const double c = std::cos(base_angle) * scale, s = std::sin(base_angle) * scale;
      bool fits = true;
      for (size_t j = 0; j < n; ++j) {
        const double x = joints[j].x - mx, y = joints[j].y - my;
        placed[j] = {cx + c * x - s * y, cy + s * x + c * y};
        fits = fits && placed[j].x >= margin && placed[j].y >= margin &&
               placed[j].x <= static_cast<double>(width - 1) - margin &&
               placed[j].y <= static_cast<double>(height - 1) - margin;
      }
      if (fits) break;
    }

    std::vector<Capsule> bones;
    double radius = 0.055 * side * scale;
    for (size_t j = 0; j + 1 < n; ++j) {
      bones.push_back({placed[j], placed[j + 1], radius, uni(0.68, 0.78)});
      radius *= 0.85;
    }
    std::vector<Ellipse> blobs;
    // Base ("palm") behind the first joint.
    const Point first = placed[0];
    const Point toward = n > 1 ? placed[1] : Point{first.x + 1.0, first.y - 1.0};
    const double ang = std::atan2(toward.y - first.y, toward.x - first.x);
    blobs.push_back({{first.x - std::cos(ang) * 0.12 * side, first.y - std::sin(ang) * 0.12 * side},
                     0.15 * side * scale,
                     0.09 * side * scale,
                     ang,
                     0.55});
    // Distractors: a loose blob and two bone-like capsules away from the chain.
    blobs.push_back({{uni(0.15, 0.85) * width, uni(0.15, 0.85) * height},
                     uni(0.04, 0.08) * side,
                     uni(0.03, 0.06) * side,
                     uni(0.0, std::numbers::pi),
                     uni(0.4, 0.5)});
    std::vector<Capsule> loose;
    for (int d = 0; d < 2; ++d) {
      const Point a{uni(0.05, 0.95) * width, uni(0.05, 0.95) * height};
      const double dir = uni(0.0, 2.0 * std::numbers::pi), len = uni(0.1, 0.2) * side;
      loose.push_back({a, {a.x + len * std::cos(dir), a.y + len * std::sin(dir)}, uni(0.025, 0.045) * side,
                       uni(0.45, 0.6)});
    }

    // Smooth background: a random linear ramp plus two low-frequency waves.
    const double bg0 = uni(0.06, 0.12);
    const double bg_gain = uni(0.0, 0.12);
    const double bg_dir = uni(0.0, 2.0 * std::numbers::pi);
    struct Wave {
      double kx, ky, phase, amp;
    };
    std::vector<Wave> waves;
    for (int w = 0; w < 2; ++w) {
      const double freq = uni(1.0, 3.0) * 2.0 * std::numbers::pi / side, dir = uni(0.0, std::numbers::pi);
      waves.push_back({freq * std::cos(dir), freq * std::sin(dir), uni(0.0, 2.0 * std::numbers::pi), uni(0.02, 0.05)});
    }
    const double contrast = uni(0.85, 1.1);

    auto image = torch::empty({1, height, width}, torch::kFloat32);
    auto acc = image.accessor<float, 3>();
    for (int64_t y = 0; y < height; ++y) {
      for (int64_t x = 0; x < width; ++x) {
        const Point p{static_cast<double>(x), static_cast<double>(y)};
        const double u = (std::cos(bg_dir) * (p.x / width - 0.5) + std::sin(bg_dir) * (p.y / height - 0.5)) + 0.5;
        double v = bg0 + bg_gain * std::clamp(u, 0.0, 1.0);
        for (const auto& w : waves) v += w.amp * std::sin(w.kx * p.x + w.ky * p.y + w.phase);
        for (const auto& b : blobs) v = std::max(v, b.level * edge(ellipse_inside(p, b)));
        for (const auto& b : loose) v = std::max(v, b.level * edge(b.radius - segment_distance(p, b.a, b.b)));
        for (const auto& b : bones) v = std::max(v, b.level * edge(b.radius - segment_distance(p, b.a, b.b)));
        v = v * contrast + noise(rng);
        acc[0][y][x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }

    Sample s;
    std::ostringstream id;
    id << dataset_id << "_" << std::setw(5) << std::setfill('0') << idx;
    s.id = id.str();
    s.image = image;
    s.landmarks.image_size = {width, height};
    s.landmarks.points = placed;
    s.original = s.landmarks;
    samples.push_back(std::move(s));
  }
  return std::make_shared<InMemorySource>(dataset_id, num_landmarks, std::move(samples));
}

}  // namespace lmd
