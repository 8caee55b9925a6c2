#include "landmark_diffusion/diffusion.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace lmd {
namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.sizes().equals(b.sizes())) {
    std::ostringstream msg;
    msg << what << ": shape mismatch " << a.sizes() << " vs " << b.sizes();
    throw std::invalid_argument(msg.str());
  }
}

}  // namespace

NoiseSchedule::NoiseSchedule(std::vector<double> betas, ReverseVariance variance)
    : betas_(std::move(betas)), variance_(variance) {
  if (betas_.empty()) throw std::invalid_argument("noise schedule needs at least one step");
  alphas_.reserve(betas_.size());
  alpha_bars_.reserve(betas_.size());
  double product = 1.0;
  for (double b : betas_) {
    if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("beta must lie in (0, 1)");
    alphas_.push_back(1.0 - b);
    product *= 1.0 - b;
    alpha_bars_.push_back(product);
  }
  std::vector<float> sab, s1mab;
  for (double ab : alpha_bars_) {
    sab.push_back(static_cast<float>(std::sqrt(ab)));
    s1mab.push_back(static_cast<float>(std::sqrt(1.0 - ab)));
  }
  sqrt_ab_ = torch::tensor(sab, torch::kFloat32);
  sqrt_1m_ab_ = torch::tensor(s1mab, torch::kFloat32);
}

size_t NoiseSchedule::index(Timestep t) const {
  check(t);
  return static_cast<size_t>(t.value - 1);
}

void NoiseSchedule::check(Timestep t) const {
  if (t.value < 1 || t.value > num_steps()) {
    std::ostringstream msg;
    msg << "timestep " << t.value << " outside [1, " << num_steps() << "]";
    throw std::out_of_range(msg.str());
  }
}

double NoiseSchedule::alpha_bar_prev(Timestep t) const {
  return t.value == 1 ? 1.0 : alpha_bar(Timestep{t.value - 1});
}

double NoiseSchedule::sigma(Timestep t) const {
  if (variance_ == ReverseVariance::kBeta) return std::sqrt(beta(t));
  return std::sqrt(beta(t) * (1.0 - alpha_bar_prev(t)) / (1.0 - alpha_bar(t)));
}

torch::Tensor NoiseSchedule::sqrt_alpha_bar(const torch::Tensor& t) const {
  if (t.numel() > 0 && (t.min().item<int64_t>() < 1 || t.max().item<int64_t>() > num_steps()))
    throw std::out_of_range("batched timestep outside schedule range");
  return sqrt_ab_.index_select(0, t.to(torch::kLong) - 1);
}

torch::Tensor NoiseSchedule::sqrt_one_minus_alpha_bar(const torch::Tensor& t) const {
  if (t.numel() > 0 && (t.min().item<int64_t>() < 1 || t.max().item<int64_t>() > num_steps()))
    throw std::out_of_range("batched timestep outside schedule range");
  return sqrt_1m_ab_.index_select(0, t.to(torch::kLong) - 1);
}

NoiseSchedule build_linear_schedule(int64_t num_steps, double beta_start, double beta_end,
                                    ReverseVariance variance) {
  if (num_steps < 1) throw std::invalid_argument("num_steps must be positive");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end))
    throw std::invalid_argument("beta endpoints must satisfy 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(static_cast<size_t>(num_steps));
  if (num_steps == 1) {
    betas[0] = beta_start;
  } else {
    const double step = (beta_end - beta_start) / static_cast<double>(num_steps - 1);
    for (int64_t i = 0; i < num_steps; ++i) betas[i] = beta_start + step * static_cast<double>(i);
    betas.back() = beta_end;
  }
  return NoiseSchedule(std::move(betas), variance);
}

NoiseSchedule build_schedule(const ScheduleConfig& config) {
  return build_linear_schedule(config.num_steps, config.beta_start, config.beta_end,
                               config.variance);
}

torch::Tensor forward_sample(const torch::Tensor& x0, Timestep t, const torch::Tensor& eps,
                             const NoiseSchedule& schedule) {
  require_same_shape(x0, eps, "forward_sample");
  const double ab = schedule.alpha_bar(t);
  return static_cast<float>(std::sqrt(ab)) * x0 + static_cast<float>(std::sqrt(1.0 - ab)) * eps;
}

torch::Tensor forward_sample(const torch::Tensor& x0, const torch::Tensor& t,
                             const torch::Tensor& eps, const NoiseSchedule& schedule) {
  require_same_shape(x0, eps, "forward_sample");
  if (t.dim() != 1 || t.size(0) != x0.size(0))
    throw std::invalid_argument("forward_sample: need one timestep per batch item");
  std::vector<int64_t> bshape(static_cast<size_t>(x0.dim()), 1);
  bshape[0] = x0.size(0);
  auto a = schedule.sqrt_alpha_bar(t).to(x0.dtype()).view(bshape);
  auto s = schedule.sqrt_one_minus_alpha_bar(t).to(x0.dtype()).view(bshape);
  return a * x0 + s * eps;
}

torch::Tensor forward_step(const torch::Tensor& x_prev, Timestep t, const torch::Tensor& eps,
                           const NoiseSchedule& schedule) {
  require_same_shape(x_prev, eps, "forward_step");
  const double b = schedule.beta(t);
  return static_cast<float>(std::sqrt(1.0 - b)) * x_prev + static_cast<float>(std::sqrt(b)) * eps;
}

torch::Tensor posterior_mean(const torch::Tensor& x_t, Timestep t,
                             const torch::Tensor& predicted_eps, const NoiseSchedule& schedule) {
  require_same_shape(x_t, predicted_eps, "posterior_mean");
  const double coef = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
  const double scale = 1.0 / std::sqrt(schedule.alpha(t));
  return static_cast<float>(scale) * (x_t - static_cast<float>(coef) * predicted_eps);
}

torch::Tensor reverse_step(const torch::Tensor& x_t, Timestep t,
                           const torch::Tensor& predicted_eps, const torch::Tensor& z,
                           const NoiseSchedule& schedule) {
  require_same_shape(x_t, z, "reverse_step");
  auto mean = posterior_mean(x_t, t, predicted_eps, schedule);
  return mean + static_cast<float>(schedule.sigma(t)) * z;
}

torch::Tensor simple_loss(const torch::Tensor& eps_true, const torch::Tensor& eps_pred) {
  require_same_shape(eps_true, eps_pred, "simple_loss");
  return (eps_true - eps_pred).pow(2).mean();
}

torch::Generator make_generator(uint64_t seed) {
  return at::make_generator<at::CPUGeneratorImpl>(seed);
}

torch::Tensor ancestral_sample(const NoisePredictor& predictor, torch::IntArrayRef shape,
                               const NoiseSchedule& schedule, torch::Generator& generator) {
  torch::NoGradGuard no_grad;
  auto x = torch::randn(shape, generator, torch::kFloat32);
  for (int64_t step = schedule.num_steps(); step >= 1; --step) {
    const Timestep t{step};
    auto eps = predictor(x, t);
    auto z = step > 1 ? torch::randn(shape, generator, torch::kFloat32) : torch::zeros(shape);
    x = reverse_step(x, t, eps, z, schedule);
  }
  return x;
}

}  // namespace lmd
