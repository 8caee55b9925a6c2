#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <torch/torch.h>

namespace lmd {

/// 1-based diffusion timestep. Storage inside NoiseSchedule is 0-based; the
/// conversion happens only in NoiseSchedule's accessors.
struct Timestep {
  int64_t value = 1;
};

/// Variance used for the noise term of a reverse step.
enum class ReverseVariance {
  kBeta,        // sigma_t^2 = beta_t
  kPosterior,   // sigma_t^2 = beta_t * (1 - abar_{t-1}) / (1 - abar_t)
};

struct ScheduleConfig {
  int64_t num_steps = 500;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  ReverseVariance variance = ReverseVariance::kBeta;

  bool operator==(const ScheduleConfig&) const = default;
};

/// The beta / alpha / alpha-bar sequences of a diffusion process.
///
/// alpha_bar is accumulated in double precision; the float tensors used by
/// the tensor operations are cast from it.
class NoiseSchedule {
 public:
  NoiseSchedule(std::vector<double> betas, ReverseVariance variance);

  int64_t num_steps() const { return static_cast<int64_t>(betas_.size()); }
  ReverseVariance variance_mode() const { return variance_; }

  double beta(Timestep t) const { return betas_[index(t)]; }
  double alpha(Timestep t) const { return alphas_[index(t)]; }
  double alpha_bar(Timestep t) const { return alpha_bars_[index(t)]; }
  /// alpha_bar at t-1, with alpha_bar_0 = 1.
  double alpha_bar_prev(Timestep t) const;
  /// Reverse-step standard deviation for the configured variance mode.
  double sigma(Timestep t) const;

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

  /// Per-item sqrt(abar_t) and sqrt(1 - abar_t) gathered for a batch of
  /// 1-based timesteps (int64 tensor of shape [B]).
  torch::Tensor sqrt_alpha_bar(const torch::Tensor& t) const;
  torch::Tensor sqrt_one_minus_alpha_bar(const torch::Tensor& t) const;

  void check(Timestep t) const;

 private:
  size_t index(Timestep t) const;

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  ReverseVariance variance_;
  torch::Tensor sqrt_ab_;
  torch::Tensor sqrt_1m_ab_;
};

NoiseSchedule build_linear_schedule(int64_t num_steps, double beta_start, double beta_end,
                                    ReverseVariance variance = ReverseVariance::kBeta);
NoiseSchedule build_schedule(const ScheduleConfig& config);

/// Closed-form marginal sample: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
torch::Tensor forward_sample(const torch::Tensor& x0, Timestep t, const torch::Tensor& eps,
                             const NoiseSchedule& schedule);

/// Batched marginal sample with an independent 1-based timestep per item
/// along dimension 0.
torch::Tensor forward_sample(const torch::Tensor& x0, const torch::Tensor& t,
                             const torch::Tensor& eps, const NoiseSchedule& schedule);

/// One Markov step of the forward chain: sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps.
torch::Tensor forward_step(const torch::Tensor& x_prev, Timestep t, const torch::Tensor& eps,
                           const NoiseSchedule& schedule);

/// Mean of the reverse transition given a noise prediction.
torch::Tensor posterior_mean(const torch::Tensor& x_t, Timestep t,
                             const torch::Tensor& predicted_eps, const NoiseSchedule& schedule);

/// posterior_mean + sigma_t z. Callers pass z = 0 at t = 1.
torch::Tensor reverse_step(const torch::Tensor& x_t, Timestep t,
                           const torch::Tensor& predicted_eps, const torch::Tensor& z,
                           const NoiseSchedule& schedule);

/// Mean squared error over all elements.
torch::Tensor simple_loss(const torch::Tensor& eps_true, const torch::Tensor& eps_pred);

/// eps_theta(x_t, t) for a batch sharing one timestep.
using NoisePredictor = std::function<torch::Tensor(const torch::Tensor& x_t, Timestep t)>;

/// CPU generator with a fixed seed; all diffusion randomness flows through one.
torch::Generator make_generator(uint64_t seed);

/// Full T-step ancestral sampling from x_T ~ N(0, I). The last step is noiseless.
torch::Tensor ancestral_sample(const NoisePredictor& predictor, torch::IntArrayRef shape,
                               const NoiseSchedule& schedule, torch::Generator& generator);

}  // namespace lmd
