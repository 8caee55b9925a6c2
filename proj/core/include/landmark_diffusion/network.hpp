#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace lmd {

/// Architecture hyperparameters of the encoder-decoder denoiser.
struct NetworkConfig {
  int64_t image_size = 256;  // square input side, px
  int64_t base_channels = 64;
  std::vector<int64_t> channel_multipliers{1, 2, 4, 8};
  int64_t attention_resolution = 32;
  int64_t attention_heads = 4;
  int64_t res_blocks_per_level = 4;
  int64_t in_channels = 1;
  int64_t out_channels = 1;
  bool timestep_conditioning = true;
  int64_t norm_groups = 8;

  bool operator==(const NetworkConfig&) const = default;

  int64_t embedding_dim() const { return 4 * base_channels; }
  /// Feature-map side per level, finest first.
  std::vector<int64_t> level_sides() const;
  /// Indices of levels carrying a self-attention block.
  std::vector<size_t> attention_levels() const;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  /// Sorted-key JSON; stable across runs and platforms.
  std::string canonical_text() const;
  static NetworkConfig from_text(const std::string& text);
  /// FNV-1a 64 of canonical_text(), as 16 hex digits.
  std::string hash() const;
};

using WeightMap = std::map<std::string, torch::Tensor>;

struct WeightsMetadata {
  int64_t iteration = 0;
  bool ema = false;
  std::string source;  // provenance, e.g. the checkpoint a detector was converted from
};

/// Parameter tensors keyed by module path, tied to the config that produced them.
struct NetworkWeights {
  NetworkConfig config;
  WeightMap tensors;
  WeightsMetadata metadata;
  std::string config_hash;

  /// Keys and shapes must match exactly the config-implied parameter set.
  void validate() const;
};

/// Name prefix of the output convolution replaced by convert_to_detector.
inline constexpr const char* kOutputLayer = "out_conv";

class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(int64_t in_ch, int64_t out_ch, int64_t emb_dim, int64_t groups);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& emb);

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
  torch::nn::Linear emb_proj_{nullptr};
};
TORCH_MODULE(ResidualBlock);

class SelfAttentionImpl : public torch::nn::Module {
 public:
  SelfAttentionImpl(int64_t channels, int64_t heads, int64_t groups);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  int64_t heads_;
  torch::nn::GroupNorm norm_{nullptr};
  torch::nn::Conv2d qkv_{nullptr}, proj_{nullptr};
};
TORCH_MODULE(SelfAttention);

/// Multi-scale encoder-decoder with skip connections and sinusoidal
/// timestep conditioning. Predicts noise (out_channels = 1) or landmark
/// heatmap logits (out_channels = N, null timestep).
class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(NetworkConfig config);

  /// x: [B, in_channels, S, S]. t: int64 [B] of 1-based timesteps, or
  /// nullopt for the null embedding. In detection mode t is ignored.
  torch::Tensor forward(const torch::Tensor& x, const std::optional<torch::Tensor>& t);

  const NetworkConfig& config() const { return config_; }

 private:
  struct Level {
    std::vector<ResidualBlock> blocks;
    SelfAttention attention{nullptr};
    torch::nn::Conv2d resample{nullptr};
  };

  torch::Tensor embed(const std::optional<torch::Tensor>& t, int64_t batch,
                      const torch::TensorOptions& opts);

  NetworkConfig config_;
  torch::nn::Conv2d in_conv_{nullptr};
  torch::nn::Sequential time_mlp_{nullptr};
  std::vector<Level> down_;
  ResidualBlock mid1_{nullptr}, mid2_{nullptr};
  std::vector<Level> up_;  // indexed by level, coarsest processed first
  torch::nn::GroupNorm out_norm_{nullptr};
  torch::nn::Conv2d out_conv_{nullptr};
};
TORCH_MODULE(UNet);

/// Sinusoidal embedding of (possibly fractional) timesteps, [B, dim].
torch::Tensor sinusoidal_embedding(const torch::Tensor& t, int64_t dim);

/// Builds a network with parameters drawn from a generator seeded by `seed`.
UNet build_network(const NetworkConfig& config, uint64_t seed = 0);

/// Number of scalar parameters implied by a config.
int64_t parameter_count(const NetworkConfig& config);

/// Deep copies of the network's parameters.
NetworkWeights extract_weights(const UNet& net, WeightsMetadata metadata = {});
/// Copies weights into a network built from the same config.
void load_weights(UNet& net, const NetworkWeights& weights);
/// Builds a network from config and loads weights into it.
UNet instantiate(const NetworkWeights& weights);

/// Replaces the 1-channel output layer with a freshly initialised
/// num_landmarks-channel layer (weights N(0, 1e-3^2), bias 0); every other
/// tensor is copied verbatim. The result runs in null-timestep mode.
NetworkWeights convert_to_detector(const NetworkWeights& denoiser, int64_t num_landmarks,
                                   uint64_t seed = 0);

}  // namespace lmd
