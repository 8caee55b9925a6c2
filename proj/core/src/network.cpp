#include "landmark_diffusion/network.hpp"

#include "landmark_diffusion/diffusion.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace lmd {
namespace nn = torch::nn;
using json = nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& field, const std::string& why) {
  throw std::invalid_argument("network." + field + ": " + why);
}

nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

std::string level_name(const char* path, size_t level) {
  return std::string(path) + std::to_string(level);
}

}  // namespace

std::vector<int64_t> NetworkConfig::level_sides() const {
  std::vector<int64_t> sides;
  int64_t side = image_size;
  for (size_t i = 0; i < channel_multipliers.size(); ++i) {
    sides.push_back(side);
    side /= 2;
  }
  return sides;
}

std::vector<size_t> NetworkConfig::attention_levels() const {
  std::vector<size_t> levels;
  const auto sides = level_sides();
  for (size_t i = 0; i < sides.size(); ++i)
    if (sides[i] == attention_resolution) levels.push_back(i);
  return levels;
}

void NetworkConfig::validate() const {
  if (channel_multipliers.empty()) config_error("channel_multipliers", "must not be empty");
  if (image_size <= 0) config_error("image_size", "must be positive");
  if (base_channels <= 0) config_error("base_channels", "must be positive");
  if (attention_resolution <= 0) config_error("attention_resolution", "must be positive");
  if (attention_heads <= 0) config_error("attention_heads", "must be positive");
  if (res_blocks_per_level <= 0) config_error("res_blocks_per_level", "must be positive");
  if (in_channels <= 0) config_error("in_channels", "must be positive");
  if (out_channels <= 0) config_error("out_channels", "must be at least 1");
  if (norm_groups <= 0) config_error("norm_groups", "must be positive");
  const int64_t divisor = int64_t{1} << (channel_multipliers.size() - 1);
  if (image_size % divisor != 0) {
    config_error("image_size", std::to_string(image_size) + " not divisible by " +
                                   std::to_string(divisor));
  }
  for (auto m : channel_multipliers) {
    if (m <= 0) config_error("channel_multipliers", "entries must be positive");
    if ((base_channels * m) % norm_groups != 0)
      config_error("base_channels", "level width not divisible by norm_groups");
  }
  for (auto level : attention_levels()) {
    if ((base_channels * channel_multipliers[level]) % attention_heads != 0)
      config_error("attention_heads", "must divide the attention level width");
  }
}

std::string NetworkConfig::canonical_text() const {
  json j{
      {"image_size", image_size},
      {"base_channels", base_channels},
      {"channel_multipliers", channel_multipliers},
      {"attention_resolution", attention_resolution},
      {"attention_heads", attention_heads},
      {"res_blocks_per_level", res_blocks_per_level},
      {"in_channels", in_channels},
      {"out_channels", out_channels},
      {"timestep_conditioning", timestep_conditioning},
      {"norm_groups", norm_groups},
  };
  return j.dump();
}

NetworkConfig NetworkConfig::from_text(const std::string& text) {
  const auto j = json::parse(text);
  NetworkConfig c;
  c.image_size = j.at("image_size").get<int64_t>();
  c.base_channels = j.at("base_channels").get<int64_t>();
  c.channel_multipliers = j.at("channel_multipliers").get<std::vector<int64_t>>();
  c.attention_resolution = j.at("attention_resolution").get<int64_t>();
  c.attention_heads = j.at("attention_heads").get<int64_t>();
  c.res_blocks_per_level = j.at("res_blocks_per_level").get<int64_t>();
  c.in_channels = j.at("in_channels").get<int64_t>();
  c.out_channels = j.at("out_channels").get<int64_t>();
  c.timestep_conditioning = j.at("timestep_conditioning").get<bool>();
  c.norm_groups = j.at("norm_groups").get<int64_t>();
  return c;
}

std::string NetworkConfig::hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_text()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ResidualBlockImpl::ResidualBlockImpl(int64_t in_ch, int64_t out_ch, int64_t emb_dim,
                                     int64_t groups) {
  norm1_ = register_module("norm1", nn::GroupNorm(groups, in_ch));
  conv1_ = register_module("conv1", conv3x3(in_ch, out_ch));
  emb_proj_ = register_module("emb_proj", nn::Linear(emb_dim, out_ch));
  norm2_ = register_module("norm2", nn::GroupNorm(groups, out_ch));
  conv2_ = register_module("conv2", conv3x3(out_ch, out_ch));
  if (in_ch != out_ch) skip_ = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in_ch, out_ch, 1)));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& emb) {
  auto h = conv1_(torch::silu(norm1_(x)));
  h = h + emb_proj_(torch::silu(emb)).unsqueeze(-1).unsqueeze(-1);
  h = conv2_(torch::silu(norm2_(h)));
  return h + (skip_ ? skip_(x) : x);
}

SelfAttentionImpl::SelfAttentionImpl(int64_t channels, int64_t heads, int64_t groups)
    : heads_(heads) {
  norm_ = register_module("norm", nn::GroupNorm(groups, channels));
  qkv_ = register_module("qkv", nn::Conv2d(nn::Conv2dOptions(channels, 3 * channels, 1)));
  proj_ = register_module("proj", nn::Conv2d(nn::Conv2dOptions(channels, channels, 1)));
}

torch::Tensor SelfAttentionImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const auto d = c / heads_;
  auto qkv = qkv_(norm_(x)).reshape({b, 3, heads_, d, h * w});
  auto q = qkv.select(1, 0).transpose(-1, -2);  // [B, heads, HW, d]
  auto k = qkv.select(1, 1);                    // [B, heads, d, HW]
  auto v = qkv.select(1, 2).transpose(-1, -2);  // [B, heads, HW, d]
  auto attn = torch::softmax(torch::matmul(q, k) / std::sqrt(static_cast<double>(d)), -1);
  auto out = torch::matmul(attn, v).transpose(-1, -2).reshape({b, c, h, w});
  return x + proj_(out);
}

torch::Tensor sinusoidal_embedding(const torch::Tensor& t, int64_t dim) {
  const int64_t half = dim / 2;
  auto freqs = torch::exp(torch::arange(half, t.options().dtype(torch::kFloat32)) *
                          (-std::log(10000.0) / static_cast<double>(std::max<int64_t>(half - 1, 1))));
  auto args = t.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
  auto emb = torch::cat({torch::sin(args), torch::cos(args)}, 1);
  if (dim % 2 == 1) emb = torch::nn::functional::pad(emb, torch::nn::functional::PadFuncOptions({0, 1}));
  return emb;
}

UNetImpl::UNetImpl(NetworkConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  const int64_t emb = c.embedding_dim();
  const size_t levels = c.channel_multipliers.size();
  const auto attn = c.attention_levels();
  auto has_attention = [&](size_t level) {
    return std::find(attn.begin(), attn.end(), level) != attn.end();
  };
  std::vector<int64_t> widths;
  for (auto m : c.channel_multipliers) widths.push_back(c.base_channels * m);

  in_conv_ = register_module("in_conv", conv3x3(c.in_channels, widths[0]));
  time_mlp_ = register_module(
      "time_mlp", nn::Sequential(nn::Linear(emb, emb), nn::SiLU(), nn::Linear(emb, emb)));

  int64_t ch = widths[0];
  down_.resize(levels);
  for (size_t l = 0; l < levels; ++l) {
    auto& level = down_[l];
    for (int64_t b = 0; b < c.res_blocks_per_level; ++b) {
      level.blocks.push_back(register_module(level_name("down", l) + "_res" + std::to_string(b),
                                             ResidualBlock(ch, widths[l], emb, c.norm_groups)));
      ch = widths[l];
    }
    if (has_attention(l)) {
      level.attention = register_module(level_name("down", l) + "_attn",
                                        SelfAttention(ch, c.attention_heads, c.norm_groups));
    }
    if (l + 1 < levels)
      level.resample = register_module(level_name("down", l) + "_downsample", conv3x3(ch, ch, 2));
  }

  mid1_ = register_module("mid_res1", ResidualBlock(ch, ch, emb, c.norm_groups));
  mid2_ = register_module("mid_res2", ResidualBlock(ch, ch, emb, c.norm_groups));

  up_.resize(levels);
  for (size_t i = 0; i < levels; ++i) {
    const size_t l = levels - 1 - i;
    auto& level = up_[l];
    for (int64_t b = 0; b < c.res_blocks_per_level; ++b) {
      const int64_t in = b == 0 ? ch + widths[l] : widths[l];
      level.blocks.push_back(register_module(level_name("up", l) + "_res" + std::to_string(b),
                                             ResidualBlock(in, widths[l], emb, c.norm_groups)));
      ch = widths[l];
    }
    if (has_attention(l)) {
      level.attention = register_module(level_name("up", l) + "_attn",
                                        SelfAttention(ch, c.attention_heads, c.norm_groups));
    }
    if (l > 0) {
      level.resample = register_module(level_name("up", l) + "_upsample", conv3x3(ch, widths[l - 1]));
      ch = widths[l - 1];
    }
  }

  out_norm_ = register_module("out_norm", nn::GroupNorm(c.norm_groups, ch));
  out_conv_ = register_module(kOutputLayer, conv3x3(ch, c.out_channels));
}

torch::Tensor UNetImpl::embed(const std::optional<torch::Tensor>& t, int64_t batch,
                              const torch::TensorOptions& opts) {
  torch::Tensor raw;
  if (config_.timestep_conditioning) {
    if (!t) throw std::invalid_argument("timestep required for a timestep-conditioned network");
    if (t->dim() != 1 || t->size(0) != batch)
      throw std::invalid_argument("timestep tensor must have one entry per batch item");
    raw = sinusoidal_embedding(*t, config_.embedding_dim()).to(opts.dtype());
  } else {
    raw = torch::zeros({batch, config_.embedding_dim()}, opts);
  }
  return time_mlp_->forward(raw);
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x, const std::optional<torch::Tensor>& t) {
  const auto& c = config_;
  if (x.dim() != 4 || x.size(1) != c.in_channels || x.size(2) != c.image_size ||
      x.size(3) != c.image_size) {
    std::ostringstream msg;
    msg << "network input " << x.sizes() << " does not match [B, " << c.in_channels << ", "
        << c.image_size << ", " << c.image_size << "]";
    throw std::invalid_argument(msg.str());
  }
  const auto emb = embed(t, x.size(0), x.options());

  auto h = in_conv_(x);
  std::vector<torch::Tensor> skips;
  for (auto& level : down_) {
    for (auto& block : level.blocks) h = block(h, emb);
    if (level.attention) h = level.attention(h);
    skips.push_back(h);
    if (level.resample) h = level.resample(h);
  }
  h = mid2_(mid1_(h, emb), emb);
  for (size_t i = 0; i < up_.size(); ++i) {
    auto& level = up_[up_.size() - 1 - i];
    h = torch::cat({h, skips.back()}, 1);
    skips.pop_back();
    for (auto& block : level.blocks) h = block(h, emb);
    if (level.attention) h = level.attention(h);
    if (level.resample) {
      h = torch::upsample_nearest2d(h, {h.size(2) * 2, h.size(3) * 2});
      h = level.resample(h);
    }
  }
  return out_conv_(torch::silu(out_norm_(h)));
}

UNet build_network(const NetworkConfig& config, uint64_t seed) {
  torch::manual_seed(seed);
  return UNet(config);
}

int64_t parameter_count(const NetworkConfig& config) {
  UNet net(config);
  int64_t n = 0;
  for (const auto& p : net->parameters()) n += p.numel();
  return n;
}

void NetworkWeights::validate() const {
  if (config_hash != config.hash())
    throw std::invalid_argument("weights config hash " + config_hash + " does not match config " +
                                config.hash());
  UNet reference(config);
  const auto params = reference->named_parameters();
  if (params.size() != tensors.size())
    throw std::invalid_argument("weights hold " + std::to_string(tensors.size()) +
                                " tensors, config implies " + std::to_string(params.size()));
  for (const auto& item : params) {
    auto it = tensors.find(item.key());
    if (it == tensors.end()) throw std::invalid_argument("weights missing tensor " + item.key());
    if (!it->second.sizes().equals(item.value().sizes()))
      throw std::invalid_argument("tensor " + item.key() + " has wrong shape");
  }
}

NetworkWeights extract_weights(const UNet& net, WeightsMetadata metadata) {
  NetworkWeights w;
  w.config = net->config();
  w.config_hash = w.config.hash();
  w.metadata = std::move(metadata);
  torch::NoGradGuard no_grad;
  for (const auto& item : net->named_parameters())
    w.tensors.emplace(item.key(), item.value().detach().clone());
  return w;
}

void load_weights(UNet& net, const NetworkWeights& weights) {
  if (weights.config != net->config())
    throw std::invalid_argument("weights were produced by a different network config");
  weights.validate();
  torch::NoGradGuard no_grad;
  for (auto& item : net->named_parameters()) {
    const auto& src = weights.tensors.at(item.key());
    item.value().copy_(src.to(item.value().dtype()));
  }
}

UNet instantiate(const NetworkWeights& weights) {
  UNet net(weights.config);
  load_weights(net, weights);
  return net;
}

NetworkWeights convert_to_detector(const NetworkWeights& denoiser, int64_t num_landmarks,
                                   uint64_t seed) {
  if (num_landmarks < 1) throw std::invalid_argument("num_landmarks must be positive");
  if (denoiser.config.out_channels != 1 || !denoiser.config.timestep_conditioning)
    throw std::invalid_argument("source weights are not a 1-channel timestep-conditioned denoiser");
  denoiser.validate();

  NetworkWeights detector;
  detector.config = denoiser.config;
  detector.config.out_channels = num_landmarks;
  detector.config.timestep_conditioning = false;
  detector.config_hash = detector.config.hash();
  detector.metadata = denoiser.metadata;

  const std::string prefix = std::string(kOutputLayer) + ".";
  for (const auto& [key, tensor] : denoiser.tensors)
    if (key.rfind(prefix, 0) != 0) detector.tensors.emplace(key, tensor.clone());

  auto gen = make_generator(seed);
  const auto& old_w = denoiser.tensors.at(prefix + "weight");
  detector.tensors[prefix + "weight"] =
      torch::randn({num_landmarks, old_w.size(1), old_w.size(2), old_w.size(3)}, gen) * 1e-3;
  detector.tensors[prefix + "bias"] = torch::zeros({num_landmarks});
  return detector;
}

}  // namespace lmd
