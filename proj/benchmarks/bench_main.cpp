#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "landmark_diffusion/diffusion.hpp"
#include "landmark_diffusion/heatmap.hpp"
#include "landmark_diffusion/network.hpp"

namespace {

using namespace lmd;

void BM_ForwardSample(benchmark::State& state) {
  const auto side = state.range(0);
  const auto schedule = build_linear_schedule(500, 1e-4, 0.02);
  auto gen = make_generator(0);
  auto x0 = torch::rand({8, 1, side, side}, gen);
  auto eps = torch::randn({8, 1, side, side}, gen);
  auto t = torch::randint(1, 501, {8}, gen, torch::kLong);
  for (auto _ : state) benchmark::DoNotOptimize(forward_sample(x0, t, eps, schedule));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_ForwardSample)->Arg(64)->Arg(256);

void BM_EncodeHeatmaps(benchmark::State& state) {
  const auto n = state.range(0);
  LandmarkSet set;
  set.image_size = {256, 256};
  for (int64_t i = 0; i < n; ++i) set.points.push_back({20.0 + 5.3 * static_cast<double>(i), 128.4});
  for (auto _ : state) benchmark::DoNotOptimize(encode_heatmaps(set, 256, 256, 5.0));
}
BENCHMARK(BM_EncodeHeatmaps)->Arg(6)->Arg(19)->Arg(37);

void BM_UNetForward(benchmark::State& state) {
  NetworkConfig c;
  c.image_size = state.range(0);
  c.base_channels = 16;
  c.channel_multipliers = {1, 2, 4};
  c.attention_resolution = c.image_size / 4;
  c.res_blocks_per_level = 1;
  auto net = build_network(c, 0);
  torch::NoGradGuard no_grad;
  auto x = torch::randn({4, 1, c.image_size, c.image_size});
  auto t = torch::full({4}, 10, torch::kLong);
  for (auto _ : state) benchmark::DoNotOptimize(net->forward(x, t));
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_UNetForward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
