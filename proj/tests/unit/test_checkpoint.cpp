#include <fstream>

#include <gtest/gtest.h>

#include "landmark_diffusion/checkpoint.hpp"
#include "landmark_diffusion/training.hpp"

namespace lmd {
namespace {

namespace fs = std::filesystem;

NetworkConfig toy() {
  NetworkConfig c;
  c.image_size = 16;
  c.base_channels = 8;
  c.channel_multipliers = {1, 2};
  c.attention_resolution = 8;
  c.res_blocks_per_level = 1;
  return c;
}

Checkpoint make_checkpoint(uint64_t seed) {
  auto net = build_network(toy(), seed);
  Checkpoint ckpt;
  ckpt.config = toy();
  ckpt.schedule = ScheduleConfig{50, 1e-4, 0.03, ReverseVariance::kPosterior};
  ckpt.raw = extract_weights(net).tensors;
  WeightMap ema;
  for (const auto& [k, v] : ckpt.raw) ema.emplace(k, v * 0.5);
  ckpt.ema = ema;
  ckpt.metadata.iteration = 4000;
  ckpt.metadata.dataset_id = "hand";
  return ckpt;
}

fs::path temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / "lmd_checkpoint_test";
  fs::create_directories(dir);
  return dir / name;
}

TEST(Checkpoint, SaveLoadForwardIsBitwiseIdentical) {
  auto ckpt = make_checkpoint(3);
  const auto path = temp_file("a.ckpt");
  save_checkpoint(ckpt, path);
  const auto back = load_checkpoint(path);

  EXPECT_EQ(back.config, ckpt.config);
  EXPECT_EQ(back.schedule, ckpt.schedule);
  EXPECT_EQ(back.metadata.iteration, 4000);
  EXPECT_EQ(back.metadata.dataset_id, "hand");
  ASSERT_TRUE(back.ema.has_value());
  for (const auto& [k, v] : ckpt.raw) {
    EXPECT_TRUE(torch::equal(back.raw.at(k), v)) << k;
    EXPECT_TRUE(torch::equal(back.ema->at(k), ckpt.ema->at(k))) << k;
  }

  auto a = instantiate(ckpt.weights(WeightSet::kRaw));
  auto b = instantiate(back.weights(WeightSet::kRaw));
  auto x = torch::randn({2, 1, 16, 16});
  auto t = torch::tensor({1, 30}, torch::kLong);
  EXPECT_TRUE(torch::equal(a->forward(x, t), b->forward(x, t)));
}

TEST(Checkpoint, DetectorMetadataSurvives) {
  auto src = make_checkpoint(1);
  auto det = convert_to_detector(src.weights(WeightSet::kEma), 5, 0);
  Checkpoint ckpt;
  ckpt.config = det.config;
  ckpt.raw = det.tensors;
  ckpt.metadata.role = NetworkRole::kDetector;
  ckpt.metadata.init_source = "raw";
  ckpt.metadata.source_checkpoint = "pretrain_iter4000.ckpt";
  ckpt.metadata.epoch = 17;
  ckpt.metadata.val_loss = 0.125;
  ckpt.metadata.label_budget = 5;
  const auto path = temp_file("det.ckpt");
  save_checkpoint(ckpt, path);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.metadata.role, NetworkRole::kDetector);
  EXPECT_EQ(back.metadata.init_source, "raw");
  EXPECT_EQ(back.metadata.source_checkpoint, "pretrain_iter4000.ckpt");
  EXPECT_EQ(back.metadata.epoch, 17);
  EXPECT_EQ(back.metadata.val_loss, 0.125);
  EXPECT_EQ(back.metadata.label_budget, 5);
  EXPECT_FALSE(back.ema.has_value());
  EXPECT_THROW(back.weights(WeightSet::kEma), std::runtime_error);
  EXPECT_FALSE(back.config.timestep_conditioning);
  EXPECT_EQ(back.config.out_channels, 5);
}

TEST(Checkpoint, HashMismatchRejected) {
  const auto path = temp_file("hash.ckpt");
  save_checkpoint(make_checkpoint(0), path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  // Tamper with the stored config without updating its hash.
  const auto pos = bytes.find("res_blocks_per_level\\\":1");
  ASSERT_NE(pos, std::string::npos);
  bytes[pos + std::string("res_blocks_per_level\\\":").size()] = '2';
  const auto bad = temp_file("hash_bad.ckpt");
  std::ofstream(bad, std::ios::binary) << bytes;
  try {
    load_checkpoint(bad);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("hash"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, CorruptFilesRejected) {
  const auto path = temp_file("trunc.ckpt");
  save_checkpoint(make_checkpoint(0), path);
  fs::resize_file(path, fs::file_size(path) - 100);
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
  const auto junk = temp_file("junk.ckpt");
  std::ofstream(junk) << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(junk), std::runtime_error);
  EXPECT_THROW(load_checkpoint(temp_file("missing.ckpt")), std::runtime_error);
}

TEST(Checkpoint, RoleAndWeightSetNames) {
  EXPECT_STREQ(to_string(NetworkRole::kDenoiser), "denoiser");
  EXPECT_STREQ(to_string(NetworkRole::kDetector), "detector");
  EXPECT_EQ(weight_set_from_string("ema"), WeightSet::kEma);
  EXPECT_EQ(weight_set_from_string("raw"), WeightSet::kRaw);
  EXPECT_THROW(weight_set_from_string("best"), std::invalid_argument);
}

}  // namespace
}  // namespace lmd
