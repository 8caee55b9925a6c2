#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "landmark_diffusion/diffusion.hpp"
#include "landmark_diffusion/network.hpp"

namespace lmd {

enum class NetworkRole { kDenoiser, kDetector };
enum class WeightSet { kEma, kRaw };

const char* to_string(NetworkRole role);
const char* to_string(WeightSet set);
WeightSet weight_set_from_string(const std::string& text);

struct CheckpointMetadata {
  NetworkRole role = NetworkRole::kDenoiser;
  int64_t iteration = 0;
  std::string dataset_id;
  std::string init_source;        // "ema", "raw" or "random" for detectors
  std::string source_checkpoint;  // checkpoint a detector was fine-tuned from
  int64_t epoch = 0;
  double val_loss = 0.0;
  int64_t label_budget = 0;       // labelled images a detector was trained on
};

/// Network config, raw weights, optional EMA shadow, schedule and provenance.
///
/// On disk: the ASCII magic "LMDCKPT1", a little-endian uint64 header length,
/// a JSON header (config text, config hash, schedule, metadata, tensor index),
/// then the float32 tensor payload in index order.
struct Checkpoint {
  NetworkConfig config;
  ScheduleConfig schedule;
  WeightMap raw;
  std::optional<WeightMap> ema;
  CheckpointMetadata metadata;

  NetworkWeights weights(WeightSet set) const;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

/// Throws std::runtime_error on a corrupt archive or config-hash mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lmd
