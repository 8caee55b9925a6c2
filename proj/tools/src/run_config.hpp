#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "landmark_diffusion/checkpoint.hpp"
#include "landmark_diffusion/diffusion.hpp"
#include "landmark_diffusion/network.hpp"
#include "landmark_diffusion/training.hpp"

namespace lmd::cli {

/// Bad or missing configuration; the message starts with the offending
/// `section.key`.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "LANDMARK_DIFFUSION_OUTPUT";

enum class InitSource { kEma, kRaw, kRandom };

struct PretrainSection {
  std::filesystem::path dataset;
  std::string split = "train";
  PretrainConfig train;
};

struct FinetuneSection {
  std::filesystem::path dataset;
  std::filesystem::path checkpoint;  // denoiser snapshot or detector; unused for random init
  InitSource init = InitSource::kEma;
  int64_t label_budget = 0;  // 0 uses the whole training split
  FinetuneConfig train;
};

struct EvaluateSection {
  std::filesystem::path dataset;
  std::filesystem::path checkpoint;
  std::string split = "test";
  int64_t overlays = 4;
  int64_t batch_size = 16;
};

struct SampleSection {
  std::filesystem::path checkpoint;
  int64_t count = 4;
  uint64_t seed = 0;
  WeightSet weights = WeightSet::kEma;
};

struct SelectSnapshotSection {
  std::filesystem::path manifest;  // defaults to <output>/checkpoints/snapshots.json
  int64_t repetitions = 3;
};

struct SyntheticSection {
  std::filesystem::path output;
  int64_t image_size = 64;
  int64_t landmarks = 4;
  int64_t train = 200;
  int64_t val = 20;
  int64_t test = 50;
};

/// Resolved run configuration: one JSON file with a section per command.
/// Relative paths are resolved against the config file's directory.
struct RunConfig {
  std::filesystem::path source;
  std::filesystem::path output_dir;
  uint64_t seed = 0;
  std::string device = "cpu";
  int64_t threads = 0;  // 0 keeps the libtorch default
  NetworkConfig network;
  ScheduleConfig schedule;
  PretrainSection pretrain;
  FinetuneSection finetune;
  EvaluateSection evaluate;
  SampleSection sample;
  SelectSnapshotSection select_snapshot;
  SyntheticSection synthetic;

  /// Resolved values, written as the run's frozen config.
  nlohmann::json resolved;
};

/// Applies `--a.b=value` overrides to a parsed config. The value is read as
/// JSON when it parses, otherwise as a string.
void apply_overrides(nlohmann::json& config, const std::vector<std::string>& overrides);

/// Parses and validates a configuration document; unknown keys are errors.
RunConfig parse_run_config(const nlohmann::json& config, const std::filesystem::path& base_dir);

RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

const char* to_string(InitSource init);

}  // namespace lmd::cli
