#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "landmark_diffusion/augment.hpp"
#include "landmark_diffusion/checkpoint.hpp"
#include "landmark_diffusion/dataset.hpp"
#include "landmark_diffusion/diffusion.hpp"
#include "landmark_diffusion/evaluation.hpp"
#include "landmark_diffusion/network.hpp"

namespace lmd {

struct PretrainConfig {
  int64_t total_iterations = 10000;
  std::vector<int64_t> snapshot_iterations{4000, 6000, 8000, 10000};
  int64_t batch_size = 4;
  int64_t grad_accumulation = 8;  // micro-batches per optimizer step
  double learning_rate = 1e-4;
  double weight_decay = 1e-2;
  double ema_decay = 0.995;
  bool augment = true;
  AugmentationParams augmentation;
  uint64_t seed = 0;
  int64_t log_every = 100;
  /// 0 runs the data pipeline inline (bit-reproducible, single thread);
  /// 1 prefetches micro-batches on a producer thread. Both yield the same batches.
  int64_t loader_threads = 0;

  void validate() const;
};

enum class LossMode { kGaussianCE, kContourNLL };
LossMode loss_mode_from_string(const std::string& text);
const char* to_string(LossMode mode);

struct FinetuneConfig {
  int64_t max_epochs = 200;
  int64_t batch_size = 2;
  int64_t grad_accumulation = 8;
  double initial_lr = 1e-5;
  double weight_decay = 1e-2;
  double plateau_factor = 0.5;
  int64_t plateau_patience = 10;
  double plateau_threshold = 0.0;  // relative improvement needed to reset patience
  double min_lr = 1e-7;
  int64_t early_stop_patience = 30;
  LossMode loss_mode = LossMode::kGaussianCE;
  WeightSet init_source = WeightSet::kEma;
  double sigma = 5.0;
  bool augment = true;
  AugmentationParams augmentation;
  /// Each epoch cycles the labelled set until at least this many samples
  /// were drawn. 0 means one pass.
  int64_t min_samples_per_epoch = 0;
  uint64_t seed = 0;

  void validate() const;
};

/// Exponential moving average of a set of named tensors. Shadows keep the
/// dtype of the tensors they were initialised from.
class EmaTracker {
 public:
  EmaTracker(const WeightMap& initial, double decay);

  /// shadow <- decay * shadow + (1 - decay) * current, per tensor.
  void update(const WeightMap& current);
  void update(UNet& net);

  const WeightMap& shadow() const { return shadow_; }
  double decay() const { return decay_; }
  int64_t update_count() const { return updates_; }

 private:
  WeightMap shadow_;
  double decay_;
  int64_t updates_ = 0;
};

EmaTracker ema_update(EmaTracker tracker, const NetworkWeights& current);

/// Multiplies the learning rate by `factor` after more than `patience`
/// epochs without the metric dropping below best * (1 - threshold).
class ReduceLrOnPlateau {
 public:
  ReduceLrOnPlateau(double initial_lr, double factor, int64_t patience, double min_lr,
                    double threshold = 0.0);

  /// Returns the learning rate to use for the next epoch.
  double step(double metric);
  double lr() const { return lr_; }
  int64_t reductions() const { return reductions_; }

 private:
  double lr_, factor_, min_lr_, threshold_;
  int64_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int64_t bad_epochs_ = 0;
  int64_t reductions_ = 0;
};

/// Append-only JSON-lines log; records are also kept in memory.
class TrainingLog {
 public:
  TrainingLog() = default;
  explicit TrainingLog(const std::filesystem::path& file);

  struct Record {
    std::string phase;
    int64_t step = 0;  // iteration or epoch
    double loss = 0.0;
    double lr = 0.0;
    std::optional<double> val_loss;
    std::optional<double> val_mre;
    double wall_seconds = 0.0;
    std::string note;
  };

  void append(Record record);
  const std::vector<Record>& records() const { return records_; }
  double elapsed() const;

 private:
  std::vector<Record> records_;
  std::optional<std::ofstream> out_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

/// Maps images in [0, 1] to the network's [-1, 1] input range.
torch::Tensor to_model_range(const torch::Tensor& images);
torch::Tensor from_model_range(const torch::Tensor& images);

struct DenoisingMicroBatch {
  torch::Tensor x0;   // [B, 1, S, S] in model range
  torch::Tensor t;    // int64 [B], 1-based
  torch::Tensor eps;  // like x0
};

/// Backpropagates the simple loss of each micro-batch scaled by
/// 1 / micro_batches.size(), so gradients are the average over micro-batches.
/// Returns that average loss.
double accumulate_denoising_gradients(UNet& net, const std::vector<DenoisingMicroBatch>& micro_batches,
                                      const NoiseSchedule& schedule);

struct PretrainResult {
  std::vector<Checkpoint> snapshots;
  std::vector<double> losses;  // one per iteration
};

/// Self-supervised denoising pre-training. One iteration = grad_accumulation
/// micro-batches of batch_size images, one AdamW step and one EMA update.
/// Snapshots are handed to `on_snapshot` when given, otherwise collected in
/// the result.
PretrainResult pretrain(UNet& net, const SampleSource& data, const PretrainConfig& config,
                        const ScheduleConfig& schedule, TrainingLog* log = nullptr,
                        const std::function<void(const Checkpoint&)>& on_snapshot = {});

/// Landmarks in working-resolution coordinates for [B, 1, S, S] images in [0, 1].
using Detector = std::function<std::vector<LandmarkSet>(const torch::Tensor& images)>;

/// Centroid-decoded predictions of a detector network.
std::vector<LandmarkSet> detect_landmarks(UNet& net, const torch::Tensor& images);
Detector make_detector(UNet& net);

struct EvaluationResult {
  EvaluationReport report;
  std::vector<LandmarkSet> predictions;  // original-resolution coordinates
};

/// Runs `detector` on every sample, rescales predictions to the original
/// resolution and scores them against the original annotations.
EvaluationResult evaluate_detector(const Detector& detector, const SampleSource& data,
                                   const std::vector<double>& thresholds, int64_t label_budget = 0,
                                   int64_t batch_size = 16);

struct EpochRecord {
  int64_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_mre = 0.0;
  double lr = 0.0;
};

struct FinetuneResult {
  Checkpoint best;
  std::vector<EpochRecord> epochs;
  int64_t best_epoch = 0;
  double best_val_mre = 0.0;
  bool stopped_early = false;
};

/// Supervised heatmap fine-tuning of a converted detector; returns the
/// weights of the epoch with the lowest validation loss.
FinetuneResult finetune(const NetworkWeights& detector, const SampleSource& train,
                        const SampleSource& val, const FinetuneConfig& config,
                        TrainingLog* log = nullptr);

/// Heatmap loss for a batch of logits [B, N, H, W] against binary targets.
torch::Tensor heatmap_loss(const torch::Tensor& logits, const torch::Tensor& targets, LossMode mode);

struct SnapshotScore {
  int64_t iteration = 0;
  std::vector<double> val_mre;  // one per repetition
  double mean = 0.0;
  double std = 0.0;
};

struct SnapshotSelection {
  size_t winner = 0;  // index into the snapshot list
  std::vector<SnapshotScore> scores;
};

/// Fine-tunes from every snapshot `repetitions` times (seeds config.seed + r)
/// and picks the lowest mean validation MRE; ties go to fewer iterations.
SnapshotSelection select_snapshot(const std::vector<Checkpoint>& snapshots, const SampleSource& train,
                                  const SampleSource& val, const FinetuneConfig& config,
                                  int64_t repetitions = 1, TrainingLog* log = nullptr);

/// Ancestral sampling with a denoiser; returns [count, 1, S, S] in [0, 1].
torch::Tensor generate_images(UNet& net, const NoiseSchedule& schedule, int64_t count, uint64_t seed);

}  // namespace lmd
