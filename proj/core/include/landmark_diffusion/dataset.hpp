#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "landmark_diffusion/evaluation.hpp"
#include "landmark_diffusion/heatmap.hpp"

namespace lmd {

/// Dataset ingestion failure pointing at a file and (when known) a line.
class DatasetError : public std::runtime_error {
 public:
  DatasetError(const std::filesystem::path& file, int64_t line, const std::string& what);
  const std::filesystem::path& file() const { return file_; }
  int64_t line() const { return line_; }

 private:
  std::filesystem::path file_;
  int64_t line_;
};

enum class Split { kTrain, kVal, kTest };
const char* to_string(Split split);

/// One image at working resolution with its labels in both coordinate frames.
struct Sample {
  std::string id;
  torch::Tensor image;                // [1, S, S] float32 in [0, 1]
  LandmarkSet landmarks;              // working-resolution coordinates
  LandmarkSet original;               // original-resolution coordinates
  std::optional<double> spacing_mm;   // mm per original px, if the dataset has units
};

class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual size_t size() const = 0;
  virtual Sample get(size_t index) const = 0;
  virtual std::string dataset_id() const = 0;
  virtual int64_t num_landmarks() const = 0;
  bool empty() const { return size() == 0; }
};

class InMemorySource : public SampleSource {
 public:
  InMemorySource(std::string dataset_id, int64_t num_landmarks, std::vector<Sample> samples);

  size_t size() const override { return samples_.size(); }
  Sample get(size_t index) const override { return samples_.at(index); }
  std::string dataset_id() const override { return dataset_id_; }
  int64_t num_landmarks() const override { return num_landmarks_; }
  const std::vector<Sample>& samples() const { return samples_; }

 private:
  std::string dataset_id_;
  int64_t num_landmarks_;
  std::vector<Sample> samples_;
};

/// Decodes every sample of `source` once.
std::shared_ptr<InMemorySource> materialize(const SampleSource& source);

enum class UnitMode { kPixels, kMillimeters };

/// Contents of `<root>/dataset.cfg`: `key = value` lines, `#` comments.
///
///   name = hand
///   landmarks = 37
///   units = millimeters            # or pixels
///   spacing_rule = wrist_pair      # none | fixed_spacing | wrist_pair
///   spacing_mm = 0.1               # fixed_spacing only
///   wrist_indices = 0, 4           # wrist_pair only
///   reference_mm = 50              # wrist_pair only
///   thresholds = 2, 4, 10
///   profile = hand                 # optional: check against a published layout
struct DatasetDescriptor {
  std::string name;
  int64_t num_landmarks = 0;
  UnitMode units = UnitMode::kPixels;
  SpacingSpec spacing;
  std::vector<double> thresholds;
  std::string profile;

  static DatasetDescriptor parse(const std::filesystem::path& file);
  std::string to_text() const;
};

/// Published layout of one of the benchmark radiograph collections.
struct DatasetProfile {
  std::string name;
  int64_t num_landmarks;
  size_t train, val, test;
  UnitMode units;
  SpacingRule spacing_rule;
  double spacing_mm;         // fixed_spacing value or wrist reference length
  std::vector<double> thresholds;
};

std::optional<DatasetProfile> find_profile(const std::string& name);

struct ImageEntry {
  std::string stem;
  std::filesystem::path image_path;
  std::filesystem::path label_path;
  ImageSize original_size;
  Split split = Split::kTrain;
};

struct DatasetManifest {
  DatasetDescriptor descriptor;
  std::vector<ImageEntry> entries;

  std::vector<size_t> split_indices(Split split) const;
  /// Disjoint, covering splits; descriptor consistency; profile split sizes.
  void validate() const;
};

/// Lazily decoded dataset on disk:
///   <root>/dataset.cfg, <root>/images/*.png|pgm, <root>/labels/<stem>.txt
///   (one "x,y" row per landmark), <root>/splits/{train,val,test}.txt.
class DiskDataset {
 public:
  /// Validates layout, annotations and splits; images are decoded on access.
  /// `require_labels = false` allows unannotated images (pre-training).
  DiskDataset(const std::filesystem::path& root, int64_t working_size, bool require_labels = true);

  const DatasetManifest& manifest() const { return manifest_; }
  int64_t working_size() const { return working_size_; }
  Sample load(size_t entry) const;
  std::shared_ptr<SampleSource> split(Split split) const;

 private:
  std::filesystem::path root_;
  int64_t working_size_;
  bool labeled_;
  DatasetManifest manifest_;
  std::vector<LandmarkSet> labels_;
};

/// Reads an annotation file with exactly `expected` "x,y" rows.
LandmarkSet read_landmarks(const std::filesystem::path& file, int64_t expected, ImageSize size);

/// Writes `samples` in the on-disk layout (image at its stored resolution,
/// original-frame landmarks) and the descriptor. `splits` is parallel to `samples`.
void write_dataset(const std::filesystem::path& root, const DatasetDescriptor& descriptor,
                   const std::vector<Sample>& samples, const std::vector<Split>& splits);

/// View over a subset of another source.
class SubsetSource : public SampleSource {
 public:
  SubsetSource(std::shared_ptr<const SampleSource> base, std::vector<size_t> indices);
  size_t size() const override { return indices_.size(); }
  Sample get(size_t index) const override { return base_->get(indices_.at(index)); }
  std::string dataset_id() const override { return base_->dataset_id(); }
  int64_t num_landmarks() const override { return base_->num_landmarks(); }
  const std::vector<size_t>& indices() const { return indices_; }

 private:
  std::shared_ptr<const SampleSource> base_;
  std::vector<size_t> indices_;
};

/// k labelled images drawn without replacement under `seed`. Subsets for
/// different k are not nested. k equal to the split size returns the split
/// in its original order.
std::shared_ptr<SubsetSource> subset_labels(std::shared_ptr<const SampleSource> train, size_t k,
                                            uint64_t seed);

}  // namespace lmd
