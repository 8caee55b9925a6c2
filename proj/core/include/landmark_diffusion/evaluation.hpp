#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "landmark_diffusion/heatmap.hpp"

namespace lmd {

enum class SpacingRule { kNone, kFixed, kWristPair };

struct SpacingSpec {
  SpacingRule rule = SpacingRule::kNone;
  double fixed_mm_per_px = 0.0;
  size_t wrist_a = 0;
  size_t wrist_b = 0;
  double reference_mm = 50.0;
};

/// Per-landmark Euclidean error, times spacing (mm) when given, else px.
std::vector<double> radial_errors(const LandmarkSet& pred, const LandmarkSet& truth,
                                  std::optional<double> spacing_mm_per_px);

double mean_radial_error(const std::vector<double>& errors);

/// Percentage of errors <= each threshold.
std::map<double, double> successful_detection_rate(const std::vector<double>& errors,
                                                   const std::vector<double>& thresholds);

/// mm per px for one image: the fixed constant, reference_mm over the
/// ground-truth wrist-pair distance, or nullopt for pixel units.
std::optional<double> compute_spacing(const SpacingSpec& spec, const LandmarkSet& truth);

struct EvaluationReport {
  std::string dataset_id;
  std::string method = "ddpm";
  std::string units = "px";
  int64_t label_budget = 0;
  int64_t run_count = 1;
  std::vector<std::vector<double>> errors;  // [image][landmark], from the first run
  double mre = 0.0;
  double mre_std = 0.0;
  std::map<double, double> sdr;
  std::map<double, double> sdr_std;

  std::string to_text() const;
  static EvaluationReport from_text(const std::string& text);
};

/// Builds a single-run report from per-image predictions and truths
/// (original-resolution pixels) with per-image spacing.
EvaluationReport make_report(const std::string& dataset_id, int64_t label_budget,
                             const std::vector<LandmarkSet>& predictions,
                             const std::vector<LandmarkSet>& truths,
                             const std::vector<std::optional<double>>& spacings,
                             const std::vector<double>& thresholds);

/// Mean and population standard deviation across runs of the same dataset
/// and label budget.
EvaluationReport aggregate_runs(const std::vector<EvaluationReport>& runs);

/// Rows of MRE (+/- std) and SDR per threshold, one per report.
std::string render_table(const std::vector<EvaluationReport>& rows);
std::string render_csv(const std::vector<EvaluationReport>& rows);

}  // namespace lmd
