#include "landmark_diffusion/evaluation.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace lmd {
namespace {

using json = nlohmann::json;

std::string threshold_key(double t) {
  std::ostringstream s;
  s << std::setprecision(17) << t;
  return s.str();
}

std::string fixed(double v, int digits = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

std::vector<double> radial_errors(const LandmarkSet& pred, const LandmarkSet& truth,
                                  std::optional<double> spacing_mm_per_px) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("radial_errors: " + std::to_string(pred.size()) +
                                " predicted vs " + std::to_string(truth.size()) + " true landmarks");
  const double scale = spacing_mm_per_px.value_or(1.0);
  std::vector<double> out;
  out.reserve(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) {
    const double dx = pred.points[i].x - truth.points[i].x;
    const double dy = pred.points[i].y - truth.points[i].y;
    out.push_back(std::sqrt(dx * dx + dy * dy) * scale);
  }
  return out;
}

double mean_radial_error(const std::vector<double>& errors) {
  if (errors.empty()) throw std::invalid_argument("mean_radial_error of no errors");
  double sum = 0.0;
  for (double e : errors) sum += e;
  return sum / static_cast<double>(errors.size());
}

std::map<double, double> successful_detection_rate(const std::vector<double>& errors,
                                                   const std::vector<double>& thresholds) {
  if (errors.empty()) throw std::invalid_argument("successful_detection_rate of no errors");
  std::map<double, double> out;
  for (double t : thresholds) {
    if (!(t > 0.0)) throw std::invalid_argument("SDR thresholds must be positive");
    size_t hit = 0;
    for (double e : errors) hit += e <= t ? 1 : 0;
    out[t] = 100.0 * static_cast<double>(hit) / static_cast<double>(errors.size());
  }
  return out;
}

std::optional<double> compute_spacing(const SpacingSpec& spec, const LandmarkSet& truth) {
  switch (spec.rule) {
    case SpacingRule::kNone:
      return std::nullopt;
    case SpacingRule::kFixed:
      if (!(spec.fixed_mm_per_px > 0.0)) throw std::invalid_argument("fixed spacing must be positive");
      return spec.fixed_mm_per_px;
    case SpacingRule::kWristPair: {
      if (spec.wrist_a >= truth.size() || spec.wrist_b >= truth.size())
        throw std::invalid_argument("wrist landmark index out of range");
      const auto& a = truth.points[spec.wrist_a];
      const auto& b = truth.points[spec.wrist_b];
      const double d = std::hypot(a.x - b.x, a.y - b.y);
      if (!(d > 0.0)) throw std::invalid_argument("wrist landmarks coincide; spacing undefined");
      return spec.reference_mm / d;
    }
  }
  return std::nullopt;
}

EvaluationReport make_report(const std::string& dataset_id, int64_t label_budget,
                             const std::vector<LandmarkSet>& predictions,
                             const std::vector<LandmarkSet>& truths,
                             const std::vector<std::optional<double>>& spacings,
                             const std::vector<double>& thresholds) {
  if (predictions.size() != truths.size() || spacings.size() != truths.size())
    throw std::invalid_argument("make_report: predictions, truths and spacings differ in length");
  EvaluationReport r;
  r.dataset_id = dataset_id;
  r.label_budget = label_budget;
  bool any_mm = false;
  std::vector<double> flat;
  for (size_t i = 0; i < truths.size(); ++i) {
    r.errors.push_back(radial_errors(predictions[i], truths[i], spacings[i]));
    any_mm = any_mm || spacings[i].has_value();
    flat.insert(flat.end(), r.errors.back().begin(), r.errors.back().end());
  }
  r.units = any_mm ? "mm" : "px";
  r.mre = mean_radial_error(flat);
  r.sdr = successful_detection_rate(flat, thresholds);
  for (const auto& [t, v] : r.sdr) r.sdr_std[t] = 0.0;
  return r;
}

EvaluationReport aggregate_runs(const std::vector<EvaluationReport>& runs) {
  if (runs.empty()) throw std::invalid_argument("aggregate_runs needs at least one report");
  const auto& first = runs.front();
  for (const auto& r : runs) {
    if (r.dataset_id != first.dataset_id)
      throw std::invalid_argument("aggregate_runs: mixed datasets '" + first.dataset_id + "' and '" +
                                  r.dataset_id + "'");
    if (r.label_budget != first.label_budget)
      throw std::invalid_argument("aggregate_runs: mixed label budgets");
  }
  auto mean_std = [&](auto getter) {
    double sum = 0.0;
    for (const auto& r : runs) sum += getter(r);
    const double mean = sum / static_cast<double>(runs.size());
    double var = 0.0;
    for (const auto& r : runs) var += (getter(r) - mean) * (getter(r) - mean);
    return std::pair{mean, std::sqrt(var / static_cast<double>(runs.size()))};
  };
  EvaluationReport out = first;
  out.run_count = static_cast<int64_t>(runs.size());
  std::tie(out.mre, out.mre_std) = mean_std([](const EvaluationReport& r) { return r.mre; });
  for (const auto& [t, v] : first.sdr) {
    std::tie(out.sdr[t], out.sdr_std[t]) =
        mean_std([t = t](const EvaluationReport& r) { return r.sdr.at(t); });
  }
  return out;
}

std::string EvaluationReport::to_text() const {
  json sdr_j = json::object(), sdr_std_j = json::object();
  for (const auto& [t, v] : sdr) sdr_j[threshold_key(t)] = v;
  for (const auto& [t, v] : sdr_std) sdr_std_j[threshold_key(t)] = v;
  json j{{"dataset", dataset_id}, {"method", method},  {"units", units},
         {"k", label_budget},     {"runs", run_count}, {"mre", mre},
         {"mre_std", mre_std},    {"sdr", sdr_j},      {"sdr_std", sdr_std_j},
         {"errors", errors}};
  return j.dump(2);
}

EvaluationReport EvaluationReport::from_text(const std::string& text) {
  const auto j = json::parse(text);
  EvaluationReport r;
  r.dataset_id = j.at("dataset").get<std::string>();
  r.method = j.at("method").get<std::string>();
  r.units = j.at("units").get<std::string>();
  r.label_budget = j.at("k").get<int64_t>();
  r.run_count = j.at("runs").get<int64_t>();
  r.mre = j.at("mre").get<double>();
  r.mre_std = j.at("mre_std").get<double>();
  for (const auto& [k, v] : j.at("sdr").items()) r.sdr[std::stod(k)] = v.get<double>();
  for (const auto& [k, v] : j.at("sdr_std").items()) r.sdr_std[std::stod(k)] = v.get<double>();
  r.errors = j.at("errors").get<std::vector<std::vector<double>>>();
  return r;
}

std::string render_table(const std::vector<EvaluationReport>& rows) {
  if (rows.empty()) return {};
  const auto& head = rows.front();
  std::ostringstream s;
  s << std::left << std::setw(12) << "Method" << std::setw(6) << "k" << std::setw(20)
    << ("MRE (" + head.units + ")");
  for (const auto& [t, v] : head.sdr)
    s << std::setw(18) << ("SDR " + threshold_key(t) + head.units + " (%)");
  s << "\n";
  for (const auto& r : rows) {
    s << std::setw(12) << r.method << std::setw(6) << r.label_budget << std::setw(20)
      << (fixed(r.mre) + " +/- " + fixed(r.mre_std));
    for (const auto& [t, v] : r.sdr) s << std::setw(18) << (fixed(v) + " +/- " + fixed(r.sdr_std.at(t)));
    s << "\n";
  }
  return s.str();
}

std::string render_csv(const std::vector<EvaluationReport>& rows) {
  if (rows.empty()) return {};
  std::ostringstream s;
  s << "method,k,units,mre,mre_std";
  for (const auto& [t, v] : rows.front().sdr) s << ",sdr_" << threshold_key(t) << ",sdr_std_" << threshold_key(t);
  s << "\n" << std::setprecision(17);
  for (const auto& r : rows) {
    s << r.method << "," << r.label_budget << "," << r.units << "," << r.mre << "," << r.mre_std;
    for (const auto& [t, v] : r.sdr) s << "," << v << "," << r.sdr_std.at(t);
    s << "\n";
  }
  return s.str();
}

}  // namespace lmd
