#include "commands.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "landmark_diffusion/dataset.hpp"
#include "landmark_diffusion/evaluation.hpp"
#include "landmark_diffusion/heatmap.hpp"
#include "landmark_diffusion/image_io.hpp"
#include "landmark_diffusion/synthetic.hpp"
#include "landmark_diffusion/training.hpp"

namespace lmd::cli {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kManifestName = "snapshots.json";

void require_path(const fs::path& path, const std::string& field) {
  if (path.empty()) throw ConfigError(field + ": required");
  if (!fs::exists(path)) throw ConfigError(field + ": path does not exist: " + path.string());
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  return Split::kTest;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Creates the output layout, freezes the resolved config and applies the
// thread setting. Returns the output directory.
fs::path prepare_output(const RunConfig& config, const std::string& command) {
  const auto& out = config.output_dir;
  for (const char* sub : {"checkpoints", "logs", "reports", "samples", "overlays"})
    fs::create_directories(out / sub);
  auto frozen = config.resolved;
  frozen["command"] = command;
  write_text(out / "config.json", frozen.dump(2) + "\n");
  // Only the intra-op pool is sized; nothing here schedules inter-op work.
  if (config.threads > 0) torch::set_num_threads(static_cast<int>(config.threads));
  return out;
}

// Truncated so reruns into the same directory do not interleave records.
TrainingLog fresh_log(const fs::path& path) {
  fs::remove(path);
  return TrainingLog(path);
}

void save_validated(const Checkpoint& ckpt, const fs::path& path) {
  save_checkpoint(ckpt, path);
  const auto back = load_checkpoint(path);
  if (back.config != ckpt.config || back.raw.size() != ckpt.raw.size())
    throw std::runtime_error("checkpoint " + path.string() + " failed read-back validation");
}

void write_report(const EvaluationReport& report, const fs::path& stem) {
  write_text(stem.string() + ".json", report.to_text());
  write_text(stem.string() + ".csv", render_csv({report}));
  const auto back = EvaluationReport::from_text(read_text(stem.string() + ".json"));
  if (back.to_text() != report.to_text())
    throw std::runtime_error("report " + stem.string() + ".json does not parse back losslessly");
}

// Detector weights to start fine-tuning from, following finetune.init.
NetworkWeights initial_detector(const RunConfig& config, int64_t num_landmarks) {
  const auto& f = config.finetune;
  if (f.init == InitSource::kRandom) {
    auto denoiser = config.network;
    denoiser.out_channels = 1;
    denoiser.timestep_conditioning = true;
    auto net = build_network(denoiser, config.seed);
    auto detector = convert_to_detector(extract_weights(net), num_landmarks, config.seed);
    detector.metadata.source = "random";
    return detector;
  }
  require_path(f.checkpoint, "finetune.checkpoint");
  const auto ckpt = load_checkpoint(f.checkpoint);
  if (ckpt.metadata.role == NetworkRole::kDetector) {
    auto weights = ckpt.weights(WeightSet::kRaw);
    weights.metadata.source = f.checkpoint.string();
    return weights;
  }
  if (f.init == InitSource::kEma && !ckpt.ema)
    throw ConfigError("finetune.init: " + f.checkpoint.string() + " carries no EMA weights");
  auto detector = convert_to_detector(ckpt.weights(f.train.init_source), num_landmarks, config.seed);
  detector.metadata.source = f.checkpoint.string();
  return detector;
}

std::shared_ptr<const SampleSource> labelled_subset(const std::shared_ptr<SampleSource>& train, int64_t k,
                                                    uint64_t seed) {
  if (k == 0) return train;
  if (static_cast<size_t>(k) > train->size())
    throw ConfigError("finetune.label_budget: " + std::to_string(k) + " exceeds the " +
                      std::to_string(train->size()) + " training images");
  return subset_labels(train, static_cast<size_t>(k), seed);
}

void draw_cross(torch::Tensor& rgb, Point p, const std::array<float, 3>& color) {
  const auto h = rgb.size(1), w = rgb.size(2);
  auto acc = rgb.accessor<float, 3>();
  const auto cx = static_cast<int64_t>(std::lround(p.x)), cy = static_cast<int64_t>(std::lround(p.y));
  for (int64_t d = -3; d <= 3; ++d) {
    for (auto [x, y] : {std::pair{cx + d, cy}, std::pair{cx, cy + d}}) {
      if (x < 0 || y < 0 || x >= w || y >= h) continue;
      for (int c = 0; c < 3; ++c) acc[c][y][x] = color[static_cast<size_t>(c)];
    }
  }
}

// Grayscale image with the strongest heatmap probability in red, ground
// truth as green crosses and predictions as magenta crosses.
torch::Tensor render_overlay(const torch::Tensor& image, const torch::Tensor& probs, const LandmarkSet& truth,
                             const LandmarkSet& pred) {
  auto gray = image[0];
  auto heat = std::get<0>(probs.max(0));
  auto rgb = torch::stack({torch::max(gray, heat), gray * (1.0 - 0.5 * heat), gray * (1.0 - 0.5 * heat)})
                 .contiguous();
  for (const auto& p : truth.points) draw_cross(rgb, p, {0.f, 1.f, 0.f});
  for (const auto& p : pred.points) draw_cross(rgb, p, {1.f, 0.f, 1.f});
  return rgb;
}

json load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("select_snapshot.manifest: path does not exist: " + path.string());
  json manifest = json::parse(read_text(path), nullptr, false);
  if (manifest.is_discarded() || !manifest.contains("snapshots") || !manifest["snapshots"].is_array())
    throw std::runtime_error(path.string() + ": not a snapshot manifest");
  if (manifest["snapshots"].empty()) throw std::runtime_error(path.string() + ": manifest lists no snapshots");
  return manifest;
}

}  // namespace

void cmd_pretrain(const RunConfig& config) {
  const auto& p = config.pretrain;
  require_path(p.dataset, "pretrain.dataset");
  const auto out = prepare_output(config, "pretrain");

  DiskDataset dataset(p.dataset, config.network.image_size, /*require_labels=*/false);
  auto data = dataset.split(split_from_string(p.split));
  auto net = build_network(config.network, config.seed);
  auto log = fresh_log(out / "logs" / "pretrain.jsonl");

  json entries = json::array();
  pretrain(net, *data, p.train, config.schedule, &log, [&](const Checkpoint& ckpt) {
    const auto name = "pretrain_iter" + std::to_string(ckpt.metadata.iteration) + ".ckpt";
    save_validated(ckpt, out / "checkpoints" / name);
    entries.push_back({{"iteration", ckpt.metadata.iteration}, {"path", name}});
    std::cout << "snapshot " << name << " (iteration " << ckpt.metadata.iteration << ")\n";
  });

  json manifest{{"dataset_id", data->dataset_id()},
                {"config_hash", config.network.hash()},
                {"snapshots", entries}};
  write_text(out / "checkpoints" / kManifestName, manifest.dump(2) + "\n");
}

void cmd_finetune(const RunConfig& config) {
  const auto& f = config.finetune;
  require_path(f.dataset, "finetune.dataset");
  if (f.init != InitSource::kRandom) require_path(f.checkpoint, "finetune.checkpoint");
  const auto out = prepare_output(config, "finetune");

  // The working resolution follows the network the weights belong to.
  int64_t working = config.network.image_size;
  if (f.init != InitSource::kRandom) working = load_checkpoint(f.checkpoint).config.image_size;
  DiskDataset dataset(f.dataset, working);
  const auto& descriptor = dataset.manifest().descriptor;
  const auto detector = initial_detector(config, descriptor.num_landmarks);
  auto train = labelled_subset(dataset.split(Split::kTrain), f.label_budget, config.seed);
  auto val = dataset.split(Split::kVal);

  auto log = fresh_log(out / "logs" / "finetune.jsonl");
  auto result = finetune(detector, *train, *val, f.train, &log);
  result.best.metadata.init_source = to_string(f.init);
  result.best.metadata.source_checkpoint = detector.metadata.source;
  save_validated(result.best, out / "checkpoints" / "detector.ckpt");

  auto net = instantiate(result.best.weights(WeightSet::kRaw));
  net->eval();
  auto report = evaluate_detector(make_detector(net), *val, descriptor.thresholds,
                                  static_cast<int64_t>(train->size()))
                    .report;
  report.method = f.init == InitSource::kRandom ? "random_init" : "ddpm";
  write_report(report, out / "reports" / "validation");
  std::cout << "best epoch " << result.best_epoch << " of " << result.epochs.size() << ", validation MRE "
            << report.mre << " " << report.units << "\n";
}

void cmd_evaluate(const RunConfig& config) {
  const auto& e = config.evaluate;
  require_path(e.checkpoint, "evaluate.checkpoint");
  require_path(e.dataset, "evaluate.dataset");
  const auto ckpt = load_checkpoint(e.checkpoint);
  if (ckpt.metadata.role != NetworkRole::kDetector)
    throw std::runtime_error("evaluate.checkpoint: " + e.checkpoint.string() + " is not a detector checkpoint");
  const auto out = prepare_output(config, "evaluate");

  DiskDataset dataset(e.dataset, ckpt.config.image_size);
  const auto& descriptor = dataset.manifest().descriptor;
  if (ckpt.config.out_channels != descriptor.num_landmarks)
    throw std::runtime_error("landmark count mismatch: detector has " + std::to_string(ckpt.config.out_channels) +
                             " channels, dataset has " + std::to_string(descriptor.num_landmarks));
  auto data = dataset.split(split_from_string(e.split));
  auto net = instantiate(ckpt.weights(WeightSet::kRaw));
  net->eval();

  auto result = evaluate_detector(make_detector(net), *data, descriptor.thresholds, ckpt.metadata.label_budget,
                                  e.batch_size);
  result.report.method = ckpt.metadata.init_source == "random" ? "random_init" : "ddpm";
  write_report(result.report, out / "reports" / "evaluation");

  torch::NoGradGuard no_grad;
  const auto n = std::min<size_t>(static_cast<size_t>(e.overlays), data->size());
  for (size_t i = 0; i < n; ++i) {
    const auto s = data->get(i);
    auto probs = torch::sigmoid(net->forward(to_model_range(s.image.unsqueeze(0)), std::nullopt))[0];
    const ImageSize working{s.image.size(2), s.image.size(1)};
    const auto pred = rescale_landmarks(result.predictions[i], s.original.image_size, working);
    write_png_rgb(out / "overlays" / (s.id + ".png"), render_overlay(s.image, probs, s.landmarks, pred));
  }
  std::cout << render_table({result.report});
}

void cmd_sample(const RunConfig& config) {
  const auto& m = config.sample;
  require_path(m.checkpoint, "sample.checkpoint");
  const auto ckpt = load_checkpoint(m.checkpoint);
  if (ckpt.metadata.role != NetworkRole::kDenoiser || !ckpt.config.timestep_conditioning)
    throw std::runtime_error("sample.checkpoint: " + m.checkpoint.string() +
                             " is a detector; sampling needs a timestep-conditioned denoiser");
  if (m.weights == WeightSet::kEma && !ckpt.ema)
    throw ConfigError("sample.weights: " + m.checkpoint.string() + " carries no EMA weights");
  const auto out = prepare_output(config, "sample");

  auto net = instantiate(ckpt.weights(m.weights));
  const auto images = generate_images(net, build_schedule(ckpt.schedule), m.count, m.seed);
  for (int64_t i = 0; i < m.count; ++i) {
    std::ostringstream name;
    name << "sample_" << std::setw(3) << std::setfill('0') << i << ".png";
    write_png_gray(out / "samples" / name.str(), images[i]);
  }
  std::cout << "wrote " << m.count << " samples to " << (out / "samples").string() << "\n";
}

void cmd_select_snapshot(const RunConfig& config) {
  const auto& f = config.finetune;
  const auto manifest_path = config.select_snapshot.manifest;
  const auto manifest = load_manifest(manifest_path);
  require_path(f.dataset, "finetune.dataset");
  if (f.init == InitSource::kRandom) throw ConfigError("finetune.init: snapshot selection needs ema or raw");
  const auto out = prepare_output(config, "select-snapshot");

  std::vector<Checkpoint> snapshots;
  for (const auto& entry : manifest["snapshots"]) {
    const fs::path rel = entry.at("path").get<std::string>();
    snapshots.push_back(load_checkpoint(rel.is_absolute() ? rel : manifest_path.parent_path() / rel));
  }
  DiskDataset dataset(f.dataset, snapshots.front().config.image_size);
  auto train = labelled_subset(dataset.split(Split::kTrain), f.label_budget, config.seed);
  auto val = dataset.split(Split::kVal);

  auto log = fresh_log(out / "logs" / "select_snapshot.jsonl");
  const auto selection =
      select_snapshot(snapshots, *train, *val, f.train, config.select_snapshot.repetitions, &log);

  json scores = json::array();
  for (const auto& s : selection.scores) {
    scores.push_back({{"iteration", s.iteration}, {"val_mre", s.val_mre}, {"mean", s.mean}, {"std", s.std}});
    std::cout << "iteration " << s.iteration << ": validation MRE " << s.mean << " +- " << s.std << "\n";
  }
  const auto winner = selection.scores[selection.winner].iteration;
  json report{{"label_budget", train->size()},
              {"repetitions", config.select_snapshot.repetitions},
              {"init", to_string(f.init)},
              {"winner_iteration", winner},
              {"winner_path", manifest["snapshots"][selection.winner].at("path")},
              {"snapshots", scores}};
  write_text(out / "reports" / "snapshot_selection.json", report.dump(2) + "\n");
  std::cout << "selected iteration " << winner << "\n";
}

void cmd_generate_synthetic(const RunConfig& config) {
  const auto& y = config.synthetic;
  if (y.output.empty()) throw ConfigError("synthetic.output: required");
  const auto total = static_cast<size_t>(y.train + y.val + y.test);
  if (total == 0) throw ConfigError("synthetic: at least one image is required");
  const auto source = generate_synthetic(total, y.image_size, y.image_size, y.landmarks, config.seed);

  DatasetDescriptor descriptor;
  descriptor.name = "synthetic";
  descriptor.num_landmarks = y.landmarks;
  descriptor.units = UnitMode::kPixels;
  descriptor.thresholds = {2.0, 4.0, 8.0};
  std::vector<Split> splits;
  splits.insert(splits.end(), static_cast<size_t>(y.train), Split::kTrain);
  splits.insert(splits.end(), static_cast<size_t>(y.val), Split::kVal);
  splits.insert(splits.end(), static_cast<size_t>(y.test), Split::kTest);
  write_dataset(y.output, descriptor, source->samples(), splits);
  std::cout << "wrote " << total << " synthetic images to " << y.output.string() << "\n";
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"DDPM pre-training and few-shot heatmap landmark detection", "landmark-diffusion"};
  app.set_version_flag("--version", "landmark-diffusion 0.1.0");
  app.require_subcommand(1);

  struct Command {
    const char* name;
    const char* help;
    void (*fn)(const RunConfig&);
  };
  const Command commands[] = {
      {"pretrain", "Self-supervised denoising pre-training; writes snapshots and a manifest", cmd_pretrain},
      {"finetune", "Head swap and heatmap fine-tuning on k labelled images", cmd_finetune},
      {"evaluate", "MRE/SDR report and overlays for a detector checkpoint", cmd_evaluate},
      {"sample", "Ancestral sampling from a denoiser checkpoint", cmd_sample},
      {"select-snapshot", "Fine-tune from every snapshot and pick the best", cmd_select_snapshot},
      {"generate-synthetic", "Write a procedural landmark dataset", cmd_generate_synthetic},
  };
  std::string config_path;
  std::vector<CLI::App*> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->allow_extras();
    sub->footer("Any config value can be overridden with --section.key=value.");
    subs.push_back(sub);
  }

  std::vector<std::string> argv_store{"landmark-diffusion"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  for (size_t i = 0; i < subs.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    try {
      const auto config = load_run_config(config_path, subs[i]->remaining());
      commands[i].fn(config);
      return 0;
    } catch (const std::invalid_argument& e) {
      std::cerr << "landmark-diffusion " << commands[i].name << ": error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "landmark-diffusion " << commands[i].name << ": error: " << e.what() << "\n";
      return 1;
    }
  }
  return 2;
}

}  // namespace lmd::cli
