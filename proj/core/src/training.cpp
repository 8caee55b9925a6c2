#include "landmark_diffusion/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "bounded_queue.hpp"
#include "landmark_diffusion/heatmap.hpp"

namespace lmd {
namespace {

using json = nlohmann::json;

[[noreturn]] void field_error(const std::string& section, const std::string& field,
                              const std::string& why) {
  throw std::invalid_argument(section + "." + field + ": " + why);
}

void set_learning_rate(torch::optim::Optimizer& optimizer, double lr) {
  for (auto& group : optimizer.param_groups())
    static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
}

torch::optim::AdamW make_optimizer(UNet& net, double lr, double weight_decay) {
  return torch::optim::AdamW(net->parameters(), torch::optim::AdamWOptions(lr)
                                                    .betas({0.9, 0.999})
                                                    .weight_decay(weight_decay));
}

WeightMap clone_map(const WeightMap& m) {
  WeightMap out;
  for (const auto& [k, v] : m) out.emplace(k, v.detach().clone());
  return out;
}

// Draws pre-training micro-batches in a seed-determined order: an epoch-wise
// shuffle over the source plus per-image augmentation.
class DenoisingBatchStream {
 public:
  DenoisingBatchStream(const InMemorySource& data, const PretrainConfig& config)
      : data_(data), config_(config), rng_(config.seed) {}

  torch::Tensor next() {
    std::vector<torch::Tensor> images;
    images.reserve(static_cast<size_t>(config_.batch_size));
    for (int64_t b = 0; b < config_.batch_size; ++b) {
      if (cursor_ == order_.size()) reshuffle();
      const auto& sample = data_.samples()[order_[cursor_++]];
      auto image = sample.image;
      if (config_.augment) {
        const ImageSize size{image.size(2), image.size(1)};
        image = augment(image, sample.landmarks, sample_affine(config_.augmentation, size, rng_)).first;
      }
      images.push_back(image);
    }
    return to_model_range(torch::stack(images));
  }

 private:
  void reshuffle() {
    order_.resize(data_.size());
    std::iota(order_.begin(), order_.end(), size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }

  const InMemorySource& data_;
  const PretrainConfig& config_;
  std::mt19937_64 rng_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
};

struct LabeledBatch {
  torch::Tensor images;   // [B, 1, S, S] model range
  torch::Tensor targets;  // [B, N, S, S]
};

LabeledBatch make_labeled_batch(const InMemorySource& data, const std::vector<size_t>& indices,
                                const FinetuneConfig& config, std::mt19937_64* rng) {
  std::vector<torch::Tensor> images;
  std::vector<LandmarkSet> labels;
  for (auto i : indices) {
    const auto& s = data.samples()[i];
    if (rng != nullptr && config.augment) {
      const ImageSize size{s.image.size(2), s.image.size(1)};
      auto [img, lm] = augment(s.image, s.landmarks, sample_affine(config.augmentation, size, *rng));
      images.push_back(img);
      labels.push_back(std::move(lm));
    } else {
      images.push_back(s.image);
      labels.push_back(s.landmarks);
    }
  }
  auto stacked = torch::stack(images);
  return {to_model_range(stacked),
          encode_heatmap_batch(labels, stacked.size(2), stacked.size(3), config.sigma)};
}

struct ValidationScore {
  double loss = 0.0;
  double mre = 0.0;
};

ValidationScore validate_detector(UNet& net, const InMemorySource& val, const FinetuneConfig& config) {
  torch::NoGradGuard no_grad;
  double loss_sum = 0.0;
  size_t count = 0;
  std::vector<LandmarkSet> preds, truths;
  std::vector<std::optional<double>> spacings;
  constexpr size_t kChunk = 16;
  for (size_t begin = 0; begin < val.size(); begin += kChunk) {
    std::vector<size_t> idx;
    for (size_t i = begin; i < std::min(val.size(), begin + kChunk); ++i) idx.push_back(i);
    auto batch = make_labeled_batch(val, idx, config, nullptr);
    auto logits = net->forward(batch.images, std::nullopt);
    loss_sum += heatmap_loss(logits, batch.targets, config.loss_mode).item<double>() *
                static_cast<double>(idx.size());
    count += idx.size();
    for (size_t b = 0; b < idx.size(); ++b) {
      const auto& s = val.samples()[idx[b]];
      HeatmapStack stack{logits[static_cast<int64_t>(b)], HeatmapEncoding::kLogits, config.sigma, {}};
      auto working = decode_centroid(stack);
      preds.push_back(rescale_landmarks(working, working.image_size, s.original.image_size));
      truths.push_back(s.original);
      spacings.push_back(s.spacing_mm);
    }
  }
  std::vector<double> errors;
  for (size_t i = 0; i < preds.size(); ++i) {
    auto e = radial_errors(preds[i], truths[i], spacings[i]);
    errors.insert(errors.end(), e.begin(), e.end());
  }
  return {loss_sum / static_cast<double>(count), mean_radial_error(errors)};
}

}  // namespace

void PretrainConfig::validate() const {
  const std::string s = "pretrain";
  if (total_iterations < 1) field_error(s, "total_iterations", "must be positive");
  if (batch_size < 1) field_error(s, "batch_size", "must be positive");
  if (grad_accumulation < 1) field_error(s, "grad_accumulation", "must be positive");
  if (!(learning_rate > 0)) field_error(s, "learning_rate", "must be positive");
  if (weight_decay < 0) field_error(s, "weight_decay", "must be non-negative");
  if (!(ema_decay >= 0 && ema_decay < 1)) field_error(s, "ema_decay", "must lie in [0, 1)");
  if (log_every < 1) field_error(s, "log_every", "must be positive");
  if (loader_threads < 0 || loader_threads > 1) field_error(s, "loader_threads", "must be 0 or 1");
  for (auto it : snapshot_iterations)
    if (it < 1 || it > total_iterations)
      field_error(s, "snapshot_iterations", std::to_string(it) + " outside [1, total_iterations]");
}

LossMode loss_mode_from_string(const std::string& text) {
  if (text == "gaussian_ce") return LossMode::kGaussianCE;
  if (text == "contour_nll") return LossMode::kContourNLL;
  throw std::invalid_argument("finetune.loss_mode: expected gaussian_ce or contour_nll, got '" + text + "'");
}

const char* to_string(LossMode mode) {
  return mode == LossMode::kGaussianCE ? "gaussian_ce" : "contour_nll";
}

void FinetuneConfig::validate() const {
  const std::string s = "finetune";
  if (max_epochs < 1) field_error(s, "max_epochs", "must be positive");
  if (batch_size < 1) field_error(s, "batch_size", "must be positive");
  if (grad_accumulation < 1) field_error(s, "grad_accumulation", "must be positive");
  if (!(initial_lr > 0)) field_error(s, "initial_lr", "must be positive");
  if (weight_decay < 0) field_error(s, "weight_decay", "must be non-negative");
  if (!(plateau_factor > 0 && plateau_factor < 1)) field_error(s, "plateau_factor", "must lie in (0, 1)");
  if (plateau_patience < 0) field_error(s, "plateau_patience", "must be non-negative");
  if (plateau_threshold < 0) field_error(s, "plateau_threshold", "must be non-negative");
  if (min_lr < 0) field_error(s, "min_lr", "must be non-negative");
  if (early_stop_patience < 1) field_error(s, "early_stop_patience", "must be positive");
  if (!(sigma > 0)) field_error(s, "sigma", "must be positive");
  if (min_samples_per_epoch < 0) field_error(s, "min_samples_per_epoch", "must be non-negative");
}

EmaTracker::EmaTracker(const WeightMap& initial, double decay) : shadow_(clone_map(initial)), decay_(decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw std::invalid_argument("EMA decay must lie in [0, 1)");
}

void EmaTracker::update(const WeightMap& current) {
  if (current.size() != shadow_.size())
    throw std::invalid_argument("EMA update: tensor sets differ in size");
  for (const auto& [key, value] : current) {
    const auto it = shadow_.find(key);
    if (it == shadow_.end()) throw std::invalid_argument("EMA update: unknown tensor " + key);
    if (!value.sizes().equals(it->second.sizes()))
      throw std::invalid_argument("EMA update: shape mismatch for " + key);
  }
  torch::NoGradGuard no_grad;
  for (auto& [key, shadow] : shadow_) {
    const auto& cur = current.at(key);
    shadow.mul_(decay_).add_(cur.detach().to(shadow.dtype()), 1.0 - decay_);
  }
  ++updates_;
}

void EmaTracker::update(UNet& net) {
  WeightMap current;
  for (const auto& item : net->named_parameters()) current.emplace(item.key(), item.value());
  update(current);
}

EmaTracker ema_update(EmaTracker tracker, const NetworkWeights& current) {
  tracker.update(current.tensors);
  return tracker;
}

ReduceLrOnPlateau::ReduceLrOnPlateau(double initial_lr, double factor, int64_t patience,
                                     double min_lr, double threshold)
    : lr_(initial_lr), factor_(factor), min_lr_(min_lr), threshold_(threshold), patience_(patience) {
  if (!(factor > 0 && factor < 1)) throw std::invalid_argument("plateau factor must lie in (0, 1)");
}

double ReduceLrOnPlateau::step(double metric) {
  const bool improved = std::isinf(best_) || metric <= best_ - threshold_ * std::abs(best_);
  if (improved) {
    best_ = std::min(best_, metric);
    bad_epochs_ = 0;
  } else if (++bad_epochs_ > patience_) {
    const double next = std::max(lr_ * factor_, min_lr_);
    if (next < lr_) {
      lr_ = next;
      ++reductions_;
    }
    bad_epochs_ = 0;
  }
  return lr_;
}

TrainingLog::TrainingLog(const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  out_.emplace(file, std::ios::app);
  if (!*out_) throw std::runtime_error("cannot open log " + file.string());
}

double TrainingLog::elapsed() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
}

void TrainingLog::append(Record record) {
  record.wall_seconds = elapsed();
  if (out_) {
    json j{{"phase", record.phase}, {"step", record.step}, {"loss", record.loss},
           {"lr", record.lr},       {"wall", record.wall_seconds}};
    if (record.val_loss) j["val_loss"] = *record.val_loss;
    if (record.val_mre) j["val_mre"] = *record.val_mre;
    if (!record.note.empty()) j["note"] = record.note;
    *out_ << j.dump() << "\n";
    out_->flush();
  }
  records_.push_back(std::move(record));
}

torch::Tensor to_model_range(const torch::Tensor& images) { return images * 2.0 - 1.0; }
torch::Tensor from_model_range(const torch::Tensor& images) { return (images + 1.0) / 2.0; }

double accumulate_denoising_gradients(UNet& net, const std::vector<DenoisingMicroBatch>& micro_batches,
                                      const NoiseSchedule& schedule) {
  if (micro_batches.empty()) throw std::invalid_argument("no micro-batches to accumulate");
  const double scale = 1.0 / static_cast<double>(micro_batches.size());
  double total = 0.0;
  for (const auto& mb : micro_batches) {
    auto x_t = forward_sample(mb.x0, mb.t, mb.eps, schedule);
    auto loss = simple_loss(mb.eps, net->forward(x_t, mb.t));
    const double value = loss.item<double>();
    if (!std::isfinite(value)) throw std::runtime_error("non-finite denoising loss");
    (loss * scale).backward();
    total += value * scale;
  }
  return total;
}

PretrainResult pretrain(UNet& net, const SampleSource& data, const PretrainConfig& config,
                        const ScheduleConfig& schedule_config, TrainingLog* log,
                        const std::function<void(const Checkpoint&)>& on_snapshot) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("pre-training data stream is empty");
  if (!net->config().timestep_conditioning || net->config().out_channels != 1)
    throw std::invalid_argument("pre-training needs a 1-channel timestep-conditioned denoiser");
  const auto schedule = build_schedule(schedule_config);
  const auto images = materialize(data);
  const std::set<int64_t> snapshots(config.snapshot_iterations.begin(), config.snapshot_iterations.end());

  auto optimizer = make_optimizer(net, config.learning_rate, config.weight_decay);
  EmaTracker ema(extract_weights(net).tensors, config.ema_decay);
  auto noise_gen = make_generator(config.seed ^ 0x9e3779b97f4a7c15ULL);
  DenoisingBatchStream stream(*images, config);

  const int64_t total_micro = config.total_iterations * config.grad_accumulation;
  detail::BoundedQueue<torch::Tensor> queue(4);
  std::jthread producer;
  if (config.loader_threads > 0) {
    producer = std::jthread([&](std::stop_token stop) {
      for (int64_t i = 0; i < total_micro && !stop.stop_requested(); ++i)
        if (!queue.push(stream.next())) break;
      queue.close();
    });
  }
  struct CloseOnExit {
    detail::BoundedQueue<torch::Tensor>& q;
    ~CloseOnExit() { q.close(); }
  } close_guard{queue};
  auto next_x0 = [&]() {
    if (config.loader_threads == 0) return stream.next();
    auto item = queue.pop();
    if (!item) throw std::runtime_error("data loader stopped early");
    return *item;
  };

  PretrainResult result;
  result.losses.reserve(static_cast<size_t>(config.total_iterations));
  net->train();
  double window = 0.0;
  int64_t window_n = 0;
  for (int64_t it = 1; it <= config.total_iterations; ++it) {
    std::vector<DenoisingMicroBatch> micro;
    micro.reserve(static_cast<size_t>(config.grad_accumulation));
    for (int64_t a = 0; a < config.grad_accumulation; ++a) {
      auto x0 = next_x0();
      auto t = torch::randint(1, schedule.num_steps() + 1, {x0.size(0)}, noise_gen, torch::kLong);
      auto eps = torch::randn(x0.sizes(), noise_gen, torch::kFloat32);
      micro.push_back({x0, t, eps});
    }
    optimizer.zero_grad();
    double loss = 0.0;
    try {
      loss = accumulate_denoising_gradients(net, micro, schedule);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(std::string(e.what()) + " at iteration " + std::to_string(it));
    }
    optimizer.step();
    ema.update(net);
    result.losses.push_back(loss);
    window += loss;
    ++window_n;

    const bool snap = snapshots.count(it) > 0;
    if (log != nullptr && (it % config.log_every == 0 || snap || it == config.total_iterations)) {
      log->append({"pretrain", it, window / static_cast<double>(window_n), config.learning_rate,
                   std::nullopt, std::nullopt, 0.0, snap ? "snapshot" : ""});
      window = 0.0;
      window_n = 0;
    }
    if (snap) {
      Checkpoint ckpt;
      ckpt.config = net->config();
      ckpt.schedule = schedule_config;
      ckpt.raw = extract_weights(net).tensors;
      ckpt.ema = clone_map(ema.shadow());
      ckpt.metadata.role = NetworkRole::kDenoiser;
      ckpt.metadata.iteration = it;
      ckpt.metadata.dataset_id = data.dataset_id();
      if (on_snapshot) {
        on_snapshot(ckpt);
      } else {
        result.snapshots.push_back(std::move(ckpt));
      }
    }
  }
  return result;
}

std::vector<LandmarkSet> detect_landmarks(UNet& net, const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  auto logits = net->forward(to_model_range(images), std::nullopt);
  std::vector<LandmarkSet> out;
  for (int64_t b = 0; b < logits.size(0); ++b)
    out.push_back(decode_centroid(HeatmapStack{logits[b], HeatmapEncoding::kLogits, 5.0, {}}));
  return out;
}

Detector make_detector(UNet& net) {
  return [net](const torch::Tensor& images) mutable { return detect_landmarks(net, images); };
}

EvaluationResult evaluate_detector(const Detector& detector, const SampleSource& data,
                                   const std::vector<double>& thresholds, int64_t label_budget,
                                   int64_t batch_size) {
  if (data.empty()) throw std::invalid_argument("evaluation set is empty");
  EvaluationResult result;
  std::vector<LandmarkSet> truths;
  std::vector<std::optional<double>> spacings;
  const auto chunk = static_cast<size_t>(std::max<int64_t>(1, batch_size));
  for (size_t begin = 0; begin < data.size(); begin += chunk) {
    std::vector<Sample> samples;
    std::vector<torch::Tensor> images;
    for (size_t i = begin; i < std::min(data.size(), begin + chunk); ++i) {
      samples.push_back(data.get(i));
      images.push_back(samples.back().image);
    }
    const auto preds = detector(torch::stack(images));
    if (preds.size() != samples.size()) throw std::runtime_error("detector returned wrong batch size");
    for (size_t b = 0; b < samples.size(); ++b) {
      const auto& s = samples[b];
      const ImageSize working{s.image.size(2), s.image.size(1)};
      result.predictions.push_back(rescale_landmarks(preds[b], working, s.original.image_size));
      truths.push_back(s.original);
      spacings.push_back(s.spacing_mm);
    }
  }
  result.report = make_report(data.dataset_id(), label_budget, result.predictions, truths, spacings,
                              thresholds);
  return result;
}

torch::Tensor heatmap_loss(const torch::Tensor& logits, const torch::Tensor& targets, LossMode mode) {
  if (mode == LossMode::kContourNLL)
    throw std::invalid_argument(
        "loss_mode contour_nll is not implemented: it needs contour-hugging target heatmaps, "
        "which this library does not construct; use gaussian_ce");
  if (!logits.sizes().equals(targets.sizes()))
    throw std::invalid_argument("heatmap_loss: logits and targets differ in shape");
  return torch::binary_cross_entropy_with_logits(logits, targets);
}

FinetuneResult finetune(const NetworkWeights& detector, const SampleSource& train,
                        const SampleSource& val, const FinetuneConfig& config, TrainingLog* log) {
  config.validate();
  if (config.loss_mode == LossMode::kContourNLL) heatmap_loss({}, {}, config.loss_mode);
  if (train.empty()) throw std::invalid_argument("fine-tuning needs at least one labelled image");
  if (val.empty()) throw std::invalid_argument("fine-tuning needs a non-empty validation set");
  const auto heads = detector.config.out_channels;
  if (train.num_landmarks() != heads || val.num_landmarks() != heads)
    throw std::invalid_argument("landmark count mismatch: detector head has " + std::to_string(heads) +
                                " channels, dataset has " + std::to_string(train.num_landmarks()));

  torch::manual_seed(config.seed);
  auto net = instantiate(detector);
  net->train();
  auto optimizer = make_optimizer(net, config.initial_lr, config.weight_decay);
  ReduceLrOnPlateau plateau(config.initial_lr, config.plateau_factor, config.plateau_patience,
                            config.min_lr, config.plateau_threshold);
  const auto train_set = materialize(train);
  const auto val_set = materialize(val);
  std::mt19937_64 rng(config.seed);

  FinetuneResult result;
  double best_loss = std::numeric_limits<double>::infinity();
  NetworkWeights best_weights;
  int64_t since_best = 0;

  for (int64_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<size_t> order;
    do {
      std::vector<size_t> pass(train_set->size());
      std::iota(pass.begin(), pass.end(), size_t{0});
      std::shuffle(pass.begin(), pass.end(), rng);
      order.insert(order.end(), pass.begin(), pass.end());
    } while (static_cast<int64_t>(order.size()) < config.min_samples_per_epoch);

    std::vector<std::vector<size_t>> micro;
    for (size_t i = 0; i < order.size(); i += static_cast<size_t>(config.batch_size))
      micro.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(
                                             std::min(order.size(), i + static_cast<size_t>(config.batch_size))));

    double epoch_loss = 0.0;
    const auto accum = static_cast<size_t>(config.grad_accumulation);
    for (size_t g = 0; g < micro.size(); g += accum) {
      const size_t group_end = std::min(micro.size(), g + accum);
      const double scale = 1.0 / static_cast<double>(group_end - g);
      optimizer.zero_grad();
      for (size_t m = g; m < group_end; ++m) {
        auto batch = make_labeled_batch(*train_set, micro[m], config, &rng);
        auto loss = heatmap_loss(net->forward(batch.images, std::nullopt), batch.targets, config.loss_mode);
        const double value = loss.item<double>();
        if (!std::isfinite(value))
          throw std::runtime_error("non-finite fine-tuning loss in epoch " + std::to_string(epoch));
        (loss * scale).backward();
        epoch_loss += value / static_cast<double>(micro.size());
      }
      optimizer.step();
    }

    const auto score = validate_detector(net, *val_set, config);
    const double lr_used = plateau.lr();
    result.epochs.push_back({epoch, epoch_loss, score.loss, score.mre, lr_used});
    if (log != nullptr) log->append({"finetune", epoch, epoch_loss, lr_used, score.loss, score.mre, 0.0, ""});

    if (score.loss < best_loss) {
      best_loss = score.loss;
      best_weights = extract_weights(net, detector.metadata);
      result.best_epoch = epoch;
      result.best_val_mre = score.mre;
      since_best = 0;
    } else if (++since_best >= config.early_stop_patience) {
      result.stopped_early = epoch < config.max_epochs;
      break;
    }
    set_learning_rate(optimizer, plateau.step(score.loss));
  }

  auto& ckpt = result.best;
  ckpt.config = best_weights.config;
  ckpt.raw = std::move(best_weights.tensors);
  ckpt.metadata.role = NetworkRole::kDetector;
  ckpt.metadata.iteration = detector.metadata.iteration;
  ckpt.metadata.dataset_id = train.dataset_id();
  ckpt.metadata.source_checkpoint = detector.metadata.source;
  ckpt.metadata.epoch = result.best_epoch;
  ckpt.metadata.val_loss = best_loss;
  ckpt.metadata.label_budget = static_cast<int64_t>(train.size());
  return result;
}

SnapshotSelection select_snapshot(const std::vector<Checkpoint>& snapshots, const SampleSource& train,
                                  const SampleSource& val, const FinetuneConfig& config,
                                  int64_t repetitions, TrainingLog* log) {
  if (snapshots.empty()) throw std::invalid_argument("select_snapshot: no snapshots given");
  if (repetitions < 1) throw std::invalid_argument("select_snapshot: repetitions must be positive");
  SnapshotSelection selection;
  for (const auto& snap : snapshots) {
    SnapshotScore score;
    score.iteration = snap.metadata.iteration;
    for (int64_t r = 0; r < repetitions; ++r) {
      FinetuneConfig run = config;
      run.seed = config.seed + static_cast<uint64_t>(r);
      auto detector = convert_to_detector(snap.weights(config.init_source), train.num_landmarks(), run.seed);
      const auto ft = finetune(detector, train, val, run);
      score.val_mre.push_back(ft.best_val_mre);
      if (log != nullptr) {
        log->append({"select_snapshot", snap.metadata.iteration, ft.epochs.back().train_loss, 0.0,
                     ft.best.metadata.val_loss, ft.best_val_mre, 0.0,
                     "repetition " + std::to_string(r)});
      }
    }
    const double n = static_cast<double>(score.val_mre.size());
    score.mean = std::accumulate(score.val_mre.begin(), score.val_mre.end(), 0.0) / n;
    double var = 0.0;
    for (double v : score.val_mre) var += (v - score.mean) * (v - score.mean);
    score.std = std::sqrt(var / n);
    selection.scores.push_back(std::move(score));
  }
  for (size_t i = 1; i < selection.scores.size(); ++i) {
    const auto& cand = selection.scores[i];
    const auto& best = selection.scores[selection.winner];
    if (cand.mean < best.mean || (cand.mean == best.mean && cand.iteration < best.iteration))
      selection.winner = i;
  }
  return selection;
}

torch::Tensor generate_images(UNet& net, const NoiseSchedule& schedule, int64_t count, uint64_t seed) {
  if (!net->config().timestep_conditioning)
    throw std::invalid_argument("sampling needs a timestep-conditioned denoiser, not a detector");
  if (count < 1) throw std::invalid_argument("sample count must be positive");
  net->eval();
  auto gen = make_generator(seed);
  const auto side = net->config().image_size;
  NoisePredictor predictor = [&](const torch::Tensor& x, Timestep t) {
    auto tt = torch::full({x.size(0)}, t.value, torch::kLong);
    return net->forward(x, tt);
  };
  auto x = ancestral_sample(predictor, {count, net->config().in_channels, side, side}, schedule, gen);
  return from_model_range(x).clamp(0.0, 1.0);
}

}  // namespace lmd
