// Acceptance harness: one PASS/FAIL line per criterion, nonzero exit if any
// selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "CLI11.hpp"
#include "landmark_diffusion/checkpoint.hpp"
#include "landmark_diffusion/dataset.hpp"
#include "landmark_diffusion/diffusion.hpp"
#include "landmark_diffusion/evaluation.hpp"
#include "landmark_diffusion/heatmap.hpp"
#include "landmark_diffusion/network.hpp"
#include "landmark_diffusion/synthetic.hpp"
#include "landmark_diffusion/training.hpp"

namespace fs = std::filesystem;
using namespace lmd;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

NetworkConfig toy_network() {
  NetworkConfig c;
  c.image_size = 16;
  c.base_channels = 8;
  c.channel_multipliers = {1, 2};
  c.attention_resolution = 8;
  c.res_blocks_per_level = 1;
  return c;
}

// ---------------------------------------------------------------- 1

Outcome schedule_algebra() {
  Outcome o;
  double worst = 0.0;
  for (int64_t T : {1, 3, 500}) {
    const auto s = build_linear_schedule(T, 1e-4, 0.02);
    // Sequential product in extended precision from independently built betas.
    long double prod = 1.0L;
    for (int64_t t = 1; t <= T; ++t) {
      const long double beta =
          T == 1 ? 1e-4L : 1e-4L + (0.02L - 1e-4L) * static_cast<long double>(t - 1) / static_cast<long double>(T - 1);
      prod *= 1.0L - beta;
      const double rel = std::abs(static_cast<double>((s.alpha_bar(Timestep{t}) - prod) / prod));
      worst = std::max(worst, rel);
      if (t > 1 && !(s.alpha_bar(Timestep{t}) < s.alpha_bar(Timestep{t - 1}))) {
        o.pass = false;
        o.detail += fmt("not strictly decreasing at T=%lld t=%lld; ", (long long)T, (long long)t);
      }
    }
  }
  // Frozen 50-digit value of the T=500 end point.
  const double ab500 = build_linear_schedule(500, 1e-4, 0.02).alpha_bar(Timestep{500});
  const double frozen_rel = std::abs(ab500 - 0.00635271079701505000647526) / 0.00635271079701505000647526;
  o.pass = o.pass && worst <= 1e-12 && frozen_rel <= 1e-12;
  o.detail += fmt("max rel err %.3g vs sequential product, %.3g vs frozen abar_500", worst, frozen_rel);
  return o;
}

// ---------------------------------------------------------------- 2

Outcome marginal_consistency(uint64_t seed) {
  constexpr int64_t kTrials = 20000;
  const auto s = build_linear_schedule(50, 1e-4, 0.02);
  auto gen = make_generator(seed);
  auto x0 = (torch::rand({64}, gen, torch::kFloat64) * 2 - 1);
  auto x = x0.expand({kTrials, 64}).clone();
  Outcome o;
  double worst_mean = 0.0, worst_var = 0.0;
  int fails = 0;
  for (int64_t t = 1; t <= 50; ++t) {
    x = forward_step(x, Timestep{t}, torch::randn({kTrials, 64}, gen, torch::kFloat64), s);
    if (t != 1 && t != 25 && t != 50) continue;
    const double ab = s.alpha_bar(Timestep{t});
    const double var_true = 1.0 - ab;
    auto mean = x.mean(0);
    auto centred = x - mean;
    auto var = centred.pow(2).sum(0) / (kTrials - 1);
    auto m4 = centred.pow(4).mean(0);
    for (int64_t i = 0; i < 64; ++i) {
      const double se_mean = std::sqrt(var_true / kTrials);
      const double v = var[i].item<double>();
      const double se_var = std::sqrt(std::max(m4[i].item<double>() - v * v, 0.0) / kTrials);
      const double zm = std::abs(mean[i].item<double>() - std::sqrt(ab) * x0[i].item<double>()) / se_mean;
      const double zv = std::abs(v - var_true) / se_var;
      worst_mean = std::max(worst_mean, zm);
      worst_var = std::max(worst_var, zv);
      fails += (zm > 3.0) + (zv > 3.0);
    }
  }
  o.pass = fails == 0;
  o.detail = fmt("iterated forward_step, 20000 trials x 64 px at t={1,25,50}: max |z| mean %.2f, var %.2f "
                 "(limit 3), %d excursions",
                 worst_mean, worst_var, fails);
  return o;
}

// ---------------------------------------------------------------- 3

Outcome posterior_inversion() {
  const auto s = build_linear_schedule(500, 1e-4, 0.02);
  auto gen = make_generator(3);
  auto x0 = torch::rand({4, 1, 8, 8}, gen, torch::kFloat64) * 2 - 1;
  auto eps = torch::randn({4, 1, 8, 8}, gen, torch::kFloat64);
  const double first = (posterior_mean(forward_sample(x0, Timestep{1}, eps, s), Timestep{1}, eps, s) - x0)
                           .abs().max().item<double>();
  // mu = (x_t - beta/sqrt(1-abar) * eps) / sqrt(alpha), evaluated by hand.
  double subst = 0.0;
  for (int64_t t : {2, 17, 250, 499, 500}) {
    auto xt = forward_sample(x0, Timestep{t}, eps, s);
    const double beta = s.betas()[static_cast<size_t>(t - 1)];
    double ab = 1.0;
    for (int64_t k = 0; k < t; ++k) ab *= 1.0 - s.betas()[static_cast<size_t>(k)];
    auto expected = (xt - beta / std::sqrt(1.0 - ab) * eps) / std::sqrt(1.0 - beta);
    subst = std::max(subst, (posterior_mean(xt, Timestep{t}, eps, s) - expected).abs().max().item<double>());
  }
  return {first <= 1e-6 && subst <= 1e-6,
          fmt("t=1 recovery max abs err %.3g, substitution oracle max abs err %.3g (limit 1e-6)", first, subst)};
}

// ---------------------------------------------------------------- 4

Outcome gradient_check() {
  auto net = build_network(toy_network(), 5);
  net->to(torch::kFloat64);
  const auto s = build_linear_schedule(50, 1e-4, 0.02);
  auto gen = make_generator(9);
  auto x0 = torch::rand({2, 1, 16, 16}, gen, torch::kFloat64) * 2 - 1;
  auto eps = torch::randn({2, 1, 16, 16}, gen, torch::kFloat64);
  auto t = torch::tensor({3, 41}, torch::kLong);
  auto x_t = forward_sample(x0, t, eps, s);
  auto loss_fn = [&] { return simple_loss(eps, net->forward(x_t, t)); };
  net->zero_grad();
  loss_fn().backward();
  auto params = net->named_parameters();
  std::mt19937_64 rng(21);
  torch::NoGradGuard no_grad;
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    auto& item = params[std::uniform_int_distribution<size_t>(0, params.size() - 1)(rng)];
    auto flat = item.value().view(-1);
    const auto idx = std::uniform_int_distribution<int64_t>(0, flat.numel() - 1)(rng);
    const double analytic = item.value().grad().view(-1)[idx].item<double>();
    const double orig = flat[idx].item<double>();
    const double h = 1e-3;
    flat[idx] = orig + h;
    const double up = loss_fn().item<double>();
    flat[idx] = orig - h;
    const double down = loss_fn().item<double>();
    flat[idx] = orig;
    const double numeric = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6}));
  }
  return {worst < 1e-3, fmt("10 parameters, central differences h=1e-3: max rel err %.3g (limit 1e-3)", worst)};
}

// ---------------------------------------------------------------- 5

Outcome heatmap_formula() {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> coord(0.0, 63.0);
  int mismatches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Point p{coord(rng), coord(rng)};
    const LandmarkSet set{{p}, {}, {64, 64}};
    auto maps = encode_heatmaps(set, 64, 64, 5.0).maps[0];
    std::vector<double> g(64 * 64);
    double peak = 0.0;
    for (int j = 0; j < 64; ++j)
      for (int i = 0; i < 64; ++i) {
        const double dx = i - p.x, dy = j - p.y;
        g[static_cast<size_t>(j * 64 + i)] = std::exp(-(dx * dx + dy * dy) / 50.0);
        peak = std::max(peak, g[static_cast<size_t>(j * 64 + i)]);
      }
    auto expected = torch::zeros({64, 64});
    auto acc = expected.accessor<float, 2>();
    for (int j = 0; j < 64; ++j)
      for (int i = 0; i < 64; ++i) acc[j][i] = g[static_cast<size_t>(j * 64 + i)] > 0.5 * peak ? 1.0f : 0.0f;
    mismatches += !torch::equal(maps, expected);
  }
  const auto count = encode_heatmaps({{{32, 32}}, {}, {64, 64}}, 64, 64, 5.0).maps.sum().item<double>();
  double roundtrip = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Point p{std::uniform_real_distribution<double>(8, 56)(rng), std::uniform_real_distribution<double>(8, 56)(rng)};
    const auto back = decode_centroid(encode_heatmaps({{p}, {}, {64, 64}}, 64, 64, 5.0)).points[0];
    roundtrip = std::max(roundtrip, std::hypot(back.x - p.x, back.y - p.y));
  }
  return {mismatches == 0 && count == 109.0 && roundtrip <= 0.5,
          fmt("%d/50 brute-force mismatches, %.0f active px at sigma 5 (expect 109), max roundtrip err %.3f px",
              mismatches, count, roundtrip)};
}

// ---------------------------------------------------------------- 6

Outcome head_swap() {
  auto net = build_network(toy_network(), 2);
  const auto denoiser = extract_weights(net);
  const auto det = convert_to_detector(denoiser, 3, 7);
  int changed = 0;
  for (const auto& [name, tensor] : denoiser.tensors) {
    if (name.rfind(kOutputLayer, 0) == 0) continue;
    changed += !torch::equal(tensor, det.tensors.at(name));
  }
  auto detector = instantiate(det);
  torch::NoGradGuard no_grad;
  auto x = torch::rand({2, 1, 16, 16}, make_generator(1));
  auto ref = detector->forward(x, std::nullopt);
  int variant = 0;
  for (int64_t t : {0, 1, 250, 500}) variant += !torch::equal(ref, detector->forward(x, torch::full({2}, t, torch::kLong)));
  return {changed == 0 && variant == 0 && ref.size(1) == 3,
          fmt("%d non-final tensors changed, %d timestep values changed the detector output", changed, variant)};
}

// ---------------------------------------------------------------- 7

Outcome ema_closed_form() {
  // Shadow starts at q and tracks a constant p.
  const double p = 0.3, q = -1.7;
  EmaTracker tracker({{"w", torch::full({1}, q, torch::kFloat64)}}, 0.995);
  const WeightMap target{{"w", torch::full({1}, p, torch::kFloat64)}};
  double worst = 0.0;
  for (int n = 1; n <= 1000; ++n) {
    tracker.update(target);
    const double expected = p + (q - p) * std::pow(0.995, n);
    worst = std::max(worst, std::abs(tracker.shadow().at("w").item<double>() - expected));
  }
  return {worst <= 1e-10, fmt("1000 updates toward a constant, max abs err %.3g (limit 1e-10)", worst)};
}

// ---------------------------------------------------------------- 8

Outcome metrics_oracle() {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0, 512);
  std::vector<Point> a, b;
  for (int i = 0; i < 1000; ++i) {
    a.push_back({u(rng), u(rng)});
    b.push_back({u(rng), u(rng)});
  }
  const LandmarkSet pa{a, {}, {512, 512}}, pb{b, {}, {512, 512}};
  const auto got = radial_errors(pa, pb, std::nullopt);
  std::vector<double> ref(1000);
  double worst = 0.0, sum = 0.0;
  for (size_t i = 0; i < 1000; ++i) {
    ref[i] = std::sqrt((a[i].x - b[i].x) * (a[i].x - b[i].x) + (a[i].y - b[i].y) * (a[i].y - b[i].y));
    worst = std::max(worst, std::abs(got[i] - ref[i]) / std::max(ref[i], 1e-300));
    sum += ref[i];
  }
  worst = std::max(worst, std::abs(mean_radial_error(got) - sum / 1000.0) / (sum / 1000.0));
  const std::vector<double> thresholds{5, 50, 100, 250};
  const auto sdr = successful_detection_rate(got, thresholds);
  for (double t : thresholds) {
    double hits = 0;
    for (double e : ref) hits += e <= t;
    worst = std::max(worst, std::abs(sdr.at(t) - 100.0 * hits / 1000.0) / std::max(100.0 * hits / 1000.0, 1e-300));
  }

  const LandmarkSet truth{{{10, 10}}, {}, {64, 64}}, pred{{{13, 14}}, {}, {64, 64}};
  const double px = radial_errors(pred, truth, std::nullopt)[0];
  const double mm = radial_errors(pred, truth, 0.1)[0];

  int non_monotone = 0;
  std::uniform_real_distribution<double> thr(0.01, 700);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> ts(8);
    for (auto& t : ts) t = thr(rng);
    double prev = -1;
    for (const auto& [t, v] : successful_detection_rate(got, ts)) {
      non_monotone += v < prev;
      prev = v;
    }
  }
  return {worst <= 1e-9 && px == 5.0 && std::abs(mm - 0.5) <= 1e-12 && non_monotone == 0,
          fmt("max rel err %.3g over 1000 pairs, (3,4) -> %.6g px, 0.1 mm/px -> %.6g mm, %d monotonicity "
              "violations over 100 threshold sets",
              worst, px, mm, non_monotone)};
}

// ---------------------------------------------------------------- 11

bool same_maps(const WeightMap& a, const WeightMap& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [k, v] : a)
    if (!b.count(k) || !torch::equal(v, b.at(k))) return false;
  return true;
}

Outcome determinism(const fs::path& work) {
  const auto data = generate_synthetic(12, 16, 16, 2, 4);
  const auto val = generate_synthetic(4, 16, 16, 2, 5);
  PretrainConfig pc;
  pc.total_iterations = 6;
  pc.snapshot_iterations = {3, 6};
  pc.batch_size = 2;
  pc.grad_accumulation = 2;
  pc.seed = 13;
  auto run_pretrain = [&] {
    auto net = build_network(toy_network(), 13);
    return pretrain(net, *data, pc, ScheduleConfig{20, 1e-4, 0.02, ReverseVariance::kBeta});
  };
  const auto p1 = run_pretrain(), p2 = run_pretrain();
  bool pre_same = p1.losses == p2.losses && p1.snapshots.size() == p2.snapshots.size();
  for (size_t i = 0; pre_same && i < p1.snapshots.size(); ++i)
    pre_same = same_maps(p1.snapshots[i].raw, p2.snapshots[i].raw) && same_maps(*p1.snapshots[i].ema, *p2.snapshots[i].ema);

  FinetuneConfig fc;
  fc.max_epochs = 3;
  fc.batch_size = 2;
  fc.grad_accumulation = 1;
  fc.initial_lr = 1e-3;
  fc.sigma = 2.0;
  fc.seed = 4;
  const auto det = convert_to_detector(p1.snapshots.back().weights(WeightSet::kEma), 2, 4);
  const auto train = subset_labels(data, 4, 4);
  const auto f1 = finetune(det, *train, *val, fc), f2 = finetune(det, *train, *val, fc);
  const bool fine_same = same_maps(f1.best.raw, f2.best.raw) && f1.best_epoch == f2.best_epoch;

  fs::create_directories(work);
  const auto path = work / "determinism.ckpt";
  save_checkpoint(f1.best, path);
  const auto back = load_checkpoint(path);
  auto a = instantiate(f1.best.weights(WeightSet::kRaw));
  auto b = instantiate(back.weights(WeightSet::kRaw));
  torch::NoGradGuard no_grad;
  auto x = torch::rand({3, 1, 16, 16}, make_generator(8));
  const bool persisted = torch::equal(a->forward(x, std::nullopt), b->forward(x, std::nullopt)) &&
                         same_maps(back.raw, f1.best.raw);
  return {pre_same && fine_same && persisted,
          fmt("pretrain repeat %s, finetune repeat %s, checkpoint save/load/forward %s", pre_same ? "bitwise" : "DIFFERS",
              fine_same ? "bitwise" : "DIFFERS", persisted ? "bitwise" : "DIFFERS")};
}

// ---------------------------------------------------------------- 9, 10

// Desk-scale settings for the scaled experiment. The data sizes, iteration
// counts, snapshots and label budgets are the ones the criterion fixes; the
// network and optimiser sizes are chosen to fit a single CPU core.
struct Experiment {
  int64_t size = 64;
  int64_t landmarks = 4;
  size_t unlabeled = 200, val = 20, test = 50;
  int64_t iterations = 2000;
  std::vector<int64_t> snapshots{1000, 2000};
  std::vector<size_t> budgets{1, 5, 10};
  int seeds = 3;
  int64_t finetune_epochs = 40;
  double pretrain_lr = 2e-4;
  int64_t pretrain_accumulation = 4;
  double finetune_lr = 1e-3;
  int64_t loss_window = 50;
};

NetworkConfig experiment_network(const Experiment& e) {
  NetworkConfig c;
  c.image_size = e.size;
  c.base_channels = 16;
  c.channel_multipliers = {1, 2, 4};
  c.attention_resolution = 16;
  c.res_blocks_per_level = 1;
  return c;
}

FinetuneConfig experiment_finetune(const Experiment& e, uint64_t seed) {
  FinetuneConfig f;
  f.max_epochs = e.finetune_epochs;
  f.batch_size = 2;
  f.grad_accumulation = 1;
  f.initial_lr = e.finetune_lr;
  f.plateau_patience = 5;
  f.early_stop_patience = 12;
  f.min_lr = 1e-6;
  f.sigma = 5.0;
  f.min_samples_per_epoch = 40;
  f.seed = seed;
  return f;
}

struct SharedExperiment {
  Experiment e;
  std::shared_ptr<InMemorySource> train, val, test;
  PretrainResult pretrained;
  fs::path work;
  double seconds = 0.0;
};

double window_mean(const std::vector<double>& v, int64_t end, int64_t window) {
  const auto hi = static_cast<size_t>(end);
  const auto lo = static_cast<size_t>(std::max<int64_t>(0, end - window));
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(lo), v.begin() + static_cast<std::ptrdiff_t>(hi), 0.0) /
         static_cast<double>(hi - lo);
}

SharedExperiment& shared_experiment(const fs::path& work, const Experiment& e) {
  static std::optional<SharedExperiment> shared;
  if (shared) return *shared;
  shared.emplace();
  auto& s = *shared;
  s.e = e;
  s.work = work;
  s.train = generate_synthetic(e.unlabeled, e.size, e.size, e.landmarks, 100, "synthetic");
  s.val = generate_synthetic(e.val, e.size, e.size, e.landmarks, 200, "synthetic");
  s.test = generate_synthetic(e.test, e.size, e.size, e.landmarks, 300, "synthetic");
  PretrainConfig pc;
  pc.total_iterations = e.iterations;
  pc.snapshot_iterations = e.snapshots;
  pc.batch_size = 8;
  pc.grad_accumulation = e.pretrain_accumulation;
  pc.learning_rate = e.pretrain_lr;
  pc.log_every = 100;
  pc.seed = 1;
  const auto start = std::chrono::steady_clock::now();
  auto net = build_network(experiment_network(e), 1);
  fs::create_directories(work);
  TrainingLog log(work / "pretrain.jsonl");
  s.pretrained = pretrain(net, *s.train, pc, ScheduleConfig{}, &log);
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cerr << fmt("  pretrain: %lld iterations in %.0f s\n", (long long)e.iterations, s.seconds);
  return s;
}

struct RunStats {
  double mean = 0.0, std = 0.0;
  std::vector<double> values;
};

RunStats stats(std::vector<double> v) {
  RunStats r;
  r.values = v;
  r.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(v.size()));
  return r;
}

std::string list(const std::vector<double>& v) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : ",") + fmt("%.3f", x);
  return out;
}

std::vector<Outcome> end_to_end(const fs::path& work, const Experiment& e) {
  auto& s = shared_experiment(work, e);
  std::vector<Outcome> out;

  const double early = window_mean(s.pretrained.losses, 100, e.loss_window);
  const double late = window_mean(s.pretrained.losses, e.iterations, e.loss_window);
  out.push_back({late < 0.5 * early,
                 fmt("(a) pretrain loss %.4f at %lld vs %.4f at 100 (ratio %.3f, limit 0.5; %lld-iteration means)", late,
                     (long long)e.iterations, early, late / early, (long long)e.loss_window)});

  const auto pretrained = s.pretrained.snapshots.back().weights(WeightSet::kEma);
  auto random_net = build_network(experiment_network(e), 1);
  const auto random_denoiser = extract_weights(random_net);
  const std::vector<double> thresholds{2, 4, 8};
  std::map<size_t, RunStats> ddpm, random;
  std::string per_seed;
  int seed_losses = 0;
  TrainingLog log(work / "finetune.jsonl");
  for (size_t k : e.budgets) {
    std::vector<double> d, r;
    for (int seed = 0; seed < e.seeds; ++seed) {
      const auto cfg = experiment_finetune(e, static_cast<uint64_t>(seed));
      const auto labels = subset_labels(s.train, k, static_cast<uint64_t>(seed));
      for (auto [source, sink] : {std::pair{&pretrained, &d}, std::pair{&random_denoiser, &r}}) {
        const auto det = convert_to_detector(*source, e.landmarks, static_cast<uint64_t>(seed));
        const auto result = finetune(det, *labels, *s.val, cfg, &log);
        auto net = instantiate(result.best.weights(WeightSet::kRaw));
        sink->push_back(evaluate_detector(make_detector(net), *s.test, thresholds, static_cast<int64_t>(k)).report.mre);
      }
      seed_losses += d.back() >= r.back();
    }
    ddpm[k] = stats(d);
    random[k] = stats(r);
    per_seed += fmt(" k=%zu ddpm[%s] random[%s];", k, list(d).c_str(), list(r).c_str());
    std::cerr << fmt("  k=%zu: ddpm %.2f+-%.2f px, random init %.2f+-%.2f px\n", k, ddpm[k].mean, ddpm[k].std,
                     random[k].mean, random[k].std);
  }

  bool dominates = true;
  std::string b_detail;
  for (size_t k : e.budgets) {
    dominates = dominates && ddpm[k].mean < random[k].mean;
    b_detail += fmt(" k=%zu %.3f vs %.3f;", k, ddpm[k].mean, random[k].mean);
  }
  out.push_back({dominates, "(b) test MRE px, pretrained vs random init (3-seed means):" + b_detail +
                                fmt(" %d/%zu single-seed pairs not strictly lower;", seed_losses,
                                    e.budgets.size() * static_cast<size_t>(e.seeds)) +
                                per_seed});

  bool monotone = true;
  std::string c_detail;
  for (size_t i = 0; i + 1 < e.budgets.size(); ++i) {
    const auto& lo = ddpm[e.budgets[i]];
    const auto& hi = ddpm[e.budgets[i + 1]];
    const double noise = std::max(lo.std, hi.std);
    monotone = monotone && hi.mean <= lo.mean + noise;
    c_detail += fmt(" k=%zu->%zu %.2f->%.2f (noise %.2f);", e.budgets[i], e.budgets[i + 1], lo.mean, hi.mean, noise);
  }
  out.push_back({monotone, "(c) pretrained MRE vs k:" + c_detail});

  std::ofstream(work / "end_to_end.txt") << "per-seed test MRE px:" << per_seed << "\n";
  return out;
}

Outcome snapshot_selection(const fs::path& work, const Experiment& e) {
  auto& s = shared_experiment(work, e);
  const auto cfg = experiment_finetune(e, 50);
  const auto labels = subset_labels(s.train, 5, 50);
  TrainingLog log(work / "select_snapshot.jsonl");
  const auto first = select_snapshot(s.pretrained.snapshots, *labels, *s.val, cfg, 3, &log);
  const auto second = select_snapshot(s.pretrained.snapshots, *labels, *s.val, cfg, 3);
  bool same = first.winner == second.winner && first.scores.size() == second.scores.size();
  std::string detail;
  for (size_t i = 0; i < first.scores.size(); ++i) {
    const auto& a = first.scores[i];
    same = same && a.val_mre == second.scores[i].val_mre;
    detail += fmt(" iter %lld: %.2f +- %.2f px [%s];", (long long)a.iteration, a.mean, a.std, list(a.val_mre).c_str());
  }
  const bool complete = first.scores.size() == e.snapshots.size() &&
                        std::all_of(first.scores.begin(), first.scores.end(),
                                    [](const SnapshotScore& sc) { return sc.val_mre.size() == 3; });
  return {same && complete, fmt("winner iteration %lld, repeat %s;", (long long)first.scores[first.winner].iteration,
                                same ? "identical" : "DIFFERS") +
                                detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks for landmark-diffusion"};
  std::vector<int> criteria;
  std::string work = (fs::temp_directory_path() / "landmark_diffusion_acceptance").string();
  Experiment e;
  app.add_option("--criteria", criteria, "criteria to run (default: all)")->delimiter(',');
  uint64_t mc_seed = 1;
  app.add_option("--mc-seed", mc_seed, "noise seed for the Monte-Carlo marginal check");
  app.add_option("--work-dir", work, "scratch directory for logs and checkpoints");
  app.add_option("--e2e-finetune-epochs", e.finetune_epochs);
  app.add_option("--e2e-pretrain-lr", e.pretrain_lr);
  app.add_option("--e2e-pretrain-accumulation", e.pretrain_accumulation);
  app.add_option("--e2e-finetune-lr", e.finetune_lr);
  // Outcomes listed here still print FAIL but do not set the exit code; a PASS
  // among them does, so the list has to be kept current.
  std::vector<std::string> expected_failures;
  app.add_option("--expected-failures", expected_failures, "outcomes known to fail, e.g. 9b")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  if (criteria.empty()) criteria = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  std::sort(criteria.begin(), criteria.end());

  torch::set_num_threads(1);
  const fs::path dir(work);

  const std::map<int, std::pair<const char*, std::function<std::vector<Outcome>()>>> table{
      {1, {"schedule algebra", [] { return std::vector{schedule_algebra()}; }}},
      {2, {"marginal consistency", [&] { return std::vector{marginal_consistency(mc_seed)}; }}},
      {3, {"posterior-mean inversion", [] { return std::vector{posterior_inversion()}; }}},
      {4, {"gradient check", [] { return std::vector{gradient_check()}; }}},
      {5, {"heatmap formula", [] { return std::vector{heatmap_formula()}; }}},
      {6, {"head swap", [] { return std::vector{head_swap()}; }}},
      {7, {"EMA closed form", [] { return std::vector{ema_closed_form()}; }}},
      {8, {"metrics oracle", [] { return std::vector{metrics_oracle()}; }}},
      {9, {"end-to-end scaled experiment", [&] { return end_to_end(dir / "e2e", e); }}},
      {10, {"snapshot selection", [&] { return std::vector{snapshot_selection(dir / "e2e", e)}; }}},
      {11, {"determinism and persistence", [&] { return std::vector{determinism(dir / "determinism")}; }}},
  };

  int failures = 0;
  for (int c : criteria) {
    const auto it = table.find(c);
    if (it == table.end()) {
      std::cerr << "unknown criterion " << c << "\n";
      return 2;
    }
    const auto start = std::chrono::steady_clock::now();
    std::vector<Outcome> outcomes;
    try {
      outcomes = it->second.second();
    } catch (const std::exception& ex) {
      outcomes = {{false, std::string("exception: ") + ex.what()}};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    for (const auto& o : outcomes) {
      // Sub-outcomes are tagged "(a)", "(b)", ... at the start of their detail.
      std::string key = std::to_string(c);
      if (o.detail.size() > 2 && o.detail[0] == '(' && o.detail[2] == ')') key += o.detail[1];
      const bool expected =
          std::find(expected_failures.begin(), expected_failures.end(), key) != expected_failures.end();
      failures += o.pass == expected;
      std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c << " (" << it->second.first
                << "): " << o.detail << fmt(" [%.1f s]", secs);
      if (expected) std::cout << (o.pass ? " [unexpected pass of expected failure]" : " [expected failure]");
      std::cout << std::endl;
    }
  }
  return failures == 0 ? 0 : 1;
}
