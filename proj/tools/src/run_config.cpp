#include "run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace lmd::cli {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

// Reads the keys of one config object, remembering which were consumed so
// leftovers can be reported as unknown.
class SectionReader {
 public:
  SectionReader(const json& root, std::string name) : name_(std::move(name)) {
    if (name_.empty()) {
      node_ = &root;
    } else if (root.contains(name_)) {
      node_ = &root.at(name_);
      if (!node_->is_object()) throw ConfigError(name_ + ": expected an object");
    }
  }

  SectionReader child(const std::string& key) {
    seen_.insert(key);
    static const json kEmpty = json::object();
    const json& base = node_ ? *node_ : kEmpty;
    SectionReader sub(base, key);
    sub.name_ = qualified(key);
    return sub;
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!node_ || !node_->contains(key)) return;
    try {
      out = node_->at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(qualified(key) + ": wrong type (" + node_->at(key).dump() + ")");
    }
  }

  void path(const std::string& key, fs::path& out, const fs::path& base) {
    std::string text;
    get(key, text);
    if (!text.empty()) out = fs::path(text).is_absolute() ? fs::path(text) : base / text;
  }

  template <class Enum, class Parse>
  void choice(const std::string& key, Enum& out, Parse parse) {
    std::string text;
    get(key, text);
    if (text.empty()) return;
    try {
      out = parse(text);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(qualified(key) + ": " + e.what());
    }
  }

  void finish() const {
    if (!node_) return;
    for (const auto& item : node_->items())
      if (!seen_.count(item.key())) throw ConfigError(qualified(item.key()) + ": unknown key");
  }

  std::string qualified(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

 private:
  const json* node_ = nullptr;
  std::string name_;
  std::set<std::string> seen_;
};

ReverseVariance variance_from_string(const std::string& s) {
  if (s == "beta") return ReverseVariance::kBeta;
  if (s == "posterior") return ReverseVariance::kPosterior;
  throw std::invalid_argument("expected beta or posterior, got '" + s + "'");
}

const char* to_string(ReverseVariance v) { return v == ReverseVariance::kBeta ? "beta" : "posterior"; }

InitSource init_from_string(const std::string& s) {
  if (s == "ema") return InitSource::kEma;
  if (s == "raw") return InitSource::kRaw;
  if (s == "random") return InitSource::kRandom;
  throw std::invalid_argument("expected ema, raw or random, got '" + s + "'");
}

void read_augmentation(SectionReader reader, AugmentationParams& p) {
  reader.get("rotation_deg", p.rotation_deg);
  reader.get("scale_delta", p.scale_delta);
  reader.get("translation", p.translation);
  reader.finish();
}

json augmentation_json(const AugmentationParams& p) {
  return {{"rotation_deg", p.rotation_deg}, {"scale_delta", p.scale_delta}, {"translation", p.translation}};
}

std::string path_text(const fs::path& p) { return p.empty() ? std::string() : p.lexically_normal().string(); }

// Rethrows core validation errors as config errors; they already name the field.
template <class F>
void validated(F&& check) {
  try {
    check();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

const char* to_string(InitSource init) {
  switch (init) {
    case InitSource::kEma: return "ema";
    case InitSource::kRaw: return "raw";
    case InitSource::kRandom: return "random";
  }
  return "ema";
}

void apply_overrides(json& config, const std::vector<std::string>& overrides) {
  for (const auto& raw : overrides) {
    if (raw.rfind("--", 0) != 0 || raw.find('=') == std::string::npos)
      throw ConfigError("override '" + raw + "': expected --section.key=value");
    const auto eq = raw.find('=');
    const std::string key = raw.substr(2, eq - 2);
    const std::string text = raw.substr(eq + 1);
    if (key.empty()) throw ConfigError("override '" + raw + "': empty key");

    json* node = &config;
    std::stringstream parts(key);
    std::string part;
    std::vector<std::string> path;
    while (std::getline(parts, part, '.')) {
      if (part.empty()) throw ConfigError("override '" + raw + "': empty key component");
      path.push_back(part);
    }
    for (size_t i = 0; i + 1 < path.size(); ++i) {
      if (!node->contains(path[i])) (*node)[path[i]] = json::object();
      node = &(*node)[path[i]];
      if (!node->is_object()) throw ConfigError(key + ": cannot override inside a non-object value");
    }
    json value = json::parse(text, nullptr, false);
    (*node)[path.back()] = value.is_discarded() ? json(text) : value;
  }
}

RunConfig parse_run_config(const json& config, const fs::path& base_dir) {
  if (!config.is_object()) throw ConfigError("config: top level must be an object");
  RunConfig rc;
  SectionReader top(config, "");

  top.path("output_dir", rc.output_dir, base_dir);
  top.get("seed", rc.seed);
  top.get("device", rc.device);
  top.get("threads", rc.threads);
  if (rc.device != "cpu") throw ConfigError("device: only 'cpu' is available in this build");
  if (rc.threads < 0) throw ConfigError("threads: must be non-negative");

  {
    auto s = top.child("network");
    auto& n = rc.network;
    s.get("image_size", n.image_size);
    s.get("base_channels", n.base_channels);
    s.get("channel_multipliers", n.channel_multipliers);
    s.get("attention_resolution", n.attention_resolution);
    s.get("attention_heads", n.attention_heads);
    s.get("res_blocks_per_level", n.res_blocks_per_level);
    s.get("norm_groups", n.norm_groups);
    s.finish();
    validated([&] { n.validate(); });
  }
  {
    auto s = top.child("schedule");
    s.get("num_steps", rc.schedule.num_steps);
    s.get("beta_start", rc.schedule.beta_start);
    s.get("beta_end", rc.schedule.beta_end);
    s.choice("variance", rc.schedule.variance, variance_from_string);
    s.finish();
    try {
      build_schedule(rc.schedule);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("schedule: ") + e.what());
    }
  }
  {
    auto s = top.child("pretrain");
    auto& p = rc.pretrain;
    s.path("dataset", p.dataset, base_dir);
    s.get("split", p.split);
    s.get("total_iterations", p.train.total_iterations);
    s.get("snapshot_iterations", p.train.snapshot_iterations);
    s.get("batch_size", p.train.batch_size);
    s.get("grad_accumulation", p.train.grad_accumulation);
    s.get("learning_rate", p.train.learning_rate);
    s.get("weight_decay", p.train.weight_decay);
    s.get("ema_decay", p.train.ema_decay);
    s.get("augment", p.train.augment);
    read_augmentation(s.child("augmentation"), p.train.augmentation);
    s.get("log_every", p.train.log_every);
    s.get("loader_threads", p.train.loader_threads);
    s.finish();
    p.train.seed = rc.seed;
    if (p.split != "train" && p.split != "val" && p.split != "test")
      throw ConfigError("pretrain.split: expected train, val or test");
    validated([&] { p.train.validate(); });
  }
  {
    auto s = top.child("finetune");
    auto& f = rc.finetune;
    s.path("dataset", f.dataset, base_dir);
    s.path("checkpoint", f.checkpoint, base_dir);
    s.choice("init", f.init, init_from_string);
    s.get("label_budget", f.label_budget);
    s.get("max_epochs", f.train.max_epochs);
    s.get("batch_size", f.train.batch_size);
    s.get("grad_accumulation", f.train.grad_accumulation);
    s.get("initial_lr", f.train.initial_lr);
    s.get("weight_decay", f.train.weight_decay);
    s.get("plateau_factor", f.train.plateau_factor);
    s.get("plateau_patience", f.train.plateau_patience);
    s.get("plateau_threshold", f.train.plateau_threshold);
    s.get("min_lr", f.train.min_lr);
    s.get("early_stop_patience", f.train.early_stop_patience);
    s.choice("loss_mode", f.train.loss_mode, loss_mode_from_string);
    s.get("sigma", f.train.sigma);
    s.get("augment", f.train.augment);
    read_augmentation(s.child("augmentation"), f.train.augmentation);
    s.get("min_samples_per_epoch", f.train.min_samples_per_epoch);
    s.finish();
    f.train.seed = rc.seed;
    f.train.init_source = f.init == InitSource::kRaw ? WeightSet::kRaw : WeightSet::kEma;
    if (f.label_budget < 0) throw ConfigError("finetune.label_budget: must be non-negative");
    validated([&] { f.train.validate(); });
  }
  {
    auto s = top.child("evaluate");
    auto& e = rc.evaluate;
    s.path("dataset", e.dataset, base_dir);
    s.path("checkpoint", e.checkpoint, base_dir);
    s.get("split", e.split);
    s.get("overlays", e.overlays);
    s.get("batch_size", e.batch_size);
    s.finish();
    if (e.split != "train" && e.split != "val" && e.split != "test")
      throw ConfigError("evaluate.split: expected train, val or test");
    if (e.overlays < 0) throw ConfigError("evaluate.overlays: must be non-negative");
    if (e.batch_size < 1) throw ConfigError("evaluate.batch_size: must be positive");
  }
  {
    auto s = top.child("sample");
    auto& m = rc.sample;
    m.seed = rc.seed;
    s.path("checkpoint", m.checkpoint, base_dir);
    s.get("count", m.count);
    s.get("seed", m.seed);
    s.choice("weights", m.weights, weight_set_from_string);
    s.finish();
    if (m.count < 1) throw ConfigError("sample.count: must be positive");
  }
  {
    auto s = top.child("select_snapshot");
    s.path("manifest", rc.select_snapshot.manifest, base_dir);
    s.get("repetitions", rc.select_snapshot.repetitions);
    s.finish();
    if (rc.select_snapshot.repetitions < 1) throw ConfigError("select_snapshot.repetitions: must be positive");
  }
  {
    auto s = top.child("synthetic");
    auto& y = rc.synthetic;
    s.path("output", y.output, base_dir);
    s.get("image_size", y.image_size);
    s.get("landmarks", y.landmarks);
    s.get("train", y.train);
    s.get("val", y.val);
    s.get("test", y.test);
    s.finish();
    if (y.image_size < 16) throw ConfigError("synthetic.image_size: must be at least 16");
    if (y.landmarks < 1) throw ConfigError("synthetic.landmarks: must be positive");
    if (y.train < 0 || y.val < 0 || y.test < 0) throw ConfigError("synthetic: split sizes must be non-negative");
  }
  top.finish();

  if (rc.output_dir.empty()) {
    const char* env = std::getenv(kOutputRootEnv);
    const fs::path root = env && *env ? fs::path(env) : fs::current_path() / "runs";
    rc.output_dir = root / "default";
  }
  if (rc.select_snapshot.manifest.empty())
    rc.select_snapshot.manifest = rc.output_dir / "checkpoints" / "snapshots.json";

  const auto& n = rc.network;
  const auto& p = rc.pretrain.train;
  const auto& f = rc.finetune.train;
  rc.resolved = {
      {"output_dir", path_text(rc.output_dir)},
      {"seed", rc.seed},
      {"device", rc.device},
      {"threads", rc.threads},
      {"network",
       {{"image_size", n.image_size},
        {"base_channels", n.base_channels},
        {"channel_multipliers", n.channel_multipliers},
        {"attention_resolution", n.attention_resolution},
        {"attention_heads", n.attention_heads},
        {"res_blocks_per_level", n.res_blocks_per_level},
        {"norm_groups", n.norm_groups}}},
      {"schedule",
       {{"num_steps", rc.schedule.num_steps},
        {"beta_start", rc.schedule.beta_start},
        {"beta_end", rc.schedule.beta_end},
        {"variance", to_string(rc.schedule.variance)}}},
      {"pretrain",
       {{"dataset", path_text(rc.pretrain.dataset)},
        {"split", rc.pretrain.split},
        {"total_iterations", p.total_iterations},
        {"snapshot_iterations", p.snapshot_iterations},
        {"batch_size", p.batch_size},
        {"grad_accumulation", p.grad_accumulation},
        {"learning_rate", p.learning_rate},
        {"weight_decay", p.weight_decay},
        {"ema_decay", p.ema_decay},
        {"augment", p.augment},
        {"augmentation", augmentation_json(p.augmentation)},
        {"log_every", p.log_every},
        {"loader_threads", p.loader_threads}}},
      {"finetune",
       {{"dataset", path_text(rc.finetune.dataset)},
        {"checkpoint", path_text(rc.finetune.checkpoint)},
        {"init", to_string(rc.finetune.init)},
        {"label_budget", rc.finetune.label_budget},
        {"max_epochs", f.max_epochs},
        {"batch_size", f.batch_size},
        {"grad_accumulation", f.grad_accumulation},
        {"initial_lr", f.initial_lr},
        {"weight_decay", f.weight_decay},
        {"plateau_factor", f.plateau_factor},
        {"plateau_patience", f.plateau_patience},
        {"plateau_threshold", f.plateau_threshold},
        {"min_lr", f.min_lr},
        {"early_stop_patience", f.early_stop_patience},
        {"loss_mode", to_string(f.loss_mode)},
        {"sigma", f.sigma},
        {"augment", f.augment},
        {"augmentation", augmentation_json(f.augmentation)},
        {"min_samples_per_epoch", f.min_samples_per_epoch}}},
      {"evaluate",
       {{"dataset", path_text(rc.evaluate.dataset)},
        {"checkpoint", path_text(rc.evaluate.checkpoint)},
        {"split", rc.evaluate.split},
        {"overlays", rc.evaluate.overlays},
        {"batch_size", rc.evaluate.batch_size}}},
      {"sample",
       {{"checkpoint", path_text(rc.sample.checkpoint)},
        {"count", rc.sample.count},
        {"seed", rc.sample.seed},
        {"weights", to_string(rc.sample.weights)}}},
      {"select_snapshot",
       {{"manifest", path_text(rc.select_snapshot.manifest)},
        {"repetitions", rc.select_snapshot.repetitions}}},
      {"synthetic",
       {{"output", path_text(rc.synthetic.output)},
        {"image_size", rc.synthetic.image_size},
        {"landmarks", rc.synthetic.landmarks},
        {"train", rc.synthetic.train},
        {"val", rc.synthetic.val},
        {"test", rc.synthetic.test}}},
  };
  return rc;
}

RunConfig load_run_config(const fs::path& file, const std::vector<std::string>& overrides) {
  std::ifstream in(file);
  if (!in) throw ConfigError("--config: cannot open " + file.string());
  json config = json::parse(in, nullptr, false);
  if (config.is_discarded()) throw ConfigError("--config: " + file.string() + " is not valid JSON");
  apply_overrides(config, overrides);
  const auto base = fs::absolute(file).parent_path();
  auto rc = parse_run_config(config, base);
  if (!config.contains("output_dir")) {
    const char* env = std::getenv(kOutputRootEnv);
    const fs::path root = env && *env ? fs::path(env) : fs::current_path() / "runs";
    rc.output_dir = root / file.stem();
    if (!config.contains("select_snapshot") || !config["select_snapshot"].contains("manifest"))
      rc.select_snapshot.manifest = rc.output_dir / "checkpoints" / "snapshots.json";
    rc.resolved["output_dir"] = rc.output_dir.lexically_normal().string();
    rc.resolved["select_snapshot"]["manifest"] = rc.select_snapshot.manifest.lexically_normal().string();
  }
  rc.source = file;
  return rc;
}

}  // namespace lmd::cli
