#include "landmark_diffusion/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace lmd {
namespace {

using json = nlohmann::json;
constexpr char kMagic[8] = {'L', 'M', 'D', 'C', 'K', 'P', 'T', '1'};

const char* variance_name(ReverseVariance v) {
  return v == ReverseVariance::kBeta ? "beta" : "posterior";
}

ReverseVariance variance_from(const std::string& s) {
  if (s == "beta") return ReverseVariance::kBeta;
  if (s == "posterior") return ReverseVariance::kPosterior;
  throw std::runtime_error("unknown reverse variance '" + s + "'");
}

NetworkRole role_from(const std::string& s) {
  if (s == "denoiser") return NetworkRole::kDenoiser;
  if (s == "detector") return NetworkRole::kDetector;
  throw std::runtime_error("unknown network role '" + s + "'");
}

void append_index(json& index, const std::string& set, const WeightMap& tensors) {
  for (const auto& [key, t] : tensors)
    index.push_back({{"set", set}, {"name", key}, {"shape", t.sizes().vec()}});
}

}  // namespace

const char* to_string(NetworkRole role) {
  return role == NetworkRole::kDenoiser ? "denoiser" : "detector";
}

const char* to_string(WeightSet set) { return set == WeightSet::kEma ? "ema" : "raw"; }

WeightSet weight_set_from_string(const std::string& text) {
  if (text == "ema") return WeightSet::kEma;
  if (text == "raw") return WeightSet::kRaw;
  throw std::invalid_argument("weight set must be 'ema' or 'raw', got '" + text + "'");
}

NetworkWeights Checkpoint::weights(WeightSet set) const {
  NetworkWeights w;
  w.config = config;
  w.config_hash = config.hash();
  w.metadata.iteration = metadata.iteration;
  if (set == WeightSet::kEma) {
    if (!ema) throw std::runtime_error("checkpoint carries no EMA weights");
    w.tensors = *ema;
    w.metadata.ema = true;
  } else {
    w.tensors = raw;
  }
  return w;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  json header;
  header["config"] = checkpoint.config.canonical_text();
  header["config_hash"] = checkpoint.config.hash();
  header["schedule"] = {{"num_steps", checkpoint.schedule.num_steps},
                        {"beta_start", checkpoint.schedule.beta_start},
                        {"beta_end", checkpoint.schedule.beta_end},
                        {"variance", variance_name(checkpoint.schedule.variance)}};
  const auto& m = checkpoint.metadata;
  header["metadata"] = {{"role", to_string(m.role)},
                        {"iteration", m.iteration},
                        {"dataset_id", m.dataset_id},
                        {"init_source", m.init_source},
                        {"source_checkpoint", m.source_checkpoint},
                        {"epoch", m.epoch},
                        {"val_loss", m.val_loss},
                        {"label_budget", m.label_budget},
                        {"has_ema", checkpoint.ema.has_value()}};
  json index = json::array();
  append_index(index, "raw", checkpoint.raw);
  if (checkpoint.ema) append_index(index, "ema", *checkpoint.ema);
  header["tensors"] = index;

  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof(kMagic));
  const uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  auto write_set = [&](const WeightMap& tensors) {
    for (const auto& [key, t] : tensors) {
      auto c = t.detach().to(torch::kFloat32).contiguous();
      out.write(reinterpret_cast<const char*>(c.data_ptr<float>()),
                static_cast<std::streamsize>(c.numel() * sizeof(float)));
    }
  };
  write_set(checkpoint.raw);
  if (checkpoint.ema) write_set(*checkpoint.ema);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error(path.string() + " is not a checkpoint archive");
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (uint64_t{1} << 30)) throw std::runtime_error("corrupt checkpoint header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("truncated checkpoint header");

  const auto header = json::parse(text);
  Checkpoint ckpt;
  ckpt.config = NetworkConfig::from_text(header.at("config").get<std::string>());
  const auto stored_hash = header.at("config_hash").get<std::string>();
  if (stored_hash != ckpt.config.hash())
    throw std::runtime_error("checkpoint config hash mismatch: stored " + stored_hash +
                             ", computed " + ckpt.config.hash());
  const auto& s = header.at("schedule");
  ckpt.schedule.num_steps = s.at("num_steps").get<int64_t>();
  ckpt.schedule.beta_start = s.at("beta_start").get<double>();
  ckpt.schedule.beta_end = s.at("beta_end").get<double>();
  ckpt.schedule.variance = variance_from(s.at("variance").get<std::string>());
  const auto& m = header.at("metadata");
  ckpt.metadata.role = role_from(m.at("role").get<std::string>());
  ckpt.metadata.iteration = m.at("iteration").get<int64_t>();
  ckpt.metadata.dataset_id = m.at("dataset_id").get<std::string>();
  ckpt.metadata.init_source = m.at("init_source").get<std::string>();
  ckpt.metadata.source_checkpoint = m.at("source_checkpoint").get<std::string>();
  ckpt.metadata.epoch = m.at("epoch").get<int64_t>();
  ckpt.metadata.label_budget = m.value("label_budget", int64_t{0});
  ckpt.metadata.val_loss = m.at("val_loss").get<double>();
  if (m.at("has_ema").get<bool>()) ckpt.ema.emplace();

  for (const auto& entry : header.at("tensors")) {
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    auto t = torch::empty(shape, torch::kFloat32);
    in.read(reinterpret_cast<char*>(t.data_ptr<float>()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!in) throw std::runtime_error("truncated tensor payload in " + path.string());
    const auto set = entry.at("set").get<std::string>();
    auto& target = set == "ema" ? *ckpt.ema : ckpt.raw;
    target.emplace(entry.at("name").get<std::string>(), std::move(t));
  }

  ckpt.weights(WeightSet::kRaw).validate();
  if (ckpt.ema) ckpt.weights(WeightSet::kEma).validate();
  return ckpt;
}

}  // namespace lmd
