#include "landmark_diffusion/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "landmark_diffusion/image_io.hpp"

namespace lmd {
namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<double> parse_doubles(const std::string& text, const fs::path& file, int64_t line) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw DatasetError(file, line, "expected a number, got '" + item + "'");
    }
  }
  return out;
}

const std::map<std::string, DatasetProfile>& profiles() {
  static const std::map<std::string, DatasetProfile> table{
      {"chest", {"chest", 6, 195, 34, 50, UnitMode::kPixels, SpacingRule::kNone, 0.0, {3, 6, 9}}},
      {"cephalometric",
       {"cephalometric", 19, 130, 20, 250, UnitMode::kMillimeters, SpacingRule::kFixed, 0.1,
        {2, 2.5, 3, 4}}},
      {"hand",
       {"hand", 37, 550, 59, 300, UnitMode::kMillimeters, SpacingRule::kWristPair, 50.0,
        {2, 4, 10}}},
  };
  return table;
}

bool is_image(const fs::path& p) {
  const auto ext = p.extension().string();
  return ext == ".png" || ext == ".PNG" || ext == ".pgm" || ext == ".PGM";
}

}  // namespace

DatasetError::DatasetError(const fs::path& file, int64_t line, const std::string& what)
    : std::runtime_error(file.string() + (line > 0 ? ":" + std::to_string(line) : "") + ": " + what),
      file_(file),
      line_(line) {}

const char* to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

InMemorySource::InMemorySource(std::string dataset_id, int64_t num_landmarks,
                               std::vector<Sample> samples)
    : dataset_id_(std::move(dataset_id)), num_landmarks_(num_landmarks), samples_(std::move(samples)) {}

std::shared_ptr<InMemorySource> materialize(const SampleSource& source) {
  std::vector<Sample> samples;
  samples.reserve(source.size());
  for (size_t i = 0; i < source.size(); ++i) samples.push_back(source.get(i));
  return std::make_shared<InMemorySource>(source.dataset_id(), source.num_landmarks(),
                                          std::move(samples));
}

DatasetDescriptor DatasetDescriptor::parse(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DatasetError(file, 0, "missing dataset descriptor");
  DatasetDescriptor d;
  std::string rule = "none";
  std::string line;
  int64_t lineno = 0;
  bool have_landmarks = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DatasetError(file, lineno, "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key == "name") {
      d.name = value;
    } else if (key == "landmarks") {
      const auto v = parse_doubles(value, file, lineno);
      if (v.size() != 1 || v[0] < 1 || v[0] != static_cast<int64_t>(v[0]))
        throw DatasetError(file, lineno, "landmarks must be a positive integer");
      d.num_landmarks = static_cast<int64_t>(v[0]);
      have_landmarks = true;
    } else if (key == "units") {
      if (value == "pixels") d.units = UnitMode::kPixels;
      else if (value == "millimeters") d.units = UnitMode::kMillimeters;
      else throw DatasetError(file, lineno, "units must be 'pixels' or 'millimeters'");
    } else if (key == "spacing_rule") {
      rule = value;
    } else if (key == "spacing_mm") {
      const auto v = parse_doubles(value, file, lineno);
      if (v.size() != 1) throw DatasetError(file, lineno, "spacing_mm takes one value");
      d.spacing.fixed_mm_per_px = v[0];
    } else if (key == "wrist_indices") {
      const auto v = parse_doubles(value, file, lineno);
      if (v.size() != 2 || v[0] < 0 || v[1] < 0)
        throw DatasetError(file, lineno, "wrist_indices needs two landmark indices");
      d.spacing.wrist_a = static_cast<size_t>(v[0]);
      d.spacing.wrist_b = static_cast<size_t>(v[1]);
    } else if (key == "reference_mm") {
      const auto v = parse_doubles(value, file, lineno);
      if (v.size() != 1 || !(v[0] > 0)) throw DatasetError(file, lineno, "reference_mm must be positive");
      d.spacing.reference_mm = v[0];
    } else if (key == "thresholds") {
      d.thresholds = parse_doubles(value, file, lineno);
    } else if (key == "profile") {
      d.profile = value;
    } else {
      throw DatasetError(file, lineno, "unknown key '" + key + "'");
    }
  }
  if (!have_landmarks) throw DatasetError(file, 0, "descriptor must declare 'landmarks'");
  if (d.name.empty()) d.name = file.parent_path().filename().string();
  if (rule == "none") {
    d.spacing.rule = SpacingRule::kNone;
  } else if (rule == "fixed_spacing") {
    d.spacing.rule = SpacingRule::kFixed;
    if (!(d.spacing.fixed_mm_per_px > 0)) throw DatasetError(file, 0, "fixed_spacing needs spacing_mm > 0");
  } else if (rule == "wrist_pair") {
    d.spacing.rule = SpacingRule::kWristPair;
    const auto n = static_cast<size_t>(d.num_landmarks);
    if (d.spacing.wrist_a >= n || d.spacing.wrist_b >= n || d.spacing.wrist_a == d.spacing.wrist_b)
      throw DatasetError(file, 0, "wrist_pair needs two distinct valid wrist_indices");
  } else {
    throw DatasetError(file, 0, "unknown spacing_rule '" + rule + "'");
  }
  if ((d.spacing.rule == SpacingRule::kNone) != (d.units == UnitMode::kPixels))
    throw DatasetError(file, 0, "units=pixels goes with spacing_rule=none and vice versa");
  if (!d.profile.empty() && !find_profile(d.profile))
    throw DatasetError(file, 0, "unknown profile '" + d.profile + "'");
  return d;
}

std::string DatasetDescriptor::to_text() const {
  std::ostringstream s;
  s << std::setprecision(17);
  s << "name = " << name << "\n";
  s << "landmarks = " << num_landmarks << "\n";
  s << "units = " << (units == UnitMode::kPixels ? "pixels" : "millimeters") << "\n";
  switch (spacing.rule) {
    case SpacingRule::kNone: s << "spacing_rule = none\n"; break;
    case SpacingRule::kFixed:
      s << "spacing_rule = fixed_spacing\nspacing_mm = " << spacing.fixed_mm_per_px << "\n";
      break;
    case SpacingRule::kWristPair:
      s << "spacing_rule = wrist_pair\nwrist_indices = " << spacing.wrist_a << ", " << spacing.wrist_b
        << "\nreference_mm = " << spacing.reference_mm << "\n";
      break;
  }
  if (!thresholds.empty()) {
    s << "thresholds = ";
    for (size_t i = 0; i < thresholds.size(); ++i) s << (i ? ", " : "") << thresholds[i];
    s << "\n";
  }
  if (!profile.empty()) s << "profile = " << profile << "\n";
  return s.str();
}

std::optional<DatasetProfile> find_profile(const std::string& name) {
  const auto& table = profiles();
  auto it = table.find(name);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

std::vector<size_t> DatasetManifest::split_indices(Split split) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == split) out.push_back(i);
  return out;
}

void DatasetManifest::validate() const {
  std::set<std::string> stems;
  for (const auto& e : entries)
    if (!stems.insert(e.stem).second) throw std::runtime_error("duplicate image stem '" + e.stem + "'");
  if (descriptor.profile.empty()) return;
  const auto profile = *find_profile(descriptor.profile);
  if (descriptor.num_landmarks != profile.num_landmarks)
    throw std::runtime_error("profile " + profile.name + " expects " +
                             std::to_string(profile.num_landmarks) + " landmarks");
  const size_t sizes[3] = {profile.train, profile.val, profile.test};
  const Split splits[3] = {Split::kTrain, Split::kVal, Split::kTest};
  for (int i = 0; i < 3; ++i) {
    const auto n = split_indices(splits[i]).size();
    if (n != sizes[i])
      throw std::runtime_error("profile " + profile.name + " expects " + std::to_string(sizes[i]) +
                               " " + to_string(splits[i]) + " images, found " + std::to_string(n));
  }
}

LandmarkSet read_landmarks(const fs::path& file, int64_t expected, ImageSize size) {
  std::ifstream in(file);
  if (!in) throw DatasetError(file, 0, "missing annotation file");
  LandmarkSet set;
  set.image_size = size;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto v = parse_doubles(line, file, lineno);
    if (v.size() != 2) throw DatasetError(file, lineno, "expected 'x,y'");
    if (!std::isfinite(v[0]) || !std::isfinite(v[1]))
      throw DatasetError(file, lineno, "non-finite coordinate");
    set.points.push_back({v[0], v[1]});
  }
  if (static_cast<int64_t>(set.size()) != expected)
    throw DatasetError(file, 0, "has " + std::to_string(set.size()) + " landmarks, expected " +
                                    std::to_string(expected));
  return set;
}

DiskDataset::DiskDataset(const fs::path& root, int64_t working_size, bool require_labels)
    : root_(root), working_size_(working_size), labeled_(require_labels) {
  if (working_size <= 0) throw std::invalid_argument("working size must be positive");
  if (!fs::is_directory(root)) throw DatasetError(root, 0, "dataset root does not exist");
  manifest_.descriptor = DatasetDescriptor::parse(root / "dataset.cfg");

  std::map<std::string, fs::path> images;
  const auto image_dir = root / "images";
  if (!fs::is_directory(image_dir)) throw DatasetError(image_dir, 0, "missing images directory");
  for (const auto& item : fs::directory_iterator(image_dir))
    if (item.is_regular_file() && is_image(item.path())) images[item.path().stem().string()] = item.path();

  std::map<std::string, Split> assignment;
  for (Split split : {Split::kTrain, Split::kVal, Split::kTest}) {
    const auto file = root / "splits" / (std::string(to_string(split)) + ".txt");
    std::ifstream in(file);
    if (!in) throw DatasetError(file, 0, "missing split file");
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = trim(line);
      if (line.empty()) continue;
      if (!images.count(line)) throw DatasetError(file, lineno, "no image for stem '" + line + "'");
      if (!assignment.emplace(line, split).second)
        throw DatasetError(file, lineno, "stem '" + line + "' already assigned to another split");
    }
  }
  for (const auto& [stem, path] : images)
    if (!assignment.count(stem)) throw DatasetError(path, 0, "image is not listed in any split");

  for (const auto& [stem, path] : images) {
    ImageEntry e;
    e.stem = stem;
    e.image_path = path;
    e.label_path = root / "labels" / (stem + ".txt");
    const auto [w, h] = probe_image_size(path);
    e.original_size = {w, h};
    e.split = assignment.at(stem);
    if (fs::exists(e.label_path)) {
      labels_.push_back(read_landmarks(e.label_path, manifest_.descriptor.num_landmarks, e.original_size));
    } else if (require_labels) {
      throw DatasetError(e.label_path, 0, "missing annotation file");
    } else {
      labels_.push_back(LandmarkSet{{}, {}, e.original_size});
    }
    manifest_.entries.push_back(std::move(e));
  }
  manifest_.validate();
}

Sample DiskDataset::load(size_t entry) const {
  const auto& e = manifest_.entries.at(entry);
  Sample s;
  s.id = e.stem;
  auto image = read_image(e.image_path);
  if (image.size(1) != e.original_size.height || image.size(2) != e.original_size.width)
    throw DatasetError(e.image_path, 0, "decoded size differs from header");
  s.image = resize_image(image, working_size_, working_size_).clamp(0.0, 1.0);
  s.original = labels_.at(entry);
  s.landmarks = s.original.points.empty()
                    ? LandmarkSet{{}, {}, {working_size_, working_size_}}
                    : rescale_landmarks(s.original, e.original_size, {working_size_, working_size_});
  if (!s.original.points.empty()) s.spacing_mm = compute_spacing(manifest_.descriptor.spacing, s.original);
  return s;
}

namespace {

class DiskSplitSource : public SampleSource {
 public:
  DiskSplitSource(const DiskDataset& dataset, std::vector<size_t> entries)
      : dataset_(dataset), entries_(std::move(entries)) {}
  size_t size() const override { return entries_.size(); }
  Sample get(size_t index) const override { return dataset_.load(entries_.at(index)); }
  std::string dataset_id() const override { return dataset_.manifest().descriptor.name; }
  int64_t num_landmarks() const override { return dataset_.manifest().descriptor.num_landmarks; }

 private:
  const DiskDataset& dataset_;
  std::vector<size_t> entries_;
};

}  // namespace

std::shared_ptr<SampleSource> DiskDataset::split(Split split) const {
  return std::make_shared<DiskSplitSource>(*this, manifest_.split_indices(split));
}

void write_dataset(const fs::path& root, const DatasetDescriptor& descriptor,
                   const std::vector<Sample>& samples, const std::vector<Split>& splits) {
  if (samples.size() != splits.size()) throw std::invalid_argument("one split per sample required");
  fs::create_directories(root / "images");
  fs::create_directories(root / "labels");
  fs::create_directories(root / "splits");
  {
    std::ofstream cfg(root / "dataset.cfg");
    cfg << descriptor.to_text();
  }
  std::map<Split, std::ofstream> split_files;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest})
    split_files[s].open(root / "splits" / (std::string(to_string(s)) + ".txt"));
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    write_png_gray(root / "images" / (s.id + ".png"), s.image);
    if (!s.landmarks.points.empty()) {
      std::ofstream label(root / "labels" / (s.id + ".txt"));
      label << std::setprecision(17);
      for (const auto& p : s.landmarks.points) label << p.x << "," << p.y << "\n";
    }
    split_files[splits[i]] << s.id << "\n";
  }
}

SubsetSource::SubsetSource(std::shared_ptr<const SampleSource> base, std::vector<size_t> indices)
    : base_(std::move(base)), indices_(std::move(indices)) {
  for (auto i : indices_)
    if (i >= base_->size()) throw std::out_of_range("subset index beyond source size");
}

std::shared_ptr<SubsetSource> subset_labels(std::shared_ptr<const SampleSource> train, size_t k,
                                            uint64_t seed) {
  const size_t n = train->size();
  if (k == 0) throw std::invalid_argument("label budget must be positive");
  if (k > n)
    throw std::invalid_argument("label budget " + std::to_string(k) + " exceeds split size " +
                                std::to_string(n));
  std::vector<size_t> indices(n);
  std::iota(indices.begin(), indices.end(), size_t{0});
  if (k < n) {
    std::mt19937_64 rng(seed);
    std::shuffle(indices.begin(), indices.end(), rng);
    indices.resize(k);
    std::sort(indices.begin(), indices.end());
  }
  return std::make_shared<SubsetSource>(std::move(train), std::move(indices));
}

}  // namespace lmd
