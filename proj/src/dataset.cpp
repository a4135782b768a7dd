#include "faultguard/dataset.hpp"

#include "faultguard/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

namespace faultguard::dataset {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

bool parse_number(const std::string& text, double& out) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto res = std::from_chars(first, t.data() + t.size(), out);
  return res.ec == std::errc() && res.ptr == t.data() + t.size() && std::isfinite(out);
}

int parse_label(const std::string& text, int max_label, const std::string& column, std::size_t line) {
  double v = 0;
  if (!parse_number(text, v) || v != std::floor(v))
    throw DataError("line " + std::to_string(line) + ": non-integer " + column + " '" + text + "'");
  if (v < 0 || v > max_label)
    throw DataError("line " + std::to_string(line) + ": " + column + " " + trim(text) + " outside [0, " +
                    std::to_string(max_label) + "]");
  return static_cast<int>(v);
}

}  // namespace

std::string DatasetSplit::fingerprint() const {
  Fingerprint fp;
  for (const auto* part : {&train, &validation, &test}) {
    const std::uint64_t n = part->size();
    fp.update(&n, sizeof(n));
    for (const GridWindow& w : *part) {
      fp.update(w.data);
      const int labels[2] = {w.fault_type, w.fault_zone};
      fp.update(labels, sizeof(labels));
    }
  }
  return fp.hex();
}

std::vector<RawRecord> ingest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("file not found: " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv_line(line);
  int type_col = -1;
  int zone_col = -1;
  std::vector<int> feature_cols;
  for (int i = 0; i < static_cast<int>(header.size()); ++i) {
    const std::string name = trim(header[static_cast<std::size_t>(i)]);
    if (name == "fault_type")
      type_col = i;
    else if (name == "fault_zone")
      zone_col = i;
    else
      feature_cols.push_back(i);
  }
  if (type_col < 0 || zone_col < 0) throw DataError("line 1: header must name fault_type and fault_zone columns");
  if (static_cast<int>(feature_cols.size()) != kNumFeatures)
    throw DataError("line 1: header has " + std::to_string(feature_cols.size()) + " feature columns, expected " +
                    std::to_string(kNumFeatures));

  std::vector<RawRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      const long features = static_cast<long>(cells.size()) - 2;
      throw DataError("line " + std::to_string(line_no) + ": row has " + std::to_string(features) +
                      " feature columns, expected " + std::to_string(kNumFeatures));
    }
    RawRecord rec;
    rec.features.resize(kNumFeatures);
    for (int f = 0; f < kNumFeatures; ++f) {
      const auto& cell = cells[static_cast<std::size_t>(feature_cols[static_cast<std::size_t>(f)])];
      double v = 0;
      if (!parse_number(cell, v))
        throw DataError("line " + std::to_string(line_no) + ": non-numeric feature '" + trim(cell) + "' in column " +
                        trim(header[static_cast<std::size_t>(feature_cols[static_cast<std::size_t>(f)])]));
      rec.features(f) = v;
    }
    rec.fault_type = parse_label(cells[static_cast<std::size_t>(type_col)], kNumFaultTypes - 1, "fault_type", line_no);
    rec.fault_zone = parse_label(cells[static_cast<std::size_t>(zone_col)], kNumFaultZones - 1, "fault_zone", line_no);
    rec.seq_index = records.size();
    records.push_back(std::move(rec));
  }
  return records;
}

int majority_label(std::span<const int> labels) {
  if (labels.empty()) throw DataError("majority_label: no labels");
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  int best_count = 0;
  for (const auto& [label, count] : counts) best_count = std::max(best_count, count);
  // Among tied labels pick the one occurring last.
  for (std::size_t i = labels.size(); i-- > 0;)
    if (counts[labels[i]] == best_count) return labels[i];
  return labels.back();
}

std::vector<GridWindow> make_windows(std::span<const RawRecord> records, int size, int stride) {
  if (size < 1 || stride < 1) throw DataError("make_windows: size and stride must be positive");
  std::vector<GridWindow> out;
  const auto n = static_cast<long>(records.size());
  if (n < size) return out;
  out.reserve(static_cast<std::size_t>((n - size) / stride + 1));
  std::vector<int> types(static_cast<std::size_t>(size));
  std::vector<int> zones(static_cast<std::size_t>(size));
  for (long start = 0; start + size <= n; start += stride) {
    GridWindow w;
    w.data.resize(size, kNumFeatures);
    for (int t = 0; t < size; ++t) {
      const RawRecord& r = records[static_cast<std::size_t>(start + t)];
      if (r.features.size() != kNumFeatures) throw ShapeError("record has wrong feature count");
      w.data.row(t) = r.features.transpose();
      types[static_cast<std::size_t>(t)] = r.fault_type;
      zones[static_cast<std::size_t>(t)] = r.fault_zone;
    }
    w.fault_type = majority_label(types);
    w.fault_zone = majority_label(zones);
    out.push_back(std::move(w));
  }
  return out;
}

NormalizationStats fit_normalizer(std::span<const GridWindow> train_windows) {
  if (train_windows.empty()) throw DataError("fit_normalizer: empty training set");
  const Eigen::Index F = train_windows.front().data.cols();
  NormalizationStats s;
  s.per_feature_min = Vector::Constant(F, std::numeric_limits<double>::infinity());
  s.per_feature_max = Vector::Constant(F, -std::numeric_limits<double>::infinity());
  for (const GridWindow& w : train_windows) {
    if (w.data.cols() != F) throw ShapeError("fit_normalizer: inconsistent feature count");
    s.per_feature_min = s.per_feature_min.cwiseMin(w.data.colwise().minCoeff().transpose());
    s.per_feature_max = s.per_feature_max.cwiseMax(w.data.colwise().maxCoeff().transpose());
  }
  return s;
}

std::vector<GridWindow> apply_normalizer(const NormalizationStats& stats, std::span<const GridWindow> windows) {
  const Vector range = stats.per_feature_max - stats.per_feature_min;
  // Zero-range features get scale 0, so every value maps to 0.
  const Vector scale = range.unaryExpr([](double r) { return r > 0 ? 1.0 / r : 0.0; });
  std::vector<GridWindow> out;
  out.reserve(windows.size());
  for (const GridWindow& w : windows) {
    if (w.data.cols() != stats.per_feature_min.size()) throw ShapeError("apply_normalizer: feature count mismatch");
    GridWindow n = w;
    for (Eigen::Index f = 0; f < n.data.cols(); ++f) {
      if (scale(f) == 0.0)
        n.data.col(f).setZero();
      else
        n.data.col(f) = ((n.data.col(f).array() - stats.per_feature_min(f)) * scale(f)).matrix();
    }
    out.push_back(std::move(n));
  }
  return out;
}

DatasetSplit split(std::vector<GridWindow> windows, const SplitOptions& options) {
  const double total = options.train_fraction + options.validation_fraction + options.test_fraction;
  if (std::abs(total - 1.0) > 1e-9) throw DataError("split: fractions must sum to 1");
  if (options.train_fraction <= 0 || options.validation_fraction < 0 || options.test_fraction < 0)
    throw DataError("split: fractions must be non-negative and train positive");
  const std::size_t n = windows.size();
  if (n < 3) throw DataError("split: need at least 3 windows, got " + std::to_string(n));

  if (options.shuffle) {
    Rng rng(options.seed);
    std::shuffle(windows.begin(), windows.end(), rng);
  }
  // The 1e-9 guards against products such as 0.85 * 20 landing just below an integer.
  const auto n_train = static_cast<std::size_t>(std::floor(options.train_fraction * static_cast<double>(n) + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(options.validation_fraction * static_cast<double>(n) + 1e-9));
  if (n_train == 0 || n_train + n_val >= n) throw DataError("split: fractions leave an empty train or test set");

  DatasetSplit out;
  out.split_seed = options.seed;
  auto first = std::make_move_iterator(windows.begin());
  out.train.assign(first, first + static_cast<long>(n_train));
  out.validation.assign(first + static_cast<long>(n_train), first + static_cast<long>(n_train + n_val));
  out.test.assign(first + static_cast<long>(n_train + n_val), std::make_move_iterator(windows.end()));

  out.stats = fit_normalizer(out.train);
  if (options.normalize) {
    out.train = apply_normalizer(out.stats, out.train);
    out.validation = apply_normalizer(out.stats, out.validation);
    out.test = apply_normalizer(out.stats, out.test);
  }
  return out;
}

std::vector<GridWindow> synth_windows(const SynthOptions& o) {
  if (o.n_classes < 2) throw DataError("synth_dataset: need at least 2 classes");
  if (o.n_classes > kNumFaultTypes) throw DataError("synth_dataset: at most 11 classes");
  if (o.code_features < 0 || o.code_features > kNumFeatures)
    throw DataError("synth_dataset: code_features must lie in [0, 51]");
  if (o.code_features > 0 && (1 << std::min(o.code_features, 30)) < o.n_classes)
    throw DataError("synth_dataset: too few code features for the class count");
  if (!(o.code_gain >= 0 && o.weak_gain >= 0)) throw DataError("synth_dataset: gains must be non-negative");
  if (!(o.separation >= 0)) throw DataError("synth_dataset: separation must be non-negative");
  if (o.n_windows < o.n_classes) throw DataError("synth_dataset: fewer windows than classes");
  if (o.window_len < 1) throw DataError("synth_dataset: window_len must be positive");

  Rng rng(o.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Per-feature baseline, frequency and phase shared by all classes.
  Vector baseline(kNumFeatures), frequency(kNumFeatures), phase(kNumFeatures);
  for (int f = 0; f < kNumFeatures; ++f) {
    baseline(f) = 10.0 * unit(rng) - 5.0;
    frequency(f) = 1.0 + std::floor(3.0 * unit(rng));
    phase(f) = 2.0 * std::numbers::pi * unit(rng);
  }
  // Class signature: a +-1 mean shift and a sinusoid amplitude per feature.
  // The first code_features entries of a random feature order carry the bits
  // of the class index at code_gain; the others a random sign at weak_gain.
  std::vector<int> feature_order(kNumFeatures);
  std::iota(feature_order.begin(), feature_order.end(), 0);
  std::shuffle(feature_order.begin(), feature_order.end(), rng);
  Matrix shift(o.n_classes, kNumFeatures), amplitude(o.n_classes, kNumFeatures);
  for (int c = 0; c < o.n_classes; ++c)
    for (int k = 0; k < kNumFeatures; ++k) {
      const int f = feature_order[static_cast<std::size_t>(k)];
      const double random_sign = unit(rng) < 0.5 ? -1.0 : 1.0;
      const double a = unit(rng) - 0.5;
      if (k < o.code_features) {
        shift(c, f) = o.code_gain * (((c >> k) & 1) ? 1.0 : -1.0);
        amplitude(c, f) = 0.0;
      } else {
        shift(c, f) = o.weak_gain * random_sign;
        amplitude(c, f) = o.weak_gain * a;
      }
    }

  std::vector<int> classes(static_cast<std::size_t>(o.n_windows));
  for (int i = 0; i < o.n_windows; ++i) classes[static_cast<std::size_t>(i)] = i % o.n_classes;
  std::shuffle(classes.begin(), classes.end(), rng);

  std::vector<GridWindow> out;
  out.reserve(classes.size());
  for (int c : classes) {
    GridWindow w;
    w.data.resize(o.window_len, kNumFeatures);
    for (int f = 0; f < kNumFeatures; ++f) {
      for (int t = 0; t < o.window_len; ++t) {
        const double wave =
            std::sin(2.0 * std::numbers::pi * frequency(f) * t / o.window_len + phase(f)) * amplitude(c, f);
        w.data(t, f) = baseline(f) + o.separation * (shift(c, f) + wave) + o.noise * gauss(rng);
      }
    }
    w.fault_type = c;
    w.fault_zone = c % kNumFaultZones;
    out.push_back(std::move(w));
  }
  return out;
}

DatasetSplit synth_dataset(const SynthOptions& options) {
  SplitOptions so;
  so.seed = options.seed;
  return split(synth_windows(options), so);
}

DatasetSplit synth_dataset(int n_classes, int n_windows, double separation, std::uint64_t seed) {
  SynthOptions o;
  o.n_classes = n_classes;
  o.n_windows = n_windows;
  o.separation = separation;
  o.seed = seed;
  return synth_dataset(o);
}

namespace {

io::json labels_json(const std::vector<GridWindow>& windows) {
  io::json types = io::json::array(), zones = io::json::array();
  for (const GridWindow& w : windows) {
    types.push_back(w.fault_type);
    zones.push_back(w.fault_zone);
  }
  return {{"count", windows.size()}, {"fault_type", types}, {"fault_zone", zones}};
}

std::vector<GridWindow> load_part(const std::filesystem::path& dir, const std::string& name, const io::json& meta) {
  std::vector<Matrix> data = io::read_matrices(dir / (name + ".bin"));
  const auto& types = meta.at("fault_type");
  const auto& zones = meta.at("fault_zone");
  if (data.size() != meta.at("count").get<std::size_t>() || types.size() != data.size() || zones.size() != data.size())
    throw DataError("dataset manifest does not match " + name + ".bin");
  std::vector<GridWindow> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    out.push_back({std::move(data[i]), types[i].get<int>(), zones[i].get<int>()});
  return out;
}

}  // namespace

void save_dataset(const DatasetSplit& s, const std::filesystem::path& dir) {
  io::ensure_directory(dir);
  io::json manifest;
  manifest["format"] = "faultguard-dataset/1";
  const GridWindow* any = !s.train.empty() ? &s.train.front() : nullptr;
  manifest["window_len"] = any ? any->data.rows() : 0;
  manifest["n_features"] = any ? any->data.cols() : 0;
  manifest["split_seed"] = s.split_seed;
  manifest["fingerprint"] = s.fingerprint();
  manifest["stats"] = {
      {"per_feature_min", std::vector<double>(s.stats.per_feature_min.begin(), s.stats.per_feature_min.end())},
      {"per_feature_max", std::vector<double>(s.stats.per_feature_max.begin(), s.stats.per_feature_max.end())}};
  for (const auto& [name, part] : {std::pair{"train", &s.train}, {"validation", &s.validation}, {"test", &s.test}}) {
    std::vector<Matrix> mats;
    mats.reserve(part->size());
    for (const GridWindow& w : *part) mats.push_back(w.data);
    io::write_matrices(dir / (std::string(name) + ".bin"), mats);
    manifest["splits"][name] = labels_json(*part);
  }
  io::write_json(dir / "manifest.json", manifest);
}

DatasetSplit load_dataset(const std::filesystem::path& dir) {
  const io::json manifest = io::read_json(dir / "manifest.json");
  DatasetSplit s;
  s.split_seed = manifest.at("split_seed").get<std::uint64_t>();
  const auto mins = manifest.at("stats").at("per_feature_min").get<std::vector<double>>();
  const auto maxs = manifest.at("stats").at("per_feature_max").get<std::vector<double>>();
  s.stats.per_feature_min = Eigen::Map<const Vector>(mins.data(), static_cast<Eigen::Index>(mins.size()));
  s.stats.per_feature_max = Eigen::Map<const Vector>(maxs.data(), static_cast<Eigen::Index>(maxs.size()));
  s.train = load_part(dir, "train", manifest.at("splits").at("train"));
  s.validation = load_part(dir, "validation", manifest.at("splits").at("validation"));
  s.test = load_part(dir, "test", manifest.at("splits").at("test"));
  if (s.fingerprint() != manifest.at("fingerprint").get<std::string>())
    throw DataError("dataset fingerprint mismatch in " + dir.string());
  return s;
}

std::vector<Window> window_data(std::span<const GridWindow> windows) {
  std::vector<Window> out;
  out.reserve(windows.size());
  for (const GridWindow& w : windows) out.push_back(w.data);
  return out;
}

std::vector<int> labels(std::span<const GridWindow> windows, Task task) {
  std::vector<int> out;
  out.reserve(windows.size());
  for (const GridWindow& w : windows) out.push_back(w.label(task));
  return out;
}

}  // namespace faultguard::dataset
