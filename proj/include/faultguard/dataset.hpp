#pragma once

#include "faultguard/core.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace faultguard::dataset {

/// One row of the telemetry stream.
struct RawRecord {
  Vector features;  // kNumFeatures entries
  int fault_type = 0;
  int fault_zone = 0;
  std::size_t seq_index = 0;
};

struct GridWindow {
  Window data;  // window_len x kNumFeatures
  int fault_type = 0;
  int fault_zone = 0;

  int label(Task task) const { return task == Task::FaultType ? fault_type : fault_zone; }
  Eigen::Index window_len() const { return data.rows(); }
};

struct NormalizationStats {
  Vector per_feature_min;
  Vector per_feature_max;
};

struct DatasetSplit {
  std::vector<GridWindow> train;
  std::vector<GridWindow> validation;
  std::vector<GridWindow> test;
  NormalizationStats stats;
  std::uint64_t split_seed = 0;

  std::size_t size() const { return train.size() + validation.size() + test.size(); }
  /// Hash over every window and label, in split order.
  std::string fingerprint() const;
};

/// Reads the CSV layout: a header naming 51 feature columns plus `fault_type`
/// and `fault_zone`. Errors cite the 1-based file line.
std::vector<RawRecord> ingest(const std::filesystem::path& path);

/// Sliding windows starting at 0, stride, 2*stride, ... Each window takes the
/// majority label of its records; ties go to the tied label seen last.
std::vector<GridWindow> make_windows(std::span<const RawRecord> records, int size = kDefaultWindowLen,
                                     int stride = kDefaultWindowLen / 2);

/// Label-majority rule used by make_windows, exposed for reuse and testing.
int majority_label(std::span<const int> labels);

NormalizationStats fit_normalizer(std::span<const GridWindow> train_windows);
/// (x - min) / (max - min) per feature, no clipping; zero-range features map to 0.
std::vector<GridWindow> apply_normalizer(const NormalizationStats& stats, std::span<const GridWindow> windows);

struct SplitOptions {
  double train_fraction = 0.85;
  double validation_fraction = 0.05;
  double test_fraction = 0.10;
  std::uint64_t seed = 0;
  /// Chronological by default; a seeded shuffle precedes the cut when set.
  bool shuffle = false;
  /// Fit stats on train and normalize all three partitions.
  bool normalize = true;
};

/// train = floor(f_train * N), validation = floor(f_val * N), test = remainder.
DatasetSplit split(std::vector<GridWindow> windows, const SplitOptions& options = {});

struct SynthOptions {
  int n_classes = 4;
  int n_windows = 400;
  double separation = 3.0;
  std::uint64_t seed = 0;
  int window_len = kDefaultWindowLen;
  double noise = 1.0;
  /// Features carrying a binary class code with a strong shift; the rest get a
  /// weak random shift. Strong features survive small L-inf perturbations,
  /// the weak ones do not.
  int code_features = 4;
  double code_gain = 2.0;
  double weak_gain = 0.25;
};

/// Balanced class-dependent mean-shift plus sinusoid sequences with Gaussian
/// noise. Shifts are separation * gain * (+-1). fault_type = class, fault_zone = class % 4. Returned normalized and
/// split chronologically with the default fractions.
DatasetSplit synth_dataset(const SynthOptions& options);
DatasetSplit synth_dataset(int n_classes, int n_windows, double separation, std::uint64_t seed);

/// Raw (unsplit, unnormalized) synthetic windows in generation order.
std::vector<GridWindow> synth_windows(const SynthOptions& options);

/// Directory layout: manifest.json plus train.bin / validation.bin / test.bin.
void save_dataset(const DatasetSplit& split, const std::filesystem::path& dir);
DatasetSplit load_dataset(const std::filesystem::path& dir);

std::vector<Window> window_data(std::span<const GridWindow> windows);
std::vector<int> labels(std::span<const GridWindow> windows, Task task);

}  // namespace faultguard::dataset
