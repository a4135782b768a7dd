#pragma once

#include "faultguard/ads.hpp"
#include "faultguard/attacks.hpp"
#include "faultguard/dataset.hpp"
#include "faultguard/predictor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace faultguard::harness {

/// 1 - (1 - accuracy)^batches: at least one of `batches` independent
/// classifications is correct.
double combinatorial_accuracy(double accuracy, int batches);
/// (1 - accuracy)^batches.
double false_alarm_probability(double accuracy, int batches);

struct DefenseFlags {
  bool oat = false;
  bool al = false;
  bool gate = false;

  std::string key() const;
  bool operator==(const DefenseFlags&) const = default;
};

struct ExperimentConfig {
  // dataset: a CSV path, or synthetic when empty
  std::string data_path;
  dataset::SynthOptions synth;
  int window_size = kDefaultWindowLen;
  int window_stride = kDefaultWindowLen / 2;
  bool shuffle_split = false;

  std::vector<Task> tasks{Task::FaultType};
  predictor::PredictorConfig predictor;
  ads::AdsConfig ads;
  attacks::GrayboxConfig graybox;
  int graybox_batches = 1500;
  int graybox_batch_size = kDefaultWindowLen;  // records per generated batch

  std::vector<attacks::AttackKind> attack_kinds{std::begin(attacks::kAllAttacks), std::end(attacks::kAllAttacks)};
  std::vector<double> epsilons{0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50};
  int attack_steps = 10;
  int cw_steps = 100;
  double cw_c = 1.0;
  double cw_kappa = 0.0;
  double cw_lr = 0.01;

  bool use_oat = true;
  bool use_al = true;
  bool use_gate = true;
  /// Also train an ADS without adversarial learning for comparison rows.
  bool ads_compare_without_al = true;

  /// Test windows used per evaluation cell (0 = whole test split).
  int eval_windows = 0;
  int notification_batches = 2;
  int curve_batches = 10;

  std::uint64_t seed = 0;
  int n_seeds = 3;
  std::string out_dir = "out";

  void validate() const;
  std::vector<std::uint64_t> seeds() const;
  /// Canonical `key = value` text; parse(to_text()) reproduces the config.
  std::string to_text() const;
  std::string hash() const;

  /// Unknown keys, malformed values and duplicate keys are errors.
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Applies one `key = value` assignment.
  void set(const std::string& key, const std::string& value);
};

struct ReportRow {
  std::string task;
  DefenseFlags defense;
  std::string attack;  // attack kind, "clean", "graybox", "combinatorial" or "training"
  std::optional<double> epsilon;
  std::optional<int> batches;
  std::string metric;
  double value = 0;
  double std = 0;
  int n_seeds = 1;
  double runtime_seconds = 0;
  std::string config_hash;

  /// Wall-clock measurement rows; excluded from deterministic metric output.
  bool is_timing() const { return attack == "training"; }
};

struct Provenance {
  std::string config_hash;
  std::string config_text;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> dataset_fingerprints;
  std::string started;
  std::string finished;
};

struct ExperimentReport {
  std::vector<ReportRow> rows;
  Provenance provenance;
};

/// Averages per-seed observations of the same row key into mean and std.
class RowAccumulator {
 public:
  explicit RowAccumulator(std::string config_hash) : hash_(std::move(config_hash)) {}
  void add(const ReportRow& key, double value, double runtime_seconds = 0);
  std::vector<ReportRow> rows() const;

 private:
  struct Cell {
    ReportRow key;
    std::vector<double> values;
    double runtime = 0;
  };
  std::string hash_;
  std::vector<Cell> cells_;
};

/// Read-only inputs of one sweep: a deployed predictor, its optional gate,
/// and the undefended predictor when the defended one differs.
struct SweepTarget {
  Task task = Task::FaultType;
  DefenseFlags defense;
  const predictor::PredictorModel* model = nullptr;
  const ads::DiscriminatorNet* discriminator = nullptr;  // gate and ADS rows when set
  double threshold = 0.5;
  std::vector<Window> windows;
  std::vector<int> labels;
  std::uint64_t seed = 0;
};

/// Accuracy with the gate engaged: rejected windows count as correct when
/// `malicious`, as errors otherwise.
double gated_accuracy(const predictor::PredictorModel& model, const ads::DiscriminatorNet* disc, double threshold,
                      std::span<const Window> windows, std::span<const int> labels, bool malicious);

attacks::AttackSpec make_spec(const ExperimentConfig& config, attacks::AttackKind kind, double epsilon,
                              std::uint64_t seed);

/// One model-accuracy row and (with a discriminator) one ADS-accuracy row per
/// (attack, epsilon) cell, added to `acc`.
void sweep_into(const ExperimentConfig& config, const SweepTarget& target, RowAccumulator& acc);
ExperimentReport run_epsilon_sweep(const ExperimentConfig& config, std::span<const SweepTarget> targets);

/// Progress hook: (stage, message).
using Logger = std::function<void(const std::string&, const std::string&)>;

/// Trains everything per seed and task, evaluates, and aggregates over seeds.
/// Failures are rethrown as Error with the stage name prefixed.
ExperimentReport run_full_pipeline(const ExperimentConfig& config, const Logger& log = {});

/// Builds the dataset split for one seed.
dataset::DatasetSplit build_dataset(const ExperimentConfig& config, std::uint64_t seed);

std::vector<std::string> csv_header();
std::string to_csv(std::span<const ReportRow> rows, bool include_runtime = true);
std::vector<ReportRow> parse_csv(const std::string& text);
nlohmann::ordered_json to_json(const ExperimentReport& report);
ExperimentReport report_from_json(const nlohmann::ordered_json& j);

/// Plot data: epsilon vs accuracy per attack, ascending epsilon.
std::string epsilon_curve_csv(std::span<const ReportRow> rows, const std::string& task, const DefenseFlags& defense,
                              const std::string& metric);
/// Plot data: batches vs combinatorial accuracy for one base accuracy.
std::string combinatorial_curve_csv(double accuracy, int max_batches);

/// Writes report.csv, metrics.csv (no timing rows, no runtime column),
/// report.json and plot_*.csv into `dir`. Returns the files written.
std::vector<std::filesystem::path> emit_report(const ExperimentReport& report, const std::filesystem::path& dir);
ExperimentReport load_report(const std::filesystem::path& dir);

}  // namespace faultguard::harness
