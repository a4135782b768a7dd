#pragma once

#include "faultguard/classifier.hpp"
#include "faultguard/dataset.hpp"
#include "faultguard/nn.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace faultguard::predictor {

struct PredictorConfig {
  int n_features = kNumFeatures;
  int window_len = kDefaultWindowLen;
  int hidden_size = 220;  // per direction
  double dropout_rate = 0.5;
  int n_classes = kNumFaultTypes;
  int epochs = 80;
  double learning_rate = 1e-3;
  int batch_size = 64;
  /// Budget of the FGSM and BIM inputs crafted during online adversarial training.
  double oat_epsilon = 0.2;
  /// Adds the clean-batch loss to the FGSM and BIM losses.
  bool oat_include_clean = true;
  int oat_bim_steps = 10;
  std::uint64_t seed = 0;

  int head_width() const { return 2 * hidden_size; }
  void validate() const;
};

nlohmann::json to_json(const PredictorConfig& c);
PredictorConfig predictor_config_from_json(const nlohmann::json& j);

enum class Mode { Eval, Train };

struct ClassScores {
  Vector logits;
  Vector scores;  // element-wise sigmoid of logits
  int predicted = 0;
};

struct EpochStats {
  double clean_loss = 0;
  double adversarial_loss = 0;
  double validation_accuracy = 0;
  double seconds = 0;
};

struct TrainingTrace {
  std::vector<EpochStats> epochs;
  double total_seconds = 0;
  bool online_adversarial = false;
};

/// One-layer bidirectional GRU, dropout on the concatenated final states, and
/// a linear head (2*hidden -> classes).
class PredictorModel : public DifferentiableClassifier {
 public:
  /// Seeded initialization, uniform in +-1/sqrt(fan_in) per parameter block.
  explicit PredictorModel(const PredictorConfig& config);

  const PredictorConfig& config() const { return config_; }
  int n_classes() const override { return config_.n_classes; }

  /// Single-window forward. Train mode draws a dropout mask from `rng`.
  ClassScores forward(const Window& window, Mode mode = Mode::Eval, Rng* rng = nullptr) const;

  Matrix logits(std::span<const Window> batch) const override;
  std::vector<Window> input_gradient(std::span<const Window> batch, const LogitGradient& upstream) const override;

  /// Training-mode forward/backward with a caller-supplied dropout mask
  /// (head_width x batch, entries 0 or 1/(1-p); empty = no dropout). Adds
  /// sum_i weights[i] * loss_i gradients to the parameters and returns the
  /// per-sample losses.
  Vector accumulate_gradients(std::span<const Window> batch, std::span<const int> labels,
                              std::span<const double> weights, const Matrix& dropout_mask);

  Matrix sample_dropout_mask(Eigen::Index batch, Rng& rng) const;

  nn::ParamRefs params();
  nn::ConstParamRefs params() const;

  nn::GruDirection forward_gru;
  nn::GruDirection backward_gru;
  nn::Dense head;

  /// Completed training epochs, recorded in checkpoints.
  int epochs_trained = 0;

 private:
  struct Cache {
    nn::GruDirection::Cache fwd, bwd;
    Matrix features;
    Matrix dropped;
    Matrix mask;
  };
  Matrix run(std::span<const Window> batch, const Matrix* mask, Cache* cache) const;
  std::vector<Window> backprop(const Cache& cache, std::span<const Window> batch, const Matrix& d_logits,
                               PredictorModel* sink) const;
  void check_batch(std::span<const Window> batch) const;

  PredictorConfig config_;
};

PredictorModel init_model(const PredictorConfig& config);

/// Per-batch hook for tests and logging: (epoch, batch index, clean loss, adversarial loss).
using BatchObserver = std::function<void(int, int, double, double)>;

/// Mini-batch Adam on softmax cross-entropy. Batch order is a seeded shuffle per epoch.
TrainingTrace train_standard(PredictorModel& model, const dataset::DatasetSplit& split, Task task,
                             const BatchObserver& observer = {});

/// Components of one online-adversarial batch loss (means over the batch).
struct OatBatchLoss {
  double clean = 0;
  double fgsm = 0;
  double bim = 0;
  double total() const { return clean + fgsm + bim; }
};

/// One online adversarial training step: crafts FGSM and BIM inputs against the
/// current parameters (eval mode), then accumulates the gradient of
/// clean + FGSM + BIM losses (clean omitted when oat_include_clean is false)
/// under one shared dropout mask. Does not step the optimizer.
OatBatchLoss oat_accumulate(PredictorModel& model, std::span<const Window> batch, std::span<const int> labels,
                            Rng& rng);

TrainingTrace train_online_adversarial(PredictorModel& model, const dataset::DatasetSplit& split, Task task,
                                       const BatchObserver& observer = {});

double evaluate_accuracy(const PredictorModel& model, std::span<const dataset::GridWindow> windows, Task task);

/// Binary parameter blob plus JSON sidecar (`<stem>.bin`, `<stem>.json`).
void save_checkpoint(const PredictorModel& model, const std::filesystem::path& stem,
                     const std::string& dataset_fingerprint);
/// Throws when `expected` is given and differs from the stored configuration.
PredictorModel load_checkpoint(const std::filesystem::path& stem,
                               const std::optional<PredictorConfig>& expected = std::nullopt);

}  // namespace faultguard::predictor
