#pragma once

#include "faultguard/dataset.hpp"
#include "faultguard/gan.hpp"
#include "faultguard/predictor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace faultguard::ads {

struct AdsConfig {
  int epochs = 100;
  double learning_rate = 2e-4;
  double adam_beta1 = 0.5;
  bool adversarial_learning = true;
  double al_epsilon = 0.2;
  int al_bim_steps = 10;
  double threshold = 0.5;
  Task task = Task::FaultType;
  std::uint64_t seed = 0;
  int latent_dim = 64;
  int batch_size = 32;  // windows per step; records = batch_size * window_len

  void validate() const;
};

nlohmann::json to_json(const AdsConfig& c);
AdsConfig ads_config_from_json(const nlohmann::json& j);

struct AdsEpoch {
  double real_loss = 0;  // discriminator, real records labeled real
  double fake_loss = 0;  // discriminator, generated records labeled fake
  double adversarial_loss = 0;  // discriminator, FGSM/BIM records labeled fake
  double generator_loss = 0;
  double mean_real_score = 0;
  double mean_fake_score = 0;
  long discriminator_updates = 0;
  long generator_updates = 0;
  double seconds = 0;
};

struct AdsTrace {
  std::vector<AdsEpoch> epochs;
  double total_seconds = 0;
};

struct AdsModel {
  GeneratorNet generator;
  DiscriminatorNet discriminator;
  AdsConfig config;
  AdsTrace trace;
  std::string predictor_fingerprint;
};

/// Hash of the predictor configuration and parameters.
std::string model_fingerprint(const predictor::PredictorModel& model);

/// Called after every epoch with the 0-based epoch index and the model so far.
using AdsObserver = std::function<void(int, const AdsModel&)>;

/// Per batch: D on real, D on fakes, [one D step on FGSM + BIM records],
/// then one generator step on a fresh fake batch.
AdsModel train_ads(std::span<const dataset::GridWindow> train_windows, const predictor::PredictorModel& predictor,
                   const AdsConfig& config, const AdsObserver& observer = {});

struct DetectionVerdict {
  double window_score = 0;
  bool is_legitimate = false;
  Vector per_record_scores;
};

DetectionVerdict score(const DiscriminatorNet& disc, const Window& window, double threshold = 0.5);

struct GateResult {
  std::vector<Window> passed;
  std::vector<Window> rejected;
  std::vector<std::size_t> passed_index;
  std::vector<std::size_t> rejected_index;
};

GateResult gate(const DiscriminatorNet& disc, std::span<const Window> stream, double threshold = 0.5);
/// Verdicts only, in stream order.
std::vector<bool> legitimate_mask(const DiscriminatorNet& disc, std::span<const Window> stream,
                                  double threshold = 0.5);

struct MaliciousSet {
  std::string source;  // attack kind, epsilon or "graybox"
  std::vector<Window> windows;
};

struct AdsEvaluation {
  std::string source;
  double accuracy = 0;  // correct verdicts over real + malicious windows
  double real_pass_rate = 0;
  double malicious_reject_rate = 0;
  std::size_t n_real = 0;
  std::size_t n_malicious = 0;
};

std::vector<AdsEvaluation> evaluate_ads(const DiscriminatorNet& disc, std::span<const Window> real_test,
                                        std::span<const MaliciousSet> malicious_sets, double threshold = 0.5);

/// `<stem>.bin` holds generator then discriminator parameters; `<stem>.json` the sidecar.
void save_ads(const AdsModel& model, const std::filesystem::path& stem);
AdsModel load_ads(const std::filesystem::path& stem);

}  // namespace faultguard::ads
