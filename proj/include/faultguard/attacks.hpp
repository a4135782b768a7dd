#pragma once

#include "faultguard/classifier.hpp"
#include "faultguard/dataset.hpp"
#include "faultguard/gan.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace faultguard::attacks {

enum class AttackKind { FGSM, BIM, CW, RFGSM, PGD };

inline constexpr AttackKind kAllAttacks[] = {AttackKind::FGSM, AttackKind::BIM, AttackKind::CW, AttackKind::RFGSM,
                                             AttackKind::PGD};

std::string to_string(AttackKind kind);
AttackKind parse_attack_kind(const std::string& name);

/// Valid input range used for clipping (normalized space by default).
struct DataBox {
  double low = 0.0;
  double high = 1.0;
};

struct AttackSpec {
  AttackKind kind = AttackKind::FGSM;
  double epsilon = 0.2;  // L-infinity budget
  int steps = 10;        // iterative kinds; optimizer iterations for CW
  double alpha = 0.05;   // per-step size (BIM/PGD), noise step (RFGSM)
  bool random_start = true;
  double cw_c = 1.0;
  double cw_kappa = 0.0;
  double cw_lr = 0.01;
  DataBox box;
  std::uint64_t seed = 0;  // RFGSM noise and PGD random start

  /// Defaults: steps 10, alpha eps/4 (BIM/PGD), eps/2 (RFGSM), PGD random
  /// start, CW c=1 kappa=0 lr=0.01 with 100 steps.
  static AttackSpec defaults(AttackKind kind, double epsilon, std::uint64_t seed = 0);
  void validate() const;
};

nlohmann::json to_json(const AttackSpec& spec);
AttackSpec attack_spec_from_json(const nlohmann::json& j);

struct AdversarialBatch {
  std::vector<Window> original;
  std::vector<Window> perturbed;
  std::vector<int> labels;
  AttackSpec spec;
  /// Perturbed window is misclassified.
  std::vector<bool> success_mask;

  std::size_t success_count() const;
};

/// Projects `v` onto the epsilon-ball around `x` and then onto the box. Box
/// bounds are widened to include x so legitimate out-of-range inputs are never
/// moved by the clip alone.
void project(Window& v, const Window& x, double epsilon, const DataBox& box);

/// Perturbation-only variants used inside training loops (no success bookkeeping).
std::vector<Window> fgsm_perturb(const DifferentiableClassifier& model, std::span<const Window> x,
                                 std::span<const int> y, double epsilon, const DataBox& box = {});
std::vector<Window> bim_perturb(const DifferentiableClassifier& model, std::span<const Window> x,
                                std::span<const int> y, double epsilon, double alpha, int steps,
                                const DataBox& box = {});

AdversarialBatch fgsm(const DifferentiableClassifier& model, std::span<const Window> x, std::span<const int> y,
                      double epsilon, const DataBox& box = {});
AdversarialBatch bim(const DifferentiableClassifier& model, std::span<const Window> x, std::span<const int> y,
                     double epsilon, double alpha, int steps, const DataBox& box = {});
AdversarialBatch rfgsm(const DifferentiableClassifier& model, std::span<const Window> x, std::span<const int> y,
                       double epsilon, double alpha, const DataBox& box = {}, std::uint64_t seed = 0);
AdversarialBatch pgd(const DifferentiableClassifier& model, std::span<const Window> x, std::span<const int> y,
                     double epsilon, double alpha, int steps, bool random_start, const DataBox& box = {},
                     std::uint64_t seed = 0);
/// Carlini-Wagner L2 with a tanh change of variables and a fixed trade-off
/// constant. Returns the lowest-norm misclassified iterate per window, or the
/// final iterate when none succeeded.
AdversarialBatch cw(const DifferentiableClassifier& model, std::span<const Window> x, std::span<const int> y,
                    double c, double kappa, double learning_rate, int steps, const DataBox& box = {});

/// Dispatches on spec.kind.
AdversarialBatch run_attack(const DifferentiableClassifier& model, std::span<const Window> x, std::span<const int> y,
                            const AttackSpec& spec);

/// Directory with original.bin, perturbed.bin and batch.json (spec, labels, mask).
void save_adversarial_batch(const AdversarialBatch& batch, const std::filesystem::path& dir);
AdversarialBatch load_adversarial_batch(const std::filesystem::path& dir);
/// Re-crafts the stored batch from its spec and checks the perturbation is bit-identical.
bool replay_matches(const DifferentiableClassifier& model, const AdversarialBatch& stored);

// Gray-box GAN attacker

struct GrayboxConfig {
  int latent_dim = 64;
  int epochs = 150;
  double learning_rate = 2e-4;
  int batch_size = 256;  // records per step
  std::uint64_t seed = 0;
};

struct GrayboxAttacker {
  ads::GeneratorNet generator;
  GrayboxConfig config;
  /// Mean discriminator score on generated records, per epoch.
  std::vector<double> fake_score_trace;
};

/// Trains a generator/discriminator pair on the flattened records of
/// `train_windows` with binary cross-entropy and keeps the generator.
GrayboxAttacker train_graybox_generator(std::span<const dataset::GridWindow> train_windows,
                                        const GrayboxConfig& config);

struct GeneratedData {
  Matrix records;               // kNumFeatures x (n_batches * batch_size)
  std::vector<Window> windows;  // consecutive records grouped into windows
};

GeneratedData generate_graybox(const GrayboxAttacker& attacker, int n_batches, int batch_size, std::uint64_t seed,
                               int window_len = kDefaultWindowLen);

/// Distinct predicted classes over the set divided by the class count.
double asr_from_predictions(std::span<const int> predictions, int n_classes);
double graybox_asr(const DifferentiableClassifier& model, std::span<const Window> generated, int n_classes);

void save_graybox(const GrayboxAttacker& attacker, const std::filesystem::path& stem);
GrayboxAttacker load_graybox(const std::filesystem::path& stem);

}  // namespace faultguard::attacks
