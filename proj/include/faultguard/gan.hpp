#pragma once

// Record-level GAN networks shared by the anomaly detector and the gray-box
// attacker. Records are columns of kNumFeatures rows.

#include "faultguard/nn.hpp"

#include <span>

namespace faultguard::ads {

/// Four dense layers: latent -> 128 -> 128 -> 128 -> 51, rectifier hidden
/// activations, linear output.
class GeneratorNet {
 public:
  GeneratorNet() = default;
  GeneratorNet(int latent_dim, Rng& rng);

  Matrix generate(const Matrix& latent) const { return net.forward(latent); }
  /// Standard-normal latent batch of `count` columns.
  Matrix sample_latent(Eigen::Index count, Rng& rng) const;
  int latent_dim() const { return static_cast<int>(net.in_dim()); }

  nn::Mlp net;
};

/// Five dense layers: 51 -> 512 -> 256 -> 128 -> 64 -> 1, leaky rectifier
/// (slope 0.2) hidden activations, sigmoid output.
class DiscriminatorNet {
 public:
  DiscriminatorNet() = default;
  explicit DiscriminatorNet(Rng& rng);

  /// Realness logits, 1 x N.
  Matrix logits(const Matrix& records) const;
  /// Realness scores in (0, 1), one per record column.
  Vector score_records(const Matrix& records) const;

  nn::Mlp net;
};

/// Columns of every window's rows, window after window.
Matrix unroll_records(std::span<const Window> windows);

/// One discriminator update towards `target` (1 = real, 0 = fake). Returns the BCE loss.
double discriminator_step(DiscriminatorNet& disc, nn::Adam& opt, const Matrix& records, double target);

struct GeneratorStep {
  double loss = 0;
  double mean_fake_score = 0;  // discriminator score on the fresh fakes
};

/// One generator update: fresh fakes from `latent`, labelled real, gradient
/// through the (frozen) discriminator into the generator.
GeneratorStep generator_step(GeneratorNet& gen, nn::Adam& opt, const DiscriminatorNet& disc, const Matrix& latent);

}  // namespace faultguard::ads
