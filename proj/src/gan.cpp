#include "faultguard/gan.hpp"

#include <algorithm>
#include <cmath>

namespace faultguard::ads {

namespace {
constexpr Eigen::Index kGeneratorHidden = 128;
// Keep reported scores strictly inside (0, 1) even when the sigmoid saturates.
constexpr double kScoreFloor = 1e-15;
}  // namespace

GeneratorNet::GeneratorNet(int latent_dim, Rng& rng)
    : net("generator", {latent_dim, kGeneratorHidden, kGeneratorHidden, kGeneratorHidden, kNumFeatures},
          nn::Activation::Relu, nn::Activation::Identity, rng) {
  if (latent_dim < 1) throw ConfigError("latent_dim must be positive");
}

Matrix GeneratorNet::sample_latent(Eigen::Index count, Rng& rng) const {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix z(latent_dim(), count);
  for (Eigen::Index j = 0; j < z.cols(); ++j)
    for (Eigen::Index i = 0; i < z.rows(); ++i) z(i, j) = gauss(rng);
  return z;
}

DiscriminatorNet::DiscriminatorNet(Rng& rng)
    : net("discriminator", {kNumFeatures, 512, 256, 128, 64, 1}, nn::Activation::LeakyRelu,
          nn::Activation::Identity, rng) {}

Matrix DiscriminatorNet::logits(const Matrix& records) const {
  if (records.rows() != kNumFeatures) throw ShapeError("discriminator expects 51-feature records");
  return net.forward(records);
}

Vector DiscriminatorNet::score_records(const Matrix& records) const {
  const Matrix z = logits(records);
  Vector s(z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) s(j) = std::clamp(sigmoid(z(0, j)), kScoreFloor, 1.0 - kScoreFloor);
  return s;
}

Matrix unroll_records(std::span<const Window> windows) {
  Eigen::Index total = 0;
  for (const Window& w : windows) total += w.rows();
  Matrix out(windows.empty() ? kNumFeatures : windows.front().cols(), total);
  Eigen::Index col = 0;
  for (const Window& w : windows) {
    out.middleCols(col, w.rows()) = w.transpose();
    col += w.rows();
  }
  return out;
}

double discriminator_step(DiscriminatorNet& disc, nn::Adam& opt, const Matrix& records, double target) {
  const nn::ParamRefs params = disc.net.params();
  nn::zero_grads(params);
  nn::Mlp::Cache cache;
  const Matrix z = disc.net.forward(records, cache);
  Matrix dz;
  const double loss = nn::bce_with_logits(z, target, &dz);
  if (!std::isfinite(loss)) throw DivergenceError("discriminator loss is not finite");
  disc.net.backward(cache, dz, &disc.net);
  opt.step(params);
  return loss;
}

GeneratorStep generator_step(GeneratorNet& gen, nn::Adam& opt, const DiscriminatorNet& disc, const Matrix& latent) {
  const nn::ParamRefs params = gen.net.params();
  nn::zero_grads(params);
  nn::Mlp::Cache g_cache, d_cache;
  const Matrix fakes = gen.net.forward(latent, g_cache);
  const Matrix z = disc.net.forward(fakes, d_cache);
  Matrix dz;
  GeneratorStep out;
  out.loss = nn::bce_with_logits(z, 1.0, &dz);
  if (!std::isfinite(out.loss)) throw DivergenceError("generator loss is not finite");
  out.mean_fake_score = z.unaryExpr([](double v) { return sigmoid(v); }).mean();
  const Matrix d_fakes = disc.net.backward(d_cache, dz, nullptr);
  gen.net.backward(g_cache, d_fakes, &gen.net);
  opt.step(params);
  return out;
}

}  // namespace faultguard::ads
