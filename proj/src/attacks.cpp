#include "faultguard/attacks.hpp"

#include "faultguard/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>

namespace faultguard::attacks {

namespace {

constexpr std::size_t kGradientChunk = 128;

void check_inputs(std::span<const Window> x, std::span<const int> y) {
  if (x.size() != y.size()) throw ShapeError("attack: label count does not match window count");
  for (const Window& w : x)
    if (w.rows() != x.front().rows() || w.cols() != x.front().cols())
      throw ShapeError("attack: windows must share one shape");
}

/// Gradient of each window's own cross-entropy loss; chunked to bound memory.
std::vector<Window> loss_gradient(const DifferentiableClassifier& model, std::span<const Window> x,
                                  std::span<const int> y) {
  std::vector<Window> out;
  out.reserve(x.size());
  for (std::size_t start = 0; start < x.size(); start += kGradientChunk) {
    const std::size_t n = std::min(kGradientChunk, x.size() - start);
    std::vector<Window> g = model.loss_gradient(x.subspan(start, n), y.subspan(start, n));
    for (Window& w : g) {
      if (!w.allFinite()) throw DivergenceError("attack: non-finite input gradient");
      out.push_back(std::move(w));
    }
  }
  return out;
}

Window signed_step(const Window& gradient, double step) {
  return gradient.unaryExpr([step](double g) { return step * sign0(g); });
}

AdversarialBatch finish(const DifferentiableClassifier& model, std::span<const Window> x, std::span<const int> y,
                        std::vector<Window> perturbed, const AttackSpec& spec) {
  AdversarialBatch b;
  b.original.assign(x.begin(), x.end());
  b.labels.assign(y.begin(), y.end());
  b.spec = spec;
  const std::vector<int> pred = model.predict(perturbed);
  b.success_mask.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) b.success_mask[i] = pred[i] != y[i];
  b.perturbed = std::move(perturbed);
  return b;
}

/// Shared BIM/PGD loop: `steps` signed-gradient steps of size alpha, each
/// followed by projection onto the epsilon-ball and the box.
std::vector<Window> iterate(const DifferentiableClassifier& model, std::span<const Window> x, std::span<const int> y,
                            std::vector<Window> current, double epsilon, double alpha, int steps,
                            const DataBox& box) {
  for (int k = 0; k < steps; ++k) {
    const std::vector<Window> g = loss_gradient(model, current, y);
    for (std::size_t i = 0; i < current.size(); ++i) {
      current[i] += signed_step(g[i], alpha);
      project(current[i], x[i], epsilon, box);
    }
  }
  return current;
}

void check_box(const DataBox& box) {
  if (!(box.low < box.high)) throw ConfigError("data box requires low < high");
}

}  // namespace

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::FGSM:
      return "FGSM";
    case AttackKind::BIM:
      return "BIM";
    case AttackKind::CW:
      return "CW";
    case AttackKind::RFGSM:
      return "RFGSM";
    case AttackKind::PGD:
      return "PGD";
  }
  return "?";
}

AttackKind parse_attack_kind(const std::string& name) {
  std::string upper = name;
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  for (AttackKind k : kAllAttacks)
    if (to_string(k) == upper) return k;
  throw ConfigError("unknown attack '" + name + "'");
}

AttackSpec AttackSpec::defaults(AttackKind kind, double epsilon, std::uint64_t seed) {
  AttackSpec s;
  s.kind = kind;
  s.epsilon = epsilon;
  s.seed = seed;
  switch (kind) {
    case AttackKind::FGSM:
      s.steps = 1;
      s.alpha = epsilon;
      s.random_start = false;
      break;
    case AttackKind::BIM:
      s.steps = 10;
      s.alpha = epsilon / 4;
      s.random_start = false;
      break;
    case AttackKind::PGD:
      s.steps = 10;
      s.alpha = epsilon / 4;
      s.random_start = true;
      break;
    case AttackKind::RFGSM:
      s.steps = 1;
      s.alpha = epsilon / 2;
      s.random_start = false;
      break;
    case AttackKind::CW:
      s.steps = 100;
      s.alpha = 0;
      s.random_start = false;
      break;
  }
  return s;
}

void AttackSpec::validate() const {
  check_box(box);
  if (!(epsilon >= 0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be a finite value >= 0");
  if (steps < 0) throw ConfigError("steps must be non-negative");
  switch (kind) {
    case AttackKind::BIM:
    case AttackKind::PGD:
      if (alpha < 0 || alpha > epsilon) throw ConfigError("alpha must lie in [0, epsilon]");
      break;
    case AttackKind::RFGSM:
      if (alpha < 0 || (epsilon > 0 && alpha >= epsilon)) throw ConfigError("RFGSM alpha must lie in [0, epsilon)");
      break;
    case AttackKind::CW:
      if (!(cw_c > 0) || cw_kappa < 0 || !(cw_lr > 0)) throw ConfigError("CW needs c > 0, kappa >= 0, lr > 0");
      if (!std::isfinite(box.low) || !std::isfinite(box.high)) throw ConfigError("CW needs a finite data box");
      break;
    case AttackKind::FGSM:
      break;
  }
}

nlohmann::json to_json(const AttackSpec& s) {
  return {{"kind", to_string(s.kind)},  {"epsilon", s.epsilon},   {"steps", s.steps},
          {"alpha", s.alpha},           {"random_start", s.random_start},
          {"cw_c", s.cw_c},             {"cw_kappa", s.cw_kappa}, {"cw_lr", s.cw_lr},
          {"box", {s.box.low, s.box.high}}, {"seed", s.seed}};
}

AttackSpec attack_spec_from_json(const nlohmann::json& j) {
  AttackSpec s;
  s.kind = parse_attack_kind(j.at("kind").get<std::string>());
  s.epsilon = j.at("epsilon").get<double>();
  s.steps = j.at("steps").get<int>();
  s.alpha = j.at("alpha").get<double>();
  s.random_start = j.at("random_start").get<bool>();
  s.cw_c = j.at("cw_c").get<double>();
  s.cw_kappa = j.at("cw_kappa").get<double>();
  s.cw_lr = j.at("cw_lr").get<double>();
  s.box = {j.at("box").at(0).get<double>(), j.at("box").at(1).get<double>()};
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

std::size_t AdversarialBatch::success_count() const {
  return static_cast<std::size_t>(std::count(success_mask.begin(), success_mask.end(), true));
}

void project(Window& v, const Window& x, double epsilon, const DataBox& box) {
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      const double xi = x(i, j);
      double vi = std::clamp(v(i, j), xi - epsilon, xi + epsilon);
      vi = std::clamp(vi, std::min(box.low, xi), std::max(box.high, xi));
      v(i, j) = vi;
    }
  }
}

std::vector<Window> fgsm_perturb(const DifferentiableClassifier& model, std::span<const Window> x,
                                 std::span<const int> y, double epsilon, const DataBox& box) {
  check_inputs(x, y);
  const std::vector<Window> g = loss_gradient(model, x, y);
  std::vector<Window> out;
  out.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Window v = x[i] + signed_step(g[i], epsilon);
    project(v, x[i], epsilon, box);
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<Window> bim_perturb(const DifferentiableClassifier& model, std::span<const Window> x,
                                std::span<const int> y, double epsilon, double alpha, int steps,
                                const DataBox& box) {
  check_inputs(x, y);
  std::vector<Window> start(x.begin(), x.end());
  return iterate(model, x, y, std::move(start), epsilon, alpha, steps, box);
}

AdversarialBatch fgsm(const DifferentiableClassifier& model, std::span<const Window> x, std::span<const int> y,
                      double epsilon, const DataBox& box) {
  AttackSpec spec = AttackSpec::defaults(AttackKind::FGSM, epsilon);
  spec.box = box;
  spec.validate();
  return finish(model, x, y, fgsm_perturb(model, x, y, epsilon, box), spec);
}

AdversarialBatch bim(const DifferentiableClassifier& model, std::span<const Window> x, std::span<const int> y,
                     double epsilon, double alpha, int steps, const DataBox& box) {
  AttackSpec spec = AttackSpec::defaults(AttackKind::BIM, epsilon);
  spec.alpha = alpha;
  spec.steps = steps;
  spec.box = box;
  spec.validate();
  if (alpha * steps < epsilon) warn("BIM: alpha * steps < epsilon, the budget cannot be reached");
  return finish(model, x, y, bim_perturb(model, x, y, epsilon, alpha, steps, box), spec);
}

AdversarialBatch rfgsm(const DifferentiableClassifier& model, std::span<const Window> x, std::span<const int> y,
                       double epsilon, double alpha, const DataBox& box, std::uint64_t seed) {
  AttackSpec spec = AttackSpec::defaults(AttackKind::RFGSM, epsilon, seed);
  spec.alpha = alpha;
  spec.box = box;
  spec.validate();
  check_inputs(x, y);
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Window> noisy;
  noisy.reserve(x.size());
  for (const Window& w : x) {
    Window v = w.unaryExpr([&](double xi) { return xi + alpha * sign0(gauss(rng)); });
    project(v, w, alpha, box);
    noisy.push_back(std::move(v));
  }
  const std::vector<Window> g = loss_gradient(model, noisy, y);
  for (std::size_t i = 0; i < x.size(); ++i) {
    noisy[i] += signed_step(g[i], epsilon - alpha);
    project(noisy[i], x[i], epsilon, box);
  }
  return finish(model, x, y, std::move(noisy), spec);
}

AdversarialBatch pgd(const DifferentiableClassifier& model, std::span<const Window> x, std::span<const int> y,
                     double epsilon, double alpha, int steps, bool random_start, const DataBox& box,
                     std::uint64_t seed) {
  AttackSpec spec = AttackSpec::defaults(AttackKind::PGD, epsilon, seed);
  spec.alpha = alpha;
  spec.steps = steps;
  spec.random_start = random_start;
  spec.box = box;
  spec.validate();
  check_inputs(x, y);
  std::vector<Window> start(x.begin(), x.end());
  if (random_start) {
    Rng rng(seed);
    std::uniform_real_distribution<double> unif(-epsilon, epsilon);
    for (std::size_t i = 0; i < start.size(); ++i) {
      start[i] = start[i].unaryExpr([&](double v) { return v + unif(rng); });
      project(start[i], x[i], epsilon, box);
    }
  }
  return finish(model, x, y, iterate(model, x, y, std::move(start), epsilon, alpha, steps, box), spec);
}

AdversarialBatch cw(const DifferentiableClassifier& model, std::span<const Window> x, std::span<const int> y,
                    double c, double kappa, double learning_rate, int steps, const DataBox& box) {
  AttackSpec spec = AttackSpec::defaults(AttackKind::CW, 0.0);
  spec.cw_c = c;
  spec.cw_kappa = kappa;
  spec.cw_lr = learning_rate;
  spec.steps = steps;
  spec.box = box;
  spec.validate();
  check_inputs(x, y);

  const std::size_t n = x.size();
  const double half_range = (box.high - box.low) / 2.0;
  const auto to_box = [&](const Window& w) {
    return Window((box.low + half_range * (w.array().tanh() + 1.0)).matrix());
  };

  std::vector<Window> w(n), m(n), v(n), best(x.begin(), x.end());
  std::vector<double> best_l2(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    const Window unit = ((x[i].array() - box.low) / half_range - 1.0).cwiseMax(-1.0).cwiseMin(1.0) * 0.999999;
    w[i] = unit.array().atanh().matrix();
    m[i] = Window::Zero(x[i].rows(), x[i].cols());
    v[i] = m[i];
  }
  if (steps == 0) {
    std::vector<Window> same(x.begin(), x.end());
    return finish(model, x, y, std::move(same), spec);
  }

  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::vector<Window> current(n);
  const auto track_best = [&](const std::vector<Window>& cand, const Matrix& logits, std::size_t offset) {
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const std::size_t i = offset + static_cast<std::size_t>(j);
      Eigen::Index pred = 0;
      logits.col(j).maxCoeff(&pred);
      if (pred == y[i]) continue;
      const double l2 = (cand[i] - x[i]).squaredNorm();
      if (l2 < best_l2[i]) {
        best_l2[i] = l2;
        best[i] = cand[i];
      }
    }
  };

  for (int step = 0; step < steps; ++step) {
    for (std::size_t i = 0; i < n; ++i) current[i] = to_box(w[i]);
    const double t = step + 1;
    for (std::size_t start = 0; start < n; start += kGradientChunk) {
      const std::size_t len = std::min(kGradientChunk, n - start);
      const auto chunk = std::span<const Window>(current).subspan(start, len);
      const std::vector<Window> g = model.input_gradient(chunk, [&](const Matrix& z) {
        if (!z.allFinite()) throw DivergenceError("CW: non-finite logits");
        track_best(current, z, start);
        Matrix d = Matrix::Zero(z.rows(), z.cols());
        for (Eigen::Index j = 0; j < z.cols(); ++j) {
          const int yi = y[start + static_cast<std::size_t>(j)];
          Eigen::Index other = yi == 0 ? 1 : 0;
          for (Eigen::Index k = 0; k < z.rows(); ++k)
            if (k != yi && z(k, j) > z(other, j)) other = k;
          if (z(yi, j) - z(other, j) > -kappa) {
            d(yi, j) = c;
            d(other, j) = -c;
          }
        }
        return d;
      });
      for (std::size_t k = 0; k < len; ++k) {
        const std::size_t i = start + k;
        const Window th = w[i].array().tanh().matrix();
        Window grad = 2.0 * (current[i] - x[i]) + g[k];
        grad = (grad.array() * half_range * (1.0 - th.array().square())).matrix();
        if (!grad.allFinite()) throw DivergenceError("CW: non-finite objective gradient");
        m[i] = beta1 * m[i] + (1 - beta1) * grad;
        v[i] = beta2 * v[i] + (1 - beta2) * grad.cwiseAbs2();
        const double c1 = 1 - std::pow(beta1, t), c2 = 1 - std::pow(beta2, t);
        w[i].array() -= learning_rate * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + adam_eps);
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) current[i] = to_box(w[i]);
  for (std::size_t start = 0; start < n; start += kGradientChunk) {
    const std::size_t len = std::min(kGradientChunk, n - start);
    track_best(current, model.logits(std::span<const Window>(current).subspan(start, len)), start);
  }
  std::vector<Window> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::isfinite(best_l2[i]) ? best[i] : current[i];
  return finish(model, x, y, std::move(out), spec);
}

AdversarialBatch run_attack(const DifferentiableClassifier& model, std::span<const Window> x, std::span<const int> y,
                            const AttackSpec& spec) {
  AdversarialBatch b = [&] {
    switch (spec.kind) {
      case AttackKind::FGSM:
        return fgsm(model, x, y, spec.epsilon, spec.box);
      case AttackKind::BIM:
        return bim(model, x, y, spec.epsilon, spec.alpha, spec.steps, spec.box);
      case AttackKind::RFGSM:
        return rfgsm(model, x, y, spec.epsilon, spec.alpha, spec.box, spec.seed);
      case AttackKind::PGD:
        return pgd(model, x, y, spec.epsilon, spec.alpha, spec.steps, spec.random_start, spec.box, spec.seed);
      case AttackKind::CW:
        return cw(model, x, y, spec.cw_c, spec.cw_kappa, spec.cw_lr, spec.steps, spec.box);
    }
    throw ConfigError("unknown attack kind");
  }();
  b.spec = spec;
  return b;
}

void save_adversarial_batch(const AdversarialBatch& batch, const std::filesystem::path& dir) {
  io::ensure_directory(dir);
  io::write_matrices(dir / "original.bin", batch.original);
  io::write_matrices(dir / "perturbed.bin", batch.perturbed);
  std::vector<int> mask(batch.success_mask.begin(), batch.success_mask.end());
  io::write_json(dir / "batch.json",
                 {{"format", "faultguard-adversarial/1"},
                  {"spec", to_json(batch.spec)},
                  {"labels", batch.labels},
                  {"success_mask", mask}});
}

AdversarialBatch load_adversarial_batch(const std::filesystem::path& dir) {
  const io::json meta = io::read_json(dir / "batch.json");
  AdversarialBatch b;
  b.spec = attack_spec_from_json(meta.at("spec"));
  b.labels = meta.at("labels").get<std::vector<int>>();
  for (int v : meta.at("success_mask").get<std::vector<int>>()) b.success_mask.push_back(v != 0);
  b.original = io::read_matrices(dir / "original.bin");
  b.perturbed = io::read_matrices(dir / "perturbed.bin");
  if (b.original.size() != b.labels.size() || b.perturbed.size() != b.labels.size())
    throw DataError("adversarial batch files disagree on window count in " + dir.string());
  return b;
}

bool replay_matches(const DifferentiableClassifier& model, const AdversarialBatch& stored) {
  const AdversarialBatch again = run_attack(model, stored.original, stored.labels, stored.spec);
  if (again.perturbed.size() != stored.perturbed.size()) return false;
  for (std::size_t i = 0; i < again.perturbed.size(); ++i) {
    const Window& a = again.perturbed[i];
    const Window& b = stored.perturbed[i];
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) != 0) return false;
  }
  return true;
}

GrayboxAttacker train_graybox_generator(std::span<const dataset::GridWindow> train_windows,
                                        const GrayboxConfig& config) {
  if (train_windows.empty()) throw DataError("train_graybox_generator: empty training data");
  if (config.epochs < 0 || config.batch_size < 1) throw ConfigError("graybox: bad epochs or batch size");
  const Matrix records = ads::unroll_records(dataset::window_data(train_windows));
  if (records.rows() != kNumFeatures) throw ShapeError("graybox: records must have 51 features");

  Rng rng(config.seed);
  GrayboxAttacker attacker;
  attacker.config = config;
  attacker.generator = ads::GeneratorNet(config.latent_dim, rng);
  ads::DiscriminatorNet disc(rng);
  nn::Adam opt_g(config.learning_rate, 0.5, 0.999);
  nn::Adam opt_d(config.learning_rate, 0.5, 0.999);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(records.cols()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
  const auto n = static_cast<Eigen::Index>(order.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double fake_score = 0;
    int batches = 0;
    for (Eigen::Index start = 0; start < n; start += config.batch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(config.batch_size, n - start);
      Matrix real(kNumFeatures, len);
      for (Eigen::Index k = 0; k < len; ++k) real.col(k) = records.col(order[static_cast<std::size_t>(start + k)]);
      ads::discriminator_step(disc, opt_d, real, 1.0);
      const Matrix fakes = attacker.generator.generate(attacker.generator.sample_latent(len, rng));
      ads::discriminator_step(disc, opt_d, fakes, 0.0);
      const auto g = ads::generator_step(attacker.generator, opt_g, disc, attacker.generator.sample_latent(len, rng));
      fake_score += g.mean_fake_score;
      ++batches;
    }
    attacker.fake_score_trace.push_back(fake_score / std::max(batches, 1));
  }
  return attacker;
}

GeneratedData generate_graybox(const GrayboxAttacker& attacker, int n_batches, int batch_size, std::uint64_t seed,
                               int window_len) {
  if (n_batches < 0 || batch_size < 1 || window_len < 1) throw ConfigError("generate_graybox: bad sizes");
  Rng rng(seed);
  GeneratedData out;
  out.records.resize(kNumFeatures, static_cast<Eigen::Index>(n_batches) * batch_size);
  for (int b = 0; b < n_batches; ++b)
    out.records.middleCols(static_cast<Eigen::Index>(b) * batch_size, batch_size) =
        attacker.generator.generate(attacker.generator.sample_latent(batch_size, rng));
  const Eigen::Index n_windows = out.records.cols() / window_len;
  out.windows.reserve(static_cast<std::size_t>(n_windows));
  for (Eigen::Index k = 0; k < n_windows; ++k)
    out.windows.push_back(out.records.middleCols(k * window_len, window_len).transpose());
  return out;
}

double asr_from_predictions(std::span<const int> predictions, int n_classes) {
  if (predictions.empty()) throw DataError("ASR: empty generated set");
  if (n_classes < 1) throw ConfigError("ASR: n_classes must be positive");
  const std::set<int> distinct(predictions.begin(), predictions.end());
  return static_cast<double>(distinct.size()) / n_classes;
}

double graybox_asr(const DifferentiableClassifier& model, std::span<const Window> generated, int n_classes) {
  if (generated.empty()) throw DataError("ASR: empty generated set");
  return asr_from_predictions(model.predict(generated), n_classes);
}

void save_graybox(const GrayboxAttacker& attacker, const std::filesystem::path& stem) {
  io::ensure_directory(stem.parent_path().empty() ? std::filesystem::path(".") : stem.parent_path());
  io::write_matrices(stem.string() + ".bin", nn::snapshot(attacker.generator.net.params()));
  const auto& c = attacker.config;
  io::write_json(stem.string() + ".json", {{"format", "faultguard-graybox/1"},
                                           {"latent_dim", c.latent_dim},
                                           {"epochs", c.epochs},
                                           {"learning_rate", c.learning_rate},
                                           {"batch_size", c.batch_size},
                                           {"seed", c.seed},
                                           {"fake_score_trace", attacker.fake_score_trace}});
}

GrayboxAttacker load_graybox(const std::filesystem::path& stem) {
  const io::json meta = io::read_json(stem.string() + ".json");
  GrayboxAttacker a;
  a.config.latent_dim = meta.at("latent_dim").get<int>();
  a.config.epochs = meta.at("epochs").get<int>();
  a.config.learning_rate = meta.at("learning_rate").get<double>();
  a.config.batch_size = meta.at("batch_size").get<int>();
  a.config.seed = meta.at("seed").get<std::uint64_t>();
  a.fake_score_trace = meta.at("fake_score_trace").get<std::vector<double>>();
  Rng rng(0);
  a.generator = ads::GeneratorNet(a.config.latent_dim, rng);
  nn::restore(a.generator.net.params(), io::read_matrices(stem.string() + ".bin"));
  return a;
}

}  // namespace faultguard::attacks
