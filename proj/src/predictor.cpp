#include "faultguard/predictor.hpp"

#include "faultguard/attacks.hpp"
#include "faultguard/io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace faultguard::predictor {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

/// Packs windows into time-major blocks: block t holds row t (or T-1-t when
/// reversed) of every window as consecutive columns.
Matrix pack(std::span<const Window> batch, bool reversed) {
  const Eigen::Index B = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index T = batch.front().rows();
  const Eigen::Index F = batch.front().cols();
  Matrix out(F, T * B);
  for (Eigen::Index t = 0; t < T; ++t) {
    const Eigen::Index src = reversed ? T - 1 - t : t;
    for (Eigen::Index b = 0; b < B; ++b) out.col(t * B + b) = batch[static_cast<std::size_t>(b)].row(src).transpose();
  }
  return out;
}

struct TrainSetup {
  std::vector<Window> inputs;
  std::vector<int> labels;
  std::vector<Window> val_inputs;
  std::vector<int> val_labels;
};

TrainSetup prepare(const PredictorModel& model, const dataset::DatasetSplit& split, Task task) {
  model.config().validate();
  if (split.train.empty()) throw DataError("training set is empty");
  TrainSetup s{dataset::window_data(split.train), dataset::labels(split.train, task),
               dataset::window_data(split.validation), dataset::labels(split.validation, task)};
  for (int y : s.labels)
    if (y < 0 || y >= model.n_classes())
      throw ConfigError("label " + std::to_string(y) + " does not fit a " + std::to_string(model.n_classes()) +
                        "-class predictor");
  return s;
}

double validation_accuracy(const PredictorModel& model, const TrainSetup& s) {
  if (s.val_inputs.empty()) return std::numeric_limits<double>::quiet_NaN();
  return accuracy(model, s.val_inputs, s.val_labels);
}

void check_finite(double loss, int epoch, int batch) {
  if (!std::isfinite(loss))
    throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                          std::to_string(batch));
}

/// Shared epoch/batch driver; `step` accumulates gradients for one batch and
/// returns (clean, adversarial) mean losses.
template <typename Step>
TrainingTrace train_loop(PredictorModel& model, const TrainSetup& s, Step&& step, const BatchObserver& observer,
                         bool adversarial) {
  const PredictorConfig& cfg = model.config();
  TrainingTrace trace;
  trace.online_adversarial = adversarial;
  const auto t0 = Clock::now();
  Rng rng(derive_seed(cfg.seed, adversarial ? "oat-train" : "train"));
  nn::Adam opt(cfg.learning_rate);
  const nn::ParamRefs params = model.params();
  std::vector<std::size_t> order(s.inputs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto e0 = Clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double clean_sum = 0, adv_sum = 0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
      std::vector<Window> xb;
      std::vector<int> yb;
      xb.reserve(len);
      yb.reserve(len);
      for (std::size_t k = 0; k < len; ++k) {
        xb.push_back(s.inputs[order[start + k]]);
        yb.push_back(s.labels[order[start + k]]);
      }
      nn::zero_grads(params);
      const auto [clean, adv] = step(xb, yb, rng);
      check_finite(clean + adv, epoch, batch_index);
      if (!nn::grads_finite(params))
        throw DivergenceError("non-finite gradient at epoch " + std::to_string(epoch + 1) + ", batch " +
                              std::to_string(batch_index));
      opt.step(params);
      // Loss sums are scaled by the batch size so the epoch mean is per window.
      clean_sum += clean * static_cast<double>(len);
      adv_sum += adv * static_cast<double>(len);
      if (observer) observer(epoch, batch_index, clean, adv);
      ++batch_index;
    }
    ++model.epochs_trained;
    EpochStats st;
    st.clean_loss = clean_sum / static_cast<double>(order.size());
    st.adversarial_loss = adv_sum / static_cast<double>(order.size());
    st.validation_accuracy = validation_accuracy(model, s);
    st.seconds = seconds_since(e0);
    trace.epochs.push_back(st);
  }
  trace.total_seconds = seconds_since(t0);
  return trace;
}

}  // namespace

void PredictorConfig::validate() const {
  if (n_features < 1 || window_len < 1) throw ConfigError("predictor: window shape must be positive");
  if (hidden_size < 1) throw ConfigError("predictor: hidden_size must be positive");
  if (!(dropout_rate >= 0 && dropout_rate < 1)) throw ConfigError("predictor: dropout_rate must lie in [0, 1)");
  if (n_classes < 2) throw ConfigError("predictor: need at least two classes");
  if (epochs < 0) throw ConfigError("predictor: epochs must be non-negative");
  if (!(learning_rate > 0)) throw ConfigError("predictor: learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("predictor: batch_size must be positive");
  if (!(oat_epsilon >= 0)) throw ConfigError("predictor: oat_epsilon must be non-negative");
  if (oat_bim_steps < 1) throw ConfigError("predictor: oat_bim_steps must be positive");
}

nlohmann::json to_json(const PredictorConfig& c) {
  return {{"n_features", c.n_features},
          {"window_len", c.window_len},
          {"hidden_size", c.hidden_size},
          {"dropout_rate", c.dropout_rate},
          {"n_classes", c.n_classes},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"oat_epsilon", c.oat_epsilon},
          {"oat_include_clean", c.oat_include_clean},
          {"oat_bim_steps", c.oat_bim_steps},
          {"seed", c.seed}};
}

PredictorConfig predictor_config_from_json(const nlohmann::json& j) {
  PredictorConfig c;
  c.n_features = j.at("n_features").get<int>();
  c.window_len = j.at("window_len").get<int>();
  c.hidden_size = j.at("hidden_size").get<int>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.n_classes = j.at("n_classes").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.oat_epsilon = j.at("oat_epsilon").get<double>();
  c.oat_include_clean = j.at("oat_include_clean").get<bool>();
  c.oat_bim_steps = j.at("oat_bim_steps").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

PredictorModel::PredictorModel(const PredictorConfig& config) : config_(config) {
  config_.validate();
  Rng rng(derive_seed(config_.seed, "init"));
  forward_gru = nn::GruDirection("gru.forward", config_.n_features, config_.hidden_size, rng);
  backward_gru = nn::GruDirection("gru.backward", config_.n_features, config_.hidden_size, rng);
  head = nn::Dense("head", config_.head_width(), config_.n_classes, rng);
}

PredictorModel init_model(const PredictorConfig& config) { return PredictorModel(config); }

nn::ParamRefs PredictorModel::params() {
  nn::ParamRefs out = forward_gru.params();
  for (nn::Param* p : backward_gru.params()) out.push_back(p);
  out.push_back(&head.weight);
  out.push_back(&head.bias);
  return out;
}

nn::ConstParamRefs PredictorModel::params() const {
  nn::ConstParamRefs out = forward_gru.params();
  for (const nn::Param* p : backward_gru.params()) out.push_back(p);
  out.push_back(&head.weight);
  out.push_back(&head.bias);
  return out;
}

void PredictorModel::check_batch(std::span<const Window> batch) const {
  if (batch.empty()) throw ShapeError("predictor: empty batch");
  for (const Window& w : batch)
    if (w.rows() != config_.window_len || w.cols() != config_.n_features)
      throw ShapeError("predictor: expected " + std::to_string(config_.window_len) + "x" +
                       std::to_string(config_.n_features) + " window, got " + std::to_string(w.rows()) + "x" +
                       std::to_string(w.cols()));
}

Matrix PredictorModel::sample_dropout_mask(Eigen::Index batch, Rng& rng) const {
  const double p = config_.dropout_rate;
  if (p == 0.0) return Matrix::Ones(config_.head_width(), batch);
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(config_.head_width(), batch);
  for (Eigen::Index j = 0; j < batch; ++j)
    for (Eigen::Index i = 0; i < mask.rows(); ++i) mask(i, j) = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  return mask;
}

Matrix PredictorModel::run(std::span<const Window> batch, const Matrix* mask, Cache* cache) const {
  check_batch(batch);
  const Eigen::Index B = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index H = config_.hidden_size;
  Matrix features(2 * H, B);
  features.topRows(H) = forward_gru.forward(pack(batch, false), B, cache ? &cache->fwd : nullptr);
  features.bottomRows(H) = backward_gru.forward(pack(batch, true), B, cache ? &cache->bwd : nullptr);
  Matrix dropped = features;
  if (mask && mask->size() > 0) {
    if (mask->rows() != 2 * H || mask->cols() != B) throw ShapeError("dropout mask shape mismatch");
    dropped = dropped.cwiseProduct(*mask);
  }
  Matrix out = head.forward(dropped);
  if (cache) {
    cache->features = std::move(features);
    cache->dropped = std::move(dropped);
    cache->mask = mask ? *mask : Matrix();
  }
  return out;
}

std::vector<Window> PredictorModel::backprop(const Cache& cache, std::span<const Window> batch, const Matrix& d_logits,
                                             PredictorModel* sink) const {
  const Eigen::Index B = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index H = config_.hidden_size;
  const Eigen::Index T = config_.window_len;
  Matrix d_features = head.backward(cache.dropped, d_logits, sink ? &sink->head : nullptr);
  if (cache.mask.size() > 0) d_features = d_features.cwiseProduct(cache.mask);
  const Matrix d_fwd = forward_gru.backward(cache.fwd, d_features.topRows(H), sink ? &sink->forward_gru : nullptr);
  const Matrix d_bwd = backward_gru.backward(cache.bwd, d_features.bottomRows(H), sink ? &sink->backward_gru : nullptr);
  std::vector<Window> grads(batch.size(), Window(T, config_.n_features));
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index b = 0; b < B; ++b)
      grads[static_cast<std::size_t>(b)].row(t) = (d_fwd.col(t * B + b) + d_bwd.col((T - 1 - t) * B + b)).transpose();
  return grads;
}

ClassScores PredictorModel::forward(const Window& window, Mode mode, Rng* rng) const {
  const std::span<const Window> one(&window, 1);
  Matrix z;
  if (mode == Mode::Train) {
    if (!rng) throw ConfigError("train-mode forward needs a random source for dropout");
    const Matrix mask = sample_dropout_mask(1, *rng);
    z = run(one, &mask, nullptr);
  } else {
    z = run(one, nullptr, nullptr);
  }
  ClassScores s;
  s.logits = z.col(0);
  s.scores = s.logits.unaryExpr([](double v) { return sigmoid(v); });
  Eigen::Index best = 0;
  s.logits.maxCoeff(&best);
  s.predicted = static_cast<int>(best);
  return s;
}

Matrix PredictorModel::logits(std::span<const Window> batch) const { return run(batch, nullptr, nullptr); }

std::vector<Window> PredictorModel::input_gradient(std::span<const Window> batch, const LogitGradient& upstream) const {
  Cache cache;
  const Matrix z = run(batch, nullptr, &cache);
  const Matrix dz = upstream(z);
  if (dz.rows() != z.rows() || dz.cols() != z.cols()) throw ShapeError("upstream gradient shape mismatch");
  return backprop(cache, batch, dz, nullptr);
}

Vector PredictorModel::accumulate_gradients(std::span<const Window> batch, std::span<const int> labels,
                                            std::span<const double> weights, const Matrix& dropout_mask) {
  Cache cache;
  const Matrix z = run(batch, &dropout_mask, &cache);
  Matrix dz;
  const Vector losses = nn::softmax_cross_entropy(z, labels, &dz, weights);
  backprop(cache, batch, dz, this);
  return losses;
}

TrainingTrace train_standard(PredictorModel& model, const dataset::DatasetSplit& split, Task task,
                             const BatchObserver& observer) {
  const TrainSetup s = prepare(model, split, task);
  return train_loop(
      model, s,
      [&](const std::vector<Window>& xb, const std::vector<int>& yb, Rng& rng) {
        const auto B = static_cast<Eigen::Index>(xb.size());
        const std::vector<double> w(xb.size(), 1.0 / static_cast<double>(B));
        const Vector losses = model.accumulate_gradients(xb, yb, w, model.sample_dropout_mask(B, rng));
        return std::pair{losses.mean(), 0.0};
      },
      observer, false);
}

OatBatchLoss oat_accumulate(PredictorModel& model, std::span<const Window> batch, std::span<const int> labels,
                            Rng& rng) {
  const PredictorConfig& cfg = model.config();
  const double eps = cfg.oat_epsilon;
  // Adversaries see the current parameters in eval mode.
  std::vector<Window> adv_fgsm = attacks::fgsm_perturb(model, batch, labels, eps);
  std::vector<Window> adv_bim = attacks::bim_perturb(model, batch, labels, eps, eps / 4.0, cfg.oat_bim_steps);

  const std::size_t B = batch.size();
  const int parts = cfg.oat_include_clean ? 3 : 2;
  std::vector<Window> xs;
  std::vector<int> ys;
  xs.reserve(B * parts);
  ys.reserve(B * parts);
  if (cfg.oat_include_clean) xs.insert(xs.end(), batch.begin(), batch.end());
  xs.insert(xs.end(), std::make_move_iterator(adv_fgsm.begin()), std::make_move_iterator(adv_fgsm.end()));
  xs.insert(xs.end(), std::make_move_iterator(adv_bim.begin()), std::make_move_iterator(adv_bim.end()));
  for (int p = 0; p < parts; ++p) ys.insert(ys.end(), labels.begin(), labels.end());

  // One dropout mask per batch, shared by the clean and adversarial copies.
  const Matrix mask = model.sample_dropout_mask(static_cast<Eigen::Index>(B), rng);
  Matrix tiled(mask.rows(), mask.cols() * parts);
  for (int p = 0; p < parts; ++p) tiled.middleCols(p * mask.cols(), mask.cols()) = mask;

  const std::vector<double> w(xs.size(), 1.0 / static_cast<double>(B));
  const Vector losses = model.accumulate_gradients(xs, ys, w, tiled);
  OatBatchLoss out;
  const auto Bi = static_cast<Eigen::Index>(B);
  int part = 0;
  if (cfg.oat_include_clean) out.clean = losses.segment(Bi * part++, Bi).mean();
  out.fgsm = losses.segment(Bi * part++, Bi).mean();
  out.bim = losses.segment(Bi * part, Bi).mean();
  return out;
}

TrainingTrace train_online_adversarial(PredictorModel& model, const dataset::DatasetSplit& split, Task task,
                                       const BatchObserver& observer) {
  const TrainSetup s = prepare(model, split, task);
  return train_loop(
      model, s,
      [&](const std::vector<Window>& xb, const std::vector<int>& yb, Rng& rng) {
        const OatBatchLoss l = oat_accumulate(model, xb, yb, rng);
        return std::pair{l.clean, l.fgsm + l.bim};
      },
      observer, true);
}

double evaluate_accuracy(const PredictorModel& model, std::span<const dataset::GridWindow> windows, Task task) {
  if (windows.empty()) throw DataError("evaluate_accuracy: empty window list");
  return accuracy(model, dataset::window_data(windows), dataset::labels(windows, task));
}

void save_checkpoint(const PredictorModel& model, const std::filesystem::path& stem,
                     const std::string& dataset_fingerprint) {
  if (stem.has_parent_path()) io::ensure_directory(stem.parent_path());
  io::write_matrices(stem.string() + ".bin", nn::snapshot(model.params()));
  io::write_json(stem.string() + ".json", {{"format", "faultguard-predictor/1"},
                                           {"config", to_json(model.config())},
                                           {"seed", model.config().seed},
                                           {"epochs_trained", model.epochs_trained},
                                           {"dataset_fingerprint", dataset_fingerprint}});
}

PredictorModel load_checkpoint(const std::filesystem::path& stem, const std::optional<PredictorConfig>& expected) {
  const io::json meta = io::read_json(stem.string() + ".json");
  const PredictorConfig cfg = predictor_config_from_json(meta.at("config"));
  if (expected && to_json(*expected) != to_json(cfg))
    throw ConfigError("checkpoint " + stem.string() + " was trained with a different predictor configuration");
  PredictorModel model(cfg);
  nn::restore(model.params(), io::read_matrices(stem.string() + ".bin"));
  model.epochs_trained = meta.at("epochs_trained").get<int>();
  return model;
}

}  // namespace faultguard::predictor
