#include "faultguard/ads.hpp"

#include "faultguard/attacks.hpp"
#include "faultguard/io.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

namespace faultguard::ads {

namespace {

using Clock = std::chrono::steady_clock;

}  // namespace

void AdsConfig::validate() const {
  if (epochs < 0) throw ConfigError("ads: epochs must be non-negative");
  if (!(learning_rate > 0)) throw ConfigError("ads: learning_rate must be positive");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1)) throw ConfigError("ads: adam_beta1 must lie in [0, 1)");
  if (!(threshold > 0 && threshold < 1)) throw ConfigError("ads: threshold must lie in (0, 1)");
  if (adversarial_learning && !(al_epsilon > 0))
    throw ConfigError("ads: al_epsilon must be positive when adversarial learning is on");
  if (al_bim_steps < 1) throw ConfigError("ads: al_bim_steps must be positive");
  if (latent_dim < 1) throw ConfigError("ads: latent_dim must be positive");
  if (batch_size < 1) throw ConfigError("ads: batch_size must be positive");
}

nlohmann::json to_json(const AdsConfig& c) {
  return {{"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"adam_beta1", c.adam_beta1},
          {"adversarial_learning", c.adversarial_learning},
          {"al_epsilon", c.al_epsilon},
          {"al_bim_steps", c.al_bim_steps},
          {"threshold", c.threshold},
          {"task", to_string(c.task)},
          {"seed", c.seed},
          {"latent_dim", c.latent_dim},
          {"batch_size", c.batch_size}};
}

AdsConfig ads_config_from_json(const nlohmann::json& j) {
  AdsConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.adam_beta1 = j.at("adam_beta1").get<double>();
  c.adversarial_learning = j.at("adversarial_learning").get<bool>();
  c.al_epsilon = j.at("al_epsilon").get<double>();
  c.al_bim_steps = j.at("al_bim_steps").get<int>();
  c.threshold = j.at("threshold").get<double>();
  c.task = parse_task(j.at("task").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  return c;
}

std::string model_fingerprint(const predictor::PredictorModel& model) {
  Fingerprint fp;
  fp.update(predictor::to_json(model.config()).dump());
  for (const nn::Param* p : model.params()) fp.update(p->value);
  return fp.hex();
}

AdsModel train_ads(std::span<const dataset::GridWindow> train_windows, const predictor::PredictorModel& predictor,
                   const AdsConfig& config, const AdsObserver& observer) {
  config.validate();
  if (train_windows.empty()) throw DataError("train_ads: empty training set");
  if (predictor.n_classes() != num_classes(config.task))
    throw ConfigError("train_ads: predictor has " + std::to_string(predictor.n_classes()) + " classes but task '" +
                      to_string(config.task) + "' has " + std::to_string(num_classes(config.task)));

  const auto t0 = Clock::now();
  Rng init_rng(derive_seed(config.seed, "ads-init"));
  AdsModel m{GeneratorNet(config.latent_dim, init_rng), DiscriminatorNet(init_rng), config, {},
             model_fingerprint(predictor)};
  nn::Adam g_opt(config.learning_rate, config.adam_beta1, 0.999);
  nn::Adam d_opt(config.learning_rate, config.adam_beta1, 0.999);
  Rng rng(derive_seed(config.seed, "ads-train"));

  const std::vector<Window> windows = dataset::window_data(train_windows);
  const std::vector<int> labels = dataset::labels(train_windows, config.task);
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const double eps = config.al_epsilon;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto e0 = Clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    AdsEpoch st;
    long batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), order.size() - start);
      std::vector<Window> xb;
      std::vector<int> yb;
      for (std::size_t k = 0; k < len; ++k) {
        xb.push_back(windows[order[start + k]]);
        yb.push_back(labels[order[start + k]]);
      }
      const Matrix real = unroll_records(xb);
      const Eigen::Index n = real.cols();

      // 1: real records labeled real.
      st.real_loss += discriminator_step(m.discriminator, d_opt, real, 1.0);
      ++st.discriminator_updates;
      // 2-3: generated records labeled fake.
      const Matrix fakes = m.generator.generate(m.generator.sample_latent(n, rng));
      st.fake_loss += discriminator_step(m.discriminator, d_opt, fakes, 0.0);
      ++st.discriminator_updates;
      // 4-5: FGSM and BIM records crafted through the predictor, one step labeled fake.
      if (config.adversarial_learning) {
        std::vector<Window> adv = attacks::fgsm_perturb(predictor, xb, yb, eps);
        for (Window& w : attacks::bim_perturb(predictor, xb, yb, eps, eps / 4.0, config.al_bim_steps))
          adv.push_back(std::move(w));
        st.adversarial_loss += discriminator_step(m.discriminator, d_opt, unroll_records(adv), 0.0);
        ++st.discriminator_updates;
      }
      // 6-7: fresh fakes, generator update through the discriminator.
      const GeneratorStep g = generator_step(m.generator, g_opt, m.discriminator, m.generator.sample_latent(n, rng));
      st.generator_loss += g.loss;
      st.mean_fake_score += g.mean_fake_score;
      ++st.generator_updates;
      st.mean_real_score += m.discriminator.score_records(real).mean();
      ++batches;
    }
    const double nb = static_cast<double>(batches);
    st.real_loss /= nb;
    st.fake_loss /= nb;
    st.adversarial_loss /= nb;
    st.generator_loss /= nb;
    st.mean_fake_score /= nb;
    st.mean_real_score /= nb;
    st.seconds = std::chrono::duration<double>(Clock::now() - e0).count();
    m.trace.epochs.push_back(st);
    if (observer) observer(epoch, m);
  }
  m.trace.total_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return m;
}

DetectionVerdict score(const DiscriminatorNet& disc, const Window& window, double threshold) {
  if (window.rows() < 1 || window.cols() != kNumFeatures)
    throw ShapeError("score: expected a window with 51 feature columns, got " + std::to_string(window.rows()) + "x" +
                     std::to_string(window.cols()));
  DetectionVerdict v;
  v.per_record_scores = disc.score_records(window.transpose());
  v.window_score = v.per_record_scores.mean();
  v.is_legitimate = v.window_score >= threshold;
  return v;
}

std::vector<bool> legitimate_mask(const DiscriminatorNet& disc, std::span<const Window> stream, double threshold) {
  std::vector<bool> out;
  out.reserve(stream.size());
  for (const Window& w : stream) out.push_back(score(disc, w, threshold).is_legitimate);
  return out;
}

GateResult gate(const DiscriminatorNet& disc, std::span<const Window> stream, double threshold) {
  GateResult r;
  const std::vector<bool> ok = legitimate_mask(disc, stream, threshold);
  for (std::size_t i = 0; i < stream.size(); ++i) {
    if (ok[i]) {
      r.passed.push_back(stream[i]);
      r.passed_index.push_back(i);
    } else {
      r.rejected.push_back(stream[i]);
      r.rejected_index.push_back(i);
    }
  }
  return r;
}

std::vector<AdsEvaluation> evaluate_ads(const DiscriminatorNet& disc, std::span<const Window> real_test,
                                        std::span<const MaliciousSet> malicious_sets, double threshold) {
  if (real_test.empty()) throw DataError("evaluate_ads: empty real test set");
  const std::vector<bool> real_ok = legitimate_mask(disc, real_test, threshold);
  const auto real_pass = static_cast<std::size_t>(std::count(real_ok.begin(), real_ok.end(), true));
  std::vector<AdsEvaluation> out;
  for (const MaliciousSet& set : malicious_sets) {
    if (set.windows.empty()) throw DataError("evaluate_ads: empty malicious set '" + set.source + "'");
    const std::vector<bool> ok = legitimate_mask(disc, set.windows, threshold);
    const auto rejected = static_cast<std::size_t>(std::count(ok.begin(), ok.end(), false));
    AdsEvaluation e;
    e.source = set.source;
    e.n_real = real_test.size();
    e.n_malicious = set.windows.size();
    e.real_pass_rate = static_cast<double>(real_pass) / static_cast<double>(e.n_real);
    e.malicious_reject_rate = static_cast<double>(rejected) / static_cast<double>(e.n_malicious);
    e.accuracy = static_cast<double>(real_pass + rejected) / static_cast<double>(e.n_real + e.n_malicious);
    out.push_back(e);
  }
  return out;
}

void save_ads(const AdsModel& model, const std::filesystem::path& stem) {
  if (stem.has_parent_path()) io::ensure_directory(stem.parent_path());
  std::vector<Matrix> blob = nn::snapshot(model.generator.net.params());
  for (Matrix& m : nn::snapshot(model.discriminator.net.params())) blob.push_back(std::move(m));
  io::write_matrices(stem.string() + ".bin", blob);
  io::write_json(stem.string() + ".json", {{"format", "faultguard-ads/1"},
                                           {"config", to_json(model.config)},
                                           {"seed", model.config.seed},
                                           {"epochs_trained", model.trace.epochs.size()},
                                           {"predictor_fingerprint", model.predictor_fingerprint}});
}

AdsModel load_ads(const std::filesystem::path& stem) {
  const io::json meta = io::read_json(stem.string() + ".json");
  AdsModel m;
  m.config = ads_config_from_json(meta.at("config"));
  m.predictor_fingerprint = meta.at("predictor_fingerprint").get<std::string>();
  Rng rng(0);
  m.generator = GeneratorNet(m.config.latent_dim, rng);
  m.discriminator = DiscriminatorNet(rng);
  std::vector<Matrix> blob = io::read_matrices(stem.string() + ".bin");
  const nn::ParamRefs g = m.generator.net.params();
  const nn::ParamRefs d = m.discriminator.net.params();
  if (blob.size() != g.size() + d.size()) throw DataError("ads checkpoint " + stem.string() + " has wrong layout");
  const auto split = blob.begin() + static_cast<std::ptrdiff_t>(g.size());
  nn::restore(g, std::vector<Matrix>(blob.begin(), split));
  nn::restore(d, std::vector<Matrix>(split, blob.end()));
  return m;
}

}  // namespace faultguard::ads
