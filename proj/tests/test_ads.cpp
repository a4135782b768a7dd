#include "faultguard/ads.hpp"
#include "faultguard/predictor.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace faultguard;
using namespace faultguard::ads;

namespace {

// Output layer zeroed: every record scores sigmoid(bias).
DiscriminatorNet constant_disc(double bias) {
  Rng rng(1);
  DiscriminatorNet d(rng);
  const nn::ParamRefs ps = d.net.params();
  ps[ps.size() - 2]->value.setZero();
  ps.back()->value.setConstant(bias);
  return d;
}

// Scores a record by the sign of its first feature minus 0.5: real windows
// live below 0.5 there.
DiscriminatorNet first_feature_disc() {
  Rng rng(1);
  DiscriminatorNet d(rng);
  const nn::ParamRefs ps = d.net.params();
  for (nn::Param* p : ps) p->value.setZero();
  // 51 -> 512 -> 256 -> 128 -> 64 -> 1, leaky rectifier hidden units
  ps[0]->value(0, 0) = -1.0;
  ps[1]->value(0, 0) = 0.5;
  for (std::size_t l = 2; l + 2 < ps.size(); l += 2) ps[l]->value(0, 0) = 1.0;
  ps[ps.size() - 2]->value(0, 0) = 100.0;
  return d;
}

predictor::PredictorModel zone_model(std::uint64_t seed = 2) {
  predictor::PredictorConfig c;
  c.hidden_size = 6;
  c.n_classes = 4;
  c.epochs = 1;
  c.batch_size = 16;
  c.seed = seed;
  return predictor::PredictorModel(c);
}

AdsConfig quick(bool al) {
  AdsConfig c;
  c.epochs = 2;
  c.batch_size = 8;
  c.adversarial_learning = al;
  c.al_bim_steps = 2;
  c.task = Task::FaultZone;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(Score, MeanOfRecordScores) {
  const auto d = constant_disc(std::log(0.9 / 0.1));
  const DetectionVerdict v = score(d, Window::Constant(16, kNumFeatures, 0.3));
  EXPECT_NEAR(v.window_score, 0.9, 1e-12);
  EXPECT_TRUE(v.is_legitimate);
  ASSERT_EQ(v.per_record_scores.size(), 16);
  EXPECT_FALSE(score(constant_disc(std::log(0.1 / 0.9)), Window::Zero(16, kNumFeatures)).is_legitimate);
}

TEST(Score, ExactThresholdIsLegitimate) {
  const auto d = constant_disc(0.0);
  const DetectionVerdict v = score(d, Window::Zero(4, kNumFeatures));
  EXPECT_EQ(v.window_score, 0.5);
  EXPECT_TRUE(v.is_legitimate);
}

TEST(Score, ShapeMismatch) {
  const auto d = constant_disc(0.0);
  EXPECT_THROW(score(d, Window::Zero(16, 50)), ShapeError);
}

TEST(Score, RangeAndThresholdMonotonicity) {
  Rng rng(2);
  DiscriminatorNet d(rng);
  std::mt19937_64 g(3);
  for (int i = 0; i < 20; ++i) {
    const Window w = fgtest::random_window(g, 4, kNumFeatures, -3, 3);
    const Vector s = d.score_records(w.transpose());
    EXPECT_GT(s.minCoeff(), 0.0);
    EXPECT_LT(s.maxCoeff(), 1.0);
    bool was_anomalous = false;
    for (double t : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      const bool ok = score(d, w, t).is_legitimate;
      EXPECT_EQ(ok, score(d, w, t).window_score >= t);
      if (was_anomalous) EXPECT_FALSE(ok);
      was_anomalous = was_anomalous || !ok;
    }
  }
}

TEST(Gate, PartitionsStream) {
  const auto d = first_feature_disc();
  EXPECT_TRUE(gate(d, std::vector<Window>{}).passed.empty());
  std::vector<Window> stream;
  for (int i = 0; i < 6; ++i) stream.push_back(Window::Constant(4, kNumFeatures, i % 2 ? 0.9 : 0.1));
  const GateResult r = gate(d, stream);
  EXPECT_EQ(r.passed_index, (std::vector<std::size_t>{0, 2, 4}));
  EXPECT_EQ(r.rejected_index, (std::vector<std::size_t>{1, 3, 5}));
  EXPECT_EQ(r.passed.size() + r.rejected.size(), stream.size());
}

TEST(EvaluateAds, PerfectAndMergedAccuracy) {
  const auto d = first_feature_disc();
  const std::vector<Window> real(10, Window::Constant(4, kNumFeatures, 0.1));
  const std::vector<MaliciousSet> sets{{"fgsm", std::vector<Window>(6, Window::Constant(4, kNumFeatures, 0.9))},
                                       {"mixed", {Window::Constant(4, kNumFeatures, 0.9), real[0]}}};
  const auto ev = evaluate_ads(d, real, sets);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0].accuracy, 1.0);
  EXPECT_EQ(ev[0].source, "fgsm");
  EXPECT_DOUBLE_EQ(ev[1].accuracy, 11.0 / 12.0);
  EXPECT_EQ(ev[1].malicious_reject_rate, 0.5);
  EXPECT_THROW(evaluate_ads(d, {}, sets), DataError);
  EXPECT_THROW(evaluate_ads(d, real, std::vector<MaliciousSet>{{"x", {}}}), DataError);
}

TEST(TrainAds, StepCountsAndDeterminism) {
  const auto split = dataset::synth_dataset(4, 40, 3.0, 1);
  const auto p = zone_model();
  const AdsModel with = train_ads(split.train, p, quick(true));
  const AdsModel without = train_ads(split.train, p, quick(false));
  const long batches = static_cast<long>((split.train.size() + 7) / 8);
  ASSERT_EQ(with.trace.epochs.size(), 2u);
  for (int e = 0; e < 2; ++e) {
    EXPECT_EQ(with.trace.epochs[e].generator_updates, batches);
    EXPECT_EQ(without.trace.epochs[e].generator_updates, batches);
    EXPECT_EQ(with.trace.epochs[e].discriminator_updates, 3 * batches);
    EXPECT_EQ(without.trace.epochs[e].discriminator_updates, 2 * batches);
    EXPECT_GT(with.trace.epochs[e].adversarial_loss, 0.0);
    EXPECT_EQ(without.trace.epochs[e].adversarial_loss, 0.0);
  }
  const AdsModel again = train_ads(split.train, p, quick(true));
  const auto a = std::as_const(with.discriminator.net).params();
  const auto b = std::as_const(again.discriminator.net).params();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value);
  EXPECT_EQ(with.trace.epochs[1].real_loss, again.trace.epochs[1].real_loss);
  EXPECT_EQ(with.predictor_fingerprint, model_fingerprint(p));
}

TEST(TrainAds, ObserverSeesEveryEpoch) {
  const auto split = dataset::synth_dataset(4, 40, 3.0, 1);
  const auto p = zone_model();
  std::vector<int> seen;
  train_ads(split.train, p, quick(false), [&](int e, const AdsModel& m) {
    seen.push_back(e);
    EXPECT_EQ(m.trace.epochs.size(), static_cast<std::size_t>(e + 1));
  });
  EXPECT_EQ(seen, (std::vector<int>{0, 1}));
}

TEST(TrainAds, Errors) {
  const auto split = dataset::synth_dataset(4, 40, 3.0, 1);
  const auto p = zone_model();
  AdsConfig c = quick(true);
  c.task = Task::FaultType;
  EXPECT_THROW(train_ads(split.train, p, c), ConfigError);
  c = quick(true);
  c.al_epsilon = 0.0;
  EXPECT_THROW(train_ads(split.train, p, c), ConfigError);
  c = quick(true);
  c.threshold = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(train_ads({}, p, quick(false)), DataError);
}

TEST(AdsIo, RoundTrip) {
  const auto dir = fgtest::temp_dir("ads_io");
  const auto split = dataset::synth_dataset(4, 40, 3.0, 1);
  const auto p = zone_model();
  AdsConfig c = quick(false);
  c.epochs = 1;
  const AdsModel m = train_ads(split.train, p, c);
  save_ads(m, dir / "ads");
  const AdsModel back = load_ads(dir / "ads");
  const auto x = dataset::window_data(split.test);
  for (const Window& w : x) EXPECT_EQ(score(back.discriminator, w).window_score, score(m.discriminator, w).window_score);
  EXPECT_EQ(back.predictor_fingerprint, m.predictor_fingerprint);
  EXPECT_EQ(to_json(back.config), to_json(m.config));
}
