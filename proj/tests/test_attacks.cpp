#include "faultguard/attacks.hpp"
#include "faultguard/predictor.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace faultguard;
using namespace faultguard::attacks;

namespace {

double linf(const Window& a, const Window& b) { return (a - b).cwiseAbs().maxCoeff(); }

predictor::PredictorModel small_model(int window = 4, int features = kNumFeatures) {
  predictor::PredictorConfig c;
  c.n_features = features;
  c.window_len = window;
  c.hidden_size = 6;
  c.n_classes = 3;
  c.dropout_rate = 0.0;
  c.seed = 17;
  return predictor::PredictorModel(c);
}

std::vector<int> labels_for(std::size_t n, int classes) {
  std::vector<int> y;
  for (std::size_t i = 0; i < n; ++i) y.push_back(static_cast<int>(i) % classes);
  return y;
}

}  // namespace

TEST(Fgsm, MonotoneSurrogateMovesUpByEpsilon) {
  const auto m = fgtest::monotone_surrogate(2, 3);
  std::mt19937_64 rng(1);
  const std::vector<Window> x{fgtest::random_window(rng, 2, 3, 0.0, 0.7)};
  const AdversarialBatch b = fgsm(m, x, std::vector<int>{0}, 0.2);
  const Window expect = (x[0].array() + 0.2).min(1.0).matrix();
  EXPECT_LT(linf(b.perturbed[0], expect), 1e-15);
}

TEST(Bim, MonotoneSurrogateSaturatesAtEpsilon) {
  const auto m = fgtest::monotone_surrogate(2, 3);
  std::mt19937_64 rng(2);
  const std::vector<Window> x{fgtest::random_window(rng, 2, 3, 0.0, 0.9)};
  const AdversarialBatch b = bim(m, x, std::vector<int>{0}, 0.2, 0.02, 10);
  const Window expect = (x[0].array() + 0.2).min(1.0).matrix();
  EXPECT_LT(linf(b.perturbed[0], expect), 1e-12);
}

TEST(Attacks, ZeroGradientLeavesInputUnchanged) {
  const fgtest::LinearClassifier flat({Window::Zero(2, 2), Window::Zero(2, 2)}, {0, 0});
  std::mt19937_64 rng(3);
  const std::vector<Window> x{fgtest::random_window(rng, 2, 2)};
  EXPECT_EQ(fgsm(flat, x, std::vector<int>{1}, 0.3).perturbed[0], x[0]);
}

TEST(Attacks, ProjectWidensBoxForOutOfRangeInputs) {
  Window x(1, 2), v(1, 2);
  x << 1.5, -0.2;
  v << 1.9, -0.5;
  project(v, x, 0.2, DataBox{});
  EXPECT_DOUBLE_EQ(v(0, 0), 1.5);
  EXPECT_DOUBLE_EQ(v(0, 1), -0.2);
}

class BudgetInvariant : public ::testing::TestWithParam<double> {};

TEST_P(BudgetInvariant, LinfAndBoxHoldForEveryKind) {
  const double eps = GetParam();
  const auto m = small_model();
  std::mt19937_64 rng(4);
  const auto x = fgtest::random_windows(rng, 40, 4);
  const auto y = labels_for(x.size(), 3);
  for (AttackKind k : {AttackKind::FGSM, AttackKind::BIM, AttackKind::RFGSM, AttackKind::PGD}) {
    const AdversarialBatch b = run_attack(m, x, y, AttackSpec::defaults(k, eps, 9));
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_LE(linf(b.perturbed[i], x[i]), eps + 1e-6) << to_string(k);
      EXPECT_GE(b.perturbed[i].minCoeff(), 0.0);
      EXPECT_LE(b.perturbed[i].maxCoeff(), 1.0);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Grid, BudgetInvariant, ::testing::Values(0.05, 0.2, 0.5));

TEST(Attacks, ZeroEpsilonIsIdentity) {
  const auto m = small_model();
  std::mt19937_64 rng(5);
  const auto x = fgtest::random_windows(rng, 5, 4);
  const auto y = labels_for(x.size(), 3);
  for (AttackKind k : {AttackKind::FGSM, AttackKind::BIM, AttackKind::RFGSM, AttackKind::PGD}) {
    const AdversarialBatch b = run_attack(m, x, y, AttackSpec::defaults(k, 0.0, 1));
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LE(linf(b.perturbed[i], x[i]), 1e-9) << to_string(k);
  }
}

TEST(Attacks, OneStepBimIsFgsmAndDeterministicPgdIsBim) {
  const auto m = small_model();
  std::mt19937_64 rng(6);
  const auto x = fgtest::random_windows(rng, 6, 4);
  const auto y = labels_for(x.size(), 3);
  const auto f = fgsm(m, x, y, 0.1);
  const auto b1 = bim(m, x, y, 0.1, 0.1, 1);
  const auto b = bim(m, x, y, 0.1, 0.025, 10);
  const auto p = pgd(m, x, y, 0.1, 0.025, 10, false, {}, 77);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(f.perturbed[i], b1.perturbed[i]);
    EXPECT_EQ(b.perturbed[i], p.perturbed[i]);
  }
}

TEST(Attacks, FgsmIncreasesLossOnTrainedDirection) {
  const auto m = small_model();
  std::mt19937_64 rng(7);
  const auto x = fgtest::random_windows(rng, 10, 4);
  const auto y = labels_for(x.size(), 3);
  const auto adv = fgsm(m, x, y, 0.01);
  EXPECT_GT(nn::softmax_cross_entropy(m.logits(adv.perturbed), y).sum(), nn::softmax_cross_entropy(m.logits(x), y).sum());
}

TEST(Attacks, SeededRandomKindsAreReproducible) {
  const auto m = small_model();
  std::mt19937_64 rng(8);
  const auto x = fgtest::random_windows(rng, 3, 4);
  const auto y = labels_for(x.size(), 3);
  for (AttackKind k : {AttackKind::RFGSM, AttackKind::PGD}) {
    const auto a = run_attack(m, x, y, AttackSpec::defaults(k, 0.2, 5));
    const auto b = run_attack(m, x, y, AttackSpec::defaults(k, 0.2, 5));
    const auto c = run_attack(m, x, y, AttackSpec::defaults(k, 0.2, 6));
    EXPECT_EQ(a.perturbed[0], b.perturbed[0]);
    EXPECT_NE(a.perturbed[0], c.perturbed[0]);
  }
}

TEST(Cw, StaysInBoxAndFlipsLinearModel) {
  // Two classes separated by the plane sum(x) = 6 on a 2x6 window.
  const fgtest::LinearClassifier m({Window::Zero(2, 6), Window::Constant(2, 6, 1.0)}, {0.0, -6.0});
  std::vector<Window> x{Window::Constant(2, 6, 0.55)};
  const auto b = cw(m, x, std::vector<int>{1}, 5.0, 0.0, 0.05, 200);
  EXPECT_GE(b.perturbed[0].minCoeff(), 0.0);
  EXPECT_LE(b.perturbed[0].maxCoeff(), 1.0);
  EXPECT_TRUE(b.success_mask[0]);
  EXPECT_LT(b.perturbed[0].sum(), 6.0 + 1e-9);
  EXPECT_LT(linf(b.perturbed[0], x[0]), 0.2);
}

TEST(Attacks, SuccessMaskAgreesWithPredictions) {
  const auto m = small_model();
  std::mt19937_64 rng(9);
  const auto x = fgtest::random_windows(rng, 12, 4);
  const auto y = labels_for(x.size(), 3);
  const auto b = fgsm(m, x, y, 0.5);
  const auto pred = m.predict(b.perturbed);
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(b.success_mask[i], pred[i] != y[i]);
    n += pred[i] != y[i];
  }
  EXPECT_EQ(b.success_count(), n);
}

TEST(Attacks, InvalidSpecAndShapes) {
  AttackSpec s = AttackSpec::defaults(AttackKind::BIM, -0.1);
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_THROW(parse_attack_kind("deepfool"), ConfigError);
  const auto m = small_model();
  std::mt19937_64 rng(10);
  const auto x = fgtest::random_windows(rng, 2, 4);
  EXPECT_THROW(fgsm(m, x, std::vector<int>{0}, 0.1), Error);
}

TEST(Attacks, SpecJsonRoundTrip) {
  for (AttackKind k : kAllAttacks) {
    const AttackSpec s = AttackSpec::defaults(k, 0.35, 42);
    EXPECT_EQ(parse_attack_kind(to_string(k)), k);
    const AttackSpec back = attack_spec_from_json(to_json(s));
    EXPECT_EQ(to_json(back), to_json(s));
  }
}

TEST(Attacks, SaveLoadReplay) {
  const auto dir = fgtest::temp_dir("attack_io");
  const auto m = small_model();
  std::mt19937_64 rng(11);
  const auto x = fgtest::random_windows(rng, 4, 4);
  const auto y = labels_for(x.size(), 3);
  const auto b = run_attack(m, x, y, AttackSpec::defaults(AttackKind::PGD, 0.2, 3));
  save_adversarial_batch(b, dir / "pgd");
  const auto back = load_adversarial_batch(dir / "pgd");
  ASSERT_EQ(back.perturbed.size(), 4u);
  EXPECT_EQ(back.perturbed[2], b.perturbed[2]);
  EXPECT_EQ(back.labels, b.labels);
  EXPECT_EQ(back.success_mask, b.success_mask);
  EXPECT_TRUE(replay_matches(m, back));
  auto tampered = back;
  tampered.perturbed[0](0, 0) += 1e-3;
  EXPECT_FALSE(replay_matches(m, tampered));
}

TEST(Asr, HandConstructedMultisets) {
  const std::vector<int> nine_of_eleven{0, 1, 2, 3, 4, 5, 6, 7, 8, 8, 0, 3};
  EXPECT_DOUBLE_EQ(asr_from_predictions(nine_of_eleven, 11), 9.0 / 11.0);
  EXPECT_NEAR(asr_from_predictions(nine_of_eleven, 11), 0.818, 5e-4);
  const std::vector<int> three_of_four{2, 0, 0, 1, 2};
  EXPECT_DOUBLE_EQ(asr_from_predictions(three_of_four, 4), 0.75);
  EXPECT_THROW(asr_from_predictions(std::vector<int>{}, 4), DataError);
}

TEST(Graybox, TrainGenerateAndPersist) {
  const auto dir = fgtest::temp_dir("graybox");
  const auto split = dataset::synth_dataset(4, 40, 3.0, 1);
  GrayboxConfig c;
  c.epochs = 2;
  c.batch_size = 64;
  c.seed = 4;
  const GrayboxAttacker g = train_graybox_generator(split.train, c);
  EXPECT_EQ(g.fake_score_trace.size(), 2u);
  const GeneratedData d = generate_graybox(g, 5, 16, 9, 16);
  EXPECT_EQ(d.records.rows(), kNumFeatures);
  EXPECT_EQ(d.records.cols(), 80);
  ASSERT_EQ(d.windows.size(), 5u);
  EXPECT_EQ(d.windows[1].row(0).transpose(), d.records.col(16));
  save_graybox(g, dir / "g");
  const GrayboxAttacker back = load_graybox(dir / "g");
  EXPECT_EQ(generate_graybox(back, 5, 16, 9, 16).records, d.records);
  const GrayboxAttacker again = train_graybox_generator(split.train, c);
  EXPECT_EQ(generate_graybox(again, 5, 16, 9, 16).records, d.records);
}
