#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "birr/errors.hpp"
#include "birr/image.hpp"
#include "birr/io.hpp"
#include "birr/trainer.hpp"
#include "birr/weights_io.hpp"

namespace birr {
namespace {

namespace fs = std::filesystem;

ModelConfig tiny() {
  ModelConfig c;
  c.width_multiplier = 0.25;
  c.input_resolution = 32;
  return c;
}

Tensor probs_row(std::vector<float> p) {
  const Shape shape{1, 1, 1, p.size()};
  return Tensor(shape, std::move(p));
}

TEST(CrossEntropy, PerfectPredictionIsNearZero) {
  const std::vector<int> y{2};
  EXPECT_LE(cross_entropy(probs_row({0, 0, 1, 0, 0, 0}), y), 1e-6);
}

TEST(CrossEntropy, UniformIsLn6) {
  const std::vector<int> y{0, 3, 5};
  Tensor p(Shape{3, 1, 1, 6}, 1.0f / 6.0f);
  EXPECT_NEAR(cross_entropy(p, y), 1.791759, 1e-5);
  EXPECT_NEAR(cross_entropy(kernels::softmax(Tensor(Shape{3, 1, 1, 6}, 4.2f)), y), std::log(6.0), 1e-5);
}

TEST(CrossEntropy, MatchesPerSampleLoop) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor logits(Shape{7, 1, 1, 6});
    for (auto& v : logits.values()) v = static_cast<float>(uniform(rng, -3, 3));
    const Tensor p = kernels::softmax(logits);
    std::vector<int> y(7);
    for (auto& v : y) v = static_cast<int>(uniform_index(rng, 6));
    double oracle = 0;
    for (std::size_t n = 0; n < 7; ++n) oracle += -std::log(static_cast<double>(p.at(n, 0, 0, y[n])));
    EXPECT_NEAR(cross_entropy(p, y), oracle / 7, 1e-6);
  }
}

TEST(CrossEntropy, ClampsZeroProbability) {
  const std::vector<int> y{1};
  EXPECT_NEAR(cross_entropy(probs_row({1, 0, 0, 0, 0, 0}), y), -std::log(1e-12), 1e-6);
}

TEST(CrossEntropy, LabelOutOfRange) {
  const std::vector<int> y{6};
  EXPECT_THROW(cross_entropy(probs_row({1, 0, 0, 0, 0, 0}), y), ConfigError);
  const std::vector<int> neg{-1};
  EXPECT_THROW(cross_entropy(probs_row({1, 0, 0, 0, 0, 0}), neg), ConfigError);
}

TEST(LogitGrad, ConfidentCorrectIsNearZero) {
  const std::vector<int> y{4};
  const Tensor g = cross_entropy_logit_grad(kernels::softmax(probs_row({0, 0, 0, 0, 30, 0})), y);
  for (float v : g.values()) EXPECT_LT(std::abs(v), 1e-6);
}

TEST(LogitGrad, UniformPredictionIsPMinusY) {
  const std::vector<int> y{2};
  const Tensor g = cross_entropy_logit_grad(Tensor(Shape{1, 1, 1, 6}, 1.0f / 6.0f), y);
  for (std::size_t c = 0; c < 6; ++c) {
    EXPECT_NEAR(g[c], c == 2 ? -5.0 / 6.0 : 1.0 / 6.0, 1e-7);
  }
  // Batch of two halves each gradient.
  const std::vector<int> y2{2, 2};
  const Tensor g2 = cross_entropy_logit_grad(Tensor(Shape{2, 1, 1, 6}, 1.0f / 6.0f), y2);
  EXPECT_NEAR(g2[2], -5.0 / 12.0, 1e-7);
}

TEST(Adam, ZeroGradientFromFreshStateIsIdentityForAllSteps) {
  std::vector<float> p{1.5f, -2.0f, 0.0f, 3e-8f};
  const auto original = p;
  std::vector<float> g(4, 0.0f), m(4, 0.0f), v(4, 0.0f);
  for (long t = 1; t <= 200; ++t) {
    adam_step(p, g, m, v, t, 0.1, AdamConfig{});
    ASSERT_EQ(p, original) << "t=" << t;
  }
}

TEST(Adam, ZeroGradientDecaysMoments) {
  std::vector<float> p{1.0f}, g{0.0f}, m{0.5f}, v{0.25f};
  adam_step(p, g, m, v, 3, 1e-3, AdamConfig{});
  EXPECT_FLOAT_EQ(m[0], 0.45f);
  EXPECT_FLOAT_EQ(v[0], 0.24975f);
}

TEST(Adam, FirstStepIsLrTimesSign) {
  const double lr = 0.01;
  std::vector<float> p{1.0f, 1.0f, 1.0f}, g{0.5f, -3.0f, 1e-3f}, m(3, 0.0f), v(3, 0.0f);
  adam_step(p, g, m, v, 1, lr, AdamConfig{});
  for (std::size_t i = 0; i < 3; ++i) {
    const double expected = 1.0 - lr * g[i] / (std::abs(g[i]) + 1e-7);
    EXPECT_NEAR(p[i], expected, 1e-6);
    EXPECT_NEAR(p[i], 1.0 - lr * (g[i] > 0 ? 1 : -1), 1e-4);
  }
}

// Scalar oracle in double, written out from the update equations.
std::vector<double> adam_square_trajectory(double x, double lr, int steps) {
  std::vector<double> out;
  double m = 0, v = 0;
  for (int t = 1; t <= steps; ++t) {
    const double g = 2 * x;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-7);
    out.push_back(x);
  }
  return out;
}

// Minimizing x^2 from 5 with lr 0.1: |x| falls strictly from step 3 until
// the iterate first crosses zero, after which standard Adam oscillates
// around the minimum with small amplitude; |x| ends below 1.
TEST(Adam, MinimizesSquareFromFive) {
  const auto oracle = adam_square_trajectory(5.0, 0.1, 100);
  std::vector<float> x{5.0f}, g(1), m(1, 0.0f), v(1, 0.0f);
  double previous = 5.0;
  bool crossed = false;
  for (long t = 1; t <= 100; ++t) {
    g[0] = 2.0f * x[0];
    adam_step(x, g, m, v, t, 0.1, AdamConfig{});
    EXPECT_NEAR(x[0], oracle[static_cast<std::size_t>(t - 1)], 1e-4) << "t=" << t;
    crossed |= x[0] <= 0.0f;
    if (t > 3 && !crossed) EXPECT_LT(std::abs(x[0]), previous) << "t=" << t;
    previous = std::abs(x[0]);
  }
  EXPECT_LT(std::abs(x[0]), 1.0);
}

TEST(Adam, LengthMismatch) {
  std::vector<float> p(2), g(3), m(2), v(2);
  EXPECT_THROW(adam_step(p, g, m, v, 1, 0.1, AdamConfig{}), DimensionError);
}

Batch random_batch(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  Batch b;
  b.images = Tensor(Shape{n, 32, 32, 3});
  for (auto& v : b.images.values()) v = static_cast<float>(uniform(rng, -1, 1));
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<int>(i % 6));
  return b;
}

std::vector<std::vector<float>> snapshot(const Model& m) {
  std::vector<std::vector<float>> out;
  for (const auto& v : parameter_views(m)) out.emplace_back(v.values.begin(), v.values.end());
  return out;
}

TEST(Freeze, FiveStepsLeaveBackboneBitwiseUnchanged) {
  Rng rng(1);
  Model model = build_model(tiny(), rng);
  set_trainable(model, FreezePolicy::kFreezeBackbone);
  const auto before = snapshot(model);
  AdamOptimizer opt(1e-3, {});
  Rng drop(2);
  for (int s = 0; s < 5; ++s) train_step(model, random_batch(10 + s, 4), opt, drop, 1, s);
  const auto after = snapshot(model);
  const auto views = parameter_views(model);
  bool head_changed = false;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const bool head = model.layers[views[i].layer].head;
    if (!head) {
      EXPECT_EQ(std::memcmp(before[i].data(), after[i].data(), before[i].size() * sizeof(float)), 0)
          << views[i].name;
    } else {
      head_changed |= before[i] != after[i];
    }
  }
  EXPECT_TRUE(head_changed);
}

TEST(Freeze, ArbitraryMaskIsRespected) {
  Rng rng(1);
  Model model = build_model(tiny(), rng);
  std::vector<bool> mask(model.layers.size(), false);
  for (std::size_t i = 0; i < mask.size(); i += 3) mask[i] = true;
  set_trainable(model, mask);
  const auto before = snapshot(model);
  AdamOptimizer opt(1e-3, {});
  Rng drop(2);
  for (int s = 0; s < 3; ++s) train_step(model, random_batch(20 + s, 3), opt, drop, 1, s);
  const auto after = snapshot(model);
  const auto views = parameter_views(model);
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (!mask[views[i].layer]) EXPECT_EQ(before[i], after[i]) << views[i].name;
  }
}

TEST(TrainStep, NonFiniteLossIsDivergence) {
  Rng rng(1);
  Model model = build_model(tiny(), rng);
  model.layers.back().bias[0] = std::nanf("");
  AdamOptimizer opt(1e-3, {});
  Rng drop(2);
  try {
    train_step(model, random_batch(3, 2), opt, drop, 4, 7);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch(), 4);
    EXPECT_EQ(e.batch(), 7);
    EXPECT_NE(std::string(e.what()).find("epoch 4"), std::string::npos);
  }
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c;
  c.epochs = 12;
  c.learning_rate = 1e-3;
  c.freeze_policy = FreezePolicy::kFreezeBackbone;
  c.seed = 77;
  c.augment.enabled = false;
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json().dump(), c.to_json().dump());
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json{{"learning_rate", 0.1}}), ConfigError);
  TrainConfig bad;
  EXPECT_THROW(bad.validate(), ConfigError);  // epochs required
  TrainConfig defaults;
  EXPECT_EQ(defaults.learning_rate, 1e-5);
  EXPECT_EQ(defaults.batch_size, 32u);
  EXPECT_EQ(defaults.adam, (AdamConfig{0.9, 0.999, 1e-7}));
}

TEST(RunHistory, CsvColumns) {
  RunHistory h;
  h.epochs.push_back({1, 1.5, 0.25, 1.75, 0.2, 0.1});
  EXPECT_EQ(h.to_csv(), "epoch,train_loss,train_acc,val_loss,val_acc\n1,1.500000,0.250000,1.750000,0.200000\n");
}

// Fits on a synthetic corpus created once for the suite.
class FitTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(fs::temp_directory_path() / "birr_fit_test");
    fs::remove_all(*root_);
    split_ = new SplitManifest(split_dataset(synth_generate(*root_, {60, 64, 0}), kDefaultFractions, 0));
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root_);
    delete split_;
    delete root_;
  }
  static SplitManifest two_image_split() {
    SplitManifest s = *split_;
    s[Split::kTrain].resize(2);
    s[Split::kVal].resize(2);
    s[Split::kTest].clear();
    return s;
  }
  static fs::path* root_;
  static SplitManifest* split_;
};
fs::path* FitTest::root_ = nullptr;
SplitManifest* FitTest::split_ = nullptr;

TEST_F(FitTest, OneEpochFrozenKeepsBackbone) {
  Rng rng(0);
  Model model = build_model(tiny(), rng);
  const auto before = snapshot(model);
  TrainConfig c;
  c.epochs = 1;
  c.learning_rate = 1e-3;
  c.freeze_policy = FreezePolicy::kFreezeBackbone;
  fit(model, two_image_split(), c);
  const auto after = snapshot(model);
  const auto views = parameter_views(model);
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (!model.layers[views[i].layer].head) EXPECT_EQ(before[i], after[i]) << views[i].name;
  }
}

TEST_F(FitTest, ZeroLearningRateLeavesLearnedParametersUnchanged) {
  Rng rng(0);
  Model model = build_model(tiny(), rng);
  const auto before = snapshot(model);
  TrainConfig c;
  c.epochs = 3;
  c.learning_rate = 0.0;
  fit(model, two_image_split(), c);
  const auto after = snapshot(model);
  const auto views = parameter_views(model);
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (views[i].learnable) EXPECT_EQ(before[i], after[i]) << views[i].name;
  }
}

TEST_F(FitTest, SameSeedGivesIdenticalWeightsAndHistory) {
  TrainConfig c;
  c.epochs = 2;
  c.learning_rate = 1e-3;
  c.seed = 5;
  c.checkpoint_dir = fs::temp_directory_path() / "birr_fit_ckpt";
  std::vector<Bytes> weights;
  std::vector<std::string> csv;
  for (int run = 0; run < 2; ++run) {
    Rng rng(3);
    Model model = build_model(tiny(), rng);
    csv.push_back(fit(model, *split_, c).to_csv());
    weights.push_back(serialize_weights(model));
  }
  EXPECT_EQ(weights[0], weights[1]);
  EXPECT_EQ(csv[0], csv[1]);
  EXPECT_TRUE(fs::exists(*c.checkpoint_dir / "epoch_001.weights"));
  EXPECT_EQ(read_file(*c.checkpoint_dir / "epoch_002.weights"), weights[1]);
  fs::remove_all(*c.checkpoint_dir);
}

TEST_F(FitTest, LossTrendOverFirstFiveEpochs) {
  Rng rng(0);
  Model model = build_model(tiny(), rng);
  TrainConfig c;
  c.epochs = 5;
  c.learning_rate = 1e-3;
  const auto h = fit(model, *split_, c);
  ASSERT_EQ(h.epochs.size(), 5u);
  for (std::size_t e = 1; e < 5; ++e) {
    EXPECT_LE(h.epochs[e].train_loss, h.epochs[e - 1].train_loss + 0.05) << "epoch " << e + 1;
  }
}

// Thirty epochs at lr 1e-3 with the default batch size of 32.
TEST_F(FitTest, ThirtyEpochsReachLowLossAndHighValAccuracy) {
  Rng rng(0);
  Model model = build_model(tiny(), rng);
  TrainConfig c;
  c.epochs = 30;
  c.learning_rate = 1e-3;
  c.freeze_policy = FreezePolicy::kUnfreezeAll;
  const auto h = fit(model, *split_, c);
  EXPECT_LT(h.epochs.back().train_loss, 0.3);
  EXPECT_GE(h.epochs.back().val_accuracy, 0.9);
}

}  // namespace
}  // namespace birr
