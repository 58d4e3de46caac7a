#include <gtest/gtest.h>

#include <cmath>

#include "d3/train.hpp"
#include "oracles/fd_oracle.hpp"

using namespace d3;
using namespace d3::head;

namespace {

// Two Gaussian blobs on the first coordinate, padded to `dim` with noise.
backbone::EmbeddingPair blob(int label, int dim, Rng& rng, float spread = 0.0f) {
  std::normal_distribution<float> normal(0.0f, 0.3f);
  backbone::EmbeddingPair p;
  p.generator_id = "g";
  p.label = label ? synthbench::Label::fake : synthbench::Label::real;
  p.original = Eigen::VectorXf::NullaryExpr(dim, [&] { return normal(rng); });
  p.original[0] += label ? 1.5f : -1.5f;
  p.original.array() += label ? spread : -spread;
  p.disrupted = p.original;
  return p;
}

struct Separable {
  std::vector<backbone::EmbeddingPair> train, val;
  TrainingSet set() const {
    TrainingSet s;
    for (const auto& p : train) s.train_labels.push_back(p.label);
    s.train_pair = [this](std::size_t i, int) { return train[i]; };
    s.val_pairs = val;
    s.val_groups.assign(val.size(), "");
    return s;
  }
};

Separable separable(int dim, int n, float spread = 0.0f) {
  Rng rng(77);
  Separable s;
  for (int i = 0; i < n; ++i) s.train.push_back(blob(i % 2, dim, rng, spread));
  for (int i = 0; i < 40; ++i) s.val.push_back(blob(i % 2, dim, rng, spread));
  return s;
}

TrainConfig fast_config() {
  TrainConfig cfg;
  cfg.adam.learning_rate = 1e-2;
  cfg.batch_size = 16;
  return cfg;
}

}  // namespace

TEST(Adam, FirstStepMovesByTheLearningRate) {
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  Adam<double> adam(cfg, 3);
  Vector<double> x(3), g(3);
  x << 1.0, -2.0, 0.5;
  g << 4.0, -0.001, 0.0;
  const Vector<double> before = x;
  adam.step(x, g);
  // Bias-corrected moments make the first step lr * g / (|g| + eps).
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(x[i], before[i] - 0.1 * g[i] / (std::abs(g[i]) + 1e-8), 1e-12);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Adam, MinimizesAQuadratic) {
  AdamConfig cfg;
  cfg.learning_rate = 0.05;
  Adam<double> adam(cfg, 2);
  Vector<double> x(2);
  x << 3.0, -4.0;
  for (int i = 0; i < 2000; ++i) adam.step(x, Vector<double>(2.0 * x));
  EXPECT_LT(x.norm(), 1e-2);
}

TEST(Train, SeparableDataReachesPerfectValidation) {
  const auto data = separable(2, 200);
  const auto r = train(HeadKind::self_attention, BranchMode::dual, 2, data.set(), fast_config());
  ASSERT_EQ(r.log.size(), 5u);
  EXPECT_EQ(r.log[r.best_epoch].val_mean_acc, 1.0);
  // Epoch-mean train loss does not increase over the first three epochs.
  EXPECT_LE(r.log[1].train_loss, r.log[0].train_loss + 1e-3);
  EXPECT_LE(r.log[2].train_loss, r.log[1].train_loss + 1e-3);
}

TEST(Train, BitIdenticalForAFixedSeed) {
  const auto data = separable(4, 64);
  const auto a = train(HeadKind::transformer2, BranchMode::dual, 4, data.set(), fast_config());
  const auto b = train(HeadKind::transformer2, BranchMode::dual, 4, data.set(), fast_config());
  EXPECT_EQ(a.params.values, b.params.values);
  auto other = fast_config();
  other.seed = 1;
  EXPECT_NE(train(HeadKind::transformer2, BranchMode::dual, 4, data.set(), other).params.values, a.params.values);
}

TEST(Train, WideEmbeddingsTrainUnchanged) {
  const auto data = separable(1024, 128, 0.1f);
  const auto r = train(HeadKind::fc_only, BranchMode::dual, 1024, data.set(), fast_config());
  EXPECT_EQ(r.params.values.size(), 2 * 1024 + 1);
  EXPECT_GT(r.log[r.best_epoch].val_mean_acc, 0.9);
}

TEST(Train, RejectsDegenerateData) {
  auto data = separable(2, 10);
  TrainingSet empty;
  EXPECT_THROW(train(HeadKind::fc_only, BranchMode::dual, 2, empty, fast_config()), InvalidInput);
  auto set = data.set();
  set.train_labels.assign(set.train_labels.size(), synthbench::Label::fake);
  EXPECT_THROW(train(HeadKind::fc_only, BranchMode::dual, 2, set, fast_config()), InvalidInput);
  auto bad = fast_config();
  bad.adam.learning_rate = 0.0;
  EXPECT_THROW(train(HeadKind::fc_only, BranchMode::dual, 2, data.set(), bad), InvalidInput);
}

TEST(Train, KeepsTheBestValidationEpoch) {
  const auto data = separable(2, 100);
  const auto r = train(HeadKind::fc_only, BranchMode::dual, 2, data.set(), fast_config());
  const auto again = score(r.params, data.val, std::vector<std::string>(data.val.size()));
  EXPECT_EQ(again.val_mean_acc, r.log[r.best_epoch].val_mean_acc);
  for (const auto& log : r.log) EXPECT_LE(log.val_mean_acc, r.log[r.best_epoch].val_mean_acc);
}
