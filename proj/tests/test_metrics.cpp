#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "d3/metrics.hpp"
#include "oracles/ap_oracle.hpp"

using namespace d3;
using namespace d3::metrics;

namespace {

ScoredSample sample(double p, int y, std::string gen, std::string group = {}, Domain d = Domain::id) {
  return {p, y, std::move(gen), std::move(group), d};
}

// Generator with the given accuracy over 10 samples (5 real, 5 fake).
void add_generator(std::vector<ScoredSample>& out, const std::string& gen, int correct, const std::string& group,
                   Domain d) {
  for (int i = 0; i < 10; ++i) {
    const int y = i % 2;
    const bool right = i < correct;
    out.push_back(sample(right == (y == 1) ? 0.9 : 0.1, y, gen, group, d));
  }
}

std::vector<ScoredSample> random_samples(Rng& rng, int n, int groups) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, groups - 1);
  std::vector<ScoredSample> s;
  for (int i = 0; i < n; ++i) {
    const int g = pick(rng);
    const int variant = unit(rng) < 0.5;
    ScoredSample x;
    x.label = unit(rng) < 0.5;
    // Coarse scores so ties occur.
    x.probability = std::round(unit(rng) * 20.0) / 20.0;
    x.generator_id = "g" + std::to_string(g) + (g == 0 ? "v" + std::to_string(variant) : "");
    x.architecture_group = g == 0 ? "grp0" : "";
    x.domain = g % 2 ? Domain::ood : Domain::id;
    s.push_back(x);
  }
  return s;
}

}  // namespace

TEST(MeanAccuracy, PerfectPredictions) {
  std::vector<ScoredSample> s;
  add_generator(s, "a", 10, "", Domain::id);
  add_generator(s, "b", 10, "", Domain::ood);
  const auto r = mean_accuracy(s);
  EXPECT_EQ(*r.id_mean, 1.0);
  EXPECT_EQ(*r.ood_mean, 1.0);
  EXPECT_EQ(*r.total_mean, 1.0);
}

TEST(MeanAccuracy, VariantsAreMergedBeforeAveraging) {
  std::vector<ScoredSample> s;
  add_generator(s, "SDa", 9, "SD", Domain::ood);
  add_generator(s, "SDb", 7, "SD", Domain::ood);
  add_generator(s, "X", 8, "", Domain::ood);
  const auto r = mean_accuracy(s);
  EXPECT_NEAR(r.merged.at("SD"), 0.8, 1e-15);
  EXPECT_NEAR(*r.ood_mean, 0.8, 1e-15);
  EXPECT_FALSE(r.id_mean.has_value());
}

TEST(MeanAccuracy, ThresholdIsStrict) {
  const auto r = mean_accuracy({sample(0.5, 1, "a"), sample(0.5, 0, "a")});
  EXPECT_EQ(r.per_generator.at("a"), 0.5);
}

TEST(MeanAccuracy, OrderAndDuplicationInvariant) {
  Rng rng(3);
  auto s = random_samples(rng, 300, 5);
  const auto base = mean_accuracy(s);
  std::shuffle(s.begin(), s.end(), rng);
  EXPECT_EQ(*mean_accuracy(s).total_mean, *base.total_mean);
  std::vector<ScoredSample> dup = s;
  for (const auto& x : s)
    if (x.generator_id == "g1") dup.push_back(x);
  EXPECT_NEAR(*mean_accuracy(dup).total_mean, *base.total_mean, 1e-15);
}

TEST(AveragePrecision, ReferenceValues) {
  EXPECT_EQ(average_precision({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}), 1.0);
  EXPECT_EQ(average_precision({0.9, 0.8, 0.7, 0.1}, {0, 0, 0, 1}), 0.25);
  EXPECT_NEAR(average_precision({0.9, 0.8, 0.3}, {1, 0, 1}), (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
  EXPECT_NEAR(oracle::average_precision({0.9, 0.8, 0.3}, {1, 0, 1}), 0.8333333333333333, 1e-15);
  EXPECT_THROW(average_precision({0.1, 0.2}, {1, 1}), InvalidInput);
}

TEST(AveragePrecision, TiesFollowInputOrder) {
  EXPECT_EQ(average_precision({0.5, 0.5}, {1, 0}), 1.0);
  EXPECT_EQ(average_precision({0.5, 0.5}, {0, 1}), 0.5);
}

TEST(AveragePrecision, MatchesOracleAndIsMonotoneInvariant) {
  Rng rng(4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial * 3;
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
      scores[i] = std::round(unit(rng) * 10.0) / 10.0;
      labels[i] = i < 1 ? 1 : i < 2 ? 0 : unit(rng) < 0.4;
    }
    EXPECT_EQ(average_precision(scores, labels), oracle::average_precision(scores, labels));
    std::vector<double> mapped(n);
    std::transform(scores.begin(), scores.end(), mapped.begin(), [](double v) { return std::exp(3.0 * v) - 7.0; });
    EXPECT_EQ(average_precision(mapped, labels), average_precision(scores, labels));
  }
}

TEST(AveragePrecision, BoundedByPrevalenceOnAverage) {
  // Exhaustive over all orderings of 3 positives among 8 items.
  std::vector<int> labels{0, 0, 0, 0, 0, 1, 1, 1};
  std::vector<double> scores{8, 7, 6, 5, 4, 3, 2, 1};
  double sum = 0.0;
  int count = 0;
  do {
    const double ap = oracle::average_precision(scores, labels);
    EXPECT_EQ(average_precision(scores, labels), ap);
    EXPECT_LE(ap, 1.0);
    sum += ap;
    ++count;
  } while (std::next_permutation(labels.begin(), labels.end()));
  EXPECT_EQ(count, 56);
  EXPECT_GE(sum / count, 3.0 / 8.0);
}

TEST(GlobalAp, IdentityResamplingEqualsPlainAp) {
  Rng rng(5);
  std::vector<ScoredSample> s;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const char* g : {"a", "b", "c"})
    for (int i = 0; i < 12; ++i) s.push_back(sample(unit(rng), i % 2, g, "", Domain::id));
  const auto ap = global_ap(s, 9);
  EXPECT_EQ(*ap.total_ap, average_precision(s));
}

TEST(GlobalAp, UnbalancedGeneratorsDifferFromMeanAp) {
  Rng rng(6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ScoredSample> s;
  for (int i = 0; i < 10; ++i) s.push_back(sample(i % 2 ? 0.99 : 0.01, i % 2, "small", "", Domain::ood));
  for (int i = 0; i < 1000; ++i) s.push_back(sample(unit(rng), i % 2, "large", "", Domain::ood));
  const auto got = global_ap(s, 1);
  const auto want = oracle::global_ap(s, 1);
  EXPECT_EQ(got.ood_ap, want.ood_ap);
  EXPECT_EQ(got.total_ap, want.total_ap);
  EXPECT_FALSE(got.id_ap.has_value());
  std::vector<ScoredSample> small(s.begin(), s.begin() + 10), large(s.begin() + 10, s.end());
  const double map = (average_precision(small) + average_precision(large)) / 2.0;
  EXPECT_GT(std::abs(*got.total_ap - map), 1e-3);
}

TEST(GlobalAp, MatchesOracleOnRandomInstances) {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const auto s = random_samples(rng, 20 + trial * 10, 1 + trial % 5);
    const auto got = global_ap(s, trial);
    const auto want = oracle::global_ap(s, trial);
    EXPECT_EQ(got.id_ap, want.id_ap);
    EXPECT_EQ(got.ood_ap, want.ood_ap);
    EXPECT_EQ(got.total_ap, want.total_ap);
    EXPECT_EQ(global_ap(s, trial).total_ap, got.total_ap);
  }
}

TEST(Robustness, GridShapeAndSigmaZero) {
  int calls = 0;
  auto eval = [&](const std::optional<Degradation>& d) {
    ++calls;
    if (!d) return 0.9;
    return d->kind == Degradation::Kind::blur ? 0.9 - 0.1 * d->value : 0.5 + d->value / 250.0;
  };
  const auto g = robustness_grid(eval, kDefaultBlurSigmas, kDefaultJpegQualities);
  EXPECT_EQ(g.blur.size(), 5u);
  EXPECT_EQ(g.jpeg.size(), 8u);
  EXPECT_EQ(g.blur[0].total_mean_acc, g.clean_total_mean_acc);
  EXPECT_EQ(calls, 1 + 4 + 8);
  const std::string csv = robustness_csv(g);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 14);
  EXPECT_EQ(csv.rfind("perturbation,value,total_mean_acc\n", 0), 0u);
  EXPECT_THROW(robustness_grid(eval, {-1.0}, {}), InvalidInput);
  EXPECT_THROW(robustness_grid(eval, {}, {0}), InvalidInput);
}
