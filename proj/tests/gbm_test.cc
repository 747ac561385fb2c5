#include "maskfuse/gbm.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "maskfuse/errors.h"
#include "test_support.h"

namespace maskfuse {
namespace {

using testing::TestRng;

FeatureMatrix RandomMatrix(TestRng& rng, size_t rows, size_t cols) {
  FeatureMatrix x(rows, cols);
  for (size_t r = 0; r < rows; ++r) {
    for (size_t c = 0; c < cols; ++c) x.at(r, c) = rng.Real(-5.0, 5.0);
  }
  return x;
}

double Sse(std::span<const double> y, std::span<const size_t> idx) {
  if (idx.empty()) return 0.0;
  double mean = 0.0;
  for (size_t i : idx) mean += y[i];
  mean /= static_cast<double>(idx.size());
  double s = 0.0;
  for (size_t i : idx) s += (y[i] - mean) * (y[i] - mean);
  return s;
}

struct Stump {
  int feature = -1;
  double threshold = 0.0;
};

// Exhaustive root split: every feature, every midpoint, naive SSE.
Stump BruteStump(const FeatureMatrix& x, std::span<const double> y, int min_leaf) {
  std::vector<size_t> all(x.rows());
  for (size_t i = 0; i < all.size(); ++i) all[i] = i;
  const double parent = Sse(y, all);
  Stump best;
  double best_gain = 0.0;
  for (size_t f = 0; f < x.cols(); ++f) {
    std::set<double> values;
    for (size_t i = 0; i < x.rows(); ++i) values.insert(x.at(i, f));
    for (auto it = values.begin(); std::next(it) != values.end(); ++it) {
      const double t = (*it + *std::next(it)) / 2.0;
      std::vector<size_t> left, right;
      for (size_t i = 0; i < x.rows(); ++i) (x.at(i, f) <= t ? left : right).push_back(i);
      if (left.size() < static_cast<size_t>(min_leaf) ||
          right.size() < static_cast<size_t>(min_leaf)) {
        continue;
      }
      const double gain = parent - Sse(y, left) - Sse(y, right);
      if (gain > best_gain * (1.0 + 1e-12) + 1e-15) {
        best_gain = gain;
        best = {static_cast<int>(f), t};
      }
    }
  }
  return best;
}

double TrainingSse(const GbmModel& m, const FeatureMatrix& x, std::span<const double> y) {
  double s = 0.0;
  for (size_t i = 0; i < x.rows(); ++i) {
    const double e = m.PredictRaw(x.row(i)) - y[i];
    s += e * e;
  }
  return s;
}

TEST(FitTree, StepExample) {
  FeatureMatrix x(1);
  for (double v : {0.0, 1.0, 2.0, 3.0}) x.AppendRow(std::vector<double>{v});
  const std::vector<double> y = {0, 0, 10, 10};
  TrainingConfig cfg;
  cfg.max_depth = 1;
  cfg.min_samples_leaf = 1;
  const RegressionTree tree = FitTree(x, y, cfg);
  ASSERT_EQ(tree.nodes().size(), 3u);
  const TreeNode& root = tree.nodes()[0];
  EXPECT_EQ(root.feature, 0);
  EXPECT_EQ(root.threshold, 1.5);
  EXPECT_EQ(tree.nodes()[root.left].value, 0.0);
  EXPECT_EQ(tree.nodes()[root.right].value, 10.0);
}

TEST(FitTree, ConstantResidualsGiveOneLeaf) {
  TestRng rng(51);
  const FeatureMatrix x = RandomMatrix(rng, 30, 4);
  const std::vector<double> y(30, 0.25);
  const RegressionTree tree = FitTree(x, y, TrainingConfig{});
  ASSERT_EQ(tree.nodes().size(), 1u);
  EXPECT_DOUBLE_EQ(tree.nodes()[0].value, 0.25);
}

TEST(FitTree, DuplicatedColumnUsesLowerIndex) {
  TestRng rng(52);
  FeatureMatrix x(40, 3);
  std::vector<double> y(40);
  for (size_t i = 0; i < 40; ++i) {
    x.at(i, 0) = rng.Real(0, 1);
    x.at(i, 1) = rng.Real(0, 1);
    x.at(i, 2) = x.at(i, 1);
    y[i] = x.at(i, 1) > 0.5 ? 1.0 : 0.0;
  }
  const RegressionTree tree = FitTree(x, y, TrainingConfig{});
  EXPECT_EQ(tree.nodes()[0].feature, 1);
  for (const TreeNode& n : tree.nodes()) EXPECT_NE(n.feature, 2);
}

TEST(FitTree, RootSplitMatchesExhaustiveSearch) {
  TestRng rng(53);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t rows = static_cast<size_t>(rng.Int(2, 40));
    const FeatureMatrix x = RandomMatrix(rng, rows, 3);
    std::vector<double> y(rows);
    for (double& v : y) v = rng.Real(0, 1);
    TrainingConfig cfg;
    cfg.max_depth = 1;
    cfg.min_samples_leaf = rng.Int(1, 5);
    const RegressionTree tree = FitTree(x, y, cfg);
    const Stump expected = BruteStump(x, y, cfg.min_samples_leaf);
    EXPECT_EQ(tree.nodes()[0].feature, expected.feature);
    if (expected.feature >= 0) EXPECT_DOUBLE_EQ(tree.nodes()[0].threshold, expected.threshold);
  }
}

TEST(FitTree, RespectsDepthAndLeafSize) {
  TestRng rng(54);
  const FeatureMatrix x = RandomMatrix(rng, 200, 11);
  std::vector<double> y(200);
  for (double& v : y) v = rng.Real(0, 1);
  TrainingConfig cfg;
  cfg.max_depth = 4;
  cfg.min_samples_leaf = 7;
  const RegressionTree tree = FitTree(x, y, cfg);
  EXPECT_LE(tree.depth(), 4);
  std::vector<int> leaf_counts(tree.nodes().size(), 0);
  for (size_t i = 0; i < 200; ++i) {
    int n = 0;
    while (!tree.nodes()[n].is_leaf()) {
      const TreeNode& node = tree.nodes()[n];
      n = x.at(i, node.feature) <= node.threshold ? node.left : node.right;
    }
    ++leaf_counts[n];
  }
  for (size_t n = 0; n < tree.nodes().size(); ++n) {
    const TreeNode& node = tree.nodes()[n];
    if (node.is_leaf()) {
      EXPECT_GE(leaf_counts[n], 7);
    } else {
      EXPECT_GE(node.left, 0);
      EXPECT_GE(node.right, 0);
      EXPECT_LT(node.feature, 11);
    }
  }
}

TEST(TrainGbm, ConstantTargets) {
  TestRng rng(55);
  const FeatureMatrix x = RandomMatrix(rng, 50, 11);
  const std::vector<double> y(50, 0.7);
  TrainingConfig cfg;
  cfg.n_trees = 5;
  const GbmModel m = TrainGbm(x, y, cfg);
  EXPECT_DOUBLE_EQ(m.base_score(), 0.7);
  for (const RegressionTree& t : m.trees()) {
    ASSERT_EQ(t.nodes().size(), 1u);
    EXPECT_NEAR(t.nodes()[0].value, 0.0, 1e-15);
  }
  for (size_t i = 0; i < 50; ++i) EXPECT_NEAR(m.Predict(x.row(i)), 0.7, 1e-12);
}

TEST(TrainGbm, StepDataExactFitAndClamp) {
  FeatureMatrix x(1);
  for (double v : {0.0, 1.0, 2.0, 3.0}) x.AppendRow(std::vector<double>{v});
  const std::vector<double> y = {0, 0, 10, 10};
  TrainingConfig cfg;
  cfg.n_trees = 1;
  cfg.max_depth = 1;
  cfg.min_samples_leaf = 1;
  cfg.shrinkage = 1.0;
  std::vector<double> sse;
  const GbmModel m = TrainGbm(x, y, cfg, &sse);
  ASSERT_EQ(sse.size(), 2u);
  EXPECT_EQ(sse[1], 0.0);
  EXPECT_EQ(m.PredictRaw(std::vector<double>{0.0}), 0.0);
  EXPECT_EQ(m.PredictRaw(std::vector<double>{3.0}), 10.0);
  EXPECT_EQ(m.Predict(std::vector<double>{0.0}), 0.0);
  EXPECT_EQ(m.Predict(std::vector<double>{3.0}), 1.0);
}

TEST(TrainGbm, NoTreesPredictsClampedBase) {
  const GbmModel m(1.4, 0.1, 2, {});
  EXPECT_EQ(m.Predict(std::vector<double>{0, 0}), 1.0);
  EXPECT_EQ(GbmModel(-0.2, 0.1, 2, {}).Predict(std::vector<double>{0, 0}), 0.0);
  EXPECT_EQ(GbmModel(0.4, 0.1, 2, {}).Predict(std::vector<double>{0, 0}), 0.4);
  EXPECT_THROW(m.Predict(std::vector<double>{0}), LengthMismatch);
}

TEST(TrainGbm, SseNeverIncreases) {
  TestRng rng(56);
  const FeatureMatrix x = RandomMatrix(rng, 300, 11);
  std::vector<double> y(300);
  for (size_t i = 0; i < 300; ++i) {
    y[i] = std::clamp(0.5 + 0.1 * x.at(i, 0) - 0.05 * x.at(i, 3) + rng.Real(-0.1, 0.1), 0.0, 1.0);
  }
  TrainingConfig cfg;
  cfg.n_trees = 60;
  std::vector<double> sse;
  const GbmModel m = TrainGbm(x, y, cfg, &sse);
  ASSERT_EQ(sse.size(), 61u);
  for (size_t i = 1; i < sse.size(); ++i) EXPECT_LE(sse[i], sse[i - 1]);
  EXPECT_NEAR(sse.back(), TrainingSse(m, x, y), 1e-9);
}

TEST(TrainGbm, ExactFitOnDistinctRows) {
  TestRng rng(57);
  const FeatureMatrix x = RandomMatrix(rng, 100, 11);
  std::vector<double> y(100);
  for (double& v : y) v = rng.Real(0, 1);
  TrainingConfig cfg;
  cfg.n_trees = 1;
  cfg.max_depth = 1000;
  cfg.min_samples_leaf = 1;
  cfg.shrinkage = 1.0;
  const GbmModel m = TrainGbm(x, y, cfg);
  EXPECT_LT(TrainingSse(m, x, y), 1e-18);
}

TEST(TrainGbm, DeterministicAndSubsampleSeeded) {
  TestRng rng(58);
  const FeatureMatrix x = RandomMatrix(rng, 120, 11);
  std::vector<double> y(120);
  for (double& v : y) v = rng.Real(0, 1);
  TrainingConfig cfg;
  cfg.n_trees = 20;
  EXPECT_EQ(SerializeModel(TrainGbm(x, y, cfg)), SerializeModel(TrainGbm(x, y, cfg)));
  cfg.subsample = 0.5;
  const std::string a = SerializeModel(TrainGbm(x, y, cfg));
  EXPECT_EQ(a, SerializeModel(TrainGbm(x, y, cfg)));
  cfg.seed = 43;
  EXPECT_NE(a, SerializeModel(TrainGbm(x, y, cfg)));
}

TEST(ModelFile, RoundTripPredictsBitIdentically) {
  TestRng rng(59);
  const FeatureMatrix x = RandomMatrix(rng, 150, 11);
  std::vector<double> y(150);
  for (double& v : y) v = rng.Real(0, 1);
  TrainingConfig cfg;
  cfg.n_trees = 40;
  const GbmModel m = TrainGbm(x, y, cfg);
  const std::string text = SerializeModel(m);
  EXPECT_EQ(text.rfind("GBM v1 features=11 trees=40 base=", 0), 0u);
  const GbmModel back = ParseModel(text);
  EXPECT_EQ(SerializeModel(back), text);
  const FeatureMatrix probe = RandomMatrix(rng, 1000, 11);
  for (size_t i = 0; i < probe.rows(); ++i) {
    EXPECT_EQ(m.PredictRaw(probe.row(i)), back.PredictRaw(probe.row(i)));
  }

  const auto dir = testing::FreshTempDir("gbm_file");
  SaveModel(dir / "model.txt", m);
  EXPECT_EQ(SerializeModel(LoadModel(dir / "model.txt")), text);
  EXPECT_THROW(ParseModel("GBM v2 features=11 trees=0 base=0 shrinkage=1\n"), FormatError);
  EXPECT_THROW(LoadModel(dir / "absent.txt"), IoError);
}

TEST(TrainGbm, BatchMatchesSingleAndBadInput) {
  TestRng rng(60);
  const FeatureMatrix x = RandomMatrix(rng, 50, 11);
  std::vector<double> y(50);
  for (double& v : y) v = rng.Real(0, 1);
  TrainingConfig cfg;
  cfg.n_trees = 10;
  const GbmModel m = TrainGbm(x, y, cfg);
  const std::vector<double> batch = m.PredictBatch(x);
  for (size_t i = 0; i < 50; ++i) EXPECT_EQ(batch[i], m.Predict(x.row(i)));

  EXPECT_THROW(TrainGbm(x, std::vector<double>(49, 0.0), cfg), LengthMismatch);
  FeatureMatrix narrow(3);
  EXPECT_THROW(narrow.AppendRow(std::vector<double>{1, 2}), LengthMismatch);
  cfg.n_trees = 0;
  EXPECT_THROW(TrainGbm(x, y, cfg), ConfigError);
}

}  // namespace
}  // namespace maskfuse
