#ifndef MASKFUSE_GBM_H_
#define MASKFUSE_GBM_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace maskfuse {

// Row-major feature table.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  explicit FeatureMatrix(size_t cols) : cols_(cols) {}
  FeatureMatrix(size_t rows, size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  double at(size_t r, size_t c) const { return data_[r * cols_ + c]; }
  double& at(size_t r, size_t c) { return data_[r * cols_ + c]; }
  std::span<const double> row(size_t r) const { return {data_.data() + r * cols_, cols_}; }

  // Throws LengthMismatch when the row width differs from cols().
  void AppendRow(std::span<const double> values);

 private:
  size_t rows_ = 0;
  size_t cols_ = 0;
  std::vector<double> data_;
};

struct TrainingConfig {
  int n_trees = 200;
  int max_depth = 3;
  int min_samples_leaf = 5;
  double shrinkage = 0.1;
  // Row subsampling per tree; 1.0 (the default) disables it. The seed only
  // matters when subsampling is on.
  double subsample = 1.0;
  uint64_t seed = 42;

  void Validate() const;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;

  bool is_leaf() const { return feature < 0; }
};

// Binary regression tree; a sample goes left when x[feature] <= threshold.
class RegressionTree {
 public:
  RegressionTree() = default;
  explicit RegressionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  double Predict(std::span<const double> x) const;
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  int depth() const;
  bool operator==(const RegressionTree& o) const;

 private:
  std::vector<TreeNode> nodes_;  // nodes_[0] is the root
};

// Greedy least-squares tree. Each node takes the (feature, threshold) with the
// largest SSE reduction; thresholds are midpoints between consecutive distinct
// values; both children need min_samples_leaf rows and the reduction must be
// positive. Ties prefer the lower feature index, then the lower threshold.
// Leaves hold the mean residual.
RegressionTree FitTree(const FeatureMatrix& x, std::span<const double> residuals,
                       const TrainingConfig& cfg);

class GbmModel {
 public:
  GbmModel() = default;
  GbmModel(double base_score, double shrinkage, size_t feature_count,
           std::vector<RegressionTree> trees)
      : base_score_(base_score), shrinkage_(shrinkage), feature_count_(feature_count),
        trees_(std::move(trees)) {}

  double base_score() const { return base_score_; }
  double shrinkage() const { return shrinkage_; }
  size_t feature_count() const { return feature_count_; }
  const std::vector<RegressionTree>& trees() const { return trees_; }

  // base + shrinkage * tree_1(x) + ... accumulated tree by tree, unclamped.
  double PredictRaw(std::span<const double> x) const;
  // PredictRaw clamped to [0, 1]. Throws LengthMismatch on a wrong-width row.
  double Predict(std::span<const double> x) const;
  std::vector<double> PredictBatch(const FeatureMatrix& x) const;

 private:
  double base_score_ = 0.0;
  double shrinkage_ = 1.0;
  size_t feature_count_ = 0;
  std::vector<RegressionTree> trees_;
};

// Squared-error gradient boosting. When `sse_per_round` is given it receives
// the training SSE after the base score (index 0) and after every tree.
GbmModel TrainGbm(const FeatureMatrix& x, std::span<const double> y, const TrainingConfig& cfg,
                  std::vector<double>* sse_per_round = nullptr);

// Text format:
//   GBM v1 features=<k> trees=<n> base=<f> shrinkage=<f>
// followed by every tree in preorder, one node per line:
//   N <feature> <threshold>   |   L <value>
// Reals use the shortest decimal form that parses back to the same double.
std::string SerializeModel(const GbmModel& model);
GbmModel ParseModel(std::string_view text);
void SaveModel(const std::filesystem::path& path, const GbmModel& model);
GbmModel LoadModel(const std::filesystem::path& path);

}  // namespace maskfuse

#endif  // MASKFUSE_GBM_H_
