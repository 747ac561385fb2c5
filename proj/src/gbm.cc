#include "maskfuse/gbm.h"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "maskfuse/errors.h"
#include "maskfuse/numeric_text.h"

namespace maskfuse {
namespace {

// Running mean: exact for constant input, which keeps constant residuals at
// exactly zero reduction.
class RunningMean {
 public:
  void Add(double v) {
    ++n_;
    mean_ += (v - mean_) / static_cast<double>(n_);
  }
  double mean() const { return mean_; }

 private:
  size_t n_ = 0;
  double mean_ = 0.0;
};

// Threshold strictly between lo and hi such that lo <= t < hi.
double Midpoint(double lo, double hi) {
  const double mid = lo + (hi - lo) / 2.0;
  return (mid >= lo && mid < hi) ? mid : lo;
}

class TreeBuilder {
 public:
  TreeBuilder(const FeatureMatrix& x, const TrainingConfig& cfg) : x_(x), cfg_(cfg) {
    sorted_.resize(x.cols());
    for (size_t f = 0; f < x.cols(); ++f) {
      std::vector<size_t>& order = sorted_[f];
      order.resize(x.rows());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](size_t a, size_t b) { return x.at(a, f) < x.at(b, f); });
    }
  }

  // `active` selects the rows (ascending) that train this tree.
  RegressionTree Fit(std::span<const double> residuals, const std::vector<size_t>& active) {
    residuals_ = residuals;
    nodes_.clear();
    std::vector<uint8_t> in_node(x_.rows(), 0);
    for (size_t i : active) in_node[i] = 1;
    std::vector<std::vector<size_t>> orders(x_.cols());
    for (size_t f = 0; f < x_.cols(); ++f) {
      for (size_t i : sorted_[f]) {
        if (in_node[i]) orders[f].push_back(i);
      }
    }
    Grow(active, std::move(orders), 0);
    return RegressionTree(std::move(nodes_));
  }

 private:
  struct Split {
    double reduction = 0.0;
    int feature = -1;
    double threshold = 0.0;
  };

  Split FindSplit(const std::vector<std::vector<size_t>>& orders) const {
    Split best;
    if (x_.cols() == 0) return best;
    const size_t m = orders[0].size();
    const size_t min_leaf = static_cast<size_t>(cfg_.min_samples_leaf);
    if (m < 2 * min_leaf || m < 2) return best;
    std::vector<double> suffix(m + 1, 0.0);
    for (size_t f = 0; f < x_.cols(); ++f) {
      const std::vector<size_t>& order = orders[f];
      RunningMean back;
      for (size_t k = m; k-- > 0;) {
        back.Add(residuals_[order[k]]);
        suffix[k] = back.mean();
      }
      RunningMean front;
      for (size_t k = 1; k < m; ++k) {
        front.Add(residuals_[order[k - 1]]);
        if (k < min_leaf || m - k < min_leaf) continue;
        const double lo = x_.at(order[k - 1], f);
        const double hi = x_.at(order[k], f);
        if (!(lo < hi)) continue;
        const double diff = front.mean() - suffix[k];
        const double reduction = static_cast<double>(k) * static_cast<double>(m - k) /
                                 static_cast<double>(m) * diff * diff;
        if (reduction > best.reduction) {
          best.reduction = reduction;
          best.feature = static_cast<int>(f);
          best.threshold = Midpoint(lo, hi);
        }
      }
    }
    return best;
  }

  int Grow(const std::vector<size_t>& members, std::vector<std::vector<size_t>> orders,
           int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    RunningMean mean;
    for (size_t i : members) mean.Add(residuals_[i]);
    nodes_[id].value = mean.mean();
    if (depth >= cfg_.max_depth) return id;
    const Split split = FindSplit(orders);
    if (split.feature < 0) return id;

    const size_t f = static_cast<size_t>(split.feature);
    std::vector<uint8_t> goes_left(x_.rows(), 0);
    std::vector<size_t> left_members, right_members;
    for (size_t i : members) {
      if (x_.at(i, f) <= split.threshold) {
        goes_left[i] = 1;
        left_members.push_back(i);
      } else {
        right_members.push_back(i);
      }
    }
    std::vector<std::vector<size_t>> left_orders(x_.cols()), right_orders(x_.cols());
    for (size_t g = 0; g < x_.cols(); ++g) {
      left_orders[g].reserve(left_members.size());
      right_orders[g].reserve(right_members.size());
      for (size_t i : orders[g]) (goes_left[i] ? left_orders[g] : right_orders[g]).push_back(i);
    }
    orders.clear();
    nodes_[id].feature = split.feature;
    nodes_[id].threshold = split.threshold;
    const int left = Grow(left_members, std::move(left_orders), depth + 1);
    const int right = Grow(right_members, std::move(right_orders), depth + 1);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  const FeatureMatrix& x_;
  const TrainingConfig& cfg_;
  std::vector<std::vector<size_t>> sorted_;
  std::span<const double> residuals_;
  std::vector<TreeNode> nodes_;
};

double SumSquaredError(std::span<const double> y, std::span<const double> f) {
  double sse = 0.0;
  for (size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - f[i];
    sse += d * d;
  }
  return sse;
}

void WriteTree(const RegressionTree& tree, int node, std::string& out) {
  const TreeNode& n = tree.nodes()[node];
  if (n.is_leaf()) {
    out += "L " + FormatDouble(n.value) + "\n";
    return;
  }
  out += "N " + std::to_string(n.feature) + " " + FormatDouble(n.threshold) + "\n";
  WriteTree(tree, n.left, out);
  WriteTree(tree, n.right, out);
}

class ModelReader {
 public:
  explicit ModelReader(std::string_view text) : text_(text) {}

  bool NextLine(std::string_view* line) {
    while (pos_ < text_.size()) {
      size_t end = text_.find('\n', pos_);
      if (end == std::string_view::npos) end = text_.size();
      std::string_view l = text_.substr(pos_, end - pos_);
      pos_ = end + 1;
      ++line_no_;
      if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
      if (l.empty()) continue;
      *line = l;
      return true;
    }
    return false;
  }

  int ReadNode(std::vector<TreeNode>& nodes, size_t feature_count, int depth) {
    if (depth > 10000) Fail("tree too deep");
    std::string_view line;
    if (!NextLine(&line)) Fail("unexpected end of model");
    const int id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    if (line.starts_with("L ")) {
      nodes[id].value = ParseDouble(line.substr(2));
      return id;
    }
    if (!line.starts_with("N ")) Fail("expected N or L line");
    const std::string_view rest = line.substr(2);
    const size_t space = rest.find(' ');
    if (space == std::string_view::npos) Fail("malformed N line");
    const long long feature = ParseInteger(rest.substr(0, space));
    if (feature < 0 || static_cast<size_t>(feature) >= feature_count) {
      Fail("feature index out of range");
    }
    nodes[id].feature = static_cast<int>(feature);
    nodes[id].threshold = ParseDouble(rest.substr(space + 1));
    const int left = ReadNode(nodes, feature_count, depth + 1);
    const int right = ReadNode(nodes, feature_count, depth + 1);
    nodes[id].left = left;
    nodes[id].right = right;
    return id;
  }

  [[noreturn]] void Fail(const std::string& what) const {
    throw FormatError("model line " + std::to_string(line_no_) + ": " + what);
  }

 private:
  std::string_view text_;
  size_t pos_ = 0;
  int line_no_ = 0;
};

std::string_view HeaderField(std::string_view header, std::string_view key) {
  const std::string pattern = " " + std::string(key) + "=";
  const size_t at = header.find(pattern);
  if (at == std::string_view::npos) {
    throw FormatError("model header missing " + std::string(key));
  }
  const size_t start = at + pattern.size();
  const size_t end = header.find(' ', start);
  return header.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
}

}  // namespace

void FeatureMatrix::AppendRow(std::span<const double> values) {
  if (values.size() != cols_) {
    throw LengthMismatch("row has " + std::to_string(values.size()) + " values, expected " +
                         std::to_string(cols_));
  }
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

void TrainingConfig::Validate() const {
  if (n_trees < 1) throw ConfigError("n_trees must be >= 1");
  if (max_depth < 1) throw ConfigError("max_depth must be >= 1");
  if (min_samples_leaf < 1) throw ConfigError("min_samples_leaf must be >= 1");
  if (!(shrinkage > 0.0 && shrinkage <= 1.0)) throw ConfigError("shrinkage must be in (0, 1]");
  if (!(subsample > 0.0 && subsample <= 1.0)) throw ConfigError("subsample must be in (0, 1]");
}

double RegressionTree::Predict(std::span<const double> x) const {
  int node = 0;
  while (!nodes_[node].is_leaf()) {
    const TreeNode& n = nodes_[node];
    node = x[n.feature] <= n.threshold ? n.left : n.right;
  }
  return nodes_[node].value;
}

int RegressionTree::depth() const {
  std::vector<std::pair<int, int>> stack{{0, 0}};
  int deepest = 0;
  while (!stack.empty()) {
    auto [node, d] = stack.back();
    stack.pop_back();
    deepest = std::max(deepest, d);
    if (!nodes_[node].is_leaf()) {
      stack.push_back({nodes_[node].left, d + 1});
      stack.push_back({nodes_[node].right, d + 1});
    }
  }
  return deepest;
}

bool RegressionTree::operator==(const RegressionTree& o) const {
  if (nodes_.size() != o.nodes_.size()) return false;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    const TreeNode& a = nodes_[i];
    const TreeNode& b = o.nodes_[i];
    if (a.feature != b.feature || a.left != b.left || a.right != b.right) return false;
    if (a.is_leaf() ? a.value != b.value : a.threshold != b.threshold) return false;
  }
  return true;
}

RegressionTree FitTree(const FeatureMatrix& x, std::span<const double> residuals,
                       const TrainingConfig& cfg) {
  cfg.Validate();
  if (x.rows() == 0 || x.rows() != residuals.size()) {
    throw LengthMismatch("FitTree needs matching, non-empty rows and residuals");
  }
  TreeBuilder builder(x, cfg);
  std::vector<size_t> all(x.rows());
  std::iota(all.begin(), all.end(), 0);
  return builder.Fit(residuals, all);
}

double GbmModel::PredictRaw(std::span<const double> x) const {
  if (x.size() != feature_count_) {
    throw LengthMismatch("feature vector has " + std::to_string(x.size()) + " values, model expects " +
                         std::to_string(feature_count_));
  }
  double f = base_score_;
  for (const RegressionTree& tree : trees_) f += shrinkage_ * tree.Predict(x);
  return f;
}

double GbmModel::Predict(std::span<const double> x) const {
  return std::clamp(PredictRaw(x), 0.0, 1.0);
}

std::vector<double> GbmModel::PredictBatch(const FeatureMatrix& x) const {
  std::vector<double> out(x.rows());
  for (size_t i = 0; i < x.rows(); ++i) out[i] = Predict(x.row(i));
  return out;
}

GbmModel TrainGbm(const FeatureMatrix& x, std::span<const double> y, const TrainingConfig& cfg,
                  std::vector<double>* sse_per_round) {
  cfg.Validate();
  if (x.rows() == 0 || x.rows() != y.size()) {
    throw LengthMismatch("TrainGbm needs matching, non-empty rows and targets");
  }
  const size_t n = x.rows();
  RunningMean base;
  for (double v : y) base.Add(v);
  std::vector<double> f(n, base.mean());
  if (sse_per_round != nullptr) {
    sse_per_round->clear();
    sse_per_round->push_back(SumSquaredError(y, f));
  }

  TreeBuilder builder(x, cfg);
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> residuals(n);
  std::vector<size_t> active(n);
  std::iota(active.begin(), active.end(), 0);
  std::vector<RegressionTree> trees;
  trees.reserve(static_cast<size_t>(cfg.n_trees));
  for (int m = 0; m < cfg.n_trees; ++m) {
    for (size_t i = 0; i < n; ++i) residuals[i] = y[i] - f[i];
    if (cfg.subsample < 1.0) {
      active.clear();
      for (size_t i = 0; i < n; ++i) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        if (u < cfg.subsample) active.push_back(i);
      }
      if (active.empty()) active.push_back(static_cast<size_t>(rng() % n));
    }
    RegressionTree tree = builder.Fit(residuals, active);
    for (size_t i = 0; i < n; ++i) f[i] += cfg.shrinkage * tree.Predict(x.row(i));
    trees.push_back(std::move(tree));
    if (sse_per_round != nullptr) sse_per_round->push_back(SumSquaredError(y, f));
  }
  return GbmModel(base.mean(), cfg.shrinkage, x.cols(), std::move(trees));
}

std::string SerializeModel(const GbmModel& model) {
  std::string out = "GBM v1 features=" + std::to_string(model.feature_count()) +
                    " trees=" + std::to_string(model.trees().size()) +
                    " base=" + FormatDouble(model.base_score()) +
                    " shrinkage=" + FormatDouble(model.shrinkage()) + "\n";
  for (const RegressionTree& tree : model.trees()) WriteTree(tree, 0, out);
  return out;
}

GbmModel ParseModel(std::string_view text) {
  ModelReader reader(text);
  std::string_view header;
  if (!reader.NextLine(&header) || !header.starts_with("GBM v1 ")) {
    throw FormatError("model must start with 'GBM v1'");
  }
  const long long features = ParseInteger(HeaderField(header, "features"));
  const long long n_trees = ParseInteger(HeaderField(header, "trees"));
  const double base = ParseDouble(HeaderField(header, "base"));
  const double shrinkage = ParseDouble(HeaderField(header, "shrinkage"));
  if (features < 1 || n_trees < 0) throw FormatError("model header has invalid counts");
  std::vector<RegressionTree> trees;
  trees.reserve(static_cast<size_t>(n_trees));
  for (long long t = 0; t < n_trees; ++t) {
    std::vector<TreeNode> nodes;
    reader.ReadNode(nodes, static_cast<size_t>(features), 0);
    trees.emplace_back(std::move(nodes));
  }
  std::string_view extra;
  if (reader.NextLine(&extra)) reader.Fail("trailing content after last tree");
  return GbmModel(base, shrinkage, static_cast<size_t>(features), std::move(trees));
}

void SaveModel(const std::filesystem::path& path, const GbmModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << SerializeModel(model);
  if (!out) throw IoError("write failed: " + path.string());
}

GbmModel LoadModel(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return ParseModel(buf.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace maskfuse
