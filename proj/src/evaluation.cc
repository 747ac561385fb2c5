#include "maskfuse/evaluation.h"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <tuple>

#include "maskfuse/errors.h"
#include "maskfuse/parallel.h"
#include "maskfuse/region_features.h"

namespace maskfuse {
namespace {

struct OverlapTable {
  size_t rows = 0;  // predictions
  size_t cols = 0;  // ground truth
  std::vector<int64_t> inter;
  std::vector<double> iou;
};

OverlapTable BuildOverlaps(std::span<const InstanceMask> preds, std::span<const InstanceMask> gts) {
  OverlapTable t;
  t.rows = preds.size();
  t.cols = gts.size();
  t.inter.assign(t.rows * t.cols, 0);
  t.iou.assign(t.rows * t.cols, 0.0);
  for (size_t i = 0; i < t.rows; ++i) {
    for (size_t j = 0; j < t.cols; ++j) {
      const int64_t inter = IntersectionArea(preds[i], gts[j]);
      t.inter[i * t.cols + j] = inter;
      if (inter > 0) {
        t.iou[i * t.cols + j] = static_cast<double>(inter) /
                                static_cast<double>(preds[i].area() + gts[j].area() - inter);
      }
    }
  }
  return t;
}

// (pred index, gt index, iou) for IoU > t, greedy by IoU when a mask has
// several candidates (impossible for disjoint sets with t >= 0.5).
std::vector<std::tuple<size_t, size_t, double>> MatchFromTable(const OverlapTable& t,
                                                               double threshold) {
  std::vector<std::tuple<size_t, size_t, double>> cands;
  for (size_t i = 0; i < t.rows; ++i) {
    for (size_t j = 0; j < t.cols; ++j) {
      const double v = t.iou[i * t.cols + j];
      if (v > threshold) cands.emplace_back(i, j, v);
    }
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const auto& a, const auto& b) { return std::get<2>(a) > std::get<2>(b); });
  std::vector<uint8_t> pred_used(t.rows, 0), gt_used(t.cols, 0);
  std::vector<std::tuple<size_t, size_t, double>> pairs;
  for (const auto& [i, j, v] : cands) {
    if (pred_used[i] || gt_used[j]) continue;
    pred_used[i] = 1;
    gt_used[j] = 1;
    pairs.emplace_back(i, j, v);
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

double Ratio(int64_t num, int64_t den, int64_t other_errors) {
  if (den > 0) return static_cast<double>(num) / static_cast<double>(den);
  return other_errors == 0 ? 1.0 : 0.0;
}

struct ImageEval {
  std::array<double, 10> score{};
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t fn = 0;
  int64_t oseg = 0;
  int64_t useg = 0;
  double dice = 0.0;
  bool dice_counted = false;
};

double DiceFromTable(const OverlapTable& t, std::span<const InstanceMask> preds,
                     std::span<const InstanceMask> gts) {
  auto dice = [](int64_t inter, int64_t a, int64_t b) {
    return inter == 0 ? 0.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
  };
  double gt_side = 0.0;
  int64_t gt_total = 0;
  for (const InstanceMask& g : gts) gt_total += g.area();
  for (size_t j = 0; j < t.cols; ++j) {
    size_t best = t.rows;
    int64_t best_inter = 0;
    for (size_t i = 0; i < t.rows; ++i) {
      const int64_t in = t.inter[i * t.cols + j];
      if (in > best_inter || (in > 0 && in == best_inter && preds[i].area() < preds[best].area())) {
        best_inter = in;
        best = i;
      }
    }
    const double d = best == t.rows ? 0.0 : dice(best_inter, gts[j].area(), preds[best].area());
    gt_side += static_cast<double>(gts[j].area()) / static_cast<double>(gt_total) * d;
  }
  double pred_side = 0.0;
  int64_t pred_total = 0;
  for (const InstanceMask& p : preds) pred_total += p.area();
  for (size_t i = 0; i < t.rows; ++i) {
    size_t best = t.cols;
    int64_t best_inter = 0;
    for (size_t j = 0; j < t.cols; ++j) {
      const int64_t in = t.inter[i * t.cols + j];
      if (in > best_inter || (in > 0 && in == best_inter && gts[j].area() < gts[best].area())) {
        best_inter = in;
        best = j;
      }
    }
    const double d = best == t.cols ? 0.0 : dice(best_inter, preds[i].area(), gts[best].area());
    pred_side += static_cast<double>(preds[i].area()) / static_cast<double>(pred_total) * d;
  }
  return 0.5 * (gt_side + pred_side);
}

ImageEval EvaluateImage(const ImagePair& image, double t) {
  const OverlapTable table = BuildOverlaps(image.preds, image.gts);
  ImageEval e;
  const int64_t n_pred = static_cast<int64_t>(image.preds.size());
  const int64_t n_gt = static_cast<int64_t>(image.gts.size());
  for (size_t k = 0; k < kIouThresholds.size(); ++k) {
    if (n_pred == 0 && n_gt == 0) {
      e.score[k] = 1.0;
      continue;
    }
    const int64_t tp = static_cast<int64_t>(MatchFromTable(table, kIouThresholds[k]).size());
    e.score[k] = static_cast<double>(tp) / static_cast<double>(n_pred + n_gt - tp);
  }
  e.tp = static_cast<int64_t>(MatchFromTable(table, t).size());
  e.fp = n_pred - e.tp;
  e.fn = n_gt - e.tp;

  for (size_t j = 0; j < table.cols; ++j) {
    int covering = 0;
    for (size_t i = 0; i < table.rows; ++i) {
      if (2 * table.inter[i * table.cols + j] >= image.preds[i].area()) ++covering;
    }
    if (covering >= 2) ++e.oseg;
  }
  for (size_t i = 0; i < table.rows; ++i) {
    int covered = 0;
    for (size_t j = 0; j < table.cols; ++j) {
      if (2 * table.inter[i * table.cols + j] >= image.gts[j].area()) ++covered;
    }
    if (covered >= 2) ++e.useg;
  }
  if (n_pred + n_gt > 0) {
    e.dice_counted = true;
    e.dice = DiceFromTable(table, image.preds, image.gts);
  }
  return e;
}

void CheckThreshold(double t) {
  if (!(t >= 0.5)) {
    throw ThresholdTooLow("IoU threshold " + std::to_string(t) +
                          " is below 0.5; matching would be ambiguous");
  }
}

MapResult ReduceMap(std::span<const ImageEval> evals) {
  MapResult r;
  if (evals.empty()) return r;
  double total = 0.0;
  for (const ImageEval& e : evals) {
    double image_score = 0.0;
    for (double s : e.score) image_score += s;
    total += image_score / static_cast<double>(kIouThresholds.size());
    for (size_t k = 0; k < kIouThresholds.size(); ++k) r.ap_by_threshold[k] += e.score[k];
  }
  const double n = static_cast<double>(evals.size());
  r.map_score = total / n;
  for (double& v : r.ap_by_threshold) v /= n;
  return r;
}

DetectionStats ReduceStats(std::span<const ImageEval> evals, Aggregation aggregation) {
  DetectionStats s;
  for (const ImageEval& e : evals) {
    s.tp += e.tp;
    s.fp += e.fp;
    s.fn += e.fn;
    s.oseg_count += e.oseg;
    s.useg_count += e.useg;
  }
  if (aggregation == Aggregation::kMicro || evals.empty()) {
    s.precision = Ratio(s.tp, s.tp + s.fp, s.fn);
    s.recall = Ratio(s.tp, s.tp + s.fn, s.fp);
  } else {
    double p = 0.0, r = 0.0;
    for (const ImageEval& e : evals) {
      p += Ratio(e.tp, e.tp + e.fp, e.fn);
      r += Ratio(e.tp, e.tp + e.fn, e.fp);
    }
    s.precision = p / static_cast<double>(evals.size());
    s.recall = r / static_cast<double>(evals.size());
  }
  return s;
}

double ReduceDice(std::span<const ImageEval> evals) {
  double total = 0.0;
  size_t counted = 0;
  for (const ImageEval& e : evals) {
    if (!e.dice_counted) continue;
    total += e.dice;
    ++counted;
  }
  return counted == 0 ? 1.0 : total / static_cast<double>(counted);
}

std::vector<ImageEval> EvaluateAll(std::span<const ImagePair> images, double t, int threads) {
  std::vector<ImageEval> evals(images.size());
  ParallelFor(images.size(), threads, [&](size_t i) { evals[i] = EvaluateImage(images[i], t); });
  return evals;
}

}  // namespace

MatchResult MatchAtThreshold(std::span<const InstanceMask> preds,
                             std::span<const InstanceMask> gts, double t) {
  CheckThreshold(t);
  const OverlapTable table = BuildOverlaps(preds, gts);
  MatchResult r;
  r.threshold = t;
  for (const auto& [i, j, v] : MatchFromTable(table, t)) {
    r.pairs.push_back({preds[i].id(), gts[j].id(), v});
  }
  r.fp_count = preds.size() - r.pairs.size();
  r.fn_count = gts.size() - r.pairs.size();
  return r;
}

MapResult KaggleMap(std::span<const ImagePair> images) {
  return ReduceMap(EvaluateAll(images, kReportThreshold, 1));
}

DetectionStats ComputeDetectionStats(std::span<const ImagePair> images, double t,
                                     Aggregation aggregation) {
  CheckThreshold(t);
  return ReduceStats(EvaluateAll(images, t, 1), aggregation);
}

double ImageObjectDice(std::span<const InstanceMask> preds, std::span<const InstanceMask> gts) {
  return DiceFromTable(BuildOverlaps(preds, gts), preds, gts);
}

double ObjectDice(std::span<const ImagePair> images) {
  return ReduceDice(EvaluateAll(images, kReportThreshold, 1));
}

EvalReport Evaluate(std::span<const ImagePair> images, double t, Aggregation aggregation,
                    int threads) {
  CheckThreshold(t);
  const std::vector<ImageEval> evals = EvaluateAll(images, t, threads);
  EvalReport report;
  report.map = ReduceMap(evals);
  report.object_dice = ReduceDice(evals);
  report.stats = ReduceStats(evals, aggregation);
  report.image_count = images.size();
  return report;
}

std::vector<int> ClusterSizes(std::span<const InstanceMask> gts, int height, int width,
                              int dilation_radius) {
  if (gts.empty()) return {};
  BinaryMask fg(height, width);
  for (const InstanceMask& g : gts) {
    for (const Pixel& p : g.pixels()) fg.set(p.row, p.col);
  }
  const LabelMap comps =
      ConnectedComponents(Dilate(fg, dilation_radius, StructuringElement::kSquare),
                          Connectivity::kEight);
  std::vector<uint32_t> comp_of(gts.size());
  std::map<uint32_t, int> members;
  for (size_t i = 0; i < gts.size(); ++i) {
    const Pixel first = gts[i].pixels().front();
    comp_of[i] = comps.at(first.row, first.col);
    ++members[comp_of[i]];
  }
  std::vector<int> sizes(gts.size());
  for (size_t i = 0; i < gts.size(); ++i) sizes[i] = members[comp_of[i]];
  return sizes;
}

std::vector<int> ClusterSizes(const LabelMap& gt, int dilation_radius) {
  return ClusterSizes(InstancesFromLabelMap(gt), gt.height(), gt.width(), dilation_radius);
}

const char* SensitivityPropertyName(SensitivityProperty property) {
  switch (property) {
    case SensitivityProperty::kArea:
      return "area";
    case SensitivityProperty::kEccentricity:
      return "eccentricity";
    case SensitivityProperty::kClusterSize:
      return "cluster_size";
  }
  return "unknown";
}

SensitivityReport ComputeSensitivity(std::span<const ImagePair> images,
                                     SensitivityProperty property, int bins, double t,
                                     int cluster_radius) {
  CheckThreshold(t);
  struct Record {
    double value;
    size_t image;
    uint32_t id;
    bool matched;
  };
  std::vector<Record> records;
  for (size_t k = 0; k < images.size(); ++k) {
    const ImagePair& img = images[k];
    std::set<uint32_t> matched;
    for (const MatchPair& p : MatchAtThreshold(img.preds, img.gts, t).pairs) matched.insert(p.gt_id);
    std::vector<int> clusters;
    if (property == SensitivityProperty::kClusterSize) {
      clusters = ClusterSizes(img.gts, img.height, img.width, cluster_radius);
    }
    for (size_t j = 0; j < img.gts.size(); ++j) {
      const InstanceMask& g = img.gts[j];
      double value = 0.0;
      switch (property) {
        case SensitivityProperty::kArea:
          value = static_cast<double>(g.area());
          break;
        case SensitivityProperty::kEccentricity:
          value = ComputeProperties(g).eccentricity;
          break;
        case SensitivityProperty::kClusterSize:
          value = clusters[j];
          break;
      }
      records.push_back({value, k, g.id(), matched.contains(g.id())});
    }
  }

  SensitivityReport report;
  report.property = property;
  auto finish = [](SensitivityBin& bin) {
    bin.recall = bin.gt_count == 0 ? 0.0
                                   : static_cast<double>(bin.matched) /
                                         static_cast<double>(bin.gt_count);
  };

  if (property == SensitivityProperty::kClusterSize) {
    if (records.empty()) throw InsufficientData("no ground-truth instances to analyze");
    const double inf = std::numeric_limits<double>::infinity();
    report.bins = {{1, 1}, {2, 2}, {3, 5}, {6, inf}};
    for (const Record& r : records) {
      for (SensitivityBin& bin : report.bins) {
        if (r.value >= bin.low && r.value <= bin.high) {
          ++bin.gt_count;
          if (r.matched) ++bin.matched;
          break;
        }
      }
    }
    for (SensitivityBin& bin : report.bins) finish(bin);
    return report;
  }

  if (bins < 1) throw ConfigError("bin count must be >= 1");
  if (records.size() < static_cast<size_t>(bins)) {
    throw InsufficientData(std::to_string(records.size()) + " ground-truth instances cannot fill " +
                           std::to_string(bins) + " bins");
  }
  std::stable_sort(records.begin(), records.end(), [](const Record& a, const Record& b) {
    return std::tie(a.value, a.image, a.id) < std::tie(b.value, b.image, b.id);
  });
  const size_t n = records.size();
  const size_t nb = static_cast<size_t>(bins);
  size_t start = 0;
  for (size_t b = 0; b < nb; ++b) {
    const size_t size = n / nb + (b < n % nb ? 1 : 0);
    SensitivityBin bin;
    bin.low = records[start].value;
    bin.high = records[start + size - 1].value;
    for (size_t i = start; i < start + size; ++i) {
      ++bin.gt_count;
      if (records[i].matched) ++bin.matched;
    }
    finish(bin);
    report.bins.push_back(bin);
    start += size;
  }
  return report;
}

}  // namespace maskfuse
