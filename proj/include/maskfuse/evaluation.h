#ifndef MASKFUSE_EVALUATION_H_
#define MASKFUSE_EVALUATION_H_

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "maskfuse/mask_core.h"

namespace maskfuse {

// IoU thresholds 0.50, 0.55, ..., 0.95.
inline constexpr std::array<double, 10> kIouThresholds = {0.50, 0.55, 0.60, 0.65, 0.70,
                                                          0.75, 0.80, 0.85, 0.90, 0.95};
inline constexpr double kReportThreshold = 0.7;

struct MatchPair {
  uint32_t pred_id = 0;
  uint32_t gt_id = 0;
  double iou = 0.0;
};

struct MatchResult {
  double threshold = 0.0;
  std::vector<MatchPair> pairs;
  size_t fp_count = 0;
  size_t fn_count = 0;

  size_t tp_count() const { return pairs.size(); }
};

// Pairs (p, g) with IoU(p, g) > t. For t >= 0.5 and pixel-disjoint sets each
// mask has at most one such partner; overlapping inputs fall back to greedy
// highest-IoU pairing. Throws ThresholdTooLow for t < 0.5.
MatchResult MatchAtThreshold(std::span<const InstanceMask> preds,
                             std::span<const InstanceMask> gts, double t);

// Predictions and ground truth of one image.
struct ImagePair {
  std::string image_id;
  int height = 0;
  int width = 0;
  std::vector<InstanceMask> preds;
  std::vector<InstanceMask> gts;
};

struct MapResult {
  double map_score = 0.0;
  std::array<double, 10> ap_by_threshold{};
};

// Per image and threshold TP / (TP + FP + FN), 1 when both sides are empty;
// the image score averages the thresholds and the result averages images.
MapResult KaggleMap(std::span<const ImagePair> images);

enum class Aggregation { kMicro, kMacro };

struct DetectionStats {
  double precision = 0.0;
  double recall = 0.0;
  int64_t oseg_count = 0;  // GT instances majority-covering >= 2 predictions
  int64_t useg_count = 0;  // predictions majority-covering >= 2 GT instances
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t fn = 0;
};

// Precision/recall at threshold t. A 0/0 ratio counts as 1 only when the
// other error count is also zero (nothing predicted, nothing missed).
// Over-segmentation: GT g with >= 2 predictions p where |p & g| / |p| >= 0.5.
// Under-segmentation: prediction p with >= 2 GT g where |p & g| / |g| >= 0.5.
DetectionStats ComputeDetectionStats(std::span<const ImagePair> images,
                                     double t = kReportThreshold,
                                     Aggregation aggregation = Aggregation::kMicro);

// Symmetric area-weighted object Dice, averaged over images whose GT or
// prediction set is non-empty (1.0 when there are none). Each object is scored
// against its largest-overlap partner; among equal overlaps the smaller
// partner (higher Dice) is used, so the value does not depend on list order.
double ObjectDice(std::span<const ImagePair> images);
double ImageObjectDice(std::span<const InstanceMask> preds, std::span<const InstanceMask> gts);

// Number of GT instances sharing each instance's connected component after the
// foreground is dilated (square element). Aligned with `gts` order.
std::vector<int> ClusterSizes(std::span<const InstanceMask> gts, int height, int width,
                              int dilation_radius = 1);
std::vector<int> ClusterSizes(const LabelMap& gt, int dilation_radius = 1);

enum class SensitivityProperty { kArea, kEccentricity, kClusterSize };
const char* SensitivityPropertyName(SensitivityProperty property);

struct SensitivityBin {
  double low = 0.0;
  double high = 0.0;  // inclusive; +inf for the open cluster-size group
  int64_t gt_count = 0;
  int64_t matched = 0;
  double recall = 0.0;
};

struct SensitivityReport {
  SensitivityProperty property = SensitivityProperty::kArea;
  std::vector<SensitivityBin> bins;
};

// Continuous properties: GT instances sorted by (value, image, id) and split
// into `bins` contiguous groups whose sizes differ by at most one; adjacent
// ranges may share an endpoint when equal values straddle a boundary.
// Cluster size uses the fixed groups {1}, {2}, {3-5}, {>=6}. Throws
// InsufficientData when there are fewer GT instances than bins.
SensitivityReport ComputeSensitivity(std::span<const ImagePair> images,
                                     SensitivityProperty property, int bins = 4,
                                     double t = kReportThreshold, int cluster_radius = 1);

struct EvalReport {
  MapResult map;
  double object_dice = 0.0;
  DetectionStats stats;
  size_t image_count = 0;
};

// Per-image work runs on `threads` workers; aggregation is order-independent.
EvalReport Evaluate(std::span<const ImagePair> images, double t = kReportThreshold,
                    Aggregation aggregation = Aggregation::kMicro, int threads = 1);

}  // namespace maskfuse

#endif  // MASKFUSE_EVALUATION_H_
