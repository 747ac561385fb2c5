#ifndef MASKFUSE_FUSION_H_
#define MASKFUSE_FUSION_H_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "maskfuse/gbm.h"
#include "maskfuse/mask_core.h"
#include "maskfuse/region_features.h"

namespace maskfuse {

struct FusionConfig {
  double score_threshold = 0.3;    // predicted-IoU floor
  double nms_iou_threshold = 0.3;  // suppress when mask IoU exceeds this

  void Validate() const;
};

// Best IoU of each prediction against any ground-truth instance (0 if none).
std::vector<double> BestIouTargets(std::span<const InstanceMask> preds,
                                   std::span<const InstanceMask> gts);

// One FeatureVector row per instance.
FeatureMatrix FeaturizeInstances(std::span<const InstanceMask> instances, int height, int width);

// Both candidate sets of one image and, for training, its ground truth.
struct FusionImage {
  std::string image_id;
  int height = 0;
  int width = 0;
  std::vector<InstanceMask> candidates_a;
  std::vector<InstanceMask> candidates_b;
  std::vector<InstanceMask> gt;
};

// FNV-1a 64-bit; stable across platforms and runs.
uint64_t StableHash(std::string_view text);

// Images are ordered by (StableHash(id), id) and dealt round-robin into k
// folds, so every fold is non-empty and k == count gives leave-one-out.
std::vector<int> AssignFolds(std::span<const std::string> image_ids, int k);

struct OofRow {
  std::string image_id;
  char source = 'A';
  uint32_t instance_id = 0;
  int fold = 0;
  double target = 0.0;
  double prediction = 0.0;
};

struct OofResult {
  GbmModel model;                    // trained on every row
  std::vector<GbmModel> fold_models;  // fold_models[f] never saw fold f
  std::vector<int> image_fold;        // aligned with the input images
  std::vector<OofRow> rows;           // per image: source A then B, input order
};

// Both sources are pooled into one table with no source feature. Throws
// InsufficientData when k < 2, there are fewer images than folds, or a
// training split has no rows.
OofResult OofTrain(std::span<const FusionImage> images, int k, const TrainingConfig& cfg,
                   int threads = 1);

enum class CandidateStatus { kBelowThreshold, kKept, kSuppressed };

struct FusionDecision {
  char source = 'A';
  uint32_t instance_id = 0;
  double score = 0.0;
  CandidateStatus status = CandidateStatus::kBelowThreshold;
  // Id in the fused label map, 0 when the mask is absent from it.
  uint32_t output_id = 0;
};

struct FusionResult {
  LabelMap labels;
  // Every candidate, in ranking order (score descending, A before B, lower
  // instance id first).
  std::vector<FusionDecision> decisions;
};

// Scores are predicted IoUs aligned with the candidate lists. Candidates below
// the score floor are dropped, the rest go through greedy NMS, surviving
// partial overlaps are split with ResolveOverlaps, and the result is painted
// with ids 1..n in keep order.
FusionResult FuseScored(std::span<const InstanceMask> cand_a, std::span<const double> scores_a,
                        std::span<const InstanceMask> cand_b, std::span<const double> scores_b,
                        int height, int width, const FusionConfig& cfg = {});

FusionResult Fuse(std::span<const InstanceMask> cand_a, std::span<const InstanceMask> cand_b,
                  const GbmModel& model, int height, int width, const FusionConfig& cfg = {});

}  // namespace maskfuse

#endif  // MASKFUSE_FUSION_H_
