#include "maskfuse/fusion.h"

#include <algorithm>
#include <numeric>
#include <tuple>

#include "maskfuse/errors.h"
#include "maskfuse/parallel.h"
#include "maskfuse/post_process.h"

namespace maskfuse {
namespace {

struct ImageTable {
  FeatureMatrix features{kFeatureCount};
  std::vector<double> targets;
  std::vector<char> sources;
  std::vector<uint32_t> ids;
};

ImageTable BuildImageTable(const FusionImage& image) {
  ImageTable t;
  auto add = [&](std::span<const InstanceMask> cands, char source) {
    const FeatureMatrix f = FeaturizeInstances(cands, image.height, image.width);
    const std::vector<double> y = BestIouTargets(cands, image.gt);
    for (size_t i = 0; i < cands.size(); ++i) {
      t.features.AppendRow(f.row(i));
      t.targets.push_back(y[i]);
      t.sources.push_back(source);
      t.ids.push_back(cands[i].id());
    }
  };
  add(image.candidates_a, 'A');
  add(image.candidates_b, 'B');
  return t;
}

void CheckDims(std::span<const InstanceMask> cands, int height, int width) {
  for (const InstanceMask& c : cands) {
    const BoundingBox& b = c.bbox();
    if (b.min_row < 0 || b.min_col < 0 || b.max_row >= height || b.max_col >= width) {
      throw DimensionMismatch("candidate " + std::to_string(c.id()) + " lies outside the " +
                              std::to_string(height) + "x" + std::to_string(width) + " image");
    }
  }
}

}  // namespace

void FusionConfig::Validate() const {
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0)) {
    throw ConfigError("score threshold must be in [0, 1]");
  }
  if (!(nms_iou_threshold >= 0.0 && nms_iou_threshold <= 1.0)) {
    throw ConfigError("NMS IoU threshold must be in [0, 1]");
  }
}

std::vector<double> BestIouTargets(std::span<const InstanceMask> preds,
                                   std::span<const InstanceMask> gts) {
  const IouMatrix m = PairwiseIou(preds, gts);
  std::vector<double> out(preds.size(), 0.0);
  for (size_t i = 0; i < m.rows; ++i) {
    for (size_t j = 0; j < m.cols; ++j) out[i] = std::max(out[i], m.at(i, j));
  }
  return out;
}

FeatureMatrix FeaturizeInstances(std::span<const InstanceMask> instances, int height, int width) {
  FeatureMatrix m(kFeatureCount);
  for (const InstanceMask& inst : instances) {
    m.AppendRow(MakeFeatureVector(ComputeProperties(inst), height, width));
  }
  return m;
}

uint64_t StableHash(std::string_view text) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<int> AssignFolds(std::span<const std::string> image_ids, int k) {
  if (k < 2) throw InsufficientData("need at least 2 folds");
  if (image_ids.size() < static_cast<size_t>(k)) {
    throw InsufficientData(std::to_string(image_ids.size()) + " images cannot fill " +
                           std::to_string(k) + " folds");
  }
  std::vector<size_t> order(image_ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return std::tuple(StableHash(image_ids[a]), image_ids[a], a) <
           std::tuple(StableHash(image_ids[b]), image_ids[b], b);
  });
  std::vector<int> fold(image_ids.size());
  for (size_t rank = 0; rank < order.size(); ++rank) fold[order[rank]] = static_cast<int>(rank % k);
  return fold;
}

OofResult OofTrain(std::span<const FusionImage> images, int k, const TrainingConfig& cfg,
                   int threads) {
  cfg.Validate();
  std::vector<std::string> ids;
  ids.reserve(images.size());
  for (const FusionImage& img : images) ids.push_back(img.image_id);
  OofResult result;
  result.image_fold = AssignFolds(ids, k);

  std::vector<ImageTable> tables(images.size());
  ParallelFor(images.size(), threads, [&](size_t i) { tables[i] = BuildImageTable(images[i]); });

  auto gather = [&](auto include) {
    std::pair<FeatureMatrix, std::vector<double>> out{FeatureMatrix(kFeatureCount), {}};
    for (size_t i = 0; i < images.size(); ++i) {
      if (!include(i)) continue;
      for (size_t r = 0; r < tables[i].targets.size(); ++r) {
        out.first.AppendRow(tables[i].features.row(r));
        out.second.push_back(tables[i].targets[r]);
      }
    }
    return out;
  };

  result.fold_models.resize(static_cast<size_t>(k));
  ParallelFor(static_cast<size_t>(k), threads, [&](size_t f) {
    auto [x, y] = gather([&](size_t i) { return result.image_fold[i] != static_cast<int>(f); });
    if (x.rows() == 0) {
      throw InsufficientData("training split for fold " + std::to_string(f) + " has no candidates");
    }
    result.fold_models[f] = TrainGbm(x, y, cfg);
  });
  {
    auto [x, y] = gather([](size_t) { return true; });
    if (x.rows() == 0) throw InsufficientData("no candidate masks to train on");
    result.model = TrainGbm(x, y, cfg);
  }

  for (size_t i = 0; i < images.size(); ++i) {
    const int fold = result.image_fold[i];
    const GbmModel& m = result.fold_models[static_cast<size_t>(fold)];
    const ImageTable& t = tables[i];
    for (size_t r = 0; r < t.targets.size(); ++r) {
      result.rows.push_back(OofRow{images[i].image_id, t.sources[r], t.ids[r], fold, t.targets[r],
                                   m.Predict(t.features.row(r))});
    }
  }
  return result;
}

FusionResult FuseScored(std::span<const InstanceMask> cand_a, std::span<const double> scores_a,
                        std::span<const InstanceMask> cand_b, std::span<const double> scores_b,
                        int height, int width, const FusionConfig& cfg) {
  cfg.Validate();
  if (cand_a.size() != scores_a.size() || cand_b.size() != scores_b.size()) {
    throw LengthMismatch("scores must align with candidates");
  }
  CheckDims(cand_a, height, width);
  CheckDims(cand_b, height, width);

  struct Ranked {
    const InstanceMask* mask;
    FusionDecision decision;
  };
  std::vector<Ranked> ranked;
  for (size_t i = 0; i < cand_a.size(); ++i) {
    ranked.push_back({&cand_a[i], {'A', cand_a[i].id(), scores_a[i]}});
  }
  for (size_t i = 0; i < cand_b.size(); ++i) {
    ranked.push_back({&cand_b[i], {'B', cand_b[i].id(), scores_b[i]}});
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& x, const Ranked& y) {
    if (x.decision.score != y.decision.score) return x.decision.score > y.decision.score;
    if (x.decision.source != y.decision.source) return x.decision.source < y.decision.source;
    return x.decision.instance_id < y.decision.instance_id;
  });

  std::vector<size_t> kept;
  for (size_t i = 0; i < ranked.size(); ++i) {
    FusionDecision& d = ranked[i].decision;
    if (d.score < cfg.score_threshold) {
      d.status = CandidateStatus::kBelowThreshold;
      continue;
    }
    bool suppressed = false;
    for (size_t k : kept) {
      if (Iou(*ranked[i].mask, *ranked[k].mask) > cfg.nms_iou_threshold) {
        suppressed = true;
        break;
      }
    }
    d.status = suppressed ? CandidateStatus::kSuppressed : CandidateStatus::kKept;
    if (!suppressed) kept.push_back(i);
  }

  // Keep-order ids make ResolveOverlaps favour the higher-ranked mask on ties.
  std::vector<InstanceMask> survivors;
  survivors.reserve(kept.size());
  for (size_t rank = 0; rank < kept.size(); ++rank) {
    InstanceMask m = *ranked[kept[rank]].mask;
    m.set_id(static_cast<uint32_t>(rank + 1));
    survivors.push_back(std::move(m));
  }
  std::vector<InstanceMask> resolved = ResolveOverlaps(survivors);
  uint32_t next = 1;
  for (InstanceMask& m : resolved) {
    ranked[kept[m.id() - 1]].decision.output_id = next;
    m.set_id(next++);
  }

  FusionResult result;
  result.labels = LabelMapFromInstances(resolved, height, width, OverlapPolicy::kError);
  result.decisions.reserve(ranked.size());
  for (const Ranked& r : ranked) result.decisions.push_back(r.decision);
  return result;
}

FusionResult Fuse(std::span<const InstanceMask> cand_a, std::span<const InstanceMask> cand_b,
                  const GbmModel& model, int height, int width, const FusionConfig& cfg) {
  const std::vector<double> scores_a =
      model.PredictBatch(FeaturizeInstances(cand_a, height, width));
  const std::vector<double> scores_b =
      model.PredictBatch(FeaturizeInstances(cand_b, height, width));
  return FuseScored(cand_a, scores_a, cand_b, scores_b, height, width, cfg);
}

}  // namespace maskfuse
