#include "maskfuse/evaluation.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "maskfuse/errors.h"
#include "metric_oracles.h"
#include "test_support.h"

namespace maskfuse {
namespace {

using testing::TestRng;

InstanceMask Rect(uint32_t id, int r0, int c0, int r1, int c1) {
  std::vector<Pixel> px;
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) px.push_back({r, c});
  }
  return InstanceMask::FromPixels(id, px);
}

ImagePair Pair(int h, int w, std::vector<InstanceMask> preds, std::vector<InstanceMask> gts) {
  return {"img", h, w, std::move(preds), std::move(gts)};
}

std::vector<ImagePair> RandomScenes(uint64_t seed, int n) {
  TestRng rng(seed);
  std::vector<ImagePair> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(oracle::RandomScene(rng, 64, 12));
    out.back().image_id = "s" + std::to_string(i);
  }
  return out;
}

// Same pixel sets with ids shuffled and lists reordered.
ImagePair Relabel(const ImagePair& img, TestRng& rng) {
  ImagePair out = img;
  for (auto* list : {&out.preds, &out.gts}) {
    std::vector<uint32_t> ids(list->size());
    std::iota(ids.begin(), ids.end(), 100u);
    std::shuffle(ids.begin(), ids.end(), rng.engine());
    for (size_t i = 0; i < list->size(); ++i) (*list)[i].set_id(ids[i]);
    std::shuffle(list->begin(), list->end(), rng.engine());
  }
  return out;
}

TEST(MatchAtThreshold, TrivialCases) {
  const std::vector<InstanceMask> gts = {Rect(1, 0, 0, 3, 3), Rect(2, 6, 6, 9, 9)};
  for (int k = 0; k < 10; ++k) {
    const MatchResult m = MatchAtThreshold(gts, gts, 0.5 + 0.05 * k);
    EXPECT_EQ(m.tp_count(), 2u);
    EXPECT_EQ(m.fp_count, 0u);
    EXPECT_EQ(m.fn_count, 0u);
  }
  const MatchResult none = MatchAtThreshold({}, gts, 0.7);
  EXPECT_EQ(none.tp_count(), 0u);
  EXPECT_EQ(none.fn_count, 2u);
  EXPECT_EQ(none.fp_count, 0u);
  EXPECT_THROW(MatchAtThreshold(gts, gts, 0.49), ThresholdTooLow);
}

TEST(MatchAtThreshold, MatchesExhaustiveAssignment) {
  TestRng rng(71);
  for (int trial = 0; trial < 300; ++trial) {
    const ImagePair img = oracle::RandomScene(rng, 40, 8);
    const oracle::Overlaps o = oracle::ComputeOverlaps(img);
    for (double t : {0.5, 0.7, 0.9}) {
      const MatchResult m = MatchAtThreshold(img.preds, img.gts, t);
      EXPECT_EQ(m.tp_count(), oracle::MaxAssignment(o, t));
      EXPECT_EQ(m.fp_count, img.preds.size() - m.tp_count());
      EXPECT_EQ(m.fn_count, img.gts.size() - m.tp_count());
      std::set<uint32_t> ps, gs;
      for (const MatchPair& p : m.pairs) {
        EXPECT_TRUE(ps.insert(p.pred_id).second);
        EXPECT_TRUE(gs.insert(p.gt_id).second);
        EXPECT_GT(p.iou, t);
      }
    }
  }
}

TEST(KaggleMap, HandEnumeratedExample) {
  // Prediction covers 93 of the 100 pixels of the first GT: IoU 0.93.
  std::vector<Pixel> px;
  for (int r = 0; r < 10; ++r) {
    for (int c = 0; c < 10; ++c) {
      if (!(r == 9 && c < 7)) px.push_back({r, c});
    }
  }
  const std::vector<ImagePair> images = {
      Pair(20, 30, {InstanceMask::FromPixels(1, px)}, {Rect(1, 0, 0, 9, 9), Rect(2, 0, 15, 5, 20)})};
  const MapResult r = KaggleMap(images);
  EXPECT_DOUBLE_EQ(r.map_score, 0.45);
  for (int k = 0; k < 9; ++k) EXPECT_DOUBLE_EQ(r.ap_by_threshold[k], 0.5);
  EXPECT_EQ(r.ap_by_threshold[9], 0.0);
}

TEST(KaggleMap, PerfectEmptyAndZero) {
  const auto scenes = RandomScenes(72, 20);
  std::vector<ImagePair> perfect = scenes, none = scenes;
  for (ImagePair& img : perfect) img.preds = img.gts;
  for (ImagePair& img : none) img.preds.clear();
  EXPECT_EQ(KaggleMap(perfect).map_score, 1.0);
  bool any_gt = false;
  for (const ImagePair& img : none) any_gt |= !img.gts.empty();
  ASSERT_TRUE(any_gt);
  std::vector<ImagePair> nonempty;
  for (const ImagePair& img : none) {
    if (!img.gts.empty()) nonempty.push_back(img);
  }
  EXPECT_EQ(KaggleMap(nonempty).map_score, 0.0);
  EXPECT_EQ(KaggleMap(std::vector<ImagePair>{Pair(5, 5, {}, {})}).map_score, 1.0);
}

TEST(KaggleMap, MatchesNaiveImplementation) {
  const auto scenes = RandomScenes(73, 200);
  const MapResult fast = KaggleMap(scenes);
  const MapResult slow = oracle::KaggleMap(scenes);
  EXPECT_NEAR(fast.map_score, slow.map_score, 1e-12);
  for (int k = 0; k < 10; ++k) EXPECT_NEAR(fast.ap_by_threshold[k], slow.ap_by_threshold[k], 1e-12);
}

TEST(KaggleMap, ImageScoreNonIncreasingInThreshold) {
  const auto scenes = RandomScenes(74, 100);
  for (const ImagePair& img : scenes) {
    const MapResult r = KaggleMap(std::span(&img, 1));
    double previous = 2.0;
    for (int k = 0; k < 10; ++k) {
      EXPECT_LE(r.ap_by_threshold[k], previous);
      previous = r.ap_by_threshold[k];
    }
  }
}

TEST(DetectionStats, Fixtures) {
  const std::vector<ImagePair> exact = {Pair(10, 10, {Rect(1, 0, 0, 3, 3)}, {Rect(1, 0, 0, 3, 3)})};
  const DetectionStats e = ComputeDetectionStats(exact);
  EXPECT_EQ(e.precision, 1.0);
  EXPECT_EQ(e.recall, 1.0);
  EXPECT_EQ(e.oseg_count, 0);
  EXPECT_EQ(e.useg_count, 0);

  // One GT cut into two halves.
  const std::vector<ImagePair> split = {
      Pair(10, 12, {Rect(1, 0, 0, 3, 4), Rect(2, 0, 5, 3, 9)}, {Rect(1, 0, 0, 3, 9)})};
  const DetectionStats s = ComputeDetectionStats(split);
  EXPECT_EQ(s.oseg_count, 1);
  EXPECT_EQ(s.useg_count, 0);
  EXPECT_EQ(s.tp, 0);
  EXPECT_EQ(s.fp, 2);
  EXPECT_EQ(s.fn, 1);

  // One prediction covering two GT instances.
  const std::vector<ImagePair> merged = {
      Pair(10, 12, {Rect(1, 0, 0, 3, 9)}, {Rect(1, 0, 0, 3, 4), Rect(2, 0, 5, 3, 9)})};
  const DetectionStats m = ComputeDetectionStats(merged);
  EXPECT_EQ(m.useg_count, 1);
  EXPECT_EQ(m.oseg_count, 0);

  // Nothing predicted, nothing there.
  const DetectionStats empty = ComputeDetectionStats(std::vector<ImagePair>{Pair(4, 4, {}, {})});
  EXPECT_EQ(empty.precision, 1.0);
  EXPECT_EQ(empty.recall, 1.0);
  EXPECT_THROW(ComputeDetectionStats(exact, 0.3), ThresholdTooLow);
}

TEST(DetectionStats, MatchesNaiveImplementation) {
  const auto scenes = RandomScenes(75, 200);
  for (double t : {0.5, 0.7, 0.85}) {
    const DetectionStats fast = ComputeDetectionStats(scenes, t);
    const DetectionStats slow = oracle::Detection(scenes, t);
    EXPECT_EQ(fast.tp, slow.tp);
    EXPECT_EQ(fast.fp, slow.fp);
    EXPECT_EQ(fast.fn, slow.fn);
    EXPECT_EQ(fast.oseg_count, slow.oseg_count);
    EXPECT_EQ(fast.useg_count, slow.useg_count);
    EXPECT_NEAR(fast.precision, slow.precision, 1e-12);
    EXPECT_NEAR(fast.recall, slow.recall, 1e-12);
  }
}

TEST(DetectionStats, MacroAveragesPerImageRatios) {
  const auto scenes = RandomScenes(76, 30);
  const DetectionStats macro = ComputeDetectionStats(scenes, 0.7, Aggregation::kMacro);
  double p = 0, r = 0;
  for (const ImagePair& img : scenes) {
    const DetectionStats one = oracle::Detection({img}, 0.7);
    p += one.precision;
    r += one.recall;
  }
  EXPECT_NEAR(macro.precision, p / 30, 1e-12);
  EXPECT_NEAR(macro.recall, r / 30, 1e-12);
  const DetectionStats micro = ComputeDetectionStats(scenes, 0.7);
  EXPECT_EQ(macro.tp, micro.tp);
  EXPECT_EQ(macro.useg_count, micro.useg_count);
}

TEST(ObjectDice, FixturesAndOracle) {
  const std::vector<InstanceMask> gts = {Rect(1, 0, 0, 3, 3), Rect(2, 6, 6, 9, 9)};
  EXPECT_EQ(ImageObjectDice(gts, gts), 1.0);
  EXPECT_EQ(ImageObjectDice({}, gts), 0.0);
  EXPECT_EQ(ObjectDice(std::vector<ImagePair>{Pair(10, 10, {}, {})}), 1.0);

  // Half of the first GT predicted (Dice 2/3), second GT missed. GT side is
  // area weighted: (16/32)(2/3) + 0; prediction side: 2/3.
  const std::vector<InstanceMask> half = {Rect(1, 0, 0, 1, 3)};
  EXPECT_DOUBLE_EQ(ImageObjectDice(half, gts), 0.5 * (0.5 * 2.0 / 3 + 2.0 / 3));

  const auto scenes = RandomScenes(77, 200);
  EXPECT_NEAR(ObjectDice(scenes), oracle::ObjectDice(scenes), 1e-12);
}

TEST(Metrics, InvariantToRelabelingAndImageOrder) {
  TestRng rng(78);
  const auto scenes = RandomScenes(79, 60);
  std::vector<ImagePair> shuffled;
  for (const ImagePair& img : scenes) shuffled.push_back(Relabel(img, rng));
  std::shuffle(shuffled.begin(), shuffled.end(), rng.engine());

  const DetectionStats a = ComputeDetectionStats(scenes);
  const DetectionStats b = ComputeDetectionStats(shuffled);
  EXPECT_EQ(a.tp, b.tp);
  EXPECT_EQ(a.fp, b.fp);
  EXPECT_EQ(a.fn, b.fn);
  EXPECT_EQ(a.oseg_count, b.oseg_count);
  EXPECT_EQ(a.useg_count, b.useg_count);
  EXPECT_EQ(a.precision, b.precision);
  EXPECT_NEAR(ObjectDice(scenes), ObjectDice(shuffled), 1e-12);
  EXPECT_NEAR(KaggleMap(scenes).map_score, KaggleMap(shuffled).map_score, 1e-12);
}

TEST(Evaluate, ThreadCountDoesNotChangeReport) {
  const auto scenes = RandomScenes(80, 50);
  const EvalReport one = Evaluate(scenes, 0.7, Aggregation::kMicro, 1);
  const EvalReport four = Evaluate(scenes, 0.7, Aggregation::kMicro, 4);
  EXPECT_EQ(one.map.map_score, four.map.map_score);
  EXPECT_EQ(one.map.ap_by_threshold, four.map.ap_by_threshold);
  EXPECT_EQ(one.object_dice, four.object_dice);
  EXPECT_EQ(one.stats.precision, four.stats.precision);
  EXPECT_EQ(one.stats.useg_count, four.stats.useg_count);
  EXPECT_EQ(one.image_count, 50u);
  EXPECT_EQ(one.map.map_score, KaggleMap(scenes).map_score);
}

TEST(ClusterSizes, Fixtures) {
  LabelMap single(10, 10);
  single.set(4, 4, 1);
  EXPECT_EQ(ClusterSizes(single), std::vector<int>{1});

  const std::vector<InstanceMask> near = {Rect(1, 0, 0, 2, 2), Rect(2, 0, 4, 2, 6)};
  EXPECT_EQ(ClusterSizes(near, 10, 10), (std::vector<int>{2, 2}));

  const std::vector<InstanceMask> far = {Rect(1, 0, 0, 2, 2), Rect(2, 0, 13, 2, 15)};
  EXPECT_EQ(ClusterSizes(far, 10, 20), (std::vector<int>{1, 1}));

  const std::vector<InstanceMask> chain = {Rect(1, 0, 0, 1, 1), Rect(2, 0, 3, 1, 4),
                                           Rect(3, 0, 6, 1, 7), Rect(4, 8, 8, 9, 9)};
  EXPECT_EQ(ClusterSizes(chain, 12, 12), (std::vector<int>{3, 3, 3, 1}));
}

TEST(Sensitivity, EqualCountBinsInValueOrder) {
  // Eight single-row bars of areas 10..17; the even ones are predicted.
  ImagePair img;
  img.height = 20;
  img.width = 20;
  for (int i = 0; i < 8; ++i) {
    img.gts.push_back(Rect(static_cast<uint32_t>(i + 1), 2 * i, 0, 2 * i, 9 + i));
    if (i % 2 == 0) img.preds.push_back(img.gts.back());
  }
  const SensitivityReport rep = ComputeSensitivity(std::vector<ImagePair>{img}, SensitivityProperty::kArea);
  ASSERT_EQ(rep.bins.size(), 4u);
  for (int b = 0; b < 4; ++b) {
    EXPECT_EQ(rep.bins[b].gt_count, 2);
    EXPECT_EQ(rep.bins[b].low, 10 + 2 * b);
    EXPECT_EQ(rep.bins[b].high, 11 + 2 * b);
    EXPECT_EQ(rep.bins[b].matched, 1);
    EXPECT_EQ(rep.bins[b].recall, 0.5);
  }
  EXPECT_THROW(ComputeSensitivity(std::vector<ImagePair>{img}, SensitivityProperty::kArea, 9),
               InsufficientData);
}

TEST(Sensitivity, LargeInstancesDroppedGiveZeroUpperRecall) {
  TestRng rng(81);
  std::vector<ImagePair> images;
  std::vector<int64_t> areas;
  for (int i = 0; i < 10; ++i) {
    ImagePair img = oracle::RandomScene(rng, 48, 8);
    for (const InstanceMask& g : img.gts) areas.push_back(g.area());
    images.push_back(std::move(img));
  }
  std::vector<int64_t> sorted = areas;
  std::sort(sorted.begin(), sorted.end());
  // Pick a cut with no tie across the midpoint.
  const size_t half = sorted.size() / 2;
  ASSERT_LT(sorted[half - 1], sorted[half]) << "pick another seed";
  const int64_t cut = sorted[half - 1];
  for (ImagePair& img : images) {
    img.preds.clear();
    for (const InstanceMask& g : img.gts) {
      if (g.area() <= cut) img.preds.push_back(g);
    }
  }
  const SensitivityReport rep = ComputeSensitivity(images, SensitivityProperty::kArea, 2);
  ASSERT_EQ(rep.bins.size(), 2u);
  EXPECT_EQ(rep.bins[0].recall, 1.0);
  EXPECT_EQ(rep.bins[1].recall, 0.0);
}

TEST(Sensitivity, BinsPartitionPopulation) {
  const auto scenes = RandomScenes(82, 40);
  size_t total = 0;
  for (const ImagePair& img : scenes) total += img.gts.size();
  for (auto prop : {SensitivityProperty::kArea, SensitivityProperty::kEccentricity,
                    SensitivityProperty::kClusterSize}) {
    for (int bins : {1, 3, 4, 7}) {
      const SensitivityReport rep = ComputeSensitivity(scenes, prop, bins);
      int64_t sum = 0, matched = 0;
      int64_t smallest = std::numeric_limits<int64_t>::max(), largest = 0;
      for (const SensitivityBin& b : rep.bins) {
        sum += b.gt_count;
        matched += b.matched;
        EXPECT_LE(b.low, b.high);
        smallest = std::min(smallest, b.gt_count);
        largest = std::max(largest, b.gt_count);
      }
      EXPECT_EQ(sum, static_cast<int64_t>(total));
      EXPECT_EQ(matched, ComputeDetectionStats(scenes).tp);
      for (size_t b = 1; b < rep.bins.size(); ++b) EXPECT_LE(rep.bins[b - 1].high, rep.bins[b].low);
      if (prop != SensitivityProperty::kClusterSize) {
        EXPECT_EQ(rep.bins.size(), static_cast<size_t>(bins));
        EXPECT_LE(largest - smallest, 1);
      } else {
        EXPECT_EQ(rep.bins.size(), 4u);
      }
    }
  }
}

TEST(Sensitivity, ClusterGroups) {
  // Sizes 1, 2, 3 and 6 arranged as separated clumps of 2x2 squares.
  ImagePair img;
  img.height = 40;
  img.width = 40;
  uint32_t id = 1;
  auto clump = [&](int row, int count) {
    for (int k = 0; k < count; ++k) img.gts.push_back(Rect(id++, row, 3 * k, row + 1, 3 * k + 1));
  };
  clump(0, 1);
  clump(5, 2);
  clump(10, 3);
  clump(15, 6);
  img.preds = img.gts;
  const SensitivityReport rep = ComputeSensitivity(std::vector<ImagePair>{img}, SensitivityProperty::kClusterSize);
  ASSERT_EQ(rep.bins.size(), 4u);
  EXPECT_EQ(rep.bins[0].gt_count, 1);
  EXPECT_EQ(rep.bins[1].gt_count, 2);
  EXPECT_EQ(rep.bins[2].gt_count, 3);
  EXPECT_EQ(rep.bins[3].gt_count, 6);
  EXPECT_TRUE(std::isinf(rep.bins[3].high));
  for (const SensitivityBin& b : rep.bins) EXPECT_EQ(b.recall, 1.0);
}

}  // namespace
}  // namespace maskfuse
