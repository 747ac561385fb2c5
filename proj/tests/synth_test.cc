#include "maskfuse/synth.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "maskfuse/errors.h"
#include "maskfuse/evaluation.h"
#include "maskfuse/png_io.h"
#include "test_support.h"

namespace maskfuse {
namespace {

namespace fs = std::filesystem;

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Relative path -> bytes for every file under `dir`.
std::map<std::string, std::string> Snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = Slurp(e.path());
  }
  return out;
}

void ExpectValidGroundTruth(const LabelMap& gt) {
  EXPECT_EQ(Canonicalize(gt), gt);
  for (const InstanceMask& m : InstancesFromLabelMap(gt)) EXPECT_GE(m.area(), 10);
}

TEST(Rng, MapsEngineOutputExactly) {
  std::mt19937_64 engine(99);
  Rng rng(99);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(rng.Uniform(), static_cast<double>(engine() >> 11) / 9007199254740992.0);
  }
  Rng ints(5);
  for (int i = 0; i < 1000; ++i) {
    const int v = ints.UniformInt(-3, 4);
    EXPECT_GE(v, -3);
    EXPECT_LE(v, 4);
  }
  EXPECT_EQ(Rng(7).UniformInt(2, 2), 2);
}

TEST(Rng, DerivedSeedsAreDistinctAndStable) {
  // splitmix64 of 0x9E3779B97F4A7C15, the first output for state 0.
  EXPECT_EQ(DeriveSeed(0, 0), 0xE220A8397B1DCDAFULL);
  std::set<uint64_t> seen;
  for (uint64_t k = 0; k < 1000; ++k) EXPECT_TRUE(seen.insert(DeriveSeed(42, k)).second);
  EXPECT_NE(DeriveSeed(42, 0), DeriveSeed(43, 0));
}

TEST(GenerateScene, EmptyRangeAndDeterminism) {
  SceneConfig cfg;
  cfg.min_nuclei = 0;
  cfg.max_nuclei = 0;
  EXPECT_EQ(GenerateScene(cfg).max_label(), 0u);

  SceneConfig dflt;
  EXPECT_EQ(GenerateScene(dflt), GenerateScene(dflt));
  SceneConfig other = dflt;
  other.seed = 43;
  EXPECT_NE(GenerateScene(dflt), GenerateScene(other));
}

TEST(GenerateScene, ProducesValidGroundTruth) {
  SceneConfig cfg;
  for (uint64_t seed = 0; seed < 25; ++seed) {
    cfg.seed = seed;
    const LabelMap gt = GenerateScene(cfg);
    ExpectValidGroundTruth(gt);
    EXPECT_GE(gt.max_label(), static_cast<uint32_t>(cfg.min_nuclei));
    EXPECT_LE(gt.max_label(), static_cast<uint32_t>(cfg.max_nuclei));
  }
}

TEST(GenerateScene, FullClusterProbabilityMakesClusters) {
  SceneConfig cfg;
  cfg.min_nuclei = 5;
  cfg.max_nuclei = 10;
  cfg.cluster_probability = 1.0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    cfg.seed = seed;
    const std::vector<int> sizes = ClusterSizes(GenerateScene(cfg));
    EXPECT_GE(*std::max_element(sizes.begin(), sizes.end()), 2) << "seed " << seed;
  }
}

TEST(GenerateScene, RejectsBadConfig) {
  SceneConfig cfg;
  cfg.min_nuclei = 5;
  cfg.max_nuclei = 4;
  EXPECT_THROW(GenerateScene(cfg), ConfigError);
  cfg = SceneConfig{};
  cfg.cluster_probability = 1.5;
  EXPECT_THROW(GenerateScene(cfg), ConfigError);
  // Far too many large nuclei for a tiny image.
  cfg = SceneConfig{};
  cfg.height = 12;
  cfg.width = 12;
  cfg.min_nuclei = 30;
  cfg.max_nuclei = 30;
  EXPECT_THROW(GenerateScene(cfg), ConfigError);
}

TEST(Degrade, IdentityProfileKeepsInstances) {
  SceneConfig cfg;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    cfg.seed = seed;
    const LabelMap gt = GenerateScene(cfg);
    const auto out = Degrade(gt, ErrorProfile::Identity());
    const auto truth = InstancesFromLabelMap(gt);
    ASSERT_EQ(out.size(), truth.size());
    for (const InstanceMask& m : out) {
      EXPECT_TRUE(std::any_of(truth.begin(), truth.end(),
                              [&](const InstanceMask& g) { return g.same_pixels(m); }));
    }
  }
}

TEST(Degrade, DropAll) {
  ErrorProfile p;
  p.p_drop = 1.0;
  EXPECT_TRUE(Degrade(GenerateScene(SceneConfig{}), p).empty());
}

TEST(Degrade, MergesTouchingPair) {
  LabelMap gt(20, 20);
  for (int r = 4; r < 10; ++r) {
    for (int c = 2; c < 8; ++c) gt.set(r, c, 1);
    for (int c = 8; c < 14; ++c) gt.set(r, c, 2);
  }
  ErrorProfile p;
  p.p_merge = 1.0;
  p.merge_gap = 2;
  const auto out = Degrade(gt, p);
  ASSERT_EQ(out.size(), 1u);
  for (const Pixel& px : InstanceMask::FromMask(1, gt.foreground()).pixels()) {
    EXPECT_TRUE(out[0].contains(px.row, px.col));
  }
  // Bridge pixels only fill background next to both instances.
  EXPECT_EQ(out[0].area(), 72 + 4);
}

TEST(Degrade, MergeBridgesSmallGap) {
  LabelMap gt(20, 20);
  for (int r = 4; r < 10; ++r) {
    for (int c = 2; c < 7; ++c) gt.set(r, c, 1);
    for (int c = 8; c < 13; ++c) gt.set(r, c, 2);
  }
  ErrorProfile p;
  p.p_merge = 1.0;
  const auto out = Degrade(gt, p);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_TRUE(out[0].contains(6, 7));
  EXPECT_EQ(ConnectedComponents(out[0].to_mask(20, 20), Connectivity::kEight).max_label(), 1u);
}

TEST(Degrade, SplitCutsAcrossMinorAxis) {
  LabelMap gt(20, 30);
  for (int r = 6; r < 12; ++r) {
    for (int c = 3; c < 27; ++c) gt.set(r, c, 1);
  }
  ErrorProfile p;
  p.p_split = 1.0;
  const auto out = Degrade(gt, p);
  ASSERT_EQ(out.size(), 2u);
  // A horizontal bar is cut by a vertical line: each half spans every row.
  for (const InstanceMask& m : out) {
    EXPECT_EQ(m.bbox().min_row, 6);
    EXPECT_EQ(m.bbox().max_row, 11);
  }
  EXPECT_EQ(out[0].area() + out[1].area(), 6 * 24);
}

TEST(Degrade, SpuriousBlobAndDeterminism) {
  ErrorProfile p;
  p.p_spurious = 1.0;
  const auto out = Degrade(LabelMap(40, 40), p);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_GT(out[0].area(), 0);

  const LabelMap gt = GenerateScene(SceneConfig{});
  const ErrorProfile clumper = ErrorProfile::Clumper();
  EXPECT_EQ(Degrade(gt, clumper), Degrade(gt, clumper));
  ErrorProfile reseeded = clumper;
  reseeded.seed = 12345;
  EXPECT_NE(Degrade(gt, clumper), Degrade(gt, reseeded));

  // Outputs are disjoint with ids 1..n.
  const auto d = Degrade(gt, ErrorProfile::Splitter());
  for (size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d[i].id(), i + 1);
  EXPECT_NO_THROW(LabelMapFromInstances(d, gt.height(), gt.width(), OverlapPolicy::kError));
}

TEST(Degrade, RejectsBadProfile) {
  ErrorProfile p;
  p.p_merge = -0.1;
  EXPECT_THROW(Degrade(LabelMap(4, 4), p), ConfigError);
}

TEST(Corpus, IndependentOfThreadCount) {
  SceneConfig scene;
  scene.height = 96;
  scene.width = 96;
  const auto one = GenerateCorpus(6, scene, ErrorProfile::Clumper(), ErrorProfile::Splitter(), 1);
  const auto three = GenerateCorpus(6, scene, ErrorProfile::Clumper(), ErrorProfile::Splitter(), 3);
  ASSERT_EQ(one.size(), 6u);
  for (size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(one[i].image_id, CorpusImageId(i));
    EXPECT_EQ(one[i].gt, three[i].gt);
    EXPECT_EQ(one[i].a, three[i].a);
    EXPECT_EQ(one[i].b, three[i].b);
    EXPECT_EQ(one[i].seed_scene, DeriveSeed(42, 3 * i));
    const CorpusImage alone = GenerateCorpusImage(i, scene, ErrorProfile::Clumper(), ErrorProfile::Splitter());
    EXPECT_EQ(alone.b, one[i].b);
    ExpectValidGroundTruth(one[i].gt);
  }
  EXPECT_EQ(CorpusImageId(42), "img_0042");
}

TEST(Corpus, WritesFilesAndManifestByteIdentically) {
  SceneConfig scene;
  scene.height = 64;
  scene.width = 64;
  const fs::path d1 = testing::FreshTempDir("corpus_1");
  const fs::path d2 = testing::FreshTempDir("corpus_2");
  const auto entries = MakeCorpus(1, scene, ErrorProfile::Clumper(), ErrorProfile::Splitter(), d1);
  MakeCorpus(1, scene, ErrorProfile::Clumper(), ErrorProfile::Splitter(), d2, MaskFormat::kPng16, 2);
  const auto snap = Snapshot(d1);
  EXPECT_EQ(snap.size(), 4u);
  EXPECT_TRUE(snap.contains("manifest.csv"));
  EXPECT_TRUE(snap.contains("gt/img_0000.png"));
  EXPECT_EQ(snap, Snapshot(d2));
  EXPECT_EQ(Slurp(d1 / "manifest.csv").rfind("ImageId,GtPath,PathA,PathB,SeedScene,SeedA,SeedB\n", 0), 0u);

  const auto back = ReadManifest(d1 / "manifest.csv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].gt_path, entries[0].gt_path);
  EXPECT_EQ(back[0].seed_b, entries[0].seed_b);
  EXPECT_EQ(ReadLabelMapPng(d1 / back[0].gt_path),
            GenerateCorpusImage(0, scene, ErrorProfile::Clumper(), ErrorProfile::Splitter()).gt);

  const fs::path d3 = testing::FreshTempDir("corpus_rle");
  MakeCorpus(2, scene, ErrorProfile::Clumper(), ErrorProfile::Splitter(), d3, MaskFormat::kRle);
  EXPECT_TRUE(fs::exists(d3 / "a" / "img_0001.csv"));
}

}  // namespace
}  // namespace maskfuse
