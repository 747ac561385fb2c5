#ifndef MASKFUSE_SYNTH_H_
#define MASKFUSE_SYNTH_H_

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "maskfuse/mask_core.h"

namespace maskfuse {

// std::mt19937_64 is fully specified but the standard distributions are not,
// so the mappings to doubles and integers are done here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}
  double Uniform();                      // [0, 1)
  double Uniform(double lo, double hi);  // [lo, hi)
  int UniformInt(int lo, int hi);        // [lo, hi]
  bool Bernoulli(double p) { return Uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

// splitmix64 finalizer applied to master + (index + 1) * golden gamma.
uint64_t DeriveSeed(uint64_t master, uint64_t index);

struct SceneConfig {
  int height = 256;
  int width = 256;
  int min_nuclei = 8;
  int max_nuclei = 24;
  double min_semi_axis = 4.0;
  double max_semi_axis = 14.0;
  double cluster_probability = 0.5;
  uint64_t seed = 42;

  void Validate() const;
};

// Rotated ellipses; pixels claimed by several ellipses go to the nearest
// centre (earlier nucleus on ties). Candidates that would leave any nucleus
// with fewer than 10 pixels are re-drawn. Canonical ids. Throws ConfigError
// when a nucleus cannot be placed.
LabelMap GenerateScene(const SceneConfig& cfg);

struct ErrorProfile {
  std::string name = "identity";
  double p_drop = 0.0;
  double p_merge = 0.0;
  int merge_gap = 2;  // Chebyshev pixel distance
  double p_split = 0.0;
  int boundary_jitter = 0;  // max radius of the per-instance dilate/erode
  double erode_bias = 0.5;  // probability that a jitter step erodes
  double p_spurious = 0.0;  // chance of one false-positive blob per image
  uint64_t seed = 0;

  void Validate() const;

  static ErrorProfile Identity();
  // Merges touching nuclei, slight boundary noise.
  static ErrorProfile Clumper();
  // Cuts nuclei in two, leans towards eroded boundaries, rarely misses.
  static ErrorProfile Splitter();
};

// Applies merge, split, jitter, drop and spurious blobs in that order. The
// result is pixel-disjoint with ids 1..n.
std::vector<InstanceMask> Degrade(const LabelMap& gt, const ErrorProfile& profile);

struct CorpusImage {
  std::string image_id;
  LabelMap gt;
  LabelMap a;
  LabelMap b;
  uint64_t seed_scene = 0;
  uint64_t seed_a = 0;
  uint64_t seed_b = 0;
};

// "img_0042"
std::string CorpusImageId(size_t index);

// Image i uses DeriveSeed(master, 3i) for the scene and 3i+1 / 3i+2 (xor the
// profile's own seed) for the two sources. `scene.seed` is the master seed.
CorpusImage GenerateCorpusImage(size_t index, const SceneConfig& scene, const ErrorProfile& a,
                                const ErrorProfile& b);
std::vector<CorpusImage> GenerateCorpus(size_t n, const SceneConfig& scene, const ErrorProfile& a,
                                        const ErrorProfile& b, int threads = 1);

struct CorpusEntry {
  std::string image_id;
  std::string gt_path;  // relative to the corpus directory
  std::string path_a;
  std::string path_b;
  uint64_t seed_scene = 0;
  uint64_t seed_a = 0;
  uint64_t seed_b = 0;
};

enum class MaskFormat { kPng16, kRle };

// Writes gt/, a/, b/ (one file per image) and manifest.csv.
std::vector<CorpusEntry> MakeCorpus(size_t n, const SceneConfig& scene, const ErrorProfile& a,
                                    const ErrorProfile& b, const std::filesystem::path& out_dir,
                                    MaskFormat format = MaskFormat::kPng16, int threads = 1);

void WriteManifest(const std::filesystem::path& path, const std::vector<CorpusEntry>& entries);
std::vector<CorpusEntry> ReadManifest(const std::filesystem::path& path);

}  // namespace maskfuse

#endif  // MASKFUSE_SYNTH_H_
