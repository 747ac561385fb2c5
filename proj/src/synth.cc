#include "maskfuse/synth.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include "maskfuse/errors.h"
#include "maskfuse/numeric_text.h"
#include "maskfuse/parallel.h"
#include "maskfuse/png_io.h"
#include "maskfuse/post_process.h"
#include "maskfuse/rle.h"

namespace maskfuse {
namespace {

constexpr int kMinNucleusArea = 10;
constexpr int kPlacementAttempts = 100;
// A nucleus may lose at most half of its ellipse to later neighbours.
constexpr double kMinKeptFraction = 0.5;

struct Ellipse {
  double cy = 0.0;
  double cx = 0.0;
  double a = 0.0;  // semi-major
  double b = 0.0;  // semi-minor
  double theta = 0.0;

  bool Contains(int r, int c) const {
    const double dx = c - cx;
    const double dy = r - cy;
    const double u = dx * std::cos(theta) + dy * std::sin(theta);
    const double v = -dx * std::sin(theta) + dy * std::cos(theta);
    return u * u / (a * a) + v * v / (b * b) <= 1.0;
  }
  double Dist2(int r, int c) const { return (r - cy) * (r - cy) + (c - cx) * (c - cx); }
};

Ellipse DrawShape(Rng& rng, double lo, double hi) {
  Ellipse e;
  e.a = rng.Uniform(lo, hi);
  e.b = rng.Uniform(lo, hi);
  if (e.a < e.b) std::swap(e.a, e.b);
  e.theta = rng.Uniform(0.0, std::numbers::pi);
  return e;
}

// Pixel indices covered by `e`, raster order.
std::vector<size_t> Rasterize(const Ellipse& e, int height, int width) {
  std::vector<size_t> out;
  const int r0 = std::max(0, static_cast<int>(std::floor(e.cy - e.a)));
  const int r1 = std::min(height - 1, static_cast<int>(std::ceil(e.cy + e.a)));
  const int c0 = std::max(0, static_cast<int>(std::floor(e.cx - e.a)));
  const int c1 = std::min(width - 1, static_cast<int>(std::ceil(e.cx + e.a)));
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      if (e.Contains(r, c)) out.push_back(static_cast<size_t>(r) * width + c);
    }
  }
  return out;
}

void CheckProbability(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(what) + " must be in [0, 1]");
}

// Instance painted into a local window, for morphology without full-image work.
struct Window {
  BoundingBox box;
  BinaryMask mask;
};

Window MakeWindow(const InstanceMask& inst, int margin, int height, int width) {
  const BoundingBox& b = inst.bbox();
  Window w;
  w.box = {std::max(0, b.min_row - margin), std::max(0, b.min_col - margin),
           std::min(height - 1, b.max_row + margin), std::min(width - 1, b.max_col + margin)};
  w.mask = BinaryMask(w.box.height(), w.box.width());
  for (const Pixel& p : inst.pixels()) w.mask.set(p.row - w.box.min_row, p.col - w.box.min_col);
  return w;
}

std::optional<InstanceMask> FromWindow(uint32_t id, const Window& w) {
  if (w.mask.count() == 0) return std::nullopt;
  return InstanceMask::FromBitmap(id, w.box.min_row, w.box.min_col, w.box.height(),
                                  w.box.width(), w.mask.data());
}

std::vector<InstanceMask> MergeStage(std::vector<InstanceMask> insts, const LabelMap& gt,
                                     const ErrorProfile& profile, Rng& rng) {
  const int h = gt.height();
  const int w = gt.width();
  const int gap = profile.merge_gap;
  std::map<uint32_t, size_t> index_of;
  for (size_t i = 0; i < insts.size(); ++i) index_of[insts[i].id()] = i;

  std::set<std::pair<size_t, size_t>> pairs;
  for (size_t i = 0; i < insts.size(); ++i) {
    for (const Pixel& p : insts[i].pixels()) {
      for (int dr = -gap; dr <= gap; ++dr) {
        for (int dc = -gap; dc <= gap; ++dc) {
          const int r = p.row + dr;
          const int c = p.col + dc;
          if (!gt.in_bounds(r, c)) continue;
          const uint32_t l = gt.at(r, c);
          if (l == 0) continue;
          const size_t j = index_of.at(l);
          if (j > i) pairs.emplace(i, j);
        }
      }
    }
  }

  std::vector<size_t> parent(insts.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<std::pair<size_t, size_t>> merged;
  for (const auto& [i, j] : pairs) {
    if (!rng.Bernoulli(profile.p_merge)) continue;
    merged.emplace_back(i, j);
    const size_t ri = find(i);
    const size_t rj = find(j);
    if (ri != rj) parent[std::max(ri, rj)] = std::min(ri, rj);
  }
  if (merged.empty()) return insts;

  std::vector<std::vector<Pixel>> group_pixels(insts.size());
  for (size_t i = 0; i < insts.size(); ++i) {
    std::vector<Pixel> px = insts[i].pixels();
    std::vector<Pixel>& dst = group_pixels[find(i)];
    dst.insert(dst.end(), px.begin(), px.end());
  }
  // Background pixels within reach of both members close the gap.
  const int reach = (gap + 1) / 2;
  for (const auto& [i, j] : merged) {
    if (reach == 0) break;
    const Window wi = MakeWindow(insts[i], reach, h, w);
    const Window wj = MakeWindow(insts[j], reach, h, w);
    const BinaryMask di = Dilate(wi.mask, reach, StructuringElement::kSquare);
    const BinaryMask dj = Dilate(wj.mask, reach, StructuringElement::kSquare);
    std::vector<Pixel>& dst = group_pixels[find(i)];
    for (int r = wi.box.min_row; r <= wi.box.max_row; ++r) {
      for (int c = wi.box.min_col; c <= wi.box.max_col; ++c) {
        if (!wj.box.contains(r, c) || gt.at(r, c) != 0) continue;
        if (di.at(r - wi.box.min_row, c - wi.box.min_col) &&
            dj.at(r - wj.box.min_row, c - wj.box.min_col)) {
          dst.push_back({r, c});
        }
      }
    }
  }
  std::vector<InstanceMask> out;
  for (size_t i = 0; i < insts.size(); ++i) {
    if (find(i) != i) continue;
    out.push_back(InstanceMask::FromPixels(insts[i].id(), group_pixels[i]));
  }
  return out;
}

// Cut along the minor axis through the centroid.
std::vector<InstanceMask> SplitInstance(const InstanceMask& inst) {
  const std::vector<Pixel> px = inst.pixels();
  const double n = static_cast<double>(px.size());
  double my = 0.0, mx = 0.0;
  for (const Pixel& p : px) {
    my += p.row;
    mx += p.col;
  }
  my /= n;
  mx /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (const Pixel& p : px) {
    const double dx = p.col - mx;
    const double dy = p.row - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  const double angle = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
  const double ux = std::cos(angle);
  const double uy = std::sin(angle);
  std::vector<Pixel> lo, hi;
  for (const Pixel& p : px) {
    ((p.col - mx) * ux + (p.row - my) * uy < 0.0 ? lo : hi).push_back(p);
  }
  if (lo.empty() || hi.empty()) return {inst};
  return {InstanceMask::FromPixels(inst.id(), lo), InstanceMask::FromPixels(inst.id(), hi)};
}

}  // namespace

double Rng::Uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

int Rng::UniformInt(int lo, int hi) {
  const int64_t span = int64_t{hi} - lo + 1;
  const int64_t k = static_cast<int64_t>(Uniform() * static_cast<double>(span));
  return static_cast<int>(lo + std::min(k, span - 1));
}

uint64_t DeriveSeed(uint64_t master, uint64_t index) {
  uint64_t z = master + (index + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void SceneConfig::Validate() const {
  if (height < 1 || width < 1 || height > kMaxDimension || width > kMaxDimension) {
    throw ConfigError("scene dimensions out of range");
  }
  if (min_nuclei < 0 || max_nuclei < min_nuclei) throw ConfigError("invalid nucleus count range");
  if (!(min_semi_axis > 0.0 && max_semi_axis >= min_semi_axis)) {
    throw ConfigError("invalid semi-axis range");
  }
  CheckProbability(cluster_probability, "cluster probability");
}

LabelMap GenerateScene(const SceneConfig& cfg) {
  cfg.Validate();
  Rng rng(cfg.seed);
  const int h = cfg.height;
  const int w = cfg.width;
  const int n = rng.UniformInt(cfg.min_nuclei, cfg.max_nuclei);

  std::vector<Ellipse> nuclei;
  std::vector<int64_t> full_area;
  std::vector<int64_t> owned;
  std::vector<int32_t> owner(static_cast<size_t>(h) * w, -1);

  for (int k = 0; k < n; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      Ellipse e = DrawShape(rng, cfg.min_semi_axis, cfg.max_semi_axis);
      if (k > 0 && rng.Bernoulli(cfg.cluster_probability)) {
        const Ellipse& anchor = nuclei[static_cast<size_t>(rng.UniformInt(0, k - 1))];
        const double reach = 0.5 * (anchor.a + anchor.b) + 0.5 * (e.a + e.b);
        const double d = rng.Uniform(0.6, 1.1) * reach;
        const double phi = rng.Uniform(0.0, 2.0 * std::numbers::pi);
        e.cy = anchor.cy + d * std::sin(phi);
        e.cx = anchor.cx + d * std::cos(phi);
      } else {
        e.cy = rng.Uniform(0.0, h);
        e.cx = rng.Uniform(0.0, w);
      }
      if (e.cy < 0.0 || e.cx < 0.0 || e.cy >= h || e.cx >= w) continue;

      const std::vector<size_t> cover = Rasterize(e, h, w);
      std::vector<size_t> claimed;
      std::map<int32_t, int64_t> stolen;
      for (size_t idx : cover) {
        const int r = static_cast<int>(idx / w);
        const int c = static_cast<int>(idx % w);
        const int32_t o = owner[idx];
        if (o < 0) {
          claimed.push_back(idx);
        } else if (e.Dist2(r, c) < nuclei[static_cast<size_t>(o)].Dist2(r, c)) {
          claimed.push_back(idx);
          ++stolen[o];
        }
      }
      const auto too_small = [](int64_t kept, int64_t full) {
        return kept < kMinNucleusArea || static_cast<double>(kept) < kMinKeptFraction * full;
      };
      bool ok = !too_small(static_cast<int64_t>(claimed.size()),
                           static_cast<int64_t>(cover.size()));
      for (const auto& [o, lost] : stolen) {
        if (too_small(owned[static_cast<size_t>(o)] - lost, full_area[static_cast<size_t>(o)])) {
          ok = false;
        }
      }
      if (!ok) continue;
      for (const auto& [o, lost] : stolen) owned[static_cast<size_t>(o)] -= lost;
      for (size_t idx : claimed) owner[idx] = k;
      nuclei.push_back(e);
      full_area.push_back(static_cast<int64_t>(cover.size()));
      owned.push_back(static_cast<int64_t>(claimed.size()));
      placed = true;
    }
    if (!placed) {
      throw ConfigError("could not place nucleus " + std::to_string(k + 1) + " of " +
                        std::to_string(n) + " in a " + std::to_string(h) + "x" +
                        std::to_string(w) + " scene");
    }
  }

  LabelMap map(h, w);
  for (size_t i = 0; i < owner.size(); ++i) {
    map.data()[i] = owner[i] < 0 ? 0u : static_cast<uint32_t>(owner[i] + 1);
  }
  return Canonicalize(map);
}

void ErrorProfile::Validate() const {
  CheckProbability(p_drop, "p_drop");
  CheckProbability(p_merge, "p_merge");
  CheckProbability(p_split, "p_split");
  CheckProbability(erode_bias, "erode_bias");
  CheckProbability(p_spurious, "p_spurious");
  if (merge_gap < 0) throw ConfigError("merge_gap must be >= 0");
  if (boundary_jitter < 0) throw ConfigError("boundary_jitter must be >= 0");
}

ErrorProfile ErrorProfile::Identity() { return ErrorProfile{}; }

ErrorProfile ErrorProfile::Clumper() {
  ErrorProfile p;
  p.name = "clumper";
  p.p_drop = 0.03;
  p.p_merge = 0.5;
  p.merge_gap = 2;
  p.boundary_jitter = 1;
  p.erode_bias = 0.5;
  p.p_spurious = 0.3;
  p.seed = 0xA;
  return p;
}

ErrorProfile ErrorProfile::Splitter() {
  ErrorProfile p;
  p.name = "splitter";
  p.p_drop = 0.02;
  p.p_split = 0.3;
  p.boundary_jitter = 1;
  p.erode_bias = 0.8;
  p.p_spurious = 0.3;
  p.seed = 0xB;
  return p;
}

std::vector<InstanceMask> Degrade(const LabelMap& gt, const ErrorProfile& profile) {
  profile.Validate();
  Rng rng(profile.seed);
  const int h = gt.height();
  const int w = gt.width();
  std::vector<InstanceMask> insts = InstancesFromLabelMap(gt);

  if (profile.p_merge > 0.0) insts = MergeStage(std::move(insts), gt, profile, rng);

  if (profile.p_split > 0.0) {
    std::vector<InstanceMask> next;
    for (const InstanceMask& inst : insts) {
      if (rng.Bernoulli(profile.p_split)) {
        for (InstanceMask& piece : SplitInstance(inst)) next.push_back(std::move(piece));
      } else {
        next.push_back(inst);
      }
    }
    insts = std::move(next);
  }

  if (profile.boundary_jitter > 0) {
    std::vector<InstanceMask> next;
    for (const InstanceMask& inst : insts) {
      const int radius = rng.UniformInt(0, profile.boundary_jitter);
      const bool erode = rng.Bernoulli(profile.erode_bias);
      if (radius == 0) {
        next.push_back(inst);
        continue;
      }
      Window win = MakeWindow(inst, radius + 1, h, w);
      win.mask = erode ? Erode(win.mask, radius, StructuringElement::kDisk)
                       : Dilate(win.mask, radius, StructuringElement::kDisk);
      if (auto out = FromWindow(inst.id(), win)) next.push_back(std::move(*out));
    }
    insts = std::move(next);
  }

  if (profile.p_drop > 0.0) {
    std::vector<InstanceMask> next;
    for (const InstanceMask& inst : insts) {
      if (!rng.Bernoulli(profile.p_drop)) next.push_back(inst);
    }
    insts = std::move(next);
  }

  if (profile.p_spurious > 0.0 && rng.Bernoulli(profile.p_spurious)) {
    Ellipse e = DrawShape(rng, 2.0, 5.0);
    e.cy = rng.Uniform(0.0, h);
    e.cx = rng.Uniform(0.0, w);
    BinaryMask occupied(h, w);
    for (const InstanceMask& inst : insts) {
      for (const Pixel& p : inst.pixels()) occupied.set(p.row, p.col);
    }
    std::vector<Pixel> blob;
    for (size_t idx : Rasterize(e, h, w)) {
      const int r = static_cast<int>(idx / w);
      const int c = static_cast<int>(idx % w);
      if (!occupied.at(r, c)) blob.push_back({r, c});
    }
    if (!blob.empty()) insts.push_back(InstanceMask::FromPixels(0, blob));
  }

  // Positional ids keep ResolveOverlaps tie-breaking tied to list order.
  for (size_t i = 0; i < insts.size(); ++i) insts[i].set_id(static_cast<uint32_t>(i + 1));
  std::vector<InstanceMask> out = ResolveOverlaps(insts);
  for (size_t i = 0; i < out.size(); ++i) out[i].set_id(static_cast<uint32_t>(i + 1));
  return out;
}

std::string CorpusImageId(size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%04zu", index);
  return buf;
}

CorpusImage GenerateCorpusImage(size_t index, const SceneConfig& scene, const ErrorProfile& a,
                                const ErrorProfile& b) {
  CorpusImage img;
  img.image_id = CorpusImageId(index);
  img.seed_scene = DeriveSeed(scene.seed, 3 * index);
  img.seed_a = DeriveSeed(scene.seed, 3 * index + 1) ^ a.seed;
  img.seed_b = DeriveSeed(scene.seed, 3 * index + 2) ^ b.seed;
  SceneConfig sc = scene;
  sc.seed = img.seed_scene;
  img.gt = GenerateScene(sc);
  ErrorProfile pa = a;
  pa.seed = img.seed_a;
  ErrorProfile pb = b;
  pb.seed = img.seed_b;
  img.a = LabelMapFromInstances(Degrade(img.gt, pa), sc.height, sc.width, OverlapPolicy::kError);
  img.b = LabelMapFromInstances(Degrade(img.gt, pb), sc.height, sc.width, OverlapPolicy::kError);
  return img;
}

std::vector<CorpusImage> GenerateCorpus(size_t n, const SceneConfig& scene, const ErrorProfile& a,
                                        const ErrorProfile& b, int threads) {
  scene.Validate();
  a.Validate();
  b.Validate();
  std::vector<CorpusImage> out(n);
  ParallelFor(n, threads, [&](size_t i) { out[i] = GenerateCorpusImage(i, scene, a, b); });
  return out;
}

std::vector<CorpusEntry> MakeCorpus(size_t n, const SceneConfig& scene, const ErrorProfile& a,
                                    const ErrorProfile& b, const std::filesystem::path& out_dir,
                                    MaskFormat format, int threads) {
  if (n < 1) throw ConfigError("corpus needs at least one image");
  scene.Validate();
  a.Validate();
  b.Validate();
  std::error_code ec;
  for (const char* sub : {"gt", "a", "b"}) {
    std::filesystem::create_directories(out_dir / sub, ec);
    if (ec) throw IoError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }
  const char* ext = format == MaskFormat::kPng16 ? ".png" : ".csv";
  std::vector<CorpusEntry> entries(n);
  ParallelFor(n, threads, [&](size_t i) {
    const CorpusImage img = GenerateCorpusImage(i, scene, a, b);
    CorpusEntry& e = entries[i];
    e.image_id = img.image_id;
    e.gt_path = "gt/" + img.image_id + ext;
    e.path_a = "a/" + img.image_id + ext;
    e.path_b = "b/" + img.image_id + ext;
    e.seed_scene = img.seed_scene;
    e.seed_a = img.seed_a;
    e.seed_b = img.seed_b;
    const std::pair<const std::string*, const LabelMap*> files[] = {
        {&e.gt_path, &img.gt}, {&e.path_a, &img.a}, {&e.path_b, &img.b}};
    for (const auto& [rel, map] : files) {
      if (format == MaskFormat::kPng16) {
        WriteLabelMapPng(out_dir / *rel, *map);
      } else {
        const RleImage rle{img.image_id, map->height(), map->width(), InstancesFromLabelMap(*map)};
        WriteRleCsv(out_dir / *rel, std::span(&rle, 1));
      }
    }
  });
  WriteManifest(out_dir / "manifest.csv", entries);
  return entries;
}

void WriteManifest(const std::filesystem::path& path, const std::vector<CorpusEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "ImageId,GtPath,PathA,PathB,SeedScene,SeedA,SeedB\n";
  for (const CorpusEntry& e : entries) {
    out << e.image_id << ',' << e.gt_path << ',' << e.path_a << ',' << e.path_b << ','
        << e.seed_scene << ',' << e.seed_a << ',' << e.seed_b << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<CorpusEntry> ReadManifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty manifest");
  std::vector<CorpusEntry> entries;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string_view> f = SplitCsvLine(line);
    if (f.size() != 7) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 7 fields");
    }
    auto seed = [&](std::string_view s) {
      uint64_t v = 0;
      const auto [ptr, err] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (err != std::errc() || ptr != s.data() + s.size()) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad seed");
      }
      return v;
    };
    entries.push_back({std::string(f[0]), std::string(f[1]), std::string(f[2]), std::string(f[3]),
                       seed(f[4]), seed(f[5]), seed(f[6])});
  }
  return entries;
}

}  // namespace maskfuse
