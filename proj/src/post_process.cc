#include "maskfuse/post_process.h"

#include <algorithm>
#include <limits>
#include <queue>
#include <string>
#include <tuple>

#include "maskfuse/errors.h"

namespace maskfuse {
namespace {

constexpr int kDr8[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
constexpr int kDc8[8] = {-1, 0, 1, -1, 1, -1, 0, 1};
constexpr int kDr4[4] = {-1, 0, 0, 1};
constexpr int kDc4[4] = {0, -1, 1, 0};

struct FloodEntry {
  double elevation;
  uint64_t seq;
  size_t index;
  uint32_t label;
};

struct FloodOrder {
  // priority_queue pops the "largest"; invert for lowest elevation, then FIFO.
  bool operator()(const FloodEntry& a, const FloodEntry& b) const {
    if (a.elevation != b.elevation) return a.elevation > b.elevation;
    return a.seq > b.seq;
  }
};

// Canonical label map of the pieces, relabeled in raster order.
std::vector<InstanceMask> CanonicalInstances(std::span<const InstanceMask> pieces, int height,
                                             int width) {
  const LabelMap painted = LabelMapFromInstances(pieces, height, width, OverlapPolicy::kError);
  return InstancesFromLabelMap(Canonicalize(painted));
}

InstanceMask FillInstanceHoles(const InstanceMask& inst, int height, int width) {
  // A one-pixel frame (clipped to the image) stands in for "outside".
  const BoundingBox& b = inst.bbox();
  const int r0 = std::max(0, b.min_row - 1);
  const int c0 = std::max(0, b.min_col - 1);
  const int r1 = std::min(height - 1, b.max_row + 1);
  const int c1 = std::min(width - 1, b.max_col + 1);
  BinaryMask local(r1 - r0 + 1, c1 - c0 + 1);
  for (const Pixel& p : inst.pixels()) local.set(p.row - r0, p.col - c0);
  const BinaryMask filled = FillHoles(local);
  return InstanceMask::FromBitmap(inst.id(), r0, c0, filled.height(), filled.width(),
                                  filled.data());
}

}  // namespace

std::vector<InstanceMask> RemoveSmall(std::span<const InstanceMask> instances, int64_t min_area) {
  std::vector<InstanceMask> out;
  for (const InstanceMask& inst : instances) {
    if (inst.area() >= min_area) out.push_back(inst);
  }
  return out;
}

LabelMap WatershedSplit(const BinaryMask& mask, const BinaryMask& borders,
                        const WatershedConfig& cfg) {
  const int h = mask.height();
  const int w = mask.width();
  if (borders.height() != h || borders.width() != w) {
    throw DimensionMismatch("border channel is " + std::to_string(borders.height()) + "x" +
                            std::to_string(borders.width()) + ", mask is " + std::to_string(h) +
                            "x" + std::to_string(w));
  }
  const size_t n = static_cast<size_t>(h) * w;
  if (cfg.elevation && cfg.elevation->size() != n) {
    throw DimensionMismatch("elevation grid size does not match mask");
  }

  BinaryMask seeds(h, w);
  {
    auto s = seeds.data();
    auto m = mask.data();
    auto b = borders.data();
    for (size_t i = 0; i < n; ++i) s[i] = (m[i] && !b[i]) ? 1 : 0;
  }
  LabelMap labels = ConnectedComponents(seeds, Connectivity::kEight);
  uint32_t next_label = labels.max_label() + 1;

  std::vector<double> elevation;
  if (cfg.elevation) {
    elevation = *cfg.elevation;
  } else {
    const DistanceField dist = DistanceTransform(mask);
    elevation.resize(n);
    for (size_t i = 0; i < n; ++i) elevation[i] = -dist.values[i];
  }

  const bool eight = cfg.flood_connectivity == Connectivity::kEight;
  const int n_nbrs = eight ? 8 : 4;
  const int* dr = eight ? kDr8 : kDr4;
  const int* dc = eight ? kDc8 : kDc4;

  auto lab = labels.data();
  auto m = mask.data();
  std::vector<uint8_t> queued(n, 0);
  std::priority_queue<FloodEntry, std::vector<FloodEntry>, FloodOrder> frontier;
  uint64_t seq = 0;
  auto push_neighbours = [&](int r, int c, uint32_t label) {
    for (int k = 0; k < n_nbrs; ++k) {
      const int rr = r + dr[k];
      const int cc = c + dc[k];
      if (!mask.in_bounds(rr, cc)) continue;
      const size_t j = static_cast<size_t>(rr) * w + cc;
      if (!m[j] || lab[j] != 0 || queued[j]) continue;
      queued[j] = 1;
      frontier.push({elevation[j], seq++, j, label});
    }
  };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const uint32_t label = lab[static_cast<size_t>(r) * w + c];
      if (label != 0) push_neighbours(r, c, label);
    }
  }
  while (!frontier.empty()) {
    const FloodEntry e = frontier.top();
    frontier.pop();
    lab[e.index] = e.label;
    push_neighbours(static_cast<int>(e.index / w), static_cast<int>(e.index % w), e.label);
  }

  // Mask pixels with no marker in reach.
  BinaryMask orphans(h, w);
  bool any_orphan = false;
  {
    auto o = orphans.data();
    for (size_t i = 0; i < n; ++i) {
      if (m[i] && lab[i] == 0) {
        o[i] = 1;
        any_orphan = true;
      }
    }
  }
  if (any_orphan && cfg.markerless_policy == MarkerlessPolicy::kNewLabel) {
    const LabelMap extra = ConnectedComponents(orphans, cfg.flood_connectivity);
    auto x = extra.data();
    for (size_t i = 0; i < n; ++i) {
      if (x[i] != 0) lab[i] = next_label + x[i] - 1;
    }
  }
  return Canonicalize(labels);
}

std::vector<InstanceMask> ResolveOverlaps(std::span<const InstanceMask> instances) {
  if (instances.empty()) return {};
  BoundingBox all = instances[0].bbox();
  for (const InstanceMask& inst : instances) {
    all.min_row = std::min(all.min_row, inst.bbox().min_row);
    all.min_col = std::min(all.min_col, inst.bbox().min_col);
    all.max_row = std::max(all.max_row, inst.bbox().max_row);
    all.max_col = std::max(all.max_col, inst.bbox().max_col);
  }
  const int gh = all.height();
  const int gw = all.width();
  auto gidx = [&](int r, int c) {
    return static_cast<size_t>(r - all.min_row) * gw + (c - all.min_col);
  };
  std::vector<uint16_t> claims(static_cast<size_t>(gh) * gw, 0);
  for (const InstanceMask& inst : instances) {
    for (const Pixel& p : inst.pixels()) {
      uint16_t& k = claims[gidx(p.row, p.col)];
      if (k < std::numeric_limits<uint16_t>::max()) ++k;
    }
  }

  // Winner per contested pixel, as (squared distance, id, position).
  struct Claim {
    int64_t dist2 = std::numeric_limits<int64_t>::max();
    uint32_t id = std::numeric_limits<uint32_t>::max();
    size_t position = std::numeric_limits<size_t>::max();
    bool from_exclusive = false;
  };
  std::vector<Claim> best(claims.size());
  bool contested_any = false;

  for (size_t pos = 0; pos < instances.size(); ++pos) {
    const InstanceMask& inst = instances[pos];
    const BoundingBox& b = inst.bbox();
    bool has_contested = false;
    bool has_exclusive = false;
    BinaryMask not_exclusive(b.height(), b.width());
    for (int r = b.min_row; r <= b.max_row; ++r) {
      for (int c = b.min_col; c <= b.max_col; ++c) {
        const bool mine = inst.contains(r, c);
        const bool exclusive = mine && claims[gidx(r, c)] == 1;
        if (mine && !exclusive) has_contested = true;
        if (exclusive) has_exclusive = true;
        not_exclusive.set(r - b.min_row, c - b.min_col, !exclusive);
      }
    }
    if (!has_contested) continue;
    contested_any = true;
    std::vector<int64_t> dist2;
    if (has_exclusive) dist2 = SquaredDistanceTransform(not_exclusive);
    for (int r = b.min_row; r <= b.max_row; ++r) {
      for (int c = b.min_col; c <= b.max_col; ++c) {
        if (!inst.contains(r, c) || claims[gidx(r, c)] < 2) continue;
        Claim cand;
        cand.id = inst.id();
        cand.position = pos;
        cand.from_exclusive = has_exclusive;
        cand.dist2 = has_exclusive
                         ? dist2[static_cast<size_t>(r - b.min_row) * b.width() + (c - b.min_col)]
                         : std::numeric_limits<int64_t>::max();
        Claim& cur = best[gidx(r, c)];
        const auto key = [](const Claim& x) {
          return std::tuple(!x.from_exclusive, x.dist2, x.id, x.position);
        };
        if (key(cand) < key(cur)) cur = cand;
      }
    }
  }

  std::vector<InstanceMask> out;
  if (!contested_any) {
    out.assign(instances.begin(), instances.end());
    return out;
  }
  for (size_t pos = 0; pos < instances.size(); ++pos) {
    const InstanceMask& inst = instances[pos];
    std::vector<Pixel> kept;
    kept.reserve(static_cast<size_t>(inst.area()));
    for (const Pixel& p : inst.pixels()) {
      const size_t g = gidx(p.row, p.col);
      if (claims[g] == 1 || best[g].position == pos) kept.push_back(p);
    }
    if (!kept.empty()) out.push_back(InstanceMask::FromPixels(inst.id(), kept));
  }
  return out;
}

std::vector<InstanceMask> CleanPipeline(std::span<const InstanceMask> raw, int height, int width,
                                        const BinaryMask* borders, const CleanConfig& cfg) {
  std::vector<InstanceMask> filled;
  filled.reserve(raw.size());
  for (const InstanceMask& inst : raw) filled.push_back(FillInstanceHoles(inst, height, width));

  if (borders != nullptr && cfg.watershed) {
    if (borders->height() != height || borders->width() != width) {
      throw DimensionMismatch("border channel does not match image dimensions");
    }
    std::vector<InstanceMask> pieces;
    uint32_t next_id = 1;
    for (const InstanceMask& inst : filled) {
      // Crop with a one-pixel frame so distances match the full-image transform.
      const BoundingBox& b = inst.bbox();
      const int r0 = std::max(0, b.min_row - 1);
      const int c0 = std::max(0, b.min_col - 1);
      const int r1 = std::min(height - 1, b.max_row + 1);
      const int c1 = std::min(width - 1, b.max_col + 1);
      const int lh = r1 - r0 + 1;
      const int lw = c1 - c0 + 1;
      BinaryMask local(lh, lw);
      BinaryMask local_borders(lh, lw);
      for (const Pixel& p : inst.pixels()) {
        local.set(p.row - r0, p.col - c0);
        if (borders->at(p.row, p.col)) local_borders.set(p.row - r0, p.col - c0);
      }
      WatershedConfig local_cfg = cfg.watershed_config;
      if (cfg.watershed_config.elevation) {
        std::vector<double> crop(static_cast<size_t>(lh) * lw);
        for (int r = 0; r < lh; ++r) {
          for (int c = 0; c < lw; ++c) {
            crop[static_cast<size_t>(r) * lw + c] =
                (*cfg.watershed_config.elevation)[static_cast<size_t>(r + r0) * width + (c + c0)];
          }
        }
        local_cfg.elevation = std::move(crop);
      }
      const LabelMap split = WatershedSplit(local, local_borders, local_cfg);
      for (InstanceMask piece : InstancesFromLabelMap(split)) {
        std::vector<Pixel> px = piece.pixels();
        for (Pixel& p : px) {
          p.row += r0;
          p.col += c0;
        }
        pieces.push_back(InstanceMask::FromPixels(next_id++, px));
      }
    }
    filled = std::move(pieces);
  }

  std::vector<InstanceMask> resolved = ResolveOverlaps(filled);
  std::vector<InstanceMask> kept = RemoveSmall(resolved, cfg.min_area);
  return CanonicalInstances(kept, height, width);
}

std::vector<InstanceMask> CleanPipeline(const BinaryMask& mask, const BinaryMask& borders,
                                        const CleanConfig& cfg) {
  if (borders.height() != mask.height() || borders.width() != mask.width()) {
    throw DimensionMismatch("border channel does not match mask dimensions");
  }
  const BinaryMask filled = FillHoles(mask);
  LabelMap split;
  if (cfg.watershed) {
    split = WatershedSplit(filled, borders, cfg.watershed_config);
  } else {
    split = ConnectedComponents(filled, Connectivity::kEight);
  }
  const std::vector<InstanceMask> instances = InstancesFromLabelMap(split);
  const std::vector<InstanceMask> kept = RemoveSmall(instances, cfg.min_area);
  return CanonicalInstances(kept, mask.height(), mask.width());
}

}  // namespace maskfuse
