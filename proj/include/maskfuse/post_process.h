#ifndef MASKFUSE_POST_PROCESS_H_
#define MASKFUSE_POST_PROCESS_H_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "maskfuse/mask_core.h"

namespace maskfuse {

enum class MarkerlessPolicy { kNewLabel, kDrop };

struct WatershedConfig {
  Connectivity flood_connectivity = Connectivity::kFour;
  // Row-major elevation over the full image. When absent the negative exact
  // distance transform of the mask is used.
  std::optional<std::vector<double>> elevation;
  MarkerlessPolicy markerless_policy = MarkerlessPolicy::kNewLabel;
};

// Keeps instances with area >= min_area, order preserved.
std::vector<InstanceMask> RemoveSmall(std::span<const InstanceMask> instances,
                                      int64_t min_area = 10);

// Marker-controlled priority flood restricted to `mask`. Markers are the
// 8-connected components of mask & ~borders. The lowest-elevation frontier
// pixel is assigned next (FIFO among equal elevations) and takes the label of
// the neighbour that queued it. Mask pixels the flood cannot reach are grouped
// into components that get fresh labels or are dropped, per policy. Output
// labels are canonical (raster order).
LabelMap WatershedSplit(const BinaryMask& mask, const BinaryMask& borders,
                        const WatershedConfig& cfg = {});

// Pixels claimed by one instance are untouched. A contested pixel goes to the
// contender whose nearest exclusive pixel is closest (ties: lower id, then
// earlier position). Contenders without exclusive pixels lose every contested
// pixel; if no contender of a pixel has exclusive pixels it goes to the lowest
// id. Empty results are dropped. Ids and order are preserved.
std::vector<InstanceMask> ResolveOverlaps(std::span<const InstanceMask> instances);

struct CleanConfig {
  int64_t min_area = 10;
  bool watershed = true;  // only applies when a border channel is supplied
  WatershedConfig watershed_config;
};

// Instance-list input: fill holes per instance, split each instance with the
// watershed when `borders` is given, resolve overlaps, drop small masks.
// Output ids are 1..n in raster order of each instance's first pixel.
std::vector<InstanceMask> CleanPipeline(std::span<const InstanceMask> raw, int height, int width,
                                        const BinaryMask* borders, const CleanConfig& cfg = {});
// Two-channel input (semantic mask + border channel).
std::vector<InstanceMask> CleanPipeline(const BinaryMask& mask, const BinaryMask& borders,
                                        const CleanConfig& cfg = {});

}  // namespace maskfuse

#endif  // MASKFUSE_POST_PROCESS_H_
