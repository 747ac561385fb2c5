#ifndef MASKFUSE_REGION_FEATURES_H_
#define MASKFUSE_REGION_FEATURES_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "maskfuse/mask_core.h"

namespace maskfuse {

// Structural descriptors of one region. Coordinates are pixel centres
// (row, col) with no +1/12 pixel-extent correction in the moments.
struct RegionProperties {
  int64_t area = 0;
  double perimeter = 0.0;
  double centroid_row = 0.0;
  double centroid_col = 0.0;
  double bbox_extent = 0.0;
  double eccentricity = 0.0;
  double major_axis_length = 0.0;
  double minor_axis_length = 0.0;
  int64_t convex_area = 0;
  double solidity = 0.0;
  double equivalent_diameter = 0.0;
};

inline constexpr size_t kFeatureCount = 11;
using FeatureVector = std::array<double, kFeatureCount>;

// Column names in FeatureVector order (also the feature-table CSV columns).
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "area",     "perimeter",  "eccentricity",   "major_axis", "minor_axis", "convex_area",
    "solidity", "bbox_extent", "equiv_diameter", "centroid_r", "centroid_c"};

// Throws EmptyRegionError for an empty instance.
RegionProperties ComputeProperties(const InstanceMask& instance);

// Length of the closed outer contour through border-pixel centres, traced
// clockwise (Moore neighbourhood) from the raster-first pixel. Axial steps
// count 1, diagonal steps sqrt(2). Each 8-connected piece of a fragmented
// instance contributes its own contour.
double ContourPerimeter(const InstanceMask& instance);

// Pixels whose centres lie inside or on the convex hull of the region's pixel
// centres. A collinear hull reports the region area.
int64_t ConvexArea(const InstanceMask& instance);

FeatureVector MakeFeatureVector(const RegionProperties& props, int image_height,
                                int image_width);

// One row of the feature table CSV.
struct FeatureRow {
  std::string image_id;
  uint32_t instance_id = 0;
  char source = 'A';  // 'A' or 'B'
  FeatureVector features{};
  std::optional<double> target_iou;
};

// Header: ImageId,InstanceId,Source,<kFeatureNames>[,TargetIoU]. The target
// column is written only when every row carries a target.
void WriteFeatureTable(const std::filesystem::path& path, std::span<const FeatureRow> rows);
std::vector<FeatureRow> ReadFeatureTable(const std::filesystem::path& path);

}  // namespace maskfuse

#endif  // MASKFUSE_REGION_FEATURES_H_
