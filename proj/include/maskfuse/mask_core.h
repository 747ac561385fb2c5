#ifndef MASKFUSE_MASK_CORE_H_
#define MASKFUSE_MASK_CORE_H_

#include <compare>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace maskfuse {

// Largest supported image side and instance count (the label-map file format
// stores ids as 16-bit values).
inline constexpr int kMaxDimension = 1 << 15;
inline constexpr uint32_t kMaxInstances = 65535;

struct Pixel {
  int row = 0;
  int col = 0;
  auto operator<=>(const Pixel&) const = default;
};

enum class Connectivity { kFour = 4, kEight = 8 };
enum class MorphOp { kDilate, kErode };
enum class StructuringElement { kSquare, kDisk };
enum class OverlapPolicy { kError, kLowestIdWins };

// One bit (stored as a byte) per pixel, row-major.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width);

  int height() const { return height_; }
  int width() const { return width_; }
  bool in_bounds(int r, int c) const {
    return r >= 0 && c >= 0 && r < height_ && c < width_;
  }
  bool at(int r, int c) const { return bits_[index(r, c)] != 0; }
  void set(int r, int c, bool value = true) { bits_[index(r, c)] = value ? 1 : 0; }

  std::span<const uint8_t> data() const { return bits_; }
  std::span<uint8_t> data() { return bits_; }
  int64_t count() const;

  bool operator==(const BinaryMask&) const = default;

 private:
  size_t index(int r, int c) const {
    return static_cast<size_t>(r) * static_cast<size_t>(width_) + static_cast<size_t>(c);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<uint8_t> bits_;
};

// Integer grid, 0 = background, k > 0 = instance k.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(int height, int width);

  int height() const { return height_; }
  int width() const { return width_; }
  bool in_bounds(int r, int c) const {
    return r >= 0 && c >= 0 && r < height_ && c < width_;
  }
  uint32_t at(int r, int c) const { return labels_[index(r, c)]; }
  void set(int r, int c, uint32_t label) { labels_[index(r, c)] = label; }

  std::span<const uint32_t> data() const { return labels_; }
  std::span<uint32_t> data() { return labels_; }
  uint32_t max_label() const;
  // Number of distinct nonzero labels.
  size_t instance_count() const;
  BinaryMask foreground() const;

  bool operator==(const LabelMap&) const = default;

 private:
  size_t index(int r, int c) const {
    return static_cast<size_t>(r) * static_cast<size_t>(width_) + static_cast<size_t>(c);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<uint32_t> labels_;
};

// Inclusive bounds.
struct BoundingBox {
  int min_row = 0;
  int min_col = 0;
  int max_row = -1;
  int max_col = -1;

  int height() const { return max_row - min_row + 1; }
  int width() const { return max_col - min_col + 1; }
  int64_t area() const { return int64_t{height()} * width(); }
  bool contains(int r, int c) const {
    return r >= min_row && r <= max_row && c >= min_col && c <= max_col;
  }
  bool intersects(const BoundingBox& o) const {
    return min_row <= o.max_row && o.min_row <= max_row && min_col <= o.max_col &&
           o.min_col <= max_col;
  }
  bool operator==(const BoundingBox&) const = default;
};

// A single instance: tight bounding box plus a bitmap over that box.
class InstanceMask {
 public:
  InstanceMask() = default;

  // Throws EmptyRegionError when `pixels` is empty. Duplicates are ignored.
  static InstanceMask FromPixels(uint32_t id, std::span<const Pixel> pixels);
  // `bits` is a height x width row-major bitmap whose (0,0) sits at
  // (origin_row, origin_col) in image coordinates. The box is tightened.
  static InstanceMask FromBitmap(uint32_t id, int origin_row, int origin_col, int height,
                                 int width, std::span<const uint8_t> bits);
  // Cuts the pixels of `mask` out as one instance.
  static InstanceMask FromMask(uint32_t id, const BinaryMask& mask);

  uint32_t id() const { return id_; }
  void set_id(uint32_t id) { id_ = id; }
  const BoundingBox& bbox() const { return bbox_; }
  int64_t area() const { return area_; }

  bool contains(int r, int c) const {
    if (!bbox_.contains(r, c)) return false;
    return bits_[static_cast<size_t>(r - bbox_.min_row) * bbox_.width() +
                 (c - bbox_.min_col)] != 0;
  }
  // Bitmap over bbox(), row-major.
  std::span<const uint8_t> bits() const { return bits_; }
  // Raster order.
  std::vector<Pixel> pixels() const;
  // Paints into a full-size mask of the given dimensions.
  BinaryMask to_mask(int height, int width) const;

  bool same_pixels(const InstanceMask& o) const { return bbox_ == o.bbox_ && bits_ == o.bits_; }
  bool operator==(const InstanceMask&) const = default;

 private:
  uint32_t id_ = 0;
  BoundingBox bbox_;
  std::vector<uint8_t> bits_;
  int64_t area_ = 0;
};

// Euclidean distance from each pixel to the nearest background pixel.
struct DistanceField {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double at(int r, int c) const {
    return values[static_cast<size_t>(r) * static_cast<size_t>(width) + static_cast<size_t>(c)];
  }
};

// Value reported for every pixel when the mask contains no background.
inline constexpr double kNoBackground = std::numeric_limits<double>::max();

struct IouMatrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> values;

  double at(size_t i, size_t j) const { return values[i * cols + j]; }
};

// Relabels to 1..n in raster order of each label's first pixel.
LabelMap Canonicalize(const LabelMap& map);

// One instance per distinct nonzero label, ascending id.
std::vector<InstanceMask> InstancesFromLabelMap(const LabelMap& map);

// Throws BoundsError when a box leaves the image, OverlapError under kError
// when a pixel is claimed twice.
LabelMap LabelMapFromInstances(std::span<const InstanceMask> instances, int height, int width,
                               OverlapPolicy policy = OverlapPolicy::kError);

// Labels 1..n in raster order of each component's first pixel.
LabelMap ConnectedComponents(const BinaryMask& mask, Connectivity connectivity);

// Erosion only inspects neighbours inside the image, so border pixels are not
// eroded by the image edge. This keeps erode(dilate(m)) a superset of m.
BinaryMask Morphology(const BinaryMask& mask, MorphOp op, int radius,
                      StructuringElement element = StructuringElement::kSquare);
BinaryMask Dilate(const BinaryMask& mask, int radius,
                  StructuringElement element = StructuringElement::kSquare);
BinaryMask Erode(const BinaryMask& mask, int radius,
                 StructuringElement element = StructuringElement::kSquare);

// Background regions (4-connected) that do not touch the image border become
// foreground.
BinaryMask FillHoles(const BinaryMask& mask);

// Exact Euclidean distance transform (separable lower-envelope method).
DistanceField DistanceTransform(const BinaryMask& mask);
// Same, but returns squared integer distances; -1 stands for "no background".
std::vector<int64_t> SquaredDistanceTransform(const BinaryMask& mask);

int64_t IntersectionArea(const InstanceMask& a, const InstanceMask& b);
double Iou(const InstanceMask& a, const InstanceMask& b);
IouMatrix PairwiseIou(std::span<const InstanceMask> preds, std::span<const InstanceMask> gts);

}  // namespace maskfuse

#endif  // MASKFUSE_MASK_CORE_H_
