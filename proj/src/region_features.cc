#include "maskfuse/region_features.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "maskfuse/errors.h"
#include "maskfuse/numeric_text.h"

namespace maskfuse {
namespace {

// Clockwise on screen (rows grow downward), starting west.
constexpr int kDirRow[8] = {0, -1, -1, -1, 0, 1, 1, 1};
constexpr int kDirCol[8] = {-1, -1, 0, 1, 1, 1, 0, -1};

int DirectionOf(int dr, int dc) {
  for (int d = 0; d < 8; ++d) {
    if (kDirRow[d] == dr && kDirCol[d] == dc) return d;
  }
  throw std::logic_error("pixels are not neighbours");
}

// Bitmap with a one-pixel empty frame so neighbour lookups never leave it.
class PaddedBitmap {
 public:
  explicit PaddedBitmap(const InstanceMask& inst)
      : height_(inst.bbox().height() + 2), width_(inst.bbox().width() + 2),
        bits_(static_cast<size_t>(height_) * width_, 0) {
    const int w = inst.bbox().width();
    auto src = inst.bits();
    for (int r = 0; r < inst.bbox().height(); ++r) {
      for (int c = 0; c < w; ++c) bits_[index(r + 1, c + 1)] = src[static_cast<size_t>(r) * w + c];
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  bool at(int r, int c) const { return bits_[index(r, c)] != 0; }

 private:
  size_t index(int r, int c) const { return static_cast<size_t>(r) * width_ + c; }
  int height_;
  int width_;
  std::vector<uint8_t> bits_;
};

double TraceOuterContour(const PaddedBitmap& bmp, int start_row, int start_col) {
  const double kDiagonal = std::numbers::sqrt2;
  // Returns the direction from (r, c) to the next contour pixel, scanning
  // clockwise from the backtrack direction; -1 when isolated. `backtrack` is
  // updated to the direction (seen from the new pixel) of the last background
  // neighbour examined.
  auto step = [&](int r, int c, int* backtrack) {
    for (int k = 1; k <= 8; ++k) {
      const int d = (*backtrack + k) % 8;
      if (bmp.at(r + kDirRow[d], c + kDirCol[d])) {
        const int prev = (d + 7) % 8;
        const int nr = r + kDirRow[d];
        const int nc = c + kDirCol[d];
        *backtrack = DirectionOf(r + kDirRow[prev] - nr, c + kDirCol[prev] - nc);
        return d;
      }
    }
    return -1;
  };

  int backtrack = 0;  // west of the raster-first pixel is background
  const int first = step(start_row, start_col, &backtrack);
  if (first < 0) return 0.0;
  double length = (first % 2 == 0) ? 1.0 : kDiagonal;
  int r = start_row + kDirRow[first];
  int c = start_col + kDirCol[first];
  const int64_t guard = 8LL * bmp.height() * bmp.width() + 16;
  for (int64_t steps = 0; steps < guard; ++steps) {
    const int d = step(r, c, &backtrack);
    if (r == start_row && c == start_col && d == first) return length;
    length += (d % 2 == 0) ? 1.0 : kDiagonal;
    r += kDirRow[d];
    c += kDirCol[d];
  }
  throw std::logic_error("contour tracing did not close");
}

struct HullPoint {
  int64_t x;  // column
  int64_t y;  // row
  auto operator<=>(const HullPoint&) const = default;
};

int64_t Cross(const HullPoint& o, const HullPoint& a, const HullPoint& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Andrew's monotone chain; collinear points dropped; counter-clockwise in
// (x, y) coordinates.
std::vector<HullPoint> ConvexHull(std::vector<HullPoint> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<HullPoint> hull(2 * pts.size());
  size_t k = 0;
  for (const HullPoint& p : pts) {
    while (k >= 2 && Cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    const HullPoint& p = pts[i - 1];
    while (k >= t && Cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  hull.resize(k - 1);
  return hull;
}

}  // namespace

double ContourPerimeter(const InstanceMask& instance) {
  if (instance.area() == 0) throw EmptyRegionError("perimeter of empty region");
  const PaddedBitmap bmp(instance);
  // Label 8-connected pieces so each is traced once from its raster-first pixel.
  std::vector<uint8_t> visited(static_cast<size_t>(bmp.height()) * bmp.width(), 0);
  double total = 0.0;
  std::vector<Pixel> stack;
  for (int r = 1; r < bmp.height() - 1; ++r) {
    for (int c = 1; c < bmp.width() - 1; ++c) {
      if (!bmp.at(r, c) || visited[static_cast<size_t>(r) * bmp.width() + c]) continue;
      total += TraceOuterContour(bmp, r, c);
      visited[static_cast<size_t>(r) * bmp.width() + c] = 1;
      stack.push_back({r, c});
      while (!stack.empty()) {
        const Pixel p = stack.back();
        stack.pop_back();
        for (int d = 0; d < 8; ++d) {
          const int rr = p.row + kDirRow[d];
          const int cc = p.col + kDirCol[d];
          const size_t i = static_cast<size_t>(rr) * bmp.width() + cc;
          if (bmp.at(rr, cc) && !visited[i]) {
            visited[i] = 1;
            stack.push_back({rr, cc});
          }
        }
      }
    }
  }
  return total;
}

int64_t ConvexArea(const InstanceMask& instance) {
  if (instance.area() == 0) throw EmptyRegionError("convex area of empty region");
  const BoundingBox& box = instance.bbox();
  std::vector<HullPoint> pts;
  pts.reserve(static_cast<size_t>(instance.area()));
  for (const Pixel& p : instance.pixels()) pts.push_back({p.col, p.row});
  const std::vector<HullPoint> hull = ConvexHull(std::move(pts));
  if (hull.size() < 3) return instance.area();
  int64_t count = 0;
  for (int r = box.min_row; r <= box.max_row; ++r) {
    for (int c = box.min_col; c <= box.max_col; ++c) {
      const HullPoint q{c, r};
      bool inside = true;
      for (size_t i = 0; i < hull.size() && inside; ++i) {
        inside = Cross(hull[i], hull[(i + 1) % hull.size()], q) >= 0;
      }
      if (inside) ++count;
    }
  }
  return count;
}

RegionProperties ComputeProperties(const InstanceMask& instance) {
  if (instance.area() == 0) throw EmptyRegionError("properties of empty region");
  RegionProperties p;
  const BoundingBox& box = instance.bbox();
  const int64_t n = instance.area();
  p.area = n;

  // Integer raw moments in bbox-local coordinates; central moments follow
  // exactly as (n*S_xy - S_x*S_y) / n^2.
  __int128 sr = 0, sc = 0, srr = 0, scc = 0, src = 0;
  const int w = box.width();
  auto bits = instance.bits();
  for (int r = 0; r < box.height(); ++r) {
    for (int c = 0; c < w; ++c) {
      if (!bits[static_cast<size_t>(r) * w + c]) continue;
      sr += r;
      sc += c;
      srr += static_cast<__int128>(r) * r;
      scc += static_cast<__int128>(c) * c;
      src += static_cast<__int128>(r) * c;
    }
  }
  p.centroid_row = box.min_row + static_cast<double>(sr) / static_cast<double>(n);
  p.centroid_col = box.min_col + static_cast<double>(sc) / static_cast<double>(n);

  const double n2 = static_cast<double>(n) * static_cast<double>(n);
  const __int128 a = n * srr - sr * sr;  // n^2 * mu_rr
  const __int128 c = n * scc - sc * sc;  // n^2 * mu_cc
  const __int128 b = n * src - sr * sc;  // n^2 * mu_rc
  const double half_diff = static_cast<double>(a - c) / 2.0;
  const double mid = static_cast<double>(a + c) / 2.0;
  const double radius = std::hypot(half_diff, static_cast<double>(b));
  const double lambda1 = (mid + radius) / n2;
  const double lambda2 = std::max(0.0, (mid - radius) / n2);
  p.major_axis_length = 4.0 * std::sqrt(lambda1);
  p.minor_axis_length = 4.0 * std::sqrt(lambda2);
  // 1 - l2/l1 = 2*radius / (mid + radius), free of cancellation near zero.
  p.eccentricity = lambda1 > 0.0 ? std::min(1.0, std::sqrt(2.0 * radius / (mid + radius))) : 0.0;

  p.perimeter = ContourPerimeter(instance);
  p.convex_area = ConvexArea(instance);
  p.solidity = static_cast<double>(n) / static_cast<double>(p.convex_area);
  p.bbox_extent = static_cast<double>(n) / static_cast<double>(box.area());
  p.equivalent_diameter = std::sqrt(4.0 * static_cast<double>(n) / std::numbers::pi);
  return p;
}

FeatureVector MakeFeatureVector(const RegionProperties& props, int image_height,
                                int image_width) {
  return FeatureVector{static_cast<double>(props.area),
                       props.perimeter,
                       props.eccentricity,
                       props.major_axis_length,
                       props.minor_axis_length,
                       static_cast<double>(props.convex_area),
                       props.solidity,
                       props.bbox_extent,
                       props.equivalent_diameter,
                       props.centroid_row / image_height,
                       props.centroid_col / image_width};
}

void WriteFeatureTable(const std::filesystem::path& path, std::span<const FeatureRow> rows) {
  const bool with_target =
      !rows.empty() && std::all_of(rows.begin(), rows.end(),
                                   [](const FeatureRow& r) { return r.target_iou.has_value(); });
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "ImageId,InstanceId,Source";
  for (std::string_view name : kFeatureNames) out << ',' << name;
  if (with_target) out << ",TargetIoU";
  out << '\n';
  for (const FeatureRow& row : rows) {
    out << row.image_id << ',' << row.instance_id << ',' << row.source;
    for (double v : row.features) out << ',' << FormatDouble(v);
    if (with_target) out << ',' << FormatDouble(*row.target_iou);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<FeatureRow> ReadFeatureTable(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty feature table");
  const auto header = SplitCsvLine(line);
  const size_t base = 3 + kFeatureCount;
  if (header.size() != base && header.size() != base + 1) {
    throw FormatError(path.string() + ": unexpected feature table header");
  }
  for (size_t i = 0; i < kFeatureCount; ++i) {
    if (header[3 + i] != kFeatureNames[i]) {
      throw FormatError(path.string() + ": column " + std::to_string(3 + i) + " should be " +
                        std::string(kFeatureNames[i]));
    }
  }
  const bool with_target = header.size() == base + 1;
  std::vector<FeatureRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = SplitCsvLine(line);
    if (fields.size() != header.size()) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": wrong field count");
    }
    FeatureRow row;
    row.image_id = std::string(fields[0]);
    row.instance_id = static_cast<uint32_t>(ParseInteger(fields[1]));
    if (fields[2] != "A" && fields[2] != "B") {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": Source must be A or B");
    }
    row.source = fields[2][0];
    for (size_t i = 0; i < kFeatureCount; ++i) row.features[i] = ParseDouble(fields[3 + i]);
    if (with_target) row.target_iou = ParseDouble(fields[base]);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace maskfuse
