#include "maskfuse/mask_core.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_map>

#include "maskfuse/errors.h"

namespace maskfuse {
namespace {

void CheckDimensions(int height, int width) {
  if (height < 0 || width < 0 || height > kMaxDimension || width > kMaxDimension) {
    throw BoundsError("image dimensions " + std::to_string(height) + "x" +
                      std::to_string(width) + " outside supported range");
  }
}

constexpr int kDr8[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
constexpr int kDc8[8] = {-1, 0, 1, -1, 1, -1, 0, 1};
constexpr int kDr4[4] = {-1, 0, 0, 1};
constexpr int kDc4[4] = {0, -1, 1, 0};

// Running-window OR along rows then columns.
BinaryMask DilateSquare(const BinaryMask& mask, int radius) {
  const int h = mask.height();
  const int w = mask.width();
  BinaryMask horiz(h, w);
  std::vector<int> prefix(static_cast<size_t>(std::max(h, w)) + 1);
  for (int r = 0; r < h; ++r) {
    prefix[0] = 0;
    for (int c = 0; c < w; ++c) prefix[c + 1] = prefix[c] + (mask.at(r, c) ? 1 : 0);
    for (int c = 0; c < w; ++c) {
      const int lo = std::max(0, c - radius);
      const int hi = std::min(w - 1, c + radius);
      if (prefix[hi + 1] - prefix[lo] > 0) horiz.set(r, c);
    }
  }
  BinaryMask out(h, w);
  for (int c = 0; c < w; ++c) {
    prefix[0] = 0;
    for (int r = 0; r < h; ++r) prefix[r + 1] = prefix[r] + (horiz.at(r, c) ? 1 : 0);
    for (int r = 0; r < h; ++r) {
      const int lo = std::max(0, r - radius);
      const int hi = std::min(h - 1, r + radius);
      if (prefix[hi + 1] - prefix[lo] > 0) out.set(r, c);
    }
  }
  return out;
}

BinaryMask DilateDisk(const BinaryMask& mask, int radius) {
  std::vector<Pixel> offsets;
  for (int dr = -radius; dr <= radius; ++dr) {
    for (int dc = -radius; dc <= radius; ++dc) {
      if (dr * dr + dc * dc <= radius * radius) offsets.push_back({dr, dc});
    }
  }
  const int h = mask.height();
  const int w = mask.width();
  BinaryMask out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!mask.at(r, c)) continue;
      for (const Pixel& o : offsets) {
        const int rr = r + o.row;
        const int cc = c + o.col;
        if (out.in_bounds(rr, cc)) out.set(rr, cc);
      }
    }
  }
  return out;
}

BinaryMask Complement(const BinaryMask& mask) {
  BinaryMask out(mask.height(), mask.width());
  auto src = mask.data();
  auto dst = out.data();
  for (size_t i = 0; i < src.size(); ++i) dst[i] = src[i] ? 0 : 1;
  return out;
}

// Squared distance along one line given per-sample squared costs (lower
// envelope of parabolas). `kInf` entries are sources that do not exist.
constexpr int64_t kInf = -1;

void EnvelopePass(const std::vector<int64_t>& f, std::vector<int64_t>& out,
                  std::vector<int>& v, std::vector<double>& z) {
  constexpr double kInfinity = std::numeric_limits<double>::infinity();
  const int n = static_cast<int>(f.size());
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInfinity;
      z[1] = kInfinity;
      continue;
    }
    const double fq = static_cast<double>(f[q] + int64_t{q} * q);
    double s = 0.0;
    while (true) {
      const int p = v[k];
      s = (fq - static_cast<double>(f[p] + int64_t{p} * p)) / (2.0 * (q - p));
      if (s > z[k]) break;
      --k;  // z[0] is -inf, so k never drops below 0
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInfinity;
  }
  if (k < 0) {
    std::fill(out.begin(), out.end(), kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const int64_t d = q - v[j];
    out[q] = d * d + f[v[j]];
  }
}

}  // namespace

BinaryMask::BinaryMask(int height, int width) : height_(height), width_(width) {
  CheckDimensions(height, width);
  bits_.assign(static_cast<size_t>(height) * static_cast<size_t>(width), 0);
}

int64_t BinaryMask::count() const {
  return std::count_if(bits_.begin(), bits_.end(), [](uint8_t b) { return b != 0; });
}

LabelMap::LabelMap(int height, int width) : height_(height), width_(width) {
  CheckDimensions(height, width);
  labels_.assign(static_cast<size_t>(height) * static_cast<size_t>(width), 0);
}

uint32_t LabelMap::max_label() const {
  uint32_t m = 0;
  for (uint32_t v : labels_) m = std::max(m, v);
  return m;
}

size_t LabelMap::instance_count() const {
  std::vector<uint32_t> seen;
  for (uint32_t v : labels_) {
    if (v != 0) seen.push_back(v);
  }
  std::sort(seen.begin(), seen.end());
  return static_cast<size_t>(std::unique(seen.begin(), seen.end()) - seen.begin());
}

BinaryMask LabelMap::foreground() const {
  BinaryMask out(height_, width_);
  auto dst = out.data();
  for (size_t i = 0; i < labels_.size(); ++i) dst[i] = labels_[i] != 0 ? 1 : 0;
  return out;
}

InstanceMask InstanceMask::FromPixels(uint32_t id, std::span<const Pixel> pixels) {
  if (pixels.empty()) throw EmptyRegionError("instance has no pixels");
  BoundingBox box{pixels[0].row, pixels[0].col, pixels[0].row, pixels[0].col};
  for (const Pixel& p : pixels) {
    box.min_row = std::min(box.min_row, p.row);
    box.min_col = std::min(box.min_col, p.col);
    box.max_row = std::max(box.max_row, p.row);
    box.max_col = std::max(box.max_col, p.col);
  }
  InstanceMask m;
  m.id_ = id;
  m.bbox_ = box;
  m.bits_.assign(static_cast<size_t>(box.area()), 0);
  for (const Pixel& p : pixels) {
    m.bits_[static_cast<size_t>(p.row - box.min_row) * box.width() + (p.col - box.min_col)] = 1;
  }
  m.area_ = std::count(m.bits_.begin(), m.bits_.end(), uint8_t{1});
  return m;
}

InstanceMask InstanceMask::FromBitmap(uint32_t id, int origin_row, int origin_col, int height,
                                      int width, std::span<const uint8_t> bits) {
  BoundingBox box{height, width, -1, -1};
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      if (!bits[static_cast<size_t>(r) * width + c]) continue;
      box.min_row = std::min(box.min_row, r);
      box.min_col = std::min(box.min_col, c);
      box.max_row = std::max(box.max_row, r);
      box.max_col = std::max(box.max_col, c);
    }
  }
  if (box.max_row < 0) throw EmptyRegionError("instance has no pixels");
  InstanceMask m;
  m.id_ = id;
  m.bits_.assign(static_cast<size_t>(box.area()), 0);
  int64_t area = 0;
  for (int r = box.min_row; r <= box.max_row; ++r) {
    for (int c = box.min_col; c <= box.max_col; ++c) {
      if (bits[static_cast<size_t>(r) * width + c]) {
        m.bits_[static_cast<size_t>(r - box.min_row) * box.width() + (c - box.min_col)] = 1;
        ++area;
      }
    }
  }
  m.area_ = area;
  m.bbox_ = BoundingBox{box.min_row + origin_row, box.min_col + origin_col,
                        box.max_row + origin_row, box.max_col + origin_col};
  return m;
}

InstanceMask InstanceMask::FromMask(uint32_t id, const BinaryMask& mask) {
  return FromBitmap(id, 0, 0, mask.height(), mask.width(), mask.data());
}

std::vector<Pixel> InstanceMask::pixels() const {
  std::vector<Pixel> out;
  out.reserve(static_cast<size_t>(area_));
  const int w = bbox_.width();
  for (int r = 0; r < bbox_.height(); ++r) {
    for (int c = 0; c < w; ++c) {
      if (bits_[static_cast<size_t>(r) * w + c]) out.push_back({r + bbox_.min_row, c + bbox_.min_col});
    }
  }
  return out;
}

BinaryMask InstanceMask::to_mask(int height, int width) const {
  BinaryMask out(height, width);
  for (const Pixel& p : pixels()) {
    if (!out.in_bounds(p.row, p.col)) {
      throw BoundsError("instance " + std::to_string(id_) + " pixel (" + std::to_string(p.row) +
                        "," + std::to_string(p.col) + ") outside image");
    }
    out.set(p.row, p.col);
  }
  return out;
}

LabelMap Canonicalize(const LabelMap& map) {
  std::unordered_map<uint32_t, uint32_t> remap;
  LabelMap out(map.height(), map.width());
  auto src = map.data();
  auto dst = out.data();
  uint32_t next = 1;
  for (size_t i = 0; i < src.size(); ++i) {
    if (src[i] == 0) continue;
    auto [it, inserted] = remap.try_emplace(src[i], next);
    if (inserted) ++next;
    dst[i] = it->second;
  }
  return out;
}

std::vector<InstanceMask> InstancesFromLabelMap(const LabelMap& map) {
  std::map<uint32_t, std::vector<Pixel>> groups;
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) {
      const uint32_t v = map.at(r, c);
      if (v != 0) groups[v].push_back({r, c});
    }
  }
  std::vector<InstanceMask> out;
  out.reserve(groups.size());
  for (const auto& [id, pixels] : groups) out.push_back(InstanceMask::FromPixels(id, pixels));
  return out;
}

LabelMap LabelMapFromInstances(std::span<const InstanceMask> instances, int height, int width,
                               OverlapPolicy policy) {
  LabelMap out(height, width);
  for (const InstanceMask& inst : instances) {
    const BoundingBox& b = inst.bbox();
    if (b.min_row < 0 || b.min_col < 0 || b.max_row >= height || b.max_col >= width) {
      throw BoundsError("instance " + std::to_string(inst.id()) + " extends outside " +
                        std::to_string(height) + "x" + std::to_string(width) + " image");
    }
    for (const Pixel& p : inst.pixels()) {
      const uint32_t cur = out.at(p.row, p.col);
      if (cur == 0) {
        out.set(p.row, p.col, inst.id());
      } else if (policy == OverlapPolicy::kError) {
        throw OverlapError("pixel (" + std::to_string(p.row) + "," + std::to_string(p.col) +
                           ") claimed by instances " + std::to_string(cur) + " and " +
                           std::to_string(inst.id()));
      } else {
        out.set(p.row, p.col, std::min(cur, inst.id()));
      }
    }
  }
  return out;
}

LabelMap ConnectedComponents(const BinaryMask& mask, Connectivity connectivity) {
  const int h = mask.height();
  const int w = mask.width();
  LabelMap out(h, w);
  const bool eight = connectivity == Connectivity::kEight;
  const int n_nbrs = eight ? 8 : 4;
  const int* dr = eight ? kDr8 : kDr4;
  const int* dc = eight ? kDc8 : kDc4;
  uint32_t next = 1;
  std::vector<Pixel> stack;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!mask.at(r, c) || out.at(r, c) != 0) continue;
      const uint32_t label = next++;
      out.set(r, c, label);
      stack.push_back({r, c});
      while (!stack.empty()) {
        const Pixel p = stack.back();
        stack.pop_back();
        for (int k = 0; k < n_nbrs; ++k) {
          const int rr = p.row + dr[k];
          const int cc = p.col + dc[k];
          if (mask.in_bounds(rr, cc) && mask.at(rr, cc) && out.at(rr, cc) == 0) {
            out.set(rr, cc, label);
            stack.push_back({rr, cc});
          }
        }
      }
    }
  }
  return out;
}

BinaryMask Dilate(const BinaryMask& mask, int radius, StructuringElement element) {
  return Morphology(mask, MorphOp::kDilate, radius, element);
}

BinaryMask Erode(const BinaryMask& mask, int radius, StructuringElement element) {
  return Morphology(mask, MorphOp::kErode, radius, element);
}

BinaryMask Morphology(const BinaryMask& mask, MorphOp op, int radius,
                      StructuringElement element) {
  if (radius < 1) throw ConfigError("morphology radius must be >= 1");
  auto dilate = [&](const BinaryMask& m) {
    return element == StructuringElement::kSquare ? DilateSquare(m, radius)
                                                  : DilateDisk(m, radius);
  };
  if (op == MorphOp::kDilate) return dilate(mask);
  // Both elements are symmetric, so erosion is the dual of dilation.
  return Complement(dilate(Complement(mask)));
}

BinaryMask FillHoles(const BinaryMask& mask) {
  const int h = mask.height();
  const int w = mask.width();
  BinaryMask outside(h, w);
  std::vector<Pixel> stack;
  auto seed = [&](int r, int c) {
    if (!mask.at(r, c) && !outside.at(r, c)) {
      outside.set(r, c);
      stack.push_back({r, c});
    }
  };
  for (int c = 0; c < w; ++c) {
    seed(0, c);
    seed(h - 1, c);
  }
  for (int r = 0; r < h; ++r) {
    seed(r, 0);
    seed(r, w - 1);
  }
  while (!stack.empty()) {
    const Pixel p = stack.back();
    stack.pop_back();
    for (int k = 0; k < 4; ++k) {
      const int rr = p.row + kDr4[k];
      const int cc = p.col + kDc4[k];
      if (mask.in_bounds(rr, cc)) seed(rr, cc);
    }
  }
  BinaryMask out(h, w);
  auto dst = out.data();
  auto out_bits = outside.data();
  for (size_t i = 0; i < dst.size(); ++i) dst[i] = out_bits[i] ? 0 : 1;
  return out;
}

std::vector<int64_t> SquaredDistanceTransform(const BinaryMask& mask) {
  const int h = mask.height();
  const int w = mask.width();
  std::vector<int64_t> grid(static_cast<size_t>(h) * w, kInf);
  const int n = std::max(h, w);
  std::vector<int64_t> f(n), out(n);
  std::vector<int> v(n);
  std::vector<double> z(static_cast<size_t>(n) + 1);

  // Columns: the source cost is 0 on background and absent elsewhere.
  f.resize(h);
  out.resize(h);
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) f[r] = mask.at(r, c) ? kInf : 0;
    EnvelopePass(f, out, v, z);
    for (int r = 0; r < h; ++r) grid[static_cast<size_t>(r) * w + c] = out[r];
  }
  f.resize(w);
  out.resize(w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) f[c] = grid[static_cast<size_t>(r) * w + c];
    EnvelopePass(f, out, v, z);
    for (int c = 0; c < w; ++c) grid[static_cast<size_t>(r) * w + c] = out[c];
  }
  return grid;
}

DistanceField DistanceTransform(const BinaryMask& mask) {
  DistanceField field;
  field.height = mask.height();
  field.width = mask.width();
  const std::vector<int64_t> sq = SquaredDistanceTransform(mask);
  field.values.resize(sq.size());
  for (size_t i = 0; i < sq.size(); ++i) {
    field.values[i] = sq[i] == kInf ? kNoBackground : std::sqrt(static_cast<double>(sq[i]));
  }
  return field;
}

int64_t IntersectionArea(const InstanceMask& a, const InstanceMask& b) {
  const BoundingBox& ba = a.bbox();
  const BoundingBox& bb = b.bbox();
  if (!ba.intersects(bb)) return 0;
  const int r0 = std::max(ba.min_row, bb.min_row);
  const int r1 = std::min(ba.max_row, bb.max_row);
  const int c0 = std::max(ba.min_col, bb.min_col);
  const int c1 = std::min(ba.max_col, bb.max_col);
  auto bits_a = a.bits();
  auto bits_b = b.bits();
  const int wa = ba.width();
  const int wb = bb.width();
  int64_t inter = 0;
  for (int r = r0; r <= r1; ++r) {
    const uint8_t* row_a = bits_a.data() + static_cast<size_t>(r - ba.min_row) * wa;
    const uint8_t* row_b = bits_b.data() + static_cast<size_t>(r - bb.min_row) * wb;
    for (int c = c0; c <= c1; ++c) inter += (row_a[c - ba.min_col] & row_b[c - bb.min_col]);
  }
  return inter;
}

double Iou(const InstanceMask& a, const InstanceMask& b) {
  const int64_t inter = IntersectionArea(a, b);
  if (inter == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(a.area() + b.area() - inter);
}

IouMatrix PairwiseIou(std::span<const InstanceMask> preds, std::span<const InstanceMask> gts) {
  IouMatrix m;
  m.rows = preds.size();
  m.cols = gts.size();
  m.values.assign(m.rows * m.cols, 0.0);
  for (size_t i = 0; i < preds.size(); ++i) {
    for (size_t j = 0; j < gts.size(); ++j) {
      if (!preds[i].bbox().intersects(gts[j].bbox())) continue;
      m.values[i * m.cols + j] = Iou(preds[i], gts[j]);
    }
  }
  return m;
}

}  // namespace maskfuse
