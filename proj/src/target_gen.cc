#include "maskfuse/target_gen.h"

#include <algorithm>
#include <vector>

#include "maskfuse/errors.h"

namespace maskfuse {

UnetTargets MakeUnetTargets(const LabelMap& gt, int radius) {
  if (radius < 1) throw ConfigError("border radius must be >= 1");
  const int h = gt.height();
  const int w = gt.width();
  UnetTargets out{gt.foreground(), BinaryMask(h, w)};

  // Per pixel: how many dilated instances cover it (saturating at 2).
  std::vector<uint8_t> cover(static_cast<size_t>(h) * w, 0);
  for (const InstanceMask& inst : InstancesFromLabelMap(gt)) {
    const BoundingBox& b = inst.bbox();
    const int r0 = std::max(0, b.min_row - radius);
    const int r1 = std::min(h - 1, b.max_row + radius);
    const int c0 = std::max(0, b.min_col - radius);
    const int c1 = std::min(w - 1, b.max_col + radius);
    BinaryMask local(r1 - r0 + 1, c1 - c0 + 1);
    for (const Pixel& p : inst.pixels()) local.set(p.row - r0, p.col - c0);
    const BinaryMask grown = Dilate(local, radius, StructuringElement::kSquare);
    for (int r = 0; r < grown.height(); ++r) {
      for (int c = 0; c < grown.width(); ++c) {
        if (!grown.at(r, c)) continue;
        uint8_t& n = cover[static_cast<size_t>(r + r0) * w + (c + c0)];
        if (n < 2) ++n;
      }
    }
  }
  auto borders = out.borders.data();
  for (size_t i = 0; i < cover.size(); ++i) borders[i] = cover[i] >= 2 ? 1 : 0;
  return out;
}

}  // namespace maskfuse
