// Brute-force region property definitions shared by the unit and
// acceptance tests.
#ifndef MASKFUSE_TESTS_REGION_ORACLES_H_
#define MASKFUSE_TESTS_REGION_ORACLES_H_

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>
#include <vector>

#include "maskfuse/mask_core.h"

namespace maskfuse::oracle {

struct Pt {
  int64_t x;  // column
  int64_t y;  // row
  bool operator==(const Pt&) const = default;
};

inline int64_t Cross(const Pt& o, const Pt& a, const Pt& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Jarvis march over distinct points; collinear points on hull edges skipped.
inline std::vector<Pt> GiftWrapHull(std::vector<Pt> pts) {
  std::sort(pts.begin(), pts.end(), [](const Pt& a, const Pt& b) {
    return std::tie(a.x, a.y) < std::tie(b.x, b.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Pt> hull;
  size_t current = 0;  // leftmost point is on the hull
  do {
    hull.push_back(pts[current]);
    size_t next = (current + 1) % pts.size();
    for (size_t i = 0; i < pts.size(); ++i) {
      const int64_t turn = Cross(pts[current], pts[next], pts[i]);
      const auto dist2 = [&](const Pt& p) {
        return (p.x - pts[current].x) * (p.x - pts[current].x) +
               (p.y - pts[current].y) * (p.y - pts[current].y);
      };
      if (turn < 0 || (turn == 0 && dist2(pts[i]) > dist2(pts[next]))) next = i;
    }
    current = next;
  } while (current != 0 && hull.size() <= pts.size());
  return hull;
}

inline int64_t BruteConvexArea(const InstanceMask& inst) {
  std::vector<Pt> pts;
  for (const Pixel& p : inst.pixels()) pts.push_back({p.col, p.row});
  const std::vector<Pt> hull = GiftWrapHull(pts);
  if (hull.size() < 3) return inst.area();
  // Degenerate: every point collinear.
  bool collinear = true;
  for (size_t i = 2; i < hull.size(); ++i) collinear &= Cross(hull[0], hull[1], hull[i]) == 0;
  if (collinear) return inst.area();
  const BoundingBox& b = inst.bbox();
  int64_t count = 0;
  for (int r = b.min_row; r <= b.max_row; ++r) {
    for (int c = b.min_col; c <= b.max_col; ++c) {
      bool inside = true;
      const Pt q{c, r};
      const int64_t orient = Cross(hull[0], hull[1], hull[2]) > 0 ? 1 : -1;
      for (size_t i = 0; i < hull.size() && inside; ++i) {
        inside = orient * Cross(hull[i], hull[(i + 1) % hull.size()], q) >= 0;
      }
      count += inside ? 1 : 0;
    }
  }
  return count;
}

// Independent Moore tracer over the 8-connected piece containing the
// raster-first pixel. The walk is a deterministic function of (pixel,
// backtrack direction); the contour is the cycle it falls into.
inline double BruteContourLength(const std::set<std::pair<int, int>>& px) {
  if (px.size() <= 1) return 0.0;
  // Clockwise from west, (row, col) offsets.
  const int dr[8] = {0, -1, -1, -1, 0, 1, 1, 1};
  const int dc[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
  auto dir_of = [&](int r, int c) {
    for (int d = 0; d < 8; ++d) {
      if (dr[d] == r && dc[d] == c) return d;
    }
    return -1;
  };
  std::pair<int, int> cur = *px.begin();
  int back = 0;  // west of the raster-first pixel is background
  std::map<std::tuple<int, int, int>, size_t> first_visit;
  std::vector<double> cumulative{0.0};
  while (true) {
    const auto state = std::make_tuple(cur.first, cur.second, back);
    if (auto it = first_visit.find(state); it != first_visit.end()) {
      return cumulative.back() - cumulative[it->second];
    }
    first_visit.emplace(state, cumulative.size() - 1);
    int found = -1;
    for (int k = 1; k < 8; ++k) {
      const int d = (back + k) % 8;
      if (px.contains({cur.first + dr[d], cur.second + dc[d]})) {
        found = d;
        break;
      }
    }
    if (found < 0) return 0.0;  // isolated pixel
    const int prev = (found + 7) % 8;
    const std::pair<int, int> next{cur.first + dr[found], cur.second + dc[found]};
    back = dir_of(cur.first + dr[prev] - next.first, cur.second + dc[prev] - next.second);
    cumulative.push_back(cumulative.back() + (found % 2 == 1 ? std::sqrt(2.0) : 1.0));
    cur = next;
  }
}

// Eigenvalues (largest first) of the population covariance of pixel
// coordinates.
inline std::pair<double, double> CovarianceEigenvalues(const std::vector<Pixel>& px) {
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  double mr = 0, mc = 0;
  for (const Pixel& q : px) {
    mr += q.row;
    mc += q.col;
  }
  mr /= static_cast<double>(px.size());
  mc /= static_cast<double>(px.size());
  for (const Pixel& q : px) {
    const Eigen::Vector2d d(q.row - mr, q.col - mc);
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(px.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  return {std::max(0.0, eig.eigenvalues()(1)), std::max(0.0, eig.eigenvalues()(0))};
}

}  // namespace maskfuse::oracle

#endif  // MASKFUSE_TESTS_REGION_ORACLES_H_
