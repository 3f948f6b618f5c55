#pragma once

// Slow, independent reference implementations the library is checked
// against. Nothing here calls into the code under test except where noted.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <utility>
#include <vector>

#include "hvpr/geometry.hpp"
#include "hvpr/rng.hpp"
#include "hvpr/scene.hpp"

namespace oracle {

// Inside the BEV rectangle of `b`, by rotating into the box frame.
inline bool in_rect(const hvpr::Box3D& b, double x, double y) {
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  const double dx = x - b.x, dy = y - b.y;
  const double along = c * dx + s * dy;
  const double across = -s * dx + c * dy;
  return std::abs(along) <= 0.5 * b.l && std::abs(across) <= 0.5 * b.w;
}

// Monte Carlo BEV IoU: uniform samples over a square holding both boxes.
inline double monte_carlo_bev_iou(const hvpr::Box3D& a, const hvpr::Box3D& b, std::size_t samples, hvpr::Rng& rng) {
  const double ra = 0.5 * std::hypot(a.l, a.w), rb = 0.5 * std::hypot(b.l, b.w);
  const double x0 = std::min(a.x - ra, b.x - rb), x1 = std::max(a.x + ra, b.x + rb);
  const double y0 = std::min(a.y - ra, b.y - rb), y1 = std::max(a.y + ra, b.y + rb);
  std::size_t in_a = 0, in_b = 0, both = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double x = rng.uniform(x0, x1), y = rng.uniform(y0, y1);
    const bool ia = in_rect(a, x, y), ib = in_rect(b, x, y);
    in_a += ia;
    in_b += ib;
    both += ia && ib;
  }
  const std::size_t uni = in_a + in_b - both;
  return uni == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(uni);
}

// O(n²) NMS: full pairwise IoU table, then a pass in priority order.
// `iou` is supplied by the caller (the geometry under test is the IoU, not
// the suppression logic).
template <class Iou>
std::vector<std::size_t> brute_force_nms(const std::vector<hvpr::Box3D>& boxes, const std::vector<double>& scores,
                                         double thr, Iou iou) {
  const std::size_t n = boxes.size();
  std::vector<std::vector<double>> table(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) table[i][j] = iou(boxes[i], boxes[j]);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
  });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool ok = true;
    for (std::size_t k : kept) ok = ok && !(table[k][i] > thr);
    if (ok) kept.push_back(i);
  }
  return kept;
}

// Full sort then softmax over the first k.
struct TopK {
  std::vector<std::size_t> indices;
  std::vector<double> probs;
};
inline TopK full_sort_topk(const std::vector<double>& row, std::size_t k) {
  std::vector<std::size_t> order(row.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  TopK out;
  out.indices.assign(order.begin(), order.begin() + static_cast<long>(k));
  const double top = row[out.indices[0]];
  double z = 0.0;
  for (std::size_t i : out.indices) z += std::exp(row[i] - top);
  for (std::size_t i : out.indices) out.probs.push_back(std::exp(row[i] - top) / z);
  return out;
}

inline double sq(const hvpr::Vec3& a, const hvpr::Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

// Greedy FPS recomputing every distance to the selected set each round.
inline std::vector<std::size_t> greedy_fps(const std::vector<hvpr::Vec3>& p, std::size_t count, std::size_t start) {
  std::vector<std::size_t> sel{start};
  while (sel.size() < count) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      double d = INFINITY;
      for (std::size_t s : sel) d = std::min(d, sq(p[i], p[s]));
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    sel.push_back(best);
  }
  return sel;
}

// Every index within the radius, unbounded.
inline std::vector<std::vector<std::size_t>> brute_ball(const std::vector<hvpr::Vec3>& centers,
                                                        const std::vector<hvpr::Vec3>& p, double r) {
  std::vector<std::vector<std::size_t>> out(centers.size());
  for (std::size_t c = 0; c < centers.size(); ++c) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (sq(centers[c], p[i]) <= r * r) out[c].push_back(i);
    }
  }
  return out;
}

inline hvpr::Box3D random_box(hvpr::Rng& rng, double extent) {
  hvpr::Box3D b;
  b.x = rng.uniform(-extent, extent);
  b.y = rng.uniform(-extent, extent);
  b.z = rng.uniform(-1.0, 1.0);
  b.w = rng.uniform(0.5, 2.5);
  b.l = rng.uniform(0.5, 4.5);
  b.h = rng.uniform(0.5, 2.0);
  b.heading = rng.uniform(-3.14159, 3.14159);
  return b;
}

}  // namespace oracle
