#pragma once

#include <cstddef>
#include <vector>

#include "hvpr/ops.hpp"
#include "hvpr/rng.hpp"
#include "hvpr/scene.hpp"
#include "hvpr/tensor.hpp"

namespace hvpr::pillars {

// Scene ranges and voxel sizes. Columns run along x, rows along y; the
// vertical voxel spans the whole z range so there is one layer.
struct GridSpec {
  AxisRange x{0.0, 70.4}, y{-40.0, 40.0}, z{-3.0, 1.0};
  double voxel_x = 0.16, voxel_y = 0.16, voxel_z = 4.0;

  std::size_t cols() const;
  std::size_t rows() const;
  std::size_t layers() const;
  // Throws ConfigError unless each range is a whole number of voxels and
  // the vertical voxel covers the full z extent.
  void validate() const;
  double cell_center_x(std::size_t col) const { return x.min + (static_cast<double>(col) + 0.5) * voxel_x; }
  double cell_center_y(std::size_t row) const { return y.min + (static_cast<double>(row) + 0.5) * voxel_y; }

  static GridSpec full();
  // 32×32 pillars of 0.16 m covering 5.12 m × 5.12 m.
  static GridSpec desk();
};

inline constexpr std::size_t kAugmentedDim = 9;

struct PillarCoord {
  std::size_t row = 0;
  std::size_t col = 0;
  auto operator<=>(const PillarCoord&) const = default;
};

// Voxelized scene: pillars in (row, col) lexicographic order, each holding
// up to `max_points` kept points (zero padded).
struct PillarBatch {
  std::size_t max_points = 0;
  std::vector<PillarCoord> coords;
  std::vector<std::size_t> counts;
  std::vector<Point> points;  // size() · max_points, padded rows zero

  std::size_t size() const { return coords.size(); }
  const Point& point(std::size_t pillar, std::size_t slot) const { return points[pillar * max_points + slot]; }
  std::vector<Point> kept_points() const;
};

PillarBatch voxelize(const PointCloud& cloud, const GridSpec& grid, std::size_t max_points,
                     std::size_t max_pillars, Rng& rng);

// N × N_vox × 9 tensor of (x, y, z, r, x−x̄, y−ȳ, z−z̄, x−x_c, y−y_c) where
// (x̄, ȳ, z̄) is the pillar mean and (x_c, y_c) the cell center.
Tensor augment_point_features(const PillarBatch& batch, const GridSpec& grid);

// The real (non-padding) rows of the augmented features, P × 9, with the
// owning pillar of each row.
struct PackedPoints {
  Tensor features;
  std::vector<std::size_t> pillar;
};
PackedPoints pack_point_features(const PillarBatch& batch, const GridSpec& grid);

// features: N × C per-pillar rows → 1 × C × rows × cols image.
Tensor scatter_to_pseudo_image(const Tensor& features, const std::vector<PillarCoord>& coords,
                               const GridSpec& grid);

std::vector<ops::GridCell> grid_cells(const std::vector<PillarCoord>& coords, std::size_t batch_index);

}  // namespace hvpr::pillars
