#include "hvpr/pillars.hpp"

#include <cmath>
#include <map>

#include "hvpr/error.hpp"

namespace hvpr::pillars {

namespace {

std::size_t cells_along(const AxisRange& r, double voxel) {
  return static_cast<std::size_t>(std::llround(r.extent() / voxel));
}

void check_divisible(const AxisRange& r, double voxel, const char* axis) {
  if (!(voxel > 0.0) || !(r.extent() > 0.0)) {
    throw ConfigError(std::string("grid: ") + axis + " range and voxel size must be positive");
  }
  const double cells = r.extent() / voxel;
  if (std::abs(cells - std::round(cells)) > 1e-9 * std::max(1.0, cells)) {
    throw ConfigError(std::string("grid: ") + axis + " range is not a whole number of voxels");
  }
}

}  // namespace

std::size_t GridSpec::cols() const { return cells_along(x, voxel_x); }
std::size_t GridSpec::rows() const { return cells_along(y, voxel_y); }
std::size_t GridSpec::layers() const { return cells_along(z, voxel_z); }

void GridSpec::validate() const {
  check_divisible(x, voxel_x, "x");
  check_divisible(y, voxel_y, "y");
  check_divisible(z, voxel_z, "z");
  if (layers() != 1) throw ConfigError("grid: the vertical voxel must span the full z range");
}

GridSpec GridSpec::full() { return GridSpec{}; }

GridSpec GridSpec::desk() {
  GridSpec g;
  g.x = {0.0, 5.12};
  g.y = {-2.56, 2.56};
  g.z = {-3.0, 1.0};
  return g;
}

std::vector<Point> PillarBatch::kept_points() const {
  std::vector<Point> out;
  for (std::size_t n = 0; n < size(); ++n) {
    for (std::size_t s = 0; s < counts[n]; ++s) out.push_back(point(n, s));
  }
  return out;
}

PillarBatch voxelize(const PointCloud& cloud, const GridSpec& grid, std::size_t max_points,
                     std::size_t max_pillars, Rng& rng) {
  grid.validate();
  if (max_points == 0 || max_pillars == 0) throw ConfigError("voxelize: capacities must be positive");
  const std::size_t rows = grid.rows(), cols = grid.cols();
  std::map<PillarCoord, std::vector<std::size_t>> occupancy;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point& p = cloud.points[i];
    if (!grid.x.contains(p.x) || !grid.y.contains(p.y) || !grid.z.contains(p.z)) continue;
    const auto col = static_cast<std::size_t>(std::floor((p.x - grid.x.min) / grid.voxel_x));
    const auto row = static_cast<std::size_t>(std::floor((p.y - grid.y.min) / grid.voxel_y));
    if (row >= rows || col >= cols) continue;
    occupancy[{row, col}].push_back(i);
  }

  std::vector<std::pair<PillarCoord, std::vector<std::size_t>>> pillars(occupancy.begin(), occupancy.end());
  if (pillars.size() > max_pillars) {
    const auto keep = rng.sample_without_replacement(pillars.size(), max_pillars);
    std::vector<std::pair<PillarCoord, std::vector<std::size_t>>> kept;
    kept.reserve(keep.size());
    for (std::size_t k : keep) kept.push_back(std::move(pillars[k]));
    pillars.swap(kept);
  }

  PillarBatch batch;
  batch.max_points = max_points;
  batch.points.assign(pillars.size() * max_points, Point{});
  for (std::size_t n = 0; n < pillars.size(); ++n) {
    auto& [coord, members] = pillars[n];
    if (members.size() > max_points) {
      const auto keep = rng.sample_without_replacement(members.size(), max_points);
      std::vector<std::size_t> kept;
      for (std::size_t k : keep) kept.push_back(members[k]);
      members.swap(kept);
    }
    batch.coords.push_back(coord);
    batch.counts.push_back(members.size());
    for (std::size_t s = 0; s < members.size(); ++s) batch.points[n * max_points + s] = cloud.points[members[s]];
  }
  return batch;
}

namespace {

void fill_augmented(const PillarBatch& batch, const GridSpec& grid, std::size_t n, std::size_t slot, double* out) {
  double mx = 0.0, my = 0.0, mz = 0.0;
  const double count = static_cast<double>(batch.counts[n]);
  for (std::size_t s = 0; s < batch.counts[n]; ++s) {
    mx += batch.point(n, s).x;
    my += batch.point(n, s).y;
    mz += batch.point(n, s).z;
  }
  mx /= count;
  my /= count;
  mz /= count;
  const Point& p = batch.point(n, slot);
  const double cx = grid.cell_center_x(batch.coords[n].col), cy = grid.cell_center_y(batch.coords[n].row);
  const double vals[kAugmentedDim] = {p.x, p.y, p.z, p.reflectance, p.x - mx, p.y - my, p.z - mz, p.x - cx, p.y - cy};
  std::copy(std::begin(vals), std::end(vals), out);
}

}  // namespace

Tensor augment_point_features(const PillarBatch& batch, const GridSpec& grid) {
  Tensor out(Shape{batch.size(), batch.max_points, kAugmentedDim});
  auto v = out.values();
  for (std::size_t n = 0; n < batch.size(); ++n) {
    for (std::size_t s = 0; s < batch.counts[n]; ++s) {
      fill_augmented(batch, grid, n, s, &v[(n * batch.max_points + s) * kAugmentedDim]);
    }
  }
  return out;
}

PackedPoints pack_point_features(const PillarBatch& batch, const GridSpec& grid) {
  std::size_t total = 0;
  for (std::size_t c : batch.counts) total += c;
  PackedPoints packed{Tensor(Shape{total, kAugmentedDim}), {}};
  packed.pillar.reserve(total);
  auto v = packed.features.values();
  std::size_t row = 0;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    for (std::size_t s = 0; s < batch.counts[n]; ++s, ++row) {
      fill_augmented(batch, grid, n, s, &v[row * kAugmentedDim]);
      packed.pillar.push_back(n);
    }
  }
  return packed;
}

std::vector<ops::GridCell> grid_cells(const std::vector<PillarCoord>& coords, std::size_t batch_index) {
  std::vector<ops::GridCell> cells;
  cells.reserve(coords.size());
  for (const auto& c : coords) cells.push_back({batch_index, c.row, c.col});
  return cells;
}

Tensor scatter_to_pseudo_image(const Tensor& features, const std::vector<PillarCoord>& coords,
                               const GridSpec& grid) {
  const auto cells = grid_cells(coords, 0);
  return ops::scatter_to_image(features, cells, 1, grid.rows(), grid.cols());
}

}  // namespace hvpr::pillars
