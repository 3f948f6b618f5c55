#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hvpr/geometry.hpp"

namespace hvpr {

struct AxisRange {
  double min = 0.0;
  double max = 0.0;
  double extent() const { return max - min; }
  // Half-open membership [min, max).
  bool contains(double v) const { return v >= min && v < max; }
};

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

struct Point {
  double x = 0.0, y = 0.0, z = 0.0;
  double reflectance = 0.0;
  bool operator==(const Point&) const = default;
};

// LiDAR returns in the sensor frame (meters; reflectance unitless).
struct PointCloud {
  std::vector<Point> points;
  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct GroundTruthBox {
  Box3D box;
  std::string label = "Car";
  // Pass-through KITTI occlusion level; -1 for synthetic objects.
  int difficulty = -1;
};

// KITTI calibration: rectification R0 (3×3) and velodyne→camera Tr (3×4),
// both row-major.
struct CalibMatrices {
  std::array<double, 9> r0{1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::array<double, 12> tr{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};

  static CalibMatrices identity() { return {}; }
  // Axis permutation of a KITTI-style rig: camera x right, y down, z forward.
  static CalibMatrices kitti_axes();
};

struct Scene {
  std::string id;
  PointCloud cloud;
  std::vector<GroundTruthBox> boxes;
};

}  // namespace hvpr
