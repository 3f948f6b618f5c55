#pragma once

#include <array>
#include <span>
#include <vector>

namespace hvpr {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

// Oriented 3D box in the LiDAR frame: (x, y, z) is the volumetric center,
// l extends along the heading direction, w across it, h vertically.
struct Box3D {
  double x = 0.0, y = 0.0, z = 0.0;
  double w = 0.0, l = 0.0, h = 0.0;
  double heading = 0.0;
};

// Wraps into (−π, π].
double normalize_angle(double angle);

// Counter-clockwise BEV corners.
std::array<Vec2, 4> bev_corners(const Box3D& box);
double polygon_area(std::span<const Vec2> polygon);
// Sutherland–Hodgman clip of `subject` against the convex CCW polygon `clip`.
std::vector<Vec2> clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip);

// IoU of the oriented BEV rectangles; 0 when either has zero area.
double rotated_bev_iou(const Box3D& a, const Box3D& b);
// BEV intersection × vertical overlap over the union of volumes.
double rotated_iou_3d(const Box3D& a, const Box3D& b);

// Membership in the box grown by `margin` on every side.
bool point_in_box(const Box3D& box, double x, double y, double z, double margin = 0.0);

}  // namespace hvpr
