#include "hvpr/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "hvpr/error.hpp"
#include "hvpr/rng.hpp"

namespace hvpr::synth {

namespace {

struct Face {
  Vec3 center;
  Vec3 normal;
  Vec3 u, v;  // half-extent vectors spanning the face
  double area;
};

bool inside(const AxisRange& outer, const AxisRange& inner) {
  return inner.min >= outer.min && inner.max <= outer.max && inner.min < inner.max;
}

double falloff(const Vec3& p, const SceneSpec& spec) {
  const double dx = p.x - spec.sensor_origin.x, dy = p.y - spec.sensor_origin.y, dz = p.z - spec.sensor_origin.z;
  const double r = std::max(std::sqrt(dx * dx + dy * dy + dz * dz), 0.5);
  return (spec.reference_range / r) * (spec.reference_range / r);
}

// Side faces turned toward the sensor plus the roof when the sensor is above it.
std::vector<Face> visible_faces(const Box3D& b, const SceneSpec& spec) {
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  const Vec3 along{c, s, 0.0}, across{-s, c, 0.0}, up{0.0, 0.0, 1.0};
  auto scaled = [](const Vec3& a, double k) { return Vec3{a.x * k, a.y * k, a.z * k}; };
  auto offset = [&](const Vec3& dir, double k) { return Vec3{b.x + dir.x * k, b.y + dir.y * k, b.z + dir.z * k}; };
  std::vector<Face> candidates;
  for (double sign : {1.0, -1.0}) {
    candidates.push_back({offset(along, sign * 0.5 * b.l), scaled(along, sign), scaled(across, 0.5 * b.w),
                          scaled(up, 0.5 * b.h), b.w * b.h});
    candidates.push_back({offset(across, sign * 0.5 * b.w), scaled(across, sign), scaled(along, 0.5 * b.l),
                          scaled(up, 0.5 * b.h), b.l * b.h});
  }
  std::vector<Face> faces;
  for (const Face& f : candidates) {
    const double dot = f.normal.x * (spec.sensor_origin.x - f.center.x) + f.normal.y * (spec.sensor_origin.y - f.center.y);
    if (dot > 0.0) faces.push_back(f);
  }
  if (spec.sensor_origin.z > b.z + 0.5 * b.h) {
    faces.push_back({offset(up, 0.5 * b.h), up, scaled(along, 0.5 * b.l), scaled(across, 0.5 * b.w), b.l * b.w});
  }
  return faces;
}

bool footprint_inside(const Box3D& b, const SceneSpec& spec) {
  for (const Vec2& c : bev_corners(b)) {
    if (!(c.x > spec.scene_x.min && c.x < spec.scene_x.max && c.y > spec.scene_y.min && c.y < spec.scene_y.max)) {
      return false;
    }
  }
  return true;
}

}  // namespace

void SceneSpec::validate() const {
  if (num_objects < 0) throw ConfigError("scene spec: num_objects must be non-negative");
  if (!(point_density > 0.0) || !(ground_density >= 0.0) || !(reference_range > 0.0)) {
    throw ConfigError("scene spec: densities and reference range must be positive");
  }
  if (!(width > 0.0 && length > 0.0 && height > 0.0) || size_jitter < 0.0 || size_jitter >= 1.0) {
    throw ConfigError("scene spec: object size must be positive with jitter in [0, 1)");
  }
  if (!inside(scene_x, place_x) || !inside(scene_y, place_y)) {
    throw ConfigError("scene spec: placement ranges lie outside the scene ranges");
  }
  if (!scene_z.contains(ground_z) || !scene_z.contains(ground_z + height * (1.0 + size_jitter))) {
    throw ConfigError("scene spec: ground plane or object tops lie outside the vertical range");
  }
}

double expected_object_points(const Box3D& box, const SceneSpec& spec) {
  double total = 0.0;
  for (const Face& f : visible_faces(box, spec)) total += spec.point_density * f.area * falloff(f.center, spec);
  return total;
}

Scene generate_synthetic_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Rng place_rng = rng.split(1), surface_rng = rng.split(2), ground_rng = rng.split(3);
  Scene scene;
  scene.id = "synthetic-" + std::to_string(spec.seed);

  constexpr int kAttempts = 200;
  for (int obj = 0; obj < spec.num_objects; ++obj) {
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
      Box3D b;
      b.w = spec.width * (1.0 + place_rng.uniform(-spec.size_jitter, spec.size_jitter));
      b.l = spec.length * (1.0 + place_rng.uniform(-spec.size_jitter, spec.size_jitter));
      b.h = spec.height * (1.0 + place_rng.uniform(-spec.size_jitter, spec.size_jitter));
      b.x = place_rng.uniform(spec.place_x.min, spec.place_x.max);
      b.y = place_rng.uniform(spec.place_y.min, spec.place_y.max);
      b.z = spec.ground_z + 0.5 * b.h;
      b.heading = normalize_angle(place_rng.uniform(-std::numbers::pi, std::numbers::pi));
      if (!footprint_inside(b, spec)) continue;
      bool overlaps = false;
      for (const auto& other : scene.boxes) overlaps = overlaps || rotated_bev_iou(b, other.box) > 0.0;
      if (overlaps) continue;
      scene.boxes.push_back({b, "Car", -1});
      break;
    }
  }

  for (const auto& gt : scene.boxes) {
    const std::size_t before = scene.cloud.size();
    const auto faces = visible_faces(gt.box, spec);
    for (const Face& f : faces) {
      const double expected = spec.point_density * f.area * falloff(f.center, spec);
      const auto count = static_cast<std::size_t>(std::floor(expected + surface_rng.uniform()));
      for (std::size_t i = 0; i < count; ++i) {
        const double a = surface_rng.uniform(-1.0, 1.0), c = surface_rng.uniform(-1.0, 1.0);
        const double noise = 0.01 * surface_rng.normal();
        scene.cloud.points.push_back({f.center.x + a * f.u.x + c * f.v.x + noise * f.normal.x,
                                      f.center.y + a * f.u.y + c * f.v.y + noise * f.normal.y,
                                      f.center.z + a * f.u.z + c * f.v.z + noise * f.normal.z,
                                      surface_rng.uniform(0.4, 0.9)});
      }
    }
    if (scene.cloud.size() == before && !faces.empty()) {
      const Face& f = faces.back();
      scene.cloud.points.push_back({f.center.x, f.center.y, f.center.z, 0.5});
    }
  }

  const double area = spec.scene_x.extent() * spec.scene_y.extent();
  const auto proposals = static_cast<std::size_t>(std::floor(spec.ground_density * area + ground_rng.uniform()));
  for (std::size_t i = 0; i < proposals; ++i) {
    const Vec3 p{ground_rng.uniform(spec.scene_x.min, spec.scene_x.max),
                 ground_rng.uniform(spec.scene_y.min, spec.scene_y.max), spec.ground_z + 0.02 * ground_rng.normal()};
    const double keep = std::min(1.0, falloff(p, spec));
    const double reflectance = ground_rng.uniform(0.0, 0.3);
    if (!ground_rng.bernoulli(keep)) continue;
    bool occluded = false;
    for (const auto& gt : scene.boxes) occluded = occluded || point_in_box(gt.box, p.x, p.y, gt.box.z, 0.0);
    if (occluded) continue;
    if (!spec.scene_z.contains(p.z)) continue;
    scene.cloud.points.push_back({p.x, p.y, p.z, reflectance});
  }
  return scene;
}

}  // namespace hvpr::synth
