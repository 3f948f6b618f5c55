#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "hvpr/scene.hpp"

namespace hvpr::synth {

// Parameters of one procedurally generated LiDAR scene. Point density
// follows an inverse-square falloff with distance from the sensor,
// normalized to `point_density` at `reference_range`.
struct SceneSpec {
  int num_objects = 1;
  double width = 1.6, length = 3.9, height = 1.5;
  double size_jitter = 0.05;        // relative, uniform in ±jitter
  double point_density = 25.0;      // object surface points per m²
  double ground_density = 2.0;      // ground points per m²
  double reference_range = 3.0;     // meters
  Vec3 sensor_origin{0.0, 0.0, 0.0};
  AxisRange scene_x{0.0, 5.12}, scene_y{-2.56, 2.56}, scene_z{-3.0, 1.0};
  AxisRange place_x{0.0, 5.12}, place_y{-2.56, 2.56};
  double ground_z = -1.7;
  std::uint64_t seed = 0;

  // Throws ConfigError when densities are non-positive or the placement
  // ranges / ground plane fall outside the scene ranges.
  void validate() const;
};

// Expected surface point count the generator targets for `box`.
double expected_object_points(const Box3D& box, const SceneSpec& spec);

// Deterministic under spec.seed. Every emitted object carries at least one
// point; ground returns under object footprints are occluded.
Scene generate_synthetic_scene(const SceneSpec& spec);

}  // namespace hvpr::synth
