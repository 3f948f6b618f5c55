#pragma once

#include <cstddef>
#include <numbers>
#include <vector>

#include "hvpr/rng.hpp"
#include "hvpr/scene.hpp"

namespace hvpr::augment {

struct AugmentConfig {
  double flip_probability = 0.5;
  double scale_min = 0.95;
  double scale_max = 1.05;
  double rotation_max = std::numbers::pi / 4;  // uniform in ±rotation_max
  std::size_t paste_count = 0;                 // ground-truth samples pasted per scene
  std::size_t paste_attempts = 10;             // candidates tried per requested paste
};

// A ground-truth object with the points inside its box, harvested from the
// training split.
struct GroundTruthSample {
  GroundTruthBox box;
  std::vector<Point> points;
};

class SampleBank {
 public:
  static SampleBank from_scenes(const std::vector<Scene>& scenes);
  std::size_t size() const { return samples_.size(); }
  const GroundTruthSample& operator[](std::size_t i) const { return samples_[i]; }

 private:
  std::vector<GroundTruthSample> samples_;
};

// Mirror across the x-axis: y ↦ −y, θ ↦ −θ.
void flip_y(Scene& scene);
// Multiplies coordinates, box centers and box sizes by `factor`.
void scale(Scene& scene, double factor);
// Rotates points and box centers about the z-axis and adds `angle` to θ.
void rotate_z(Scene& scene, double angle);
// Pastes up to `count` bank samples, rejecting candidates whose BEV IoU with
// any present box exceeds 0. Scene points inside a pasted box are replaced
// by the sample's points. Returns the number pasted.
std::size_t paste_ground_truth(Scene& scene, const SampleBank& bank, std::size_t count,
                               std::size_t attempts_per_paste, Rng& rng);

// Ground-truth paste, then flip, rotation and scaling with parameters drawn
// from `rng`. `bank` may be null when pasting is disabled.
void augment_scene(Scene& scene, const AugmentConfig& config, const SampleBank* bank, Rng& rng);

}  // namespace hvpr::augment
