#include "hvpr/augment.hpp"

#include <cmath>

namespace hvpr::augment {

SampleBank SampleBank::from_scenes(const std::vector<Scene>& scenes) {
  SampleBank bank;
  for (const Scene& scene : scenes) {
    for (const auto& gt : scene.boxes) {
      GroundTruthSample sample{gt, {}};
      for (const Point& p : scene.cloud.points) {
        if (point_in_box(gt.box, p.x, p.y, p.z)) sample.points.push_back(p);
      }
      if (!sample.points.empty()) bank.samples_.push_back(std::move(sample));
    }
  }
  return bank;
}

void flip_y(Scene& scene) {
  for (Point& p : scene.cloud.points) p.y = -p.y;
  for (auto& gt : scene.boxes) {
    gt.box.y = -gt.box.y;
    gt.box.heading = normalize_angle(-gt.box.heading);
  }
}

void scale(Scene& scene, double factor) {
  for (Point& p : scene.cloud.points) {
    p.x *= factor;
    p.y *= factor;
    p.z *= factor;
  }
  for (auto& gt : scene.boxes) {
    Box3D& b = gt.box;
    b.x *= factor;
    b.y *= factor;
    b.z *= factor;
    b.w *= factor;
    b.l *= factor;
    b.h *= factor;
  }
}

void rotate_z(Scene& scene, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  for (Point& p : scene.cloud.points) {
    const double x = c * p.x - s * p.y, y = s * p.x + c * p.y;
    p.x = x;
    p.y = y;
  }
  for (auto& gt : scene.boxes) {
    Box3D& b = gt.box;
    const double x = c * b.x - s * b.y, y = s * b.x + c * b.y;
    b.x = x;
    b.y = y;
    b.heading = normalize_angle(b.heading + angle);
  }
}

std::size_t paste_ground_truth(Scene& scene, const SampleBank& bank, std::size_t count,
                               std::size_t attempts_per_paste, Rng& rng) {
  if (bank.size() == 0) return 0;
  std::size_t pasted = 0;
  for (std::size_t attempt = 0; attempt < count * attempts_per_paste && pasted < count; ++attempt) {
    const GroundTruthSample& sample = bank[rng.index(bank.size())];
    bool collides = false;
    for (const auto& gt : scene.boxes) collides = collides || rotated_bev_iou(gt.box, sample.box.box) > 0.0;
    if (collides) continue;
    std::erase_if(scene.cloud.points,
                  [&](const Point& p) { return point_in_box(sample.box.box, p.x, p.y, p.z); });
    scene.cloud.points.insert(scene.cloud.points.end(), sample.points.begin(), sample.points.end());
    scene.boxes.push_back(sample.box);
    ++pasted;
  }
  return pasted;
}

void augment_scene(Scene& scene, const AugmentConfig& config, const SampleBank* bank, Rng& rng) {
  if (bank != nullptr && config.paste_count > 0) {
    paste_ground_truth(scene, *bank, config.paste_count, config.paste_attempts, rng);
  }
  if (rng.bernoulli(config.flip_probability)) flip_y(scene);
  const double angle = rng.uniform(-config.rotation_max, config.rotation_max);
  if (angle != 0.0) rotate_z(scene, angle);
  const double factor = rng.uniform(config.scale_min, config.scale_max);
  if (factor != 1.0) scale(scene, factor);
}

}  // namespace hvpr::augment
