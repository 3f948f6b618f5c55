#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "hvpr/augment.hpp"
#include "hvpr/backbone.hpp"
#include "hvpr/encoder.hpp"
#include "hvpr/head.hpp"
#include "hvpr/pillars.hpp"
#include "hvpr/synthetic.hpp"

namespace hvpr {

// Which components a model carries.
//   voxel_only   pillar features alone
//   voxel_point  pillar + point-stream fusion, point stream kept at inference
//   memory       voxel-point training, voxel-memory inference
//   amfm         memory + attention computed from the pyramid features
//   full         memory + attention from 3D scale features
enum class Variant { voxel_only, voxel_point, memory, amfm, full };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

enum class PointInput { voxel_kept, raw_cloud };
enum class TrainImage { voxel_point, voxel_memory };

struct ModelConfig {
  Variant variant = Variant::full;
  pillars::GridSpec grid;
  std::size_t max_points = 32;    // N_vox
  std::size_t max_pillars = 12000;
  std::size_t channels = 64;      // C
  std::size_t k = 20;             // top-K for point fusion and memory reads
  std::size_t memory_items = 2000;  // T
  encoder::PointStreamConfig point_stream;
  PointInput point_input = PointInput::voxel_kept;
  TrainImage train_image = TrainImage::voxel_point;
  backbone::BackboneConfig backbone;
  head::HeadConfig head;
  Vec3 sensor_origin{0.0, 0.0, 0.0};

  bool uses_point_stream() const { return variant != Variant::voxel_only; }
  bool uses_memory() const { return variant == Variant::memory || variant == Variant::amfm || variant == Variant::full; }
  bool uses_amfm() const { return variant == Variant::amfm || variant == Variant::full; }
  bool uses_scale_features() const { return variant == Variant::full; }
};

struct OptimConfig {
  double lr = 3e-3;
  double lr_min = 0.0;
  double weight_decay = 1e-2;
  std::size_t epochs = 100;
  std::size_t steps = 0;  // overrides epochs when positive
  std::size_t batch_size = 8;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
};

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "kitti"
  std::filesystem::path kitti_dir;
  std::size_t num_scenes = 8;  // synthetic scenes, seeds spec.seed + i
  synth::SceneSpec spec;
};

struct RunConfig {
  std::string profile = "full";
  std::uint64_t seed = 0;
  ModelConfig model;
  OptimConfig optim;
  bool augment = true;
  augment::AugmentConfig augmentation;
  DataConfig data;
  std::filesystem::path output_dir = "run";

  // Throws ConfigError on inconsistent settings.
  void validate() const;
};

// Paper-scale defaults.
RunConfig full_profile();
// Scaled down so the whole suite runs in minutes: 32×32 pillars, N_vox 16,
// C 16, T 128, K 8, batch 2.
RunConfig desk_profile();

// Overlays `j` on the profile it names (default "full"). Unknown keys are
// rejected.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& config);
RunConfig load_config(const std::filesystem::path& path);

synth::SceneSpec scene_spec_from_json(const nlohmann::json& j, synth::SceneSpec base = {});
nlohmann::json scene_spec_to_json(const synth::SceneSpec& spec);

}  // namespace hvpr
