#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "hvpr/backbone.hpp"
#include "hvpr/checkpoint.hpp"
#include "hvpr/config.hpp"
#include "hvpr/encoder.hpp"
#include "hvpr/head.hpp"
#include "hvpr/memory.hpp"

namespace hvpr {

// One scene after voxelization, ready for the encoders.
struct PreparedScene {
  std::string id;
  pillars::PillarBatch batch;
  pillars::PackedPoints packed;
  Tensor descriptors;                // N × 5 scale descriptors
  std::vector<Point> stream_points;  // input of the point stream
  std::vector<Box3D> boxes;
};

PreparedScene prepare_scene(const ModelConfig& config, const Scene& scene, Rng& voxel_rng);

struct TrainOutput {
  Tensor total;
  head::LossTerms terms;  // summed over the batch, before λ and 1/N_pos
  std::size_t num_positive = 0;
  std::size_t num_pillars = 0;
  double alignment = 0.0;  // mean per-pillar ‖g_pts − g_mem‖₂, 0 without memory
};

class HvprModel {
 public:
  HvprModel(const ModelConfig& config, std::uint64_t seed);
  HvprModel(const HvprModel&) = delete;
  HvprModel& operator=(const HvprModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  const std::vector<Box3D>& anchors() const { return anchors_; }

  // Batch-statistics forward through both streams and all four loss terms.
  TrainOutput train_forward(const std::vector<PreparedScene>& scenes);

  // Inference-mode detections. Memory variants never touch the point
  // stream here.
  std::vector<head::ScoredBox> infer(const PreparedScene& scene) const;

  // Mean per-pillar ‖g_pts − g_mem‖₂ over `scenes` with inference-mode
  // normalization and no graph.
  double alignment_distance(const std::vector<PreparedScene>& scenes) const;

  // Copies values by name. Throws DataError on missing names or shapes.
  void load_parameters(const std::vector<std::pair<std::string, Tensor>>& params);
  std::vector<std::pair<std::string, Tensor>> parameter_snapshot() const;

 private:
  struct Encoded {
    Tensor voxel;                       // N_total × C
    std::vector<std::size_t> offsets;   // per-scene first pillar, plus end
    std::vector<ops::GridCell> cells;
  };
  Encoded encode_voxels(const std::vector<const PreparedScene*>& scenes, bool training) const;
  Tensor point_features(const PreparedScene& scene, const Tensor& voxel) const;
  head::HeadOutputs detect(const Tensor& image, const Encoded& enc, const std::vector<const PreparedScene*>& scenes,
                bool training) const;

  ModelConfig config_;
  ParameterStore store_;
  encoder::TinyPointNet voxel_encoder_;
  std::optional<encoder::PointStream> point_stream_;
  std::optional<memory::MemoryBank> memory_;
  std::optional<backbone::ScaleEncoder> scale_encoder_;
  backbone::Backbone backbone_;
  head::DetectionHead head_;
  std::vector<Box3D> anchors_;
};

}  // namespace hvpr
