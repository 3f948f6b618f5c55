#pragma once

#include <cstddef>
#include <vector>

#include "hvpr/nn.hpp"
#include "hvpr/pillars.hpp"

// Multi-scale 2D backbone over the pseudo image and the attentive
// multi-scale feature module driven by per-pillar 3D scale descriptors.
namespace hvpr::backbone {

inline constexpr std::size_t kScaleDescriptorDim = 5;

// Per pillar (count, x̄, ȳ, z̄, ‖mean − origin‖₂) over the kept points → N × 5.
Tensor compute_scale_descriptors(const pillars::PillarBatch& batch, const Vec3& origin);

// Shared linear(5 → C) + ReLU per pillar. No bias, so empty descriptors
// scatter to an all-zero map.
struct ScaleEncoder {
  nn::Linear linear;
  static ScaleEncoder create(ParameterStore& store, const std::string& name, std::size_t channels, Rng& rng);
};
Tensor scale_feature_map(const Tensor& descriptors, std::span<const ops::GridCell> cells, std::size_t batch,
                         const pillars::GridSpec& grid, const ScaleEncoder& encoder);
Tensor scale_feature_map(const Tensor& descriptors, const std::vector<pillars::PillarCoord>& coords,
                         const pillars::GridSpec& grid, const ScaleEncoder& encoder);

struct ConvBlock {
  nn::Conv2d conv;
  nn::BatchNorm norm;
  Tensor operator()(const Tensor& x, bool training) const { return ops::relu(norm(conv(x), training)); }
};

struct BackboneConfig {
  std::size_t channels = 64;  // C; level l has C·2^l channels
  std::size_t levels = 3;     // strides 2, 4, 8
  std::size_t block_depth = 2;
  bool use_amfm = true;
  // Attention from the 3D scale map; otherwise from the level features.
  bool scale_features = true;
};

struct Backbone {
  BackboneConfig config;
  std::vector<std::vector<ConvBlock>> blocks;  // per level
  std::vector<nn::Conv2d> scale_down;           // stride-2 chain for the scale map
  std::vector<nn::Conv2d> attention;            // 2 → 1, 7×7 per level
  std::vector<nn::ConvTranspose2d> upsample;    // level → stride 2, 2C channels
  std::vector<nn::BatchNorm> upsample_norm;

  // in_channels is the pseudo-image channel count (2C).
  static Backbone create(ParameterStore& store, const std::string& name, std::size_t in_channels,
                         const BackboneConfig& config, Rng& rng);
  std::size_t stride(std::size_t level) const { return std::size_t{2} << level; }
  std::size_t output_channels() const { return config.levels * 2 * config.channels; }
};

// Feature maps at strides (2, 4, 8, …). Throws ShapeError unless the image
// extents are divisible by the coarsest stride.
std::vector<Tensor> backbone_forward(const Backbone& net, const Tensor& image, bool training);

// Applies stride-2 convolutions (each followed by ReLU) to the full-resolution
// scale map until it reaches the stride of `level`.
Tensor downsample_scale_feature(const Backbone& net, const Tensor& scale_map, std::size_t level);

// σ(conv7×7([max_c S ; mean_c S])) → B × 1 × H × W.
Tensor amfm_attention(const Tensor& scale_feature, const nn::Conv2d& conv);
// F + A ⊙ F with A broadcast over channels.
Tensor amfm_refine(const Tensor& features, const Tensor& attention);

// Upsamples every level to stride 2 and concatenates along channels.
Tensor fuse_multiscale(const Backbone& net, const std::vector<Tensor>& levels, bool training);

// backbone_forward, then (when enabled) AMFM per level, then fusion.
// scale_map is only read when the config uses scale features.
Tensor backbone_amfm_forward(const Backbone& net, const Tensor& image, const Tensor& scale_map, bool training);

}  // namespace hvpr::backbone
