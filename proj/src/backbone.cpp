#include "hvpr/backbone.hpp"

#include <cmath>

#include "hvpr/error.hpp"

namespace hvpr::backbone {

Tensor compute_scale_descriptors(const pillars::PillarBatch& batch, const Vec3& origin) {
  Tensor out(Shape{batch.size(), kScaleDescriptorDim});
  auto v = out.values();
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const std::size_t count = batch.counts[n];
    double mx = 0.0, my = 0.0, mz = 0.0;
    for (std::size_t s = 0; s < count; ++s) {
      mx += batch.point(n, s).x;
      my += batch.point(n, s).y;
      mz += batch.point(n, s).z;
    }
    const double inv = count > 0 ? 1.0 / static_cast<double>(count) : 0.0;
    mx *= inv;
    my *= inv;
    mz *= inv;
    const double dx = mx - origin.x, dy = my - origin.y, dz = mz - origin.z;
    double* row = &v[n * kScaleDescriptorDim];
    row[0] = static_cast<double>(count);
    row[1] = mx;
    row[2] = my;
    row[3] = mz;
    row[4] = std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return out;
}

ScaleEncoder ScaleEncoder::create(ParameterStore& store, const std::string& name, std::size_t channels, Rng& rng) {
  return {nn::Linear::create(store, name + ".linear", kScaleDescriptorDim, channels, rng, false)};
}

Tensor scale_feature_map(const Tensor& descriptors, std::span<const ops::GridCell> cells, std::size_t batch,
                         const pillars::GridSpec& grid, const ScaleEncoder& encoder) {
  if (descriptors.rank() != 2 || descriptors.dim(1) != kScaleDescriptorDim) {
    throw ShapeError("scale_feature_map: expected N × 5 descriptors, got " + shape_str(descriptors.shape()));
  }
  return ops::scatter_to_image(ops::relu(encoder.linear(descriptors)), cells, batch, grid.rows(), grid.cols());
}

Tensor scale_feature_map(const Tensor& descriptors, const std::vector<pillars::PillarCoord>& coords,
                         const pillars::GridSpec& grid, const ScaleEncoder& encoder) {
  const auto cells = pillars::grid_cells(coords, 0);
  return scale_feature_map(descriptors, cells, 1, grid, encoder);
}

Backbone Backbone::create(ParameterStore& store, const std::string& name, std::size_t in_channels,
                          const BackboneConfig& config, Rng& rng) {
  if (config.levels == 0 || config.block_depth == 0 || config.channels == 0) {
    throw ConfigError("backbone: levels, block depth and channels must be positive");
  }
  Backbone b;
  b.config = config;
  std::size_t in = in_channels;
  for (std::size_t l = 0; l < config.levels; ++l) {
    const std::size_t out = config.channels << l;
    std::vector<ConvBlock> level;
    for (std::size_t d = 0; d < config.block_depth; ++d) {
      const std::string prefix = name + ".block" + std::to_string(l) + ".conv" + std::to_string(d);
      level.push_back({nn::Conv2d::create(store, prefix, d == 0 ? in : out, out, 3, d == 0 ? 2 : 1, 1, rng, false),
                       nn::BatchNorm::create(store, prefix + ".norm", out)});
    }
    b.blocks.push_back(std::move(level));
    in = out;

    const std::string level_name = name + ".level" + std::to_string(l);
    const std::size_t factor = std::size_t{1} << l;
    b.upsample.push_back(
        nn::ConvTranspose2d::create(store, level_name + ".up", out, 2 * config.channels, factor, factor, rng, false));
    b.upsample_norm.push_back(nn::BatchNorm::create(store, level_name + ".up.norm", 2 * config.channels));
    if (config.use_amfm && config.scale_features) {
      b.scale_down.push_back(
          nn::Conv2d::create(store, level_name + ".scale_down", config.channels, config.channels, 3, 2, 1, rng));
    }
    if (config.use_amfm) {
      b.attention.push_back(nn::Conv2d::create(store, level_name + ".attention", 2, 1, 7, 1, 3, rng));
    }
  }
  return b;
}

std::vector<Tensor> backbone_forward(const Backbone& net, const Tensor& image, bool training) {
  if (image.rank() != 4) throw ShapeError("backbone_forward: expected a B × C × H × W image");
  const std::size_t coarsest = net.stride(net.config.levels - 1);
  if (image.dim(2) % coarsest != 0 || image.dim(3) % coarsest != 0) {
    throw ShapeError("backbone_forward: image " + shape_str(image.shape()) + " is not divisible by stride " +
                     std::to_string(coarsest));
  }
  std::vector<Tensor> outputs;
  Tensor x = image;
  for (const auto& level : net.blocks) {
    for (const ConvBlock& block : level) x = block(x, training);
    outputs.push_back(x);
  }
  return outputs;
}

Tensor downsample_scale_feature(const Backbone& net, const Tensor& scale_map, std::size_t level) {
  if (level >= net.scale_down.size()) throw ShapeError("downsample_scale_feature: level out of range");
  Tensor s = scale_map;
  for (std::size_t l = 0; l <= level; ++l) s = ops::relu(net.scale_down[l](s));
  return s;
}

Tensor amfm_attention(const Tensor& scale_feature, const nn::Conv2d& conv) {
  const Tensor pooled[] = {ops::channel_max(scale_feature), ops::channel_mean(scale_feature)};
  return ops::sigmoid(conv(ops::concat(pooled, 1)));
}

Tensor amfm_refine(const Tensor& features, const Tensor& attention) {
  return ops::add(features, ops::mul_channel_broadcast(features, attention));
}

Tensor fuse_multiscale(const Backbone& net, const std::vector<Tensor>& levels, bool training) {
  if (levels.empty() || levels.size() != net.upsample.size()) {
    throw ShapeError("fuse_multiscale: expected one feature map per level");
  }
  std::vector<Tensor> parts;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    parts.push_back(ops::relu(net.upsample_norm[l](net.upsample[l](levels[l]), training)));
    if (parts.back().dim(2) != parts.front().dim(2) || parts.back().dim(3) != parts.front().dim(3)) {
      throw ShapeError("fuse_multiscale: level " + std::to_string(l) + " does not upsample to stride 2");
    }
  }
  return ops::concat(parts, 1);
}

Tensor backbone_amfm_forward(const Backbone& net, const Tensor& image, const Tensor& scale_map, bool training) {
  std::vector<Tensor> levels = backbone_forward(net, image, training);
  if (net.config.use_amfm && !net.config.scale_features) {
    for (std::size_t l = 0; l < levels.size(); ++l) {
      levels[l] = amfm_refine(levels[l], amfm_attention(levels[l], net.attention[l]));
    }
  } else if (net.config.use_amfm) {
    Tensor s = scale_map;
    for (std::size_t l = 0; l < levels.size(); ++l) {
      s = ops::relu(net.scale_down[l](s));
      if (s.dim(2) != levels[l].dim(2) || s.dim(3) != levels[l].dim(3)) {
        throw ShapeError("AMFM: scale feature " + shape_str(s.shape()) + " does not match level " +
                         shape_str(levels[l].shape()));
      }
      levels[l] = amfm_refine(levels[l], amfm_attention(s, net.attention[l]));
    }
  }
  return fuse_multiscale(net, levels, training);
}

}  // namespace hvpr::backbone
