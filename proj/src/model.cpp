#include "hvpr/model.hpp"

#include <map>

#include "hvpr/error.hpp"

namespace hvpr {

PreparedScene prepare_scene(const ModelConfig& config, const Scene& scene, Rng& voxel_rng) {
  PreparedScene p;
  p.id = scene.id;
  p.batch = pillars::voxelize(scene.cloud, config.grid, config.max_points, config.max_pillars, voxel_rng);
  p.packed = pillars::pack_point_features(p.batch, config.grid);
  p.descriptors = backbone::compute_scale_descriptors(p.batch, config.sensor_origin);
  if (config.point_input == PointInput::voxel_kept) {
    p.stream_points = p.batch.kept_points();
  } else {
    for (const Point& pt : scene.cloud.points) {
      if (config.grid.x.contains(pt.x) && config.grid.y.contains(pt.y) && config.grid.z.contains(pt.z)) {
        p.stream_points.push_back(pt);
      }
    }
  }
  for (const auto& gt : scene.boxes) {
    if (config.grid.x.contains(gt.box.x) && config.grid.y.contains(gt.box.y)) p.boxes.push_back(gt.box);
  }
  return p;
}

HvprModel::HvprModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  Rng rng = Rng(seed).split(1);
  const std::size_t c = config_.channels;
  config_.point_stream.channels = c;
  config_.backbone.channels = c;
  config_.backbone.use_amfm = config_.uses_amfm();
  config_.backbone.scale_features = config_.uses_scale_features();

  voxel_encoder_ = encoder::TinyPointNet::create(store_, "encoder.voxel", pillars::kAugmentedDim, c, rng);
  if (config_.uses_point_stream()) {
    point_stream_ = encoder::PointStream::create(store_, "encoder.point", config_.point_stream, rng);
  }
  if (config_.uses_memory()) memory_ = memory::create_memory(store_, config_.memory_items, c, rng);
  if (config_.uses_scale_features()) scale_encoder_ = backbone::ScaleEncoder::create(store_, "scale", c, rng);
  const std::size_t image_channels = config_.uses_point_stream() ? 2 * c : c;
  backbone_ = backbone::Backbone::create(store_, "backbone", image_channels, config_.backbone, rng);
  head_ = head::DetectionHead::create(store_, "head", backbone_.output_channels(), rng);
  anchors_ = head::generate_anchors(config_.grid, 2, config_.head.anchor, config_.head.anchor_z);
}

HvprModel::Encoded HvprModel::encode_voxels(const std::vector<const PreparedScene*>& scenes, bool training) const {
  Encoded enc;
  std::vector<Tensor> features;
  std::vector<std::size_t> owner;
  std::size_t total = 0;
  for (std::size_t b = 0; b < scenes.size(); ++b) {
    const PreparedScene& s = *scenes[b];
    enc.offsets.push_back(total);
    features.push_back(s.packed.features);
    for (std::size_t n : s.packed.pillar) owner.push_back(total + n);
    const auto cells = pillars::grid_cells(s.batch.coords, b);
    enc.cells.insert(enc.cells.end(), cells.begin(), cells.end());
    total += s.batch.size();
  }
  enc.offsets.push_back(total);
  const Tensor points = ops::concat(features, 0);
  enc.voxel = encoder::tiny_pointnet_forward(voxel_encoder_, points, owner, total, training);
  return enc;
}

Tensor HvprModel::point_features(const PreparedScene& scene, const Tensor& voxel) const {
  const std::size_t needed = config_.point_stream.ratio * config_.point_stream.ratio;
  if (voxel.dim(0) == 0 || scene.stream_points.size() < needed) return Tensor(Shape{voxel.dim(0), config_.channels});
  const auto set = encoder::point_stream_forward(*point_stream_, scene.stream_points);
  return encoder::fuse_point_features(voxel, set, config_.k).aggregated;
}

head::HeadOutputs HvprModel::detect(const Tensor& image, const Encoded& enc,
                                    const std::vector<const PreparedScene*>& scenes, bool training) const {
  Tensor scale_map;
  if (scale_encoder_) {
    std::vector<Tensor> desc;
    for (const PreparedScene* s : scenes) desc.push_back(s->descriptors);
    scale_map = backbone::scale_feature_map(ops::concat(desc, 0), enc.cells, scenes.size(), config_.grid,
                                            *scale_encoder_);
  }
  const Tensor fused = backbone::backbone_amfm_forward(backbone_, image, scale_map, training);
  return head::head_forward(head_, fused);
}

TrainOutput HvprModel::train_forward(const std::vector<PreparedScene>& scenes) {
  if (scenes.empty()) throw ConfigError("train_forward: empty batch");
  std::vector<const PreparedScene*> ptrs;
  for (const auto& s : scenes) ptrs.push_back(&s);
  const Encoded enc = encode_voxels(ptrs, true);

  TrainOutput out;
  std::vector<Tensor> rows;
  std::vector<Tensor> mem_terms;
  double distance_sum = 0.0;
  for (std::size_t b = 0; b < scenes.size(); ++b) {
    const Tensor voxel = ops::slice_rows(enc.voxel, enc.offsets[b], enc.offsets[b + 1]);
    if (!point_stream_) {
      rows.push_back(voxel);
      continue;
    }
    const Tensor g_pts = point_features(scenes[b], voxel);
    Tensor g_train = g_pts;
    if (memory_) {
      const Tensor g_mem = memory::memory_read(voxel, *memory_, config_.k).aggregated;
      mem_terms.push_back(memory::memory_loss(g_pts, g_mem));
      distance_sum += mem_terms.back().item();
      if (config_.train_image == TrainImage::voxel_memory) g_train = g_mem;
    }
    const Tensor parts[] = {voxel, g_train};
    rows.push_back(ops::concat(parts, 1));
  }
  out.num_pillars = enc.voxel.dim(0);
  out.alignment = out.num_pillars > 0 ? distance_sum / static_cast<double>(out.num_pillars) : 0.0;

  const Tensor image = ops::scatter_to_image(ops::concat(rows, 0), enc.cells, scenes.size(), config_.grid.rows(),
                                             config_.grid.cols());
  const head::HeadOutputs heads = detect(image, enc, ptrs, true);

  std::vector<Tensor> reg, dir, cls;
  for (std::size_t b = 0; b < scenes.size(); ++b) {
    const auto targets = head::match_anchors(anchors_, scenes[b].boxes, config_.head.pos_iou, config_.head.neg_iou);
    out.num_positive += targets.num_positive;
    const auto terms = head::scene_losses(heads, b * heads.anchors_per_scene, anchors_, targets, scenes[b].boxes,
                                          config_.head);
    reg.push_back(terms.reg);
    dir.push_back(terms.dir);
    cls.push_back(terms.cls);
  }
  const auto total_of = [](const std::vector<Tensor>& parts) {
    if (parts.empty()) return Tensor::scalar(0.0);
    const std::vector<double> ones(parts.size(), 1.0);
    return ops::weighted_sum(parts, ones);
  };
  out.terms = {total_of(reg), total_of(dir), total_of(cls), total_of(mem_terms)};
  out.total = head::total_loss(out.terms, out.num_positive, config_.head.weights);
  return out;
}

std::vector<head::ScoredBox> HvprModel::infer(const PreparedScene& scene) const {
  NoGradGuard guard;
  const std::vector<const PreparedScene*> ptrs{&scene};
  const Encoded enc = encode_voxels(ptrs, false);
  Tensor rows = enc.voxel;
  if (point_stream_) {
    const Tensor g = memory_ ? memory::memory_read(enc.voxel, *memory_, config_.k).aggregated
                             : point_features(scene, enc.voxel);
    const Tensor parts[] = {enc.voxel, g};
    rows = ops::concat(parts, 1);
  }
  const Tensor image = ops::scatter_to_image(rows, enc.cells, 1, config_.grid.rows(), config_.grid.cols());
  return head::predict(detect(image, enc, ptrs, false), 0, anchors_, config_.head);
}

double HvprModel::alignment_distance(const std::vector<PreparedScene>& scenes) const {
  if (!point_stream_ || !memory_) return 0.0;
  NoGradGuard guard;
  double total = 0.0;
  std::size_t pillars = 0;
  for (const auto& s : scenes) {
    const Encoded enc = encode_voxels({&s}, false);
    if (enc.voxel.dim(0) == 0) continue;
    const Tensor g_pts = point_features(s, enc.voxel);
    const Tensor g_mem = memory::memory_read(enc.voxel, *memory_, config_.k).aggregated;
    total += memory::memory_loss(g_pts, g_mem).item();
    pillars += enc.voxel.dim(0);
  }
  return pillars > 0 ? total / static_cast<double>(pillars) : 0.0;
}

void HvprModel::load_parameters(const std::vector<std::pair<std::string, Tensor>>& params) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : params) by_name[name] = &t;
  for (Parameter& p : store_.all()) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw DataError("checkpoint is missing parameter '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape()) {
      throw DataError("checkpoint parameter '" + p.name + "' has shape " + shape_str(it->second->shape()) +
                      ", model expects " + shape_str(p.tensor.shape()));
    }
    const auto src = it->second->values();
    std::copy(src.begin(), src.end(), p.tensor.values().begin());
    by_name.erase(it);
  }
  if (!by_name.empty()) throw DataError("checkpoint has unknown parameter '" + by_name.begin()->first + "'");
}

std::vector<std::pair<std::string, Tensor>> HvprModel::parameter_snapshot() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const Parameter& p : store_.all()) out.emplace_back(p.name, p.tensor.detach());
  return out;
}

}  // namespace hvpr
