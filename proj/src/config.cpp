#include "hvpr/config.hpp"

#include <fstream>
#include <set>

#include "hvpr/error.hpp"

namespace hvpr {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> names(allowed.begin(), allowed.end());
  for (const auto& item : j.items()) {
    if (!names.contains(item.key())) throw ConfigError(where + ": unknown key \"" + item.key() + "\"");
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

void read_range(const json& j, const char* key, AxisRange& out, const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    throw ConfigError(where + "." + key + ": expected [min, max]");
  }
  out = {v[0].get<double>(), v[1].get<double>()};
}

void read_vec3(const json& j, const char* key, Vec3& out, const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 3) throw ConfigError(where + "." + key + ": expected [x, y, z]");
  try {
    out = {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

json range_json(const AxisRange& r) { return json::array({r.min, r.max}); }

void read_grid(const json& j, pillars::GridSpec& g) {
  check_keys(j, {"x", "y", "z", "voxel"}, "grid");
  read_range(j, "x", g.x, "grid");
  read_range(j, "y", g.y, "grid");
  read_range(j, "z", g.z, "grid");
  Vec3 voxel{g.voxel_x, g.voxel_y, g.voxel_z};
  read_vec3(j, "voxel", voxel, "grid");
  g.voxel_x = voxel.x;
  g.voxel_y = voxel.y;
  g.voxel_z = voxel.z;
}

void read_model(const json& j, ModelConfig& m) {
  check_keys(j, {"variant", "max_points", "max_pillars", "channels", "k", "memory_items", "point_stream",
                 "point_input", "train_image", "backbone", "head", "sensor_origin"},
             "model");
  if (j.contains("variant")) m.variant = parse_variant(j.at("variant").get<std::string>());
  read(j, "max_points", m.max_points, "model");
  read(j, "max_pillars", m.max_pillars, "model");
  read(j, "channels", m.channels, "model");
  read(j, "k", m.k, "model");
  read(j, "memory_items", m.memory_items, "model");
  read_vec3(j, "sensor_origin", m.sensor_origin, "model");
  if (j.contains("point_input")) {
    const auto v = j.at("point_input").get<std::string>();
    if (v == "voxel_kept") {
      m.point_input = PointInput::voxel_kept;
    } else if (v == "raw_cloud") {
      m.point_input = PointInput::raw_cloud;
    } else {
      throw ConfigError("model.point_input: expected \"voxel_kept\" or \"raw_cloud\"");
    }
  }
  if (j.contains("train_image")) {
    const auto v = j.at("train_image").get<std::string>();
    if (v == "voxel_point") {
      m.train_image = TrainImage::voxel_point;
    } else if (v == "voxel_memory") {
      m.train_image = TrainImage::voxel_memory;
    } else {
      throw ConfigError("model.train_image: expected \"voxel_point\" or \"voxel_memory\"");
    }
  }
  if (j.contains("point_stream")) {
    const json& p = j.at("point_stream");
    const std::string w = "model.point_stream";
    check_keys(p, {"sa1_channels", "sa2_channels", "fp_channels", "radius1", "radius2", "max_samples", "ratio"}, w);
    read(p, "sa1_channels", m.point_stream.sa1_channels, w);
    read(p, "sa2_channels", m.point_stream.sa2_channels, w);
    read(p, "fp_channels", m.point_stream.fp_channels, w);
    read(p, "radius1", m.point_stream.radius1, w);
    read(p, "radius2", m.point_stream.radius2, w);
    read(p, "max_samples", m.point_stream.max_samples, w);
    read(p, "ratio", m.point_stream.ratio, w);
  }
  if (j.contains("backbone")) {
    const json& b = j.at("backbone");
    check_keys(b, {"levels", "block_depth"}, "model.backbone");
    read(b, "levels", m.backbone.levels, "model.backbone");
    read(b, "block_depth", m.backbone.block_depth, "model.backbone");
  }
  if (j.contains("head")) {
    const json& h = j.at("head");
    const std::string w = "model.head";
    check_keys(h, {"anchor_size", "anchor_z", "pos_iou", "neg_iou", "nms_iou", "score_threshold", "focal_alpha",
                   "focal_gamma", "lambda"},
               w);
    Vec3 size{m.head.anchor.w, m.head.anchor.l, m.head.anchor.h};
    read_vec3(h, "anchor_size", size, w);
    m.head.anchor = {size.x, size.y, size.z};
    read(h, "anchor_z", m.head.anchor_z, w);
    read(h, "pos_iou", m.head.pos_iou, w);
    read(h, "neg_iou", m.head.neg_iou, w);
    read(h, "nms_iou", m.head.nms_iou, w);
    read(h, "score_threshold", m.head.score_threshold, w);
    read(h, "focal_alpha", m.head.focal_alpha, w);
    read(h, "focal_gamma", m.head.focal_gamma, w);
    if (h.contains("lambda")) {
      const json& l = h.at("lambda");
      check_keys(l, {"reg", "dir", "cls", "mem"}, w + ".lambda");
      read(l, "reg", m.head.weights.reg, w + ".lambda");
      read(l, "dir", m.head.weights.dir, w + ".lambda");
      read(l, "cls", m.head.weights.cls, w + ".lambda");
      read(l, "mem", m.head.weights.mem, w + ".lambda");
    }
  }
}

std::string point_input_name(PointInput p) { return p == PointInput::voxel_kept ? "voxel_kept" : "raw_cloud"; }
std::string train_image_name(TrainImage t) { return t == TrainImage::voxel_point ? "voxel_point" : "voxel_memory"; }

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::voxel_only: return "voxel_only";
    case Variant::voxel_point: return "voxel_point";
    case Variant::memory: return "memory";
    case Variant::amfm: return "amfm";
    case Variant::full: return "full";
  }
  return "full";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::voxel_only, Variant::voxel_point, Variant::memory, Variant::amfm, Variant::full}) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown model variant \"" + name + "\"");
}

void RunConfig::validate() const {
  const ModelConfig& m = model;
  m.grid.validate();
  const std::size_t coarsest = std::size_t{2} << (m.backbone.levels == 0 ? 0 : m.backbone.levels - 1);
  if (m.backbone.levels == 0 || m.backbone.block_depth == 0) {
    throw ConfigError("model.backbone: levels and block_depth must be positive");
  }
  if (m.grid.rows() % coarsest != 0 || m.grid.cols() % coarsest != 0) {
    throw ConfigError("grid: " + std::to_string(m.grid.rows()) + " × " + std::to_string(m.grid.cols()) +
                      " pillars is not divisible by the backbone stride " + std::to_string(coarsest));
  }
  if (m.max_points == 0 || m.max_pillars == 0 || m.channels == 0 || m.k == 0) {
    throw ConfigError("model: max_points, max_pillars, channels and k must be positive");
  }
  if (m.uses_memory() && m.k > m.memory_items) {
    throw ConfigError("model: k = " + std::to_string(m.k) + " exceeds memory_items = " +
                      std::to_string(m.memory_items));
  }
  if (m.point_stream.ratio < 2 || m.point_stream.max_samples == 0 || !(m.point_stream.radius1 > 0.0) ||
      !(m.point_stream.radius2 > 0.0)) {
    throw ConfigError("model.point_stream: ratio ≥ 2, max_samples > 0 and positive radii required");
  }
  const auto& h = m.head;
  if (!(h.anchor.w > 0.0 && h.anchor.l > 0.0 && h.anchor.h > 0.0)) {
    throw ConfigError("model.head.anchor_size: sizes must be positive");
  }
  if (!(h.neg_iou > 0.0 && h.pos_iou < 1.0 && h.pos_iou >= h.neg_iou)) {
    throw ConfigError("model.head: IoU thresholds must satisfy 0 < neg ≤ pos < 1");
  }
  if (h.weights.reg < 0.0 || h.weights.dir < 0.0 || h.weights.cls < 0.0 || h.weights.mem < 0.0) {
    throw ConfigError("model.head.lambda: weights must be non-negative");
  }
  if (!(optim.lr > 0.0) || optim.lr_min < 0.0 || optim.lr_min > optim.lr || optim.weight_decay < 0.0) {
    throw ConfigError("optim: need lr > 0, 0 ≤ lr_min ≤ lr and weight_decay ≥ 0");
  }
  if (optim.batch_size == 0 || (optim.steps == 0 && optim.epochs == 0)) {
    throw ConfigError("optim: batch_size and epochs (or steps) must be positive");
  }
  if (augmentation.scale_min <= 0.0 || augmentation.scale_min > augmentation.scale_max ||
      augmentation.flip_probability < 0.0 || augmentation.flip_probability > 1.0 || augmentation.rotation_max < 0.0) {
    throw ConfigError("augment: invalid flip probability, scale range or rotation bound");
  }
  if (data.source == "synthetic") {
    data.spec.validate();
    if (data.num_scenes == 0) throw ConfigError("data.num_scenes must be positive");
  } else if (data.source != "kitti") {
    throw ConfigError("data.source: expected \"synthetic\" or \"kitti\"");
  }
}

RunConfig full_profile() {
  RunConfig c;
  c.profile = "full";
  c.model.grid = pillars::GridSpec::full();
  c.data.spec.scene_x = c.model.grid.x;
  c.data.spec.scene_y = c.model.grid.y;
  c.data.spec.scene_z = c.model.grid.z;
  c.data.spec.place_x = {5.0, 60.0};
  c.data.spec.place_y = {-30.0, 30.0};
  c.data.spec.num_objects = 8;
  c.data.spec.reference_range = 10.0;
  return c;
}

RunConfig desk_profile() {
  RunConfig c;
  c.profile = "desk";
  c.model.grid = pillars::GridSpec::desk();
  c.model.max_points = 16;
  c.model.max_pillars = 256;
  c.model.channels = 16;
  c.model.k = 8;
  c.model.memory_items = 128;
  c.model.point_stream = {16, 16, 32, 32, 0.4, 0.8, 16, 4};
  c.model.backbone.channels = 16;
  c.optim.batch_size = 2;
  c.data.spec = synth::SceneSpec{};
  c.data.num_scenes = 8;
  return c;
}

synth::SceneSpec scene_spec_from_json(const json& j, synth::SceneSpec s) {
  const std::string w = "scene spec";
  check_keys(j,
             {"num_objects", "size", "size_jitter", "point_density", "ground_density", "reference_range",
              "sensor_origin", "scene_x", "scene_y", "scene_z", "place_x", "place_y", "ground_z", "seed"},
             w);
  read(j, "num_objects", s.num_objects, w);
  Vec3 size{s.width, s.length, s.height};
  read_vec3(j, "size", size, w);
  s.width = size.x;
  s.length = size.y;
  s.height = size.z;
  read(j, "size_jitter", s.size_jitter, w);
  read(j, "point_density", s.point_density, w);
  read(j, "ground_density", s.ground_density, w);
  read(j, "reference_range", s.reference_range, w);
  read_vec3(j, "sensor_origin", s.sensor_origin, w);
  read_range(j, "scene_x", s.scene_x, w);
  read_range(j, "scene_y", s.scene_y, w);
  read_range(j, "scene_z", s.scene_z, w);
  read_range(j, "place_x", s.place_x, w);
  read_range(j, "place_y", s.place_y, w);
  read(j, "ground_z", s.ground_z, w);
  read(j, "seed", s.seed, w);
  return s;
}

json scene_spec_to_json(const synth::SceneSpec& s) {
  return {{"num_objects", s.num_objects},
          {"size", {s.width, s.length, s.height}},
          {"size_jitter", s.size_jitter},
          {"point_density", s.point_density},
          {"ground_density", s.ground_density},
          {"reference_range", s.reference_range},
          {"sensor_origin", {s.sensor_origin.x, s.sensor_origin.y, s.sensor_origin.z}},
          {"scene_x", range_json(s.scene_x)},
          {"scene_y", range_json(s.scene_y)},
          {"scene_z", range_json(s.scene_z)},
          {"place_x", range_json(s.place_x)},
          {"place_y", range_json(s.place_y)},
          {"ground_z", s.ground_z},
          {"seed", s.seed}};
}

RunConfig config_from_json(const json& j) {
  check_keys(j, {"profile", "seed", "grid", "model", "optim", "augment", "data", "output_dir"}, "config");
  std::string profile = "full";
  read(j, "profile", profile, "config");
  RunConfig c;
  if (profile == "full") {
    c = full_profile();
  } else if (profile == "desk") {
    c = desk_profile();
  } else {
    throw ConfigError("config.profile: expected \"full\" or \"desk\", got \"" + profile + "\"");
  }
  read(j, "seed", c.seed, "config");
  if (j.contains("grid")) read_grid(j.at("grid"), c.model.grid);
  if (j.contains("model")) read_model(j.at("model"), c.model);
  if (j.contains("optim")) {
    const json& o = j.at("optim");
    check_keys(o, {"lr", "lr_min", "weight_decay", "epochs", "steps", "batch_size", "checkpoint_every"}, "optim");
    read(o, "lr", c.optim.lr, "optim");
    read(o, "lr_min", c.optim.lr_min, "optim");
    read(o, "weight_decay", c.optim.weight_decay, "optim");
    read(o, "epochs", c.optim.epochs, "optim");
    read(o, "steps", c.optim.steps, "optim");
    read(o, "batch_size", c.optim.batch_size, "optim");
    read(o, "checkpoint_every", c.optim.checkpoint_every, "optim");
  }
  if (j.contains("augment")) {
    const json& a = j.at("augment");
    check_keys(a, {"enabled", "flip_probability", "scale", "rotation_max", "paste_count", "paste_attempts"},
               "augment");
    read(a, "enabled", c.augment, "augment");
    read(a, "flip_probability", c.augmentation.flip_probability, "augment");
    AxisRange scale{c.augmentation.scale_min, c.augmentation.scale_max};
    read_range(a, "scale", scale, "augment");
    c.augmentation.scale_min = scale.min;
    c.augmentation.scale_max = scale.max;
    read(a, "rotation_max", c.augmentation.rotation_max, "augment");
    read(a, "paste_count", c.augmentation.paste_count, "augment");
    read(a, "paste_attempts", c.augmentation.paste_attempts, "augment");
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, {"source", "kitti_dir", "num_scenes", "spec"}, "data");
    read(d, "source", c.data.source, "data");
    std::string dir;
    read(d, "kitti_dir", dir, "data");
    if (!dir.empty()) c.data.kitti_dir = dir;
    read(d, "num_scenes", c.data.num_scenes, "data");
    if (d.contains("spec")) c.data.spec = scene_spec_from_json(d.at("spec"), c.data.spec);
  }
  std::string out;
  read(j, "output_dir", out, "config");
  if (!out.empty()) c.output_dir = out;
  c.profile = profile;
  c.validate();
  return c;
}

json config_to_json(const RunConfig& c) {
  const ModelConfig& m = c.model;
  const auto& ps = m.point_stream;
  const auto& h = m.head;
  return {
      {"profile", c.profile},
      {"seed", c.seed},
      {"grid",
       {{"x", range_json(m.grid.x)},
        {"y", range_json(m.grid.y)},
        {"z", range_json(m.grid.z)},
        {"voxel", {m.grid.voxel_x, m.grid.voxel_y, m.grid.voxel_z}}}},
      {"model",
       {{"variant", variant_name(m.variant)},
        {"max_points", m.max_points},
        {"max_pillars", m.max_pillars},
        {"channels", m.channels},
        {"k", m.k},
        {"memory_items", m.memory_items},
        {"point_stream",
         {{"sa1_channels", ps.sa1_channels},
          {"sa2_channels", ps.sa2_channels},
          {"fp_channels", ps.fp_channels},
          {"radius1", ps.radius1},
          {"radius2", ps.radius2},
          {"max_samples", ps.max_samples},
          {"ratio", ps.ratio}}},
        {"point_input", point_input_name(m.point_input)},
        {"train_image", train_image_name(m.train_image)},
        {"backbone", {{"levels", m.backbone.levels}, {"block_depth", m.backbone.block_depth}}},
        {"head",
         {{"anchor_size", {h.anchor.w, h.anchor.l, h.anchor.h}},
          {"anchor_z", h.anchor_z},
          {"pos_iou", h.pos_iou},
          {"neg_iou", h.neg_iou},
          {"nms_iou", h.nms_iou},
          {"score_threshold", h.score_threshold},
          {"focal_alpha", h.focal_alpha},
          {"focal_gamma", h.focal_gamma},
          {"lambda", {{"reg", h.weights.reg}, {"dir", h.weights.dir}, {"cls", h.weights.cls}, {"mem", h.weights.mem}}}}},
        {"sensor_origin", {m.sensor_origin.x, m.sensor_origin.y, m.sensor_origin.z}}}},
      {"optim",
       {{"lr", c.optim.lr},
        {"lr_min", c.optim.lr_min},
        {"weight_decay", c.optim.weight_decay},
        {"epochs", c.optim.epochs},
        {"steps", c.optim.steps},
        {"batch_size", c.optim.batch_size},
        {"checkpoint_every", c.optim.checkpoint_every}}},
      {"augment",
       {{"enabled", c.augment},
        {"flip_probability", c.augmentation.flip_probability},
        {"scale", {c.augmentation.scale_min, c.augmentation.scale_max}},
        {"rotation_max", c.augmentation.rotation_max},
        {"paste_count", c.augmentation.paste_count},
        {"paste_attempts", c.augmentation.paste_attempts}}},
      {"data",
       {{"source", c.data.source},
        {"kitti_dir", c.data.kitti_dir.string()},
        {"num_scenes", c.data.num_scenes},
        {"spec", scene_spec_to_json(c.data.spec)}}},
      {"output_dir", c.output_dir.string()},
  };
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace hvpr
