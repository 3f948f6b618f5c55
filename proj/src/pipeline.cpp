#include "hvpr/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "hvpr/augment.hpp"
#include "hvpr/error.hpp"
#include "hvpr/kitti.hpp"

namespace hvpr::pipeline {

namespace {

enum Stream : std::uint64_t { kOrder = 2, kAugment = 3, kVoxel = 4, kInference = 5 };

std::vector<std::size_t> epoch_order(const RunConfig& config, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(config.seed).split(kOrder).split(epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  return order;
}

void save(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::filesystem::create_directories(path.parent_path());
  save_checkpoint(path, ckpt);
}

nlohmann::json detection_json(const eval::Detection& d) {
  const Box3D& b = d.box;
  return {{"scene", d.scene_id},
          {"score", d.score},
          {"box", {{"x", b.x}, {"y", b.y}, {"z", b.z}, {"w", b.w}, {"l", b.l}, {"h", b.h}, {"heading", b.heading}}}};
}

}  // namespace

std::vector<Scene> synthetic_scenes(const synth::SceneSpec& spec, std::size_t count) {
  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    synth::SceneSpec s = spec;
    s.seed = spec.seed + i;
    scenes.push_back(synth::generate_synthetic_scene(s));
  }
  return scenes;
}

std::vector<Scene> load_scenes(const DataConfig& data) {
  if (data.source == "synthetic") return synthetic_scenes(data.spec, data.num_scenes);
  std::vector<Scene> scenes;
  for (const auto& id : kitti::list_scene_ids(data.kitti_dir)) scenes.push_back(kitti::load_scene(data.kitti_dir, id));
  return scenes;
}

nlohmann::json step_json(const StepRecord& r) {
  return {{"schema", kMetricsSchema},
          {"step", r.step},
          {"lr", r.lr},
          {"loss", {{"total", r.total}, {"reg", r.reg}, {"dir", r.dir}, {"cls", r.cls}, {"mem", r.mem}}},
          {"num_positive", r.num_positive},
          {"alignment", r.alignment}};
}

std::size_t total_steps(const RunConfig& config, std::size_t num_scenes) {
  if (config.optim.steps > 0) return config.optim.steps;
  const std::size_t per_epoch = (num_scenes + config.optim.batch_size - 1) / config.optim.batch_size;
  return config.optim.epochs * std::max<std::size_t>(per_epoch, 1);
}

Checkpoint make_checkpoint(const HvprModel& model, const Adam& optimizer, const RunConfig& config) {
  Checkpoint ckpt;
  ckpt.params = model.parameter_snapshot();
  ckpt.optimizer_step = optimizer.step_count();
  ckpt.optimizer_state = optimizer.state();
  ckpt.config_json = config_to_json(config).dump();
  return ckpt;
}

TrainResult train(HvprModel& model, const RunConfig& config, const std::vector<Scene>& scenes,
                  const TrainHooks& hooks) {
  if (scenes.empty()) throw DataError("training set is empty");
  const std::size_t steps = total_steps(config, scenes.size());
  const std::size_t batch = std::min(config.optim.batch_size, scenes.size());
  const std::size_t per_epoch = (scenes.size() + batch - 1) / batch;
  const Rng root(config.seed);
  const bool paste = config.augment && config.augmentation.paste_count > 0;
  const augment::SampleBank bank = paste ? augment::SampleBank::from_scenes(scenes) : augment::SampleBank{};

  Adam optimizer(AdamOptions{0.9, 0.999, 1e-8, config.optim.weight_decay});
  TrainResult result;
  std::vector<std::size_t> order;
  for (std::size_t step = 0; step < steps; ++step) {
    const std::size_t epoch = step / per_epoch, slot = step % per_epoch;
    if (slot == 0) order = epoch_order(config, epoch, scenes.size());
    Rng aug_rng = root.split(kAugment).split(step);
    Rng voxel_rng = root.split(kVoxel).split(step);
    std::vector<PreparedScene> prepared;
    for (std::size_t i = 0; i < batch; ++i) {
      // The last slot of an epoch wraps around to keep batches full.
      Scene scene = scenes[order[(slot * batch + i) % scenes.size()]];
      if (config.augment) augment::augment_scene(scene, config.augmentation, paste ? &bank : nullptr, aug_rng);
      prepared.push_back(prepare_scene(model.config(), scene, voxel_rng));
    }

    const double lr = cosine_lr(static_cast<long>(step), static_cast<long>(steps), config.optim.lr,
                                config.optim.lr_min);
    model.parameters().zero_grad();
    TrainOutput out = model.train_forward(prepared);
    StepRecord rec{step + 1,
                   lr,
                   out.total.item(),
                   out.terms.reg.item(),
                   out.terms.dir.item(),
                   out.terms.cls.item(),
                   out.terms.mem.item(),
                   out.num_positive,
                   out.alignment};
    if (!std::isfinite(rec.total)) {
      throw NumericError("training loss became non-finite at step " + std::to_string(step + 1));
    }
    out.total.backward();
    optimizer.step(model.parameters().all(), lr);

    result.history.push_back(rec);
    if (hooks.metrics) *hooks.metrics << step_json(rec).dump() << '\n';
    if (hooks.on_step) hooks.on_step(rec);
    spdlog::debug("step {} loss {:.5f} (reg {:.4f} dir {:.4f} cls {:.4f} mem {:.4f}) pos {}", rec.step, rec.total,
                  rec.reg, rec.dir, rec.cls, rec.mem, rec.num_positive);
    const bool periodic = config.optim.checkpoint_every > 0 && (step + 1) % config.optim.checkpoint_every == 0 &&
                          step + 1 < steps;
    if (periodic && !hooks.checkpoint_dir.empty()) {
      std::ostringstream name;
      name << "step_" << std::setw(6) << std::setfill('0') << step + 1 << ".ckpt";
      save(hooks.checkpoint_dir / name.str(), make_checkpoint(model, optimizer, config));
    }
  }
  result.checkpoint = make_checkpoint(model, optimizer, config);
  if (!hooks.checkpoint_dir.empty()) save(hooks.checkpoint_dir / "final.ckpt", result.checkpoint);
  return result;
}

std::unique_ptr<HvprModel> model_from_checkpoint(const Checkpoint& ckpt, RunConfig* config_out) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ckpt.config_json);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  const RunConfig config = config_from_json(j);
  auto model = std::make_unique<HvprModel>(config.model, config.seed);
  model->load_parameters(ckpt.params);
  if (config_out) *config_out = config;
  return model;
}

Rng inference_rng(const RunConfig& config) { return Rng(config.seed).split(kInference); }

std::vector<eval::Detection> infer_scene(const HvprModel& model, const RunConfig& config, const Scene& scene) {
  Rng rng = inference_rng(config);
  const PreparedScene prepared = prepare_scene(model.config(), scene, rng);
  const std::size_t before = encoder::point_stream_invocations();
  const auto boxes = model.infer(prepared);
  if (model.config().uses_memory() && encoder::point_stream_invocations() != before) {
    throw Error("inference entered the point stream");
  }
  std::vector<eval::Detection> dets;
  for (const auto& b : boxes) dets.push_back({b.box, b.score, scene.id});
  return dets;
}

eval::EvalReport evaluate_model(const HvprModel& model, const RunConfig& config, const std::vector<Scene>& scenes,
                                double iou_thr) {
  std::vector<eval::Detection> dets;
  std::vector<eval::SceneTruth> truth;
  for (const Scene& s : scenes) {
    const auto d = infer_scene(model, config, s);
    dets.insert(dets.end(), d.begin(), d.end());
    eval::SceneTruth t{s.id, {}};
    for (const auto& gt : s.boxes) {
      if (config.model.grid.x.contains(gt.box.x) && config.model.grid.y.contains(gt.box.y)) t.boxes.push_back(gt.box);
    }
    truth.push_back(std::move(t));
  }
  return eval::evaluate(std::move(dets), truth, iou_thr);
}

int run_train(const RunConfig& config, std::ostream& log) {
  const auto scenes = load_scenes(config.data);
  if (scenes.empty()) throw DataError("no training scenes found");
  HvprModel model(config.model, config.seed);
  std::filesystem::create_directories(config.output_dir);
  std::ofstream metrics(config.output_dir / "metrics.jsonl");
  if (!metrics) throw DataError("cannot write " + (config.output_dir / "metrics.jsonl").string());
  TrainHooks hooks;
  hooks.metrics = &metrics;
  hooks.checkpoint_dir = config.output_dir;
  const auto result = train(model, config, scenes, hooks);
  const StepRecord& first = result.history.front();
  const StepRecord& last = result.history.back();
  log << "trained " << result.history.size() << " steps on " << scenes.size() << " scenes; loss " << first.total
      << " -> " << last.total << "\ncheckpoint " << (config.output_dir / "final.ckpt").string() << '\n';
  return 0;
}

int run_eval(const std::filesystem::path& ckpt_path, const std::filesystem::path& data, std::ostream& out) {
  RunConfig config;
  const auto model = model_from_checkpoint(load_checkpoint(ckpt_path), &config);
  std::vector<Scene> scenes;
  for (const auto& id : kitti::list_scene_ids(data)) scenes.push_back(kitti::load_scene(data, id));
  const auto report = evaluate_model(*model, config, scenes);
  out << eval::format_report(report);
  out << eval::report_json(report).dump() << '\n';
  return 0;
}

int run_infer(const std::filesystem::path& ckpt_path, const std::filesystem::path& scene_path, std::ostream& out) {
  RunConfig config;
  const auto model = model_from_checkpoint(load_checkpoint(ckpt_path), &config);
  Scene scene;
  scene.id = scene_path.stem().string();
  scene.cloud = kitti::parse_velodyne_bin(kitti::read_file_bytes(scene_path));
  for (const auto& d : infer_scene(*model, config, scene)) out << detection_json(d).dump() << '\n';
  return 0;
}

int run_gradcheck(const gradcheck::SuiteOptions& options, std::ostream& out) {
  const auto reports = gradcheck::run_suite(options);
  std::size_t failed = 0;
  for (const auto& r : reports) {
    out << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(24) << r.op_name << " max_rel "
        << std::scientific << std::setprecision(3) << r.max_rel_error << " max_abs " << r.max_abs_error;
    if (!r.passed) {
      out << " at input " << r.worst_input << '[' << r.worst_element << "] analytic " << r.worst_analytic
          << " numeric " << r.worst_numeric;
    }
    out << std::defaultfloat << '\n';
    if (!r.passed) ++failed;
  }
  out << reports.size() << " ops checked, " << failed << " failed\n";
  return failed == 0 ? 0 : 3;
}

int run_synth_gen(const synth::SceneSpec& spec, std::size_t count, const std::filesystem::path& out_dir,
                  std::ostream& out) {
  const auto scenes = synthetic_scenes(spec, count);
  for (const Scene& s : scenes) kitti::write_scene(out_dir, s, CalibMatrices::identity());
  out << "wrote " << scenes.size() << " scenes to " << out_dir.string() << '\n';
  return 0;
}

}  // namespace hvpr::pipeline
