#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "hvpr/checkpoint.hpp"
#include "hvpr/config.hpp"
#include "hvpr/eval.hpp"
#include "hvpr/gradcheck_suite.hpp"
#include "hvpr/model.hpp"

namespace hvpr::pipeline {

inline constexpr int kMetricsSchema = 1;

// Synthetic scenes use seeds spec.seed, spec.seed + 1, …; KITTI scenes are
// read from <kitti_dir>/{velodyne,label_2,calib}.
std::vector<Scene> load_scenes(const DataConfig& data);
std::vector<Scene> synthetic_scenes(const synth::SceneSpec& spec, std::size_t count);

struct StepRecord {
  std::size_t step = 0;  // 1-based
  double lr = 0.0;
  double total = 0.0;
  double reg = 0.0, dir = 0.0, cls = 0.0, mem = 0.0;
  std::size_t num_positive = 0;
  double alignment = 0.0;
};

nlohmann::json step_json(const StepRecord& r);

struct TrainHooks {
  std::ostream* metrics = nullptr;  // one JSON record per line
  std::filesystem::path checkpoint_dir;  // empty: no files written
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  std::vector<StepRecord> history;
  Checkpoint checkpoint;
};

std::size_t total_steps(const RunConfig& config, std::size_t num_scenes);

// Trains `model` on `scenes` per config. Deterministic under config.seed.
// Throws NumericError when a loss turns non-finite.
TrainResult train(HvprModel& model, const RunConfig& config, const std::vector<Scene>& scenes,
                  const TrainHooks& hooks = {});

Checkpoint make_checkpoint(const HvprModel& model, const Adam& optimizer, const RunConfig& config);
// Rebuilds the model a checkpoint was written from.
std::unique_ptr<HvprModel> model_from_checkpoint(const Checkpoint& ckpt, RunConfig* config_out = nullptr);

// Voxelization RNG used by every inference call.
Rng inference_rng(const RunConfig& config);

// Inference on one scene. For memory variants, throws Error if the point
// stream is entered.
std::vector<eval::Detection> infer_scene(const HvprModel& model, const RunConfig& config, const Scene& scene);

eval::EvalReport evaluate_model(const HvprModel& model, const RunConfig& config, const std::vector<Scene>& scenes,
                                double iou_thr = 0.7);

// Command entry points; exit codes 0 success, 1 usage, 2 data, 3 numeric.
int run_train(const RunConfig& config, std::ostream& log);
int run_eval(const std::filesystem::path& ckpt, const std::filesystem::path& data, std::ostream& out);
int run_infer(const std::filesystem::path& ckpt, const std::filesystem::path& scene, std::ostream& out);
int run_gradcheck(const gradcheck::SuiteOptions& options, std::ostream& out);
int run_synth_gen(const synth::SceneSpec& spec, std::size_t count, const std::filesystem::path& out_dir,
                  std::ostream& out);

}  // namespace hvpr::pipeline
