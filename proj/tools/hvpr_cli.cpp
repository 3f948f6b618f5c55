#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "hvpr/config.hpp"
#include "hvpr/error.hpp"
#include "hvpr/pipeline.hpp"

namespace {

void configure_logging() {
  const char* level = std::getenv("HVPR_LOG_LEVEL");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::info);
}

hvpr::synth::SceneSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw hvpr::ConfigError("cannot open scene spec " + path);
  try {
    return hvpr::scene_spec_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw hvpr::ConfigError("scene spec " + path + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"HVPR 3D detector: train, evaluate and inspect"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, data_path, scene_path, spec_path, out_dir;
  long long seed = -1;
  long long steps = -1;
  std::size_t count = 1;
  hvpr::gradcheck::SuiteOptions grad;
  bool broken = false;

  auto* train = app.add_subcommand("train", "train a model from a JSON config");
  train->add_option("--config", config_path, "run config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "override the config seed");
  train->add_option("--steps", steps, "override the number of optimizer steps");
  train->add_option("--out", out_dir, "override the output directory");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a KITTI-layout directory");
  eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_path, "dataset directory")->required()->check(CLI::ExistingDirectory);

  auto* infer = app.add_subcommand("infer", "detect objects in one velodyne .bin scan");
  infer->add_option("--ckpt", ckpt_path, "checkpoint file")->required()->check(CLI::ExistingFile);
  infer->add_option("--scene", scene_path, "velodyne .bin file")->required()->check(CLI::ExistingFile);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  gradcheck->add_option("--config", config_path, "run config supplying the seed")->check(CLI::ExistingFile);
  gradcheck->add_option("--eps", grad.eps, "central difference step");
  gradcheck->add_option("--tol", grad.tol, "relative error tolerance");
  gradcheck->add_flag("--with-broken-fixture", broken, "append an op with a deliberately wrong gradient");

  auto* synth = app.add_subcommand("synth-gen", "write synthetic scenes in KITTI layout");
  synth->add_option("--spec", spec_path, "scene spec (JSON)")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--count", count, "number of scenes (seeds spec.seed, spec.seed + 1, ...)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) {
      hvpr::RunConfig config = hvpr::load_config(config_path);
      if (seed >= 0) config.seed = static_cast<std::uint64_t>(seed);
      if (steps > 0) config.optim.steps = static_cast<std::size_t>(steps);
      if (!out_dir.empty()) config.output_dir = out_dir;
      return hvpr::pipeline::run_train(config, std::cout);
    }
    if (*eval) return hvpr::pipeline::run_eval(ckpt_path, data_path, std::cout);
    if (*infer) return hvpr::pipeline::run_infer(ckpt_path, scene_path, std::cout);
    if (*gradcheck) {
      if (!config_path.empty()) grad.seed = hvpr::load_config(config_path).seed;
      grad.include_broken_fixture = broken;
      return hvpr::pipeline::run_gradcheck(grad, std::cout);
    }
    if (*synth) return hvpr::pipeline::run_synth_gen(load_spec(spec_path), count, out_dir, std::cout);
  } catch (const hvpr::ConfigError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const hvpr::NumericError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const hvpr::DataError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 1;
}
