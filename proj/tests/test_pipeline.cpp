#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "hvpr/error.hpp"
#include "hvpr/pipeline.hpp"

using namespace hvpr;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hvpr_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig tiny(Variant v, std::size_t steps) {
  RunConfig c = desk_profile();
  c.seed = 5;
  c.model.variant = v;
  c.optim.steps = steps;
  c.data.num_scenes = 3;
  return c;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(HVPR_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_SUITE("pipeline_cli") {

TEST_CASE("config json round trip") {
  RunConfig c = desk_profile();
  c.seed = 99;
  c.model.variant = Variant::amfm;
  c.optim.lr = 1e-3;
  c.model.head.weights.dir = 0.3;
  const nlohmann::json j = config_to_json(c);
  const RunConfig back = config_from_json(j);
  CHECK(config_to_json(back) == j);
  CHECK(back.seed == 99);
  CHECK(back.model.variant == Variant::amfm);
  CHECK(back.model.head.weights.dir == 0.3);

  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"sed", 1}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"model", {{"variant", "pointpillars"}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"optim", {{"batch", 2}}}}), ConfigError);
}

TEST_CASE("profiles keep the documented defaults") {
  const RunConfig full = full_profile();
  CHECK(full.optim.lr == 3e-3);
  CHECK(full.optim.weight_decay == 1e-2);
  CHECK(full.optim.batch_size == 8);
  CHECK(full.optim.epochs == 100);
  CHECK(full.model.grid.cols() == 440);
  CHECK(full.model.head.weights.reg == 2.0);
  CHECK(full.model.head.weights.dir == 0.2);
  const RunConfig desk = desk_profile();
  CHECK(desk.model.grid.cols() == 32);
  CHECK(desk.model.max_points == 16);
  CHECK(desk.model.channels == 16);
  CHECK(desk.model.memory_items == 128);
  CHECK(desk.model.k == 8);
  CHECK(desk.optim.batch_size == 2);
  CHECK(config_from_json(nlohmann::json{{"profile", "desk"}}).model.channels == 16);
}

TEST_CASE("one step emits one record with four loss terms") {
  const RunConfig c = tiny(Variant::full, 1);
  const auto scenes = pipeline::load_scenes(c.data);
  HvprModel model(c.model, c.seed);
  std::ostringstream metrics;
  pipeline::TrainHooks hooks;
  hooks.metrics = &metrics;
  const auto result = pipeline::train(model, c, scenes, hooks);
  CHECK(result.history.size() == 1);
  std::istringstream lines(metrics.str());
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    ++count;
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("schema") == pipeline::kMetricsSchema);
    CHECK(j.at("step") == 1);
    for (const char* k : {"reg", "dir", "cls", "mem"}) CHECK(j.at("loss").contains(k));
  }
  CHECK(count == 1);
}

TEST_CASE("seeded runs are bit-identical") {
  const RunConfig c = tiny(Variant::full, 3);
  const auto scenes = pipeline::load_scenes(c.data);
  std::string bytes[2];
  std::vector<eval::Detection> dets[2];
  for (int r = 0; r < 2; ++r) {
    HvprModel model(c.model, c.seed);
    const auto result = pipeline::train(model, c, scenes);
    std::ostringstream os;
    write_checkpoint(os, result.checkpoint);
    bytes[r] = os.str();
    dets[r] = pipeline::infer_scene(model, c, scenes[0]);
  }
  CHECK(bytes[0] == bytes[1]);
  REQUIRE(dets[0].size() == dets[1].size());
  for (std::size_t i = 0; i < dets[0].size(); ++i) {
    CHECK(dets[0][i].score == dets[1][i].score);
    CHECK(dets[0][i].box.x == dets[1][i].box.x);
  }

  // a restored model predicts the same boxes
  std::istringstream in(bytes[0]);
  RunConfig restored_cfg;
  const auto restored = pipeline::model_from_checkpoint(read_checkpoint(in), &restored_cfg);
  const auto again = pipeline::infer_scene(*restored, restored_cfg, scenes[0]);
  REQUIRE(again.size() == dets[0].size());
  for (std::size_t i = 0; i < again.size(); ++i) CHECK(again[i].box.y == dets[0][i].box.y);
}

TEST_CASE("inference skips the point stream for memory variants") {
  const RunConfig c = tiny(Variant::full, 1);
  const auto scenes = pipeline::load_scenes(c.data);
  HvprModel model(c.model, c.seed);
  encoder::reset_point_stream_invocations();
  memory::reset_memory_read_invocations();
  for (const Scene& s : scenes) pipeline::infer_scene(model, c, s);
  CHECK(encoder::point_stream_invocations() == 0);
  CHECK(memory::memory_read_invocations() == scenes.size());

  Scene empty;
  empty.id = "empty";
  CHECK(pipeline::infer_scene(model, c, empty).empty());

  const RunConfig vp = tiny(Variant::voxel_point, 1);
  HvprModel point_model(vp.model, vp.seed);
  pipeline::infer_scene(point_model, vp, scenes[0]);
  // forward + fusion
  CHECK(encoder::point_stream_invocations() == 2);
}

TEST_CASE("cli commands and exit codes") {
  const fs::path dir = scratch("cli");
  RunConfig c = tiny(Variant::full, 2);
  c.output_dir = dir / "run";
  {
    std::ofstream(dir / "config.json") << config_to_json(c).dump(2);
    std::ofstream(dir / "bad.json") << R"({"optim": {"stepz": 3}})";
    std::ofstream(dir / "spec.json") << scene_spec_to_json(c.data.spec).dump();
  }
  CHECK(cli("") == 1);
  CHECK(cli("bogus") == 1);
  CHECK(cli("train --config " + (dir / "missing.json").string()) == 1);
  CHECK(cli("train --config " + (dir / "bad.json").string()) == 1);
  CHECK(cli("train --config " + (dir / "config.json").string()) == 0);
  const fs::path ckpt = dir / "run" / "final.ckpt";
  REQUIRE(fs::exists(ckpt));
  CHECK(fs::exists(dir / "run" / "metrics.jsonl"));

  CHECK(cli("synth-gen --spec " + (dir / "spec.json").string() + " --out " + (dir / "data").string() +
            " --count 2") == 0);
  CHECK(cli("eval --ckpt " + ckpt.string() + " --data " + (dir / "data").string()) == 0);
  const fs::path scan = *fs::directory_iterator(dir / "data" / "velodyne");
  CHECK(cli("infer --ckpt " + ckpt.string() + " --scene " + scan.string()) == 0);

  {
    std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  }
  CHECK(cli("infer --ckpt " + (dir / "junk.ckpt").string() + " --scene " + scan.string()) == 2);
  CHECK(cli("gradcheck") == 0);
  CHECK(cli("gradcheck --with-broken-fixture") == 3);
  fs::remove_all(dir);
}

TEST_CASE("eval on an empty dataset") {
  const fs::path dir = scratch("empty_eval");
  fs::create_directories(dir / "data" / "velodyne");
  const RunConfig c = tiny(Variant::voxel_only, 1);
  HvprModel model(c.model, c.seed);
  const auto result = pipeline::train(model, c, pipeline::load_scenes(c.data));
  save_checkpoint(dir / "m.ckpt", result.checkpoint);
  std::ostringstream out;
  CHECK(pipeline::run_eval(dir / "m.ckpt", dir / "data", out) == 0);
  CHECK(out.str().find("AP@40 0.0000") != std::string::npos);
  CHECK(out.str().find("gt 0") != std::string::npos);
  CHECK_THROWS_AS(pipeline::run_eval(dir / "m.ckpt", dir / "nowhere", out), DataError);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint from another version is refused") {
  const fs::path dir = scratch("version");
  const RunConfig c = tiny(Variant::voxel_only, 1);
  HvprModel model(c.model, c.seed);
  const auto result = pipeline::train(model, c, pipeline::load_scenes(c.data));
  save_checkpoint(dir / "m.ckpt", result.checkpoint);
  std::string bytes = slurp(dir / "m.ckpt");
  bytes[8] = 7;  // version u32 follows the magic
  {
    std::ofstream(dir / "v.ckpt", std::ios::binary) << bytes;
  }
  try {
    load_checkpoint(dir / "v.ckpt");
    FAIL("expected a version error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
  fs::remove_all(dir);
}

}  // TEST_SUITE
