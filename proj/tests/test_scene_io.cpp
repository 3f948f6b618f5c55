#include <cmath>
#include <cstring>
#include <numbers>

#include "doctest.h"
#include "hvpr/augment.hpp"
#include "hvpr/error.hpp"
#include "hvpr/kitti.hpp"
#include "hvpr/synthetic.hpp"
#include "oracles.hpp"

using namespace hvpr;

namespace {

std::vector<unsigned char> floats_le(std::initializer_list<float> vs) {
  std::vector<unsigned char> out;
  for (float f : vs) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>((u >> (8 * b)) & 0xff));
  }
  return out;
}

// Point-in-oriented-box with a margin, done by hand.
bool inside(const Box3D& b, const Point& p, double margin) {
  Box3D g = b;
  g.w += 2 * margin;
  g.l += 2 * margin;
  return oracle::in_rect(g, p.x, p.y) && std::abs(p.z - b.z) <= 0.5 * b.h + margin;
}

Scene small_scene(std::uint64_t seed) {
  synth::SceneSpec spec;
  spec.num_objects = 2;
  spec.seed = seed;
  return synth::generate_synthetic_scene(spec);
}

}  // namespace

TEST_SUITE("scene_io") {

TEST_CASE("velodyne record decodes to one point") {
  const auto bytes = floats_le({1.0f, 2.0f, 3.0f, 0.5f});
  const PointCloud c = kitti::parse_velodyne_bin(bytes);
  REQUIRE(c.size() == 1);
  CHECK(c.points[0] == Point{1, 2, 3, 0.5});
  CHECK(kitti::parse_velodyne_bin({}).empty());
}

TEST_CASE("velodyne partial record is rejected at its offset") {
  auto bytes = floats_le({1.0f, 2.0f, 3.0f, 0.5f});
  bytes.push_back(7);
  try {
    kitti::parse_velodyne_bin(bytes);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.position() == 16);
  }
}

TEST_CASE("velodyne non-finite value names the record") {
  const auto bytes = floats_le({1, 2, 3, 0.5f, 1, NAN, 3, 0.5f});
  try {
    kitti::parse_velodyne_bin(bytes);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("record 1") != std::string::npos);
    CHECK(e.position() == 20);
  }
}

TEST_CASE("velodyne serialize/parse is bit exact") {
  Rng rng(11);
  PointCloud c;
  for (int i = 0; i < 500; ++i) {
    // float-representable values so the widening is lossless
    c.points.push_back({static_cast<float>(rng.uniform(-80, 80)), static_cast<float>(rng.uniform(-80, 80)),
                        static_cast<float>(rng.uniform(-3, 3)), static_cast<float>(rng.uniform())});
  }
  const auto bytes = kitti::serialize_velodyne_bin(c);
  CHECK(bytes.size() == 16 * c.size());
  const PointCloud back = kitti::parse_velodyne_bin(bytes);
  CHECK(back.points == c.points);
  CHECK(kitti::serialize_velodyne_bin(back) == bytes);
}

TEST_CASE("label with identity calib") {
  const auto boxes = kitti::kitti_label_to_lidar_boxes(
      "Car 0.00 1 -1.57 0 0 10 10 1.5 1.6 3.9 0 0 0 0.3\nDontCare -1 -1 -10 0 0 0 0 -1 -1 -1 -1 -1 -1 -1\n",
      CalibMatrices::identity());
  REQUIRE(boxes.size() == 1);
  const Box3D& b = boxes[0].box;
  CHECK(b.x == doctest::Approx(0.0));
  CHECK(b.y == doctest::Approx(0.0));
  CHECK(b.z == doctest::Approx(0.75));  // bottom center lifted by h/2
  CHECK(b.w == 1.6);
  CHECK(b.l == 3.9);
  CHECK(b.h == 1.5);
  CHECK(b.heading == doctest::Approx(-0.3 - std::numbers::pi / 2));
  CHECK(boxes[0].difficulty == 1);
}

TEST_CASE("label with a 90 degree yaw calib maps through the inverse rotation") {
  // cam = R·lidar with R a +90° turn about z: lidar = Rᵀ·cam.
  CalibMatrices calib;
  calib.tr = {0, -1, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0};
  const auto boxes = kitti::kitti_label_to_lidar_boxes("Car 0 0 0 0 0 0 0 2 1.6 3.9 1 0 0 0\n", calib);
  REQUIRE(boxes.size() == 1);
  // Rᵀ (1, 0, 0) = (0, −1, 0)
  CHECK(std::abs(boxes[0].box.x - 0.0) < 1e-6);
  CHECK(std::abs(boxes[0].box.y + 1.0) < 1e-6);
  CHECK(std::abs(boxes[0].box.z - 1.0) < 1e-6);
}

TEST_CASE("label with translation and the KITTI axis rig") {
  CalibMatrices calib = CalibMatrices::kitti_axes();
  calib.tr[3] = 0.5;
  calib.tr[7] = -0.2;
  calib.tr[11] = 1.0;
  // Camera (x right, y down, z forward): lidar point (8, 2, -1.6) maps to
  // cam = (−2, 1.6, 8) + t.
  const std::string line = "Car 0 0 0 0 0 0 0 1.5 1.6 3.9 -1.5 1.4 9 0.2\n";
  const auto boxes = kitti::kitti_label_to_lidar_boxes(line, calib);
  REQUIRE(boxes.size() == 1);
  CHECK(std::abs(boxes[0].box.x - 8.0) < 1e-6);
  CHECK(std::abs(boxes[0].box.y - 2.0) < 1e-6);
  CHECK(std::abs(boxes[0].box.z - (-1.6 + 0.75)) < 1e-6);
}

TEST_CASE("label round trip through text") {
  const CalibMatrices calib = CalibMatrices::kitti_axes();
  std::vector<GroundTruthBox> boxes{{{8, 2, -0.9, 1.6, 3.9, 1.5, 0.4}, "Car", 0},
                                    {{20, -4, -1.0, 1.7, 4.1, 1.4, -2.9}, "Car", 2}};
  const auto back = kitti::kitti_label_to_lidar_boxes(kitti::lidar_boxes_to_kitti_label(boxes, calib), calib);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].box.x == doctest::Approx(boxes[i].box.x).epsilon(1e-9));
    CHECK(back[i].box.y == doctest::Approx(boxes[i].box.y).epsilon(1e-9));
    CHECK(back[i].box.z == doctest::Approx(boxes[i].box.z).epsilon(1e-9));
    CHECK(back[i].box.heading == doctest::Approx(boxes[i].box.heading).epsilon(1e-9));
    CHECK(back[i].difficulty == boxes[i].difficulty);
  }
}

TEST_CASE("malformed labels and calibs") {
  try {
    kitti::kitti_label_to_lidar_boxes("Car 0 0 0 0 0 0 0 1.5 1.6 3.9 0 0 0\n", CalibMatrices::identity());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.position() == 1);
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
  try {
    kitti::kitti_label_to_lidar_boxes("\nCar 0 0 0 0 0 0 0 1.5 x 3.9 0 0 0 0\n", CalibMatrices::identity());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.position() == 2);
  }
  CalibMatrices singular;
  singular.r0 = {1, 0, 0, 0, 0, 0, 0, 0, 1};
  CHECK_THROWS_AS(kitti::kitti_label_to_lidar_boxes("", singular), DataError);
  CHECK_THROWS_AS(kitti::parse_calib("R0_rect: 1 0 0 0 1 0 0 0 1\n"), DataError);
  CHECK_THROWS_AS(kitti::parse_calib("R0_rect 1 0 0\n"), ParseError);
}

TEST_CASE("calib text round trip") {
  const CalibMatrices c = CalibMatrices::kitti_axes();
  const CalibMatrices back = kitti::parse_calib(kitti::format_calib(c));
  CHECK(back.r0 == c.r0);
  CHECK(back.tr == c.tr);
}

TEST_CASE("synthetic scenes are seeded") {
  const Scene a = small_scene(5), b = small_scene(5), c = small_scene(6);
  CHECK(a.cloud.points == b.cloud.points);
  REQUIRE(a.boxes.size() == b.boxes.size());
  for (std::size_t i = 0; i < a.boxes.size(); ++i) CHECK(a.boxes[i].box.x == b.boxes[i].box.x);
  CHECK(a.cloud.points != c.cloud.points);
}

TEST_CASE("zero objects gives ground only") {
  synth::SceneSpec spec;
  spec.num_objects = 0;
  const Scene s = synth::generate_synthetic_scene(spec);
  CHECK(s.boxes.empty());
  CHECK(!s.cloud.empty());
  for (const Point& p : s.cloud.points) CHECK(std::abs(p.z - spec.ground_z) < 0.2);
}

TEST_CASE("every object carries points") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene s = small_scene(seed);
    for (const auto& gt : s.boxes) {
      std::size_t n = 0;
      for (const Point& p : s.cloud.points) n += inside(gt.box, p, 0.05);
      CHECK(n >= 1);
    }
  }
}

TEST_CASE("object point count tracks the analytic target at 10 m") {
  synth::SceneSpec spec;
  spec.scene_x = {0, 20.48};
  spec.scene_y = {-10.24, 10.24};
  spec.place_x = {9.99, 10.01};
  spec.place_y = {-0.01, 0.01};
  spec.size_jitter = 0.0;
  spec.point_density = 40.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    spec.seed = seed;
    const Scene s = synth::generate_synthetic_scene(spec);
    REQUIRE(s.boxes.size() == 1);
    const Box3D& b = s.boxes[0].box;
    CHECK(b.w == doctest::Approx(1.6));
    CHECK(b.l == doctest::Approx(3.9));
    CHECK(b.h == doctest::Approx(1.5));
    std::size_t n = 0;
    for (const Point& p : s.cloud.points) n += inside(b, p, 0.05);
    const double target = synth::expected_object_points(b, spec);
    CHECK(target > 10.0);
    CHECK(std::abs(static_cast<double>(n) - target) <= 0.2 * target);
  }
}

TEST_CASE("bad specs are rejected") {
  synth::SceneSpec spec;
  spec.point_density = 0.0;
  CHECK_THROWS_AS(synth::generate_synthetic_scene(spec), ConfigError);
  spec = {};
  spec.place_x = {-1.0, 3.0};
  CHECK_THROWS_AS(synth::generate_synthetic_scene(spec), ConfigError);
}

TEST_CASE("identity augmentation and involutions") {
  const Scene orig = small_scene(3);
  Scene s = orig;
  augment::scale(s, 1.0);
  augment::rotate_z(s, 0.0);
  CHECK(s.cloud.points == orig.cloud.points);

  augment::flip_y(s);
  augment::flip_y(s);
  for (std::size_t i = 0; i < s.cloud.size(); ++i) CHECK(std::abs(s.cloud.points[i].y - orig.cloud.points[i].y) <= 1e-12);
  for (std::size_t i = 0; i < s.boxes.size(); ++i) {
    CHECK(std::abs(s.boxes[i].box.heading - orig.boxes[i].box.heading) <= 1e-12);
  }

  augment::rotate_z(s, std::numbers::pi / 4);
  augment::rotate_z(s, -std::numbers::pi / 4);
  for (std::size_t i = 0; i < s.cloud.size(); ++i) {
    CHECK(std::abs(s.cloud.points[i].x - orig.cloud.points[i].x) <= 1e-9);
    CHECK(std::abs(s.cloud.points[i].y - orig.cloud.points[i].y) <= 1e-9);
  }
  for (std::size_t i = 0; i < s.boxes.size(); ++i) {
    CHECK(std::abs(s.boxes[i].box.x - orig.boxes[i].box.x) <= 1e-9);
    CHECK(std::abs(normalize_angle(s.boxes[i].box.heading - orig.boxes[i].box.heading)) <= 1e-9);
  }
}

TEST_CASE("augmentations keep points inside their boxes") {
  Rng rng(21);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Scene s = small_scene(seed);
    std::vector<std::vector<bool>> before;
    for (const auto& gt : s.boxes) {
      before.emplace_back();
      for (const Point& p : s.cloud.points) before.back().push_back(inside(gt.box, p, 0.0));
    }
    augment::AugmentConfig cfg;
    cfg.flip_probability = 0.5;
    augment::augment_scene(s, cfg, nullptr, rng);
    for (std::size_t b = 0; b < s.boxes.size(); ++b) {
      for (std::size_t i = 0; i < s.cloud.size(); ++i) {
        // 1e-9 slack for points sitting on a face
        if (before[b][i]) CHECK(inside(s.boxes[b].box, s.cloud.points[i], 1e-9));
      }
    }
  }
}

TEST_CASE("ground-truth paste never overlaps") {
  std::vector<Scene> train;
  for (std::uint64_t seed = 0; seed < 10; ++seed) train.push_back(small_scene(seed));
  const auto bank = augment::SampleBank::from_scenes(train);
  CHECK(bank.size() > 0);
  Rng rng(4);
  std::size_t pasted = 0;
  for (std::uint64_t seed = 20; seed < 40; ++seed) {
    Scene s = small_scene(seed);
    pasted += augment::paste_ground_truth(s, bank, 3, 10, rng);
    for (std::size_t i = 0; i < s.boxes.size(); ++i) {
      for (std::size_t j = i + 1; j < s.boxes.size(); ++j) {
        CHECK(rotated_bev_iou(s.boxes[i].box, s.boxes[j].box) == 0.0);
      }
    }
  }
  CHECK(pasted > 0);
}

}  // TEST_SUITE
