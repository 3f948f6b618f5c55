#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "hvpr/error.hpp"
#include "hvpr/pillars.hpp"
#include "hvpr/synthetic.hpp"

using namespace hvpr;
using pillars::GridSpec;

namespace {

PointCloud random_cloud(std::size_t n, const GridSpec& g, Rng& rng) {
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    c.points.push_back({rng.uniform(g.x.min - 0.5, g.x.max + 0.5), rng.uniform(g.y.min - 0.5, g.y.max + 0.5),
                        rng.uniform(g.z.min, g.z.max), rng.uniform()});
  }
  return c;
}

double image_sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s;
}

}  // namespace

TEST_SUITE("pillars") {

TEST_CASE("grid extents") {
  const GridSpec full = GridSpec::full();
  CHECK(full.cols() == 440);
  CHECK(full.rows() == 500);
  CHECK(full.layers() == 1);
  const GridSpec desk = GridSpec::desk();
  CHECK(desk.cols() == 32);
  CHECK(desk.rows() == 32);
  GridSpec bad = desk;
  bad.voxel_x = 0.15;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = desk;
  bad.voxel_z = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("first cell and out of range") {
  Rng rng(0);
  PointCloud c;
  c.points.push_back({0.08, -39.92, 0.0, 0.3});
  const auto b = pillars::voxelize(c, GridSpec::full(), 32, 12000, rng);
  REQUIRE(b.size() == 1);
  CHECK(b.coords[0] == pillars::PillarCoord{0, 0});
  CHECK(b.counts[0] == 1);

  PointCloud far;
  far.points.push_back({80.0, 0.0, 0.0, 0.3});
  far.points.push_back({70.4, 0.0, 0.0, 0.3});  // max boundary is open
  CHECK(pillars::voxelize(far, GridSpec::full(), 32, 12000, rng).size() == 0);
  CHECK(pillars::voxelize(PointCloud{}, GridSpec::full(), 32, 12000, rng).size() == 0);
}

TEST_CASE("co-located points are subsampled like the reference") {
  PointCloud c;
  for (int i = 0; i < 40; ++i) c.points.push_back({1.0, 1.0, 0.0, i / 40.0});
  Rng rng(77), ref(77);
  const auto b = pillars::voxelize(c, GridSpec::full(), 32, 12000, rng);
  REQUIRE(b.size() == 1);
  CHECK(b.counts[0] == 32);

  // partial Fisher–Yates over [0, 40), first 32, ascending
  std::vector<std::size_t> pool(40);
  for (std::size_t i = 0; i < 40; ++i) pool[i] = i;
  for (std::size_t i = 0; i < 32; ++i) std::swap(pool[i], pool[i + ref.index(40 - i)]);
  pool.resize(32);
  std::sort(pool.begin(), pool.end());
  for (std::size_t s = 0; s < 32; ++s) CHECK(b.point(0, s).reflectance == c.points[pool[s]].reflectance);
}

TEST_CASE("batch invariants on random clouds") {
  const GridSpec g = GridSpec::desk();
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const PointCloud c = random_cloud(3000, g, rng);
    const auto b = pillars::voxelize(c, g, 8, 200, rng);
    CHECK(b.size() <= 200);
    std::set<pillars::PillarCoord> seen;
    for (std::size_t n = 0; n < b.size(); ++n) {
      CHECK(b.counts[n] >= 1);
      CHECK(b.counts[n] <= 8);
      CHECK(seen.insert(b.coords[n]).second);
      if (n) CHECK(b.coords[n - 1] < b.coords[n]);
      for (std::size_t s = b.counts[n]; s < 8; ++s) CHECK(b.point(n, s) == Point{});
      for (std::size_t s = 0; s < b.counts[n]; ++s) {
        const Point& p = b.point(n, s);
        CHECK(static_cast<std::size_t>(std::floor((p.x - g.x.min) / g.voxel_x)) == b.coords[n].col);
        CHECK(static_cast<std::size_t>(std::floor((p.y - g.y.min) / g.voxel_y)) == b.coords[n].row);
      }
    }
  }
}

TEST_CASE("re-voxelizing kept points is idempotent") {
  const GridSpec g = GridSpec::desk();
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const PointCloud c = random_cloud(2000, g, rng);
    const auto b = pillars::voxelize(c, g, 8, 100000, rng);
    PointCloud kept{b.kept_points()};
    const auto again = pillars::voxelize(kept, g, 8, 100000, rng);
    CHECK(again.coords == b.coords);
    CHECK(again.counts == b.counts);
  }
}

TEST_CASE("augmented features") {
  GridSpec g = GridSpec::desk();
  g.x = {0.0, 5.12};
  g.y = {0.0, 5.12};
  Rng rng(0);
  PointCloud c;
  c.points.push_back({0.10, 0.10, -1.0, 0.4});
  c.points.push_back({1.00, 1.00, 0.2, 0.1});
  c.points.push_back({1.10, 1.02, 0.4, 0.3});
  const auto b = pillars::voxelize(c, g, 4, 100, rng);
  REQUIRE(b.size() == 2);
  const Tensor f = pillars::augment_point_features(b, g);
  CHECK(f.shape() == Shape{2, 4, 9});
  auto at = [&](std::size_t n, std::size_t s, std::size_t d) { return f.at((n * 4 + s) * 9 + d); };
  // single point: zero mean offsets, center offsets against (0.08, 0.08)
  CHECK(at(0, 0, 4) == 0.0);
  CHECK(at(0, 0, 5) == 0.0);
  CHECK(at(0, 0, 6) == 0.0);
  CHECK(at(0, 0, 7) == doctest::Approx(0.02));
  CHECK(at(0, 0, 8) == doctest::Approx(0.02));
  // two points: mean offsets opposite
  for (std::size_t d = 4; d < 7; ++d) CHECK(at(1, 0, d) == doctest::Approx(-at(1, 1, d)));
  // padding stays zero
  for (std::size_t d = 0; d < 9; ++d) CHECK(at(0, 3, d) == 0.0);
}

TEST_CASE("packed features match the padded rows") {
  const GridSpec g = GridSpec::desk();
  Rng rng(8);
  const auto b = pillars::voxelize(random_cloud(800, g, rng), g, 6, 300, rng);
  const Tensor padded = pillars::augment_point_features(b, g);
  const auto packed = pillars::pack_point_features(b, g);
  std::size_t row = 0;
  for (std::size_t n = 0; n < b.size(); ++n) {
    for (std::size_t s = 0; s < b.counts[n]; ++s, ++row) {
      CHECK(packed.pillar[row] == n);
      for (std::size_t d = 0; d < 9; ++d) CHECK(packed.features.at(row * 9 + d) == padded.at((n * 6 + s) * 9 + d));
    }
  }
  CHECK(row == packed.features.dim(0));
}

TEST_CASE("scatter places exactly the given cells") {
  const GridSpec g = GridSpec::desk();
  Tensor f(Shape{2, 3}, {1, 1, 1, 2, 2, 2});
  const Tensor img = pillars::scatter_to_pseudo_image(f, {{0, 0}, {3, 5}}, g);
  CHECK(img.shape() == Shape{1, 3, 32, 32});
  std::size_t nonzero_cells = 0;
  for (std::size_t r = 0; r < 32; ++r) {
    for (std::size_t col = 0; col < 32; ++col) {
      bool any = false;
      for (std::size_t ch = 0; ch < 3; ++ch) any = any || img.at((ch * 32 + r) * 32 + col) != 0.0;
      nonzero_cells += any;
    }
  }
  CHECK(nonzero_cells == 2);
  CHECK(img.at((0 * 32 + 0) * 32 + 0) == 1.0);
  CHECK(img.at((2 * 32 + 3) * 32 + 5) == 2.0);
  CHECK(image_sum(pillars::scatter_to_pseudo_image(Tensor(Shape{0, 3}), {}, g)) == 0.0);
  CHECK_THROWS_AS(pillars::scatter_to_pseudo_image(f, {{1, 1}, {1, 1}}, g), ShapeError);
}

TEST_CASE("scatter is linear, invertible and conserves sums") {
  const GridSpec g = GridSpec::desk();
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const auto b = pillars::voxelize(random_cloud(300, g, rng), g, 4, 500, rng);
    const std::size_t n = b.size();
    Tensor f(Shape{n, 4}), h(Shape{n, 4});
    for (double& v : f.values()) v = rng.normal();
    for (double& v : h.values()) v = rng.normal();
    const double a = rng.normal(), c = rng.normal();
    Tensor mix(Shape{n, 4});
    for (std::size_t i = 0; i < mix.numel(); ++i) mix.values()[i] = a * f.at(i) + c * h.at(i);
    const Tensor sf = pillars::scatter_to_pseudo_image(f, b.coords, g);
    const Tensor sh = pillars::scatter_to_pseudo_image(h, b.coords, g);
    const Tensor sm = pillars::scatter_to_pseudo_image(mix, b.coords, g);
    for (std::size_t i = 0; i < sm.numel(); ++i) CHECK(std::abs(sm.at(i) - (a * sf.at(i) + c * sh.at(i))) < 1e-12);
    CHECK(std::abs(image_sum(sf) - image_sum(f)) < 1e-9);
    const Tensor back = ops::gather_from_image(sf, pillars::grid_cells(b.coords, 0));
    for (std::size_t i = 0; i < f.numel(); ++i) CHECK(back.at(i) == f.at(i));
  }
}

}  // TEST_SUITE
