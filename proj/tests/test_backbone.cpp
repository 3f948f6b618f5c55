#include <cmath>

#include "doctest.h"
#include "hvpr/backbone.hpp"
#include "hvpr/error.hpp"
#include "hvpr/gradcheck.hpp"

using namespace hvpr;
using backbone::BackboneConfig;

namespace {

Tensor randn(Shape s, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

void shift_offsets(ParameterStore& store, Rng& rng) {
  for (Parameter& p : store.all()) {
    if (p.name.ends_with(".bias") || p.name.ends_with(".beta")) {
      for (double& v : p.tensor.values()) v += rng.uniform(-0.3, 0.3);
    }
  }
}

}  // namespace

TEST_SUITE("backbone_amfm") {

TEST_CASE("scale descriptors by hand") {
  pillars::PillarBatch b;
  b.max_points = 2;
  b.coords = {{0, 0}, {1, 1}};
  b.counts = {2, 1};
  b.points = {{1, 0, 0, 0}, {3, 0, 0, 0}, {0.5, -1.0, 2.0, 0}, {}};
  const Tensor d = backbone::compute_scale_descriptors(b, {0, 0, 0});
  const double want0[] = {2, 2, 0, 0, 2.0};
  for (std::size_t i = 0; i < 5; ++i) CHECK(d.at(i) == doctest::Approx(want0[i]));
  CHECK(d.at(5) == 1.0);
  CHECK(d.at(9) == doctest::Approx(std::sqrt(0.25 + 1.0 + 4.0)));
  const Tensor shifted = backbone::compute_scale_descriptors(b, {1, 0, 0});
  CHECK(shifted.at(4) == doctest::Approx(1.0));
}

TEST_CASE("scale feature map") {
  Rng rng(1);
  ParameterStore store;
  const auto enc = backbone::ScaleEncoder::create(store, "scale", 4, rng);
  const auto grid = pillars::GridSpec::desk();
  const std::vector<pillars::PillarCoord> coords{{3, 4}, {7, 1}};
  const Tensor zero = backbone::scale_feature_map(Tensor(Shape{2, 5}), coords, grid, enc);
  for (double v : zero.values()) CHECK(v == 0.0);

  const Tensor desc = randn({2, 5}, rng);
  const Tensor m = backbone::scale_feature_map(desc, coords, grid, enc);
  CHECK(m.shape() == Shape{1, 4, 32, 32});
  const Tensor back = ops::gather_from_image(m, pillars::grid_cells(coords, 0));
  const Tensor direct = ops::relu(enc.linear(desc));
  for (std::size_t i = 0; i < direct.numel(); ++i) CHECK(back.at(i) == direct.at(i));
  double outside = 0.0;
  for (double v : m.values()) outside += std::abs(v);
  double inside = 0.0;
  for (double v : direct.values()) inside += std::abs(v);
  CHECK(outside == doctest::Approx(inside));
}

TEST_CASE("pyramid shapes and divisibility") {
  Rng rng(2);
  ParameterStore store;
  const BackboneConfig cfg{4, 3, 2, false, false};
  const auto net = backbone::Backbone::create(store, "bb", 8, cfg, rng);
  const auto levels = backbone::backbone_forward(net, randn({1, 8, 32, 32}, rng), true);
  REQUIRE(levels.size() == 3);
  CHECK(levels[0].shape() == Shape{1, 4, 16, 16});
  CHECK(levels[1].shape() == Shape{1, 8, 8, 8});
  CHECK(levels[2].shape() == Shape{1, 16, 4, 4});
  const Tensor fused = backbone::fuse_multiscale(net, levels, true);
  CHECK(fused.shape() == Shape{1, 24, 16, 16});
  CHECK(net.output_channels() == 24);
  CHECK_THROWS_AS(backbone::backbone_forward(net, randn({1, 8, 20, 20}, rng), true), ShapeError);
}

TEST_CASE("zero input gives zero pyramid") {
  Rng rng(3);
  ParameterStore store;
  const auto net = backbone::Backbone::create(store, "bb", 2, {2, 3, 2, false, false}, rng);
  for (const Tensor& level : backbone::backbone_forward(net, Tensor(Shape{1, 2, 16, 16}), false)) {
    for (double v : level.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("scale map downsampling tracks level strides") {
  Rng rng(4);
  ParameterStore store;
  const auto net = backbone::Backbone::create(store, "bb", 4, {2, 3, 1, true, true}, rng);
  const Tensor map = randn({1, 2, 32, 32}, rng);
  CHECK(backbone::downsample_scale_feature(net, map, 0).shape() == Shape{1, 2, 16, 16});
  CHECK(backbone::downsample_scale_feature(net, map, 1).shape() == Shape{1, 2, 8, 8});
  CHECK(backbone::downsample_scale_feature(net, map, 2).shape() == Shape{1, 2, 4, 4});
  // level 0 is one conv + ReLU
  const Tensor one = ops::relu(net.scale_down[0](map));
  const Tensor got = backbone::downsample_scale_feature(net, map, 0);
  for (std::size_t i = 0; i < one.numel(); ++i) CHECK(got.at(i) == one.at(i));
}

TEST_CASE("attention hand case and range") {
  nn::Conv2d conv;
  conv.weight = Tensor(Shape{1, 2, 1, 1}, {1.0, 1.0});
  conv.bias = Tensor(Shape{1}, std::vector<double>{0.0});
  conv.stride = 1;
  conv.pad = 0;
  const Tensor s(Shape{1, 2, 1, 1}, {2.0, 4.0});
  const Tensor a = backbone::amfm_attention(s, conv);
  CHECK(a.at(0) == doctest::Approx(1.0 / (1.0 + std::exp(-7.0))).epsilon(1e-12));
  CHECK(a.at(0) == doctest::Approx(0.99909).epsilon(1e-5));

  Rng rng(5);
  ParameterStore store;
  const auto att = nn::Conv2d::create(store, "att", 2, 1, 7, 1, 3, rng);
  const Tensor r = backbone::amfm_attention(randn({2, 3, 8, 8}, rng, 3.0), att);
  CHECK(r.shape() == Shape{2, 1, 8, 8});
  for (double v : r.values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  // constant field: interior cells (full 7×7 support) agree exactly
  Tensor c(Shape{1, 3, 16, 16});
  for (double& v : c.values()) v = 0.7;
  const Tensor ac = backbone::amfm_attention(c, att);
  const double ref = ac.at(8 * 16 + 8);
  for (std::size_t y = 3; y < 13; ++y) {
    for (std::size_t x = 3; x < 13; ++x) CHECK(ac.at(y * 16 + x) == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("refinement") {
  const Tensor f(Shape{1, 1, 1, 1}, std::vector<double>{2.0});
  CHECK(backbone::amfm_refine(f, Tensor(Shape{1, 1, 1, 1}, std::vector<double>{0.25})).at(0) == 2.5);
  Rng rng(6);
  Tensor feat = randn({1, 3, 4, 4}, rng);
  for (double& v : feat.values()) v = std::abs(v);
  const Tensor zero(Shape{1, 1, 4, 4});
  Tensor ones(Shape{1, 1, 4, 4});
  for (double& v : ones.values()) v = 1.0;
  const Tensor r0 = backbone::amfm_refine(feat, zero), r1 = backbone::amfm_refine(feat, ones);
  for (std::size_t i = 0; i < feat.numel(); ++i) {
    CHECK(r0.at(i) == feat.at(i));
    CHECK(r1.at(i) == 2.0 * feat.at(i));
  }
  ParameterStore store;
  const auto att = nn::Conv2d::create(store, "att", 2, 1, 7, 1, 3, rng);
  const Tensor a = backbone::amfm_attention(randn({1, 3, 4, 4}, rng), att);
  const Tensor r = backbone::amfm_refine(feat, a);
  for (std::size_t i = 0; i < feat.numel(); ++i) {
    CHECK(r.at(i) >= feat.at(i));
    CHECK(r.at(i) <= 2.0 * feat.at(i));
  }
  CHECK_THROWS_AS(backbone::amfm_refine(feat, Tensor(Shape{1, 1, 2, 2})), ShapeError);
}

TEST_CASE("attention ignores the level features") {
  Rng rng(7);
  ParameterStore store;
  const auto net = backbone::Backbone::create(store, "bb", 4, {2, 2, 1, true, true}, rng);
  const Tensor scale = randn({1, 2, 16, 16}, rng);
  const Tensor s1 = backbone::downsample_scale_feature(net, scale, 1);
  const Tensor a = backbone::amfm_attention(s1, net.attention[1]);
  const auto levels_a = backbone::backbone_forward(net, randn({1, 4, 16, 16}, rng), false);
  const auto levels_b = backbone::backbone_forward(net, randn({1, 4, 16, 16}, rng), false);
  CHECK(levels_a[1].at(0) != levels_b[1].at(0));
  const Tensor b = backbone::amfm_attention(backbone::downsample_scale_feature(net, scale, 1), net.attention[1]);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == b.at(i));
}

TEST_CASE("one level fuse is its own upsample") {
  Rng rng(8);
  ParameterStore store;
  const auto net = backbone::Backbone::create(store, "bb", 2, {2, 1, 1, false, false}, rng);
  const Tensor l0 = randn({1, 2, 4, 4}, rng);
  const Tensor fused = backbone::fuse_multiscale(net, {l0}, false);
  const Tensor direct = ops::relu(net.upsample_norm[0](net.upsample[0](l0), false));
  CHECK(fused.shape() == direct.shape());
  for (std::size_t i = 0; i < fused.numel(); ++i) CHECK(fused.at(i) == direct.at(i));
}

TEST_CASE("backbone and AMFM gradients on 8x8 inputs") {
  Rng rng(9);
  ParameterStore store;
  const auto net = backbone::Backbone::create(store, "bb", 2, {1, 2, 1, true, true}, rng);
  shift_offsets(store, rng);
  std::vector<Tensor> inputs{randn({1, 2, 8, 8}, rng), randn({1, 1, 8, 8}, rng)};
  for (const Parameter& p : store.all()) {
    if (p.trainable) inputs.push_back(p.tensor);
  }
  const Tensor w = randn({1, 4, 4, 4}, rng);
  const auto fn = [&](const std::vector<Tensor>& in) {
    return ops::sum(ops::mul(backbone::backbone_amfm_forward(net, in[0], in[1], true), w));
  };
  const auto report = finite_difference_check("backbone_amfm", fn, inputs, 1e-5, 1e-4);
  INFO("max rel " << report.max_rel_error);
  CHECK(report.passed);
}

}  // TEST_SUITE
