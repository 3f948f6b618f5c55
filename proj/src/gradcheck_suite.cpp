#include "hvpr/gradcheck_suite.hpp"

#include <cmath>
#include <utility>

#include "hvpr/backbone.hpp"
#include "hvpr/encoder.hpp"
#include "hvpr/error.hpp"
#include "hvpr/head.hpp"
#include "hvpr/memory.hpp"
#include "hvpr/ops.hpp"

namespace hvpr::gradcheck {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

// Values bounded away from zero, for kinked ops.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) {
    const double mag = rng.uniform(0.2, 1.5);
    v = rng.bernoulli(0.5) ? mag : -mag;
  }
  return t;
}

// Distinct values at least 0.15 apart in random order, so max ops stay
// clear of ties under perturbation.
Tensor tie_free(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  const std::size_t n = t.numel();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  for (std::size_t i = 0; i < n; ++i) {
    t.values()[order[i]] = 0.25 * (static_cast<double>(i) - 0.5 * static_cast<double>(n)) + rng.uniform(-0.05, 0.05);
  }
  return t;
}

// Σ w ⊙ out with fixed random weights, so every output element matters.
struct Projection {
  Tensor weights;
  Tensor operator()(const Tensor& out) const {
    if (out.shape() != weights.shape()) throw ShapeError("projection shape mismatch");
    return ops::sum(ops::mul(out, weights));
  }
};

// Zero-initialised biases put ReLU inputs exactly on the kink whenever a
// window is all zeros, which central differences can't handle. Shift them.
void jitter_offsets(ParameterStore& store, Rng& rng, double lo = -0.3, double hi = 0.3) {
  for (Parameter& p : store.all()) {
    const bool offset = p.name.ends_with(".bias") || p.name.ends_with(".beta");
    if (!p.trainable || !offset) continue;
    for (double& v : p.tensor.values()) v += rng.uniform(lo, hi);
  }
}

Projection projection_for(const Tensor& sample, Rng& rng) { return {random_tensor(sample.shape(), rng)}; }

// Builds fn over `inputs`, derives a projection from one forward pass, and
// checks the projected scalar.
GradReport check_projected(const std::string& name, const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                           const std::vector<Tensor>& inputs, Rng& rng, double eps, double tol) {
  Tensor sample;
  {
    NoGradGuard guard;
    sample = fn(inputs);
  }
  const Projection proj = projection_for(sample, rng);
  return finite_difference_check(name, [&](const std::vector<Tensor>& in) { return proj(fn(in)); }, inputs, eps,
                                 tol);
}

std::vector<Vec3> random_positions(std::size_t n, Rng& rng, double extent) {
  std::vector<Vec3> out(n);
  for (auto& p : out) p = {rng.uniform(0.0, extent), rng.uniform(0.0, extent), rng.uniform(0.0, extent)};
  return out;
}

std::vector<Case> build_registry() {
  std::vector<Case> r;
  r.push_back({"add_sub_mul_scale", [](Rng& rng, double eps, double tol) {
                 const auto fn = [](const std::vector<Tensor>& in) {
                   return ops::scale(ops::mul(ops::add(in[0], in[1]), ops::sub(in[0], in[1])), 0.5);
                 };
                 return check_projected("add_sub_mul_scale", fn,
                                        {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}, rng, eps, tol);
               }});
  r.push_back({"weighted_sum", [](Rng& rng, double eps, double tol) {
                 const auto fn = [](const std::vector<Tensor>& in) {
                   const Tensor terms[] = {ops::sum(in[0]), ops::sum(ops::mul(in[1], in[1]))};
                   const double weights[] = {2.0, 0.2};
                   return ops::weighted_sum(terms, weights);
                 };
                 return finite_difference_check("weighted_sum", fn, {random_tensor({5}, rng), random_tensor({4}, rng)},
                                                eps, tol);
               }});
  r.push_back({"relu", [](Rng& rng, double eps, double tol) {
                 return check_projected("relu", [](const auto& in) { return ops::relu(in[0]); },
                                        {away_from_zero({4, 5}, rng)}, rng, eps, tol);
               }});
  r.push_back({"sigmoid", [](Rng& rng, double eps, double tol) {
                 return check_projected("sigmoid", [](const auto& in) { return ops::sigmoid(in[0]); },
                                        {random_tensor({4, 5}, rng, 2.0)}, rng, eps, tol);
               }});
  r.push_back({"linear", [](Rng& rng, double eps, double tol) {
                 return check_projected("linear", [](const auto& in) { return ops::linear(in[0], in[1], in[2]); },
                                        {random_tensor({5, 4}, rng), random_tensor({4, 3}, rng), random_tensor({3}, rng)},
                                        rng, eps, tol);
               }});
  r.push_back({"correlation", [](Rng& rng, double eps, double tol) {
                 return check_projected("correlation",
                                        [](const auto& in) { return encoder::correlation(in[0], in[1]); },
                                        {random_tensor({4, 6}, rng), random_tensor({5, 6}, rng)}, rng, eps, tol);
               }});
  r.push_back({"concat_slice_gather", [](Rng& rng, double eps, double tol) {
                 const auto fn = [](const std::vector<Tensor>& in) {
                   const Tensor parts[] = {in[0], in[1]};
                   const Tensor joined = ops::concat(parts, 1);
                   const std::size_t rows[] = {2, 0, 2, 1};
                   return ops::gather_rows(ops::slice_rows(joined, 1, 4), rows);
                 };
                 return check_projected("concat_slice_gather", fn,
                                        {random_tensor({5, 3}, rng), random_tensor({5, 2}, rng)}, rng, eps, tol);
               }});
  r.push_back({"topk_softmax", [](Rng& rng, double eps, double tol) {
                 const Tensor scores = random_tensor({4, 7}, rng, 2.0);
                 // Fix the selection on unperturbed (tie-free) scores.
                 const auto indices = encoder::topk_softmax(scores, 3).indices;
                 const auto fn = [indices](const std::vector<Tensor>& in) {
                   return ops::softmax_rows(ops::take_along_rows(in[0], indices, 3));
                 };
                 return check_projected("topk_softmax", fn, {scores}, rng, eps, tol);
               }});
  r.push_back({"aggregate", [](Rng& rng, double eps, double tol) {
                 const std::vector<std::size_t> idx{0, 3, 1, 4, 4, 2};
                 const auto fn = [idx](const std::vector<Tensor>& in) {
                   return ops::aggregate(in[0], idx, ops::softmax_rows(in[1]));
                 };
                 return check_projected("aggregate", fn, {random_tensor({5, 4}, rng), random_tensor({3, 2}, rng)},
                                        rng, eps, tol);
               }});
  r.push_back({"attentive_read", [](Rng& rng, double eps, double tol) {
                 const auto fn = [](const std::vector<Tensor>& in) {
                   return encoder::attentive_read(in[0], in[1], 3).aggregated;
                 };
                 return check_projected("attentive_read", fn, {random_tensor({4, 5}, rng), random_tensor({8, 5}, rng)},
                                        rng, eps, tol);
               }});
  r.push_back({"segment_max", [](Rng& rng, double eps, double tol) {
                 const std::vector<std::size_t> seg{0, 1, 0, 2, 1, 0};
                 return check_projected("segment_max", [seg](const auto& in) { return ops::segment_max(in[0], seg, 3); },
                                        {tie_free({6, 4}, rng)}, rng, eps, tol);
               }});
  r.push_back({"scatter_gather_image", [](Rng& rng, double eps, double tol) {
                 const std::vector<ops::GridCell> cells{{0, 0, 1}, {1, 2, 2}, {0, 3, 0}};
                 const auto fn = [cells](const std::vector<Tensor>& in) {
                   const Tensor image = ops::scatter_to_image(in[0], cells, 2, 4, 3);
                   return ops::add(ops::sum(ops::mul(image, image)), ops::sum(ops::gather_from_image(image, cells)));
                 };
                 return finite_difference_check("scatter_gather_image", fn, {random_tensor({3, 4}, rng)}, eps, tol);
               }});
  r.push_back({"conv2d", [](Rng& rng, double eps, double tol) {
                 const auto fn = [](const std::vector<Tensor>& in) { return ops::conv2d(in[0], in[1], in[2], 2, 1); };
                 return check_projected("conv2d", fn,
                                        {random_tensor({1, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng),
                                         random_tensor({3}, rng)},
                                        rng, eps, tol);
               }});
  r.push_back({"conv_transpose2d", [](Rng& rng, double eps, double tol) {
                 const auto fn = [](const std::vector<Tensor>& in) {
                   return ops::conv_transpose2d(in[0], in[1], in[2], 2);
                 };
                 return check_projected("conv_transpose2d", fn,
                                        {random_tensor({1, 2, 3, 3}, rng), random_tensor({2, 3, 2, 2}, rng),
                                         random_tensor({3}, rng)},
                                        rng, eps, tol);
               }});
  r.push_back({"channel_pool", [](Rng& rng, double eps, double tol) {
                 const auto fn = [](const std::vector<Tensor>& in) {
                   const Tensor parts[] = {ops::channel_max(in[0]), ops::channel_mean(in[0])};
                   return ops::concat(parts, 1);
                 };
                 return check_projected("channel_pool", fn, {tie_free({2, 3, 3, 3}, rng)}, rng, eps, tol);
               }});
  r.push_back({"mul_channel_broadcast", [](Rng& rng, double eps, double tol) {
                 const auto fn = [](const std::vector<Tensor>& in) { return ops::mul_channel_broadcast(in[0], in[1]); };
                 return check_projected("mul_channel_broadcast", fn,
                                        {random_tensor({1, 3, 3, 3}, rng), random_tensor({1, 1, 3, 3}, rng)}, rng, eps,
                                        tol);
               }});
  r.push_back({"batch_norm", [](Rng& rng, double eps, double tol) {
                 Tensor mean(Shape{3}), var(Shape{3}, std::vector<double>(3, 1.0));
                 const auto fn = [mean, var](const std::vector<Tensor>& in) mutable {
                   return ops::batch_norm(in[0], in[1], in[2], mean, var, true, 0.1, 1e-3);
                 };
                 return check_projected("batch_norm", fn,
                                        {random_tensor({2, 3, 2, 2}, rng), random_tensor({3}, rng),
                                         random_tensor({3}, rng)},
                                        rng, eps, tol);
               }});
  r.push_back({"smooth_l1", [](Rng& rng, double eps, double tol) {
                 Tensor x = random_tensor({3, 7}, rng, 1.5);
                 for (double& v : x.values()) {
                   if (std::abs(std::abs(v) - 1.0) < 0.05) v *= 1.2;  // keep off the |x| = 1 seam
                 }
                 return finite_difference_check("smooth_l1", [](const auto& in) { return ops::smooth_l1_sum(in[0]); },
                                                {x}, eps, tol);
               }});
  r.push_back({"focal_loss", [](Rng& rng, double eps, double tol) {
                 std::vector<int> targets;
                 for (int i = 0; i < 10; ++i) targets.push_back(rng.bernoulli(0.3) ? 1 : 0);
                 return finite_difference_check(
                     "focal_loss", [targets](const auto& in) { return ops::focal_loss(in[0], targets, 0.25, 2.0); },
                     {random_tensor({10}, rng, 1.0)}, eps, tol);
               }});
  r.push_back({"direction_loss", [](Rng& rng, double eps, double tol) {
                 const std::vector<int> targets{0, 1, 1, 0, 1};
                 return finite_difference_check(
                     "direction_loss", [targets](const auto& in) { return ops::softmax_cross_entropy(in[0], targets); },
                     {random_tensor({5, 2}, rng, 2.0)}, eps, tol);
               }});
  r.push_back({"memory_loss", [](Rng& rng, double eps, double tol) {
                 return finite_difference_check(
                     "memory_loss", [](const auto& in) { return memory::memory_loss(in[0], in[1]); },
                     {random_tensor({4, 5}, rng), random_tensor({4, 5}, rng)}, eps, tol);
               }});
  r.push_back({"memory_read", [](Rng& rng, double eps, double tol) {
                 const memory::MemoryBank bank = memory::init_memory(10, 4, rng);
                 const auto fn = [bank](const std::vector<Tensor>& in) {
                   return memory::memory_read(in[0], memory::MemoryBank{in[1]}, 3).aggregated;
                 };
                 return check_projected("memory_read", fn, {random_tensor({5, 4}, rng), bank.items}, rng, eps, tol);
               }});
  r.push_back({"tiny_pointnet", [](Rng& rng, double eps, double tol) {
                 ParameterStore store;
                 const auto net = encoder::TinyPointNet::create(store, "vox", 5, 4, rng);
                 const Tensor points = random_tensor({7, 5}, rng);
                 const std::vector<std::size_t> pillar{0, 0, 1, 2, 2, 2, 1};
                 const auto fn = [net, pillar](const std::vector<Tensor>& in) {
                   return encoder::tiny_pointnet_forward(net, in[0], pillar, 3, true);
                 };
                 return check_projected("tiny_pointnet", fn, {points, net.linear.weight, net.norm.gamma, net.norm.beta},
                                        rng, eps, tol);
               }});
  r.push_back({"fp_interpolate", [](Rng& rng, double eps, double tol) {
                 const auto sources = random_positions(5, rng, 1.0);
                 const auto queries = random_positions(4, rng, 1.0);
                 const auto fn = [sources, queries](const std::vector<Tensor>& in) {
                   return encoder::fp_interpolate(queries, sources, in[0]);
                 };
                 return check_projected("fp_interpolate", fn, {random_tensor({5, 3}, rng)}, rng, eps, tol);
               }});
  r.push_back({"point_stream", [](Rng& rng, double eps, double tol) {
                 ParameterStore store;
                 encoder::PointStreamConfig cfg{4, 3, 4, 4, 0.5, 0.9, 4, 2};
                 const auto stream = encoder::PointStream::create(store, "pts", cfg, rng);
                 // Positive offsets keep most of the tiny ReLU units alive; a
                 // nearly dead unit leaves gradients below roundoff.
                 jitter_offsets(store, rng, 0.2, 0.5);
                 std::vector<Point> cloud;
                 for (int i = 0; i < 8; ++i) {
                   cloud.push_back({rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)});
                 }
                 const auto fn = [stream, cloud](const std::vector<Tensor>&) {
                   return encoder::point_stream_forward(stream, cloud).features;
                 };
                 std::vector<Tensor> params;
                 for (const Parameter& p : store.all()) params.push_back(p.tensor);
                 return check_projected("point_stream", fn, params, rng, eps, tol);
               }});
  r.push_back({"scale_feature_map", [](Rng& rng, double eps, double tol) {
                 ParameterStore store;
                 const auto enc = backbone::ScaleEncoder::create(store, "scale", 3, rng);
                 pillars::GridSpec grid;
                 grid.x = {0.0, 0.64};
                 grid.y = {0.0, 0.48};
                 const std::vector<pillars::PillarCoord> coords{{0, 1}, {2, 3}};
                 const auto fn = [enc, grid, coords](const std::vector<Tensor>& in) {
                   return backbone::scale_feature_map(in[0], coords, grid, enc);
                 };
                 return check_projected("scale_feature_map", fn, {random_tensor({2, 5}, rng), enc.linear.weight}, rng,
                                        eps, tol);
               }});
  r.push_back({"amfm", [](Rng& rng, double eps, double tol) {
                 ParameterStore store;
                 const auto conv = nn::Conv2d::create(store, "att", 2, 1, 7, 1, 3, rng);
                 const auto fn = [conv](const std::vector<Tensor>& in) {
                   return backbone::amfm_refine(in[0], backbone::amfm_attention(in[1], conv));
                 };
                 return check_projected("amfm", fn,
                                        {random_tensor({1, 2, 4, 4}, rng), random_tensor({1, 3, 4, 4}, rng),
                                         conv.weight, conv.bias},
                                        rng, eps, tol);
               }});
  r.push_back({"backbone", [](Rng& rng, double eps, double tol) {
                 ParameterStore store;
                 const backbone::BackboneConfig cfg{1, 2, 2, false, false};
                 const auto net = backbone::Backbone::create(store, "bb", 2, cfg, rng);
                 jitter_offsets(store, rng);
                 std::vector<Tensor> inputs{random_tensor({1, 2, 8, 8}, rng)};
                 for (const Parameter& p : store.all()) {
                   if (p.trainable && p.name.find(".up") == std::string::npos) inputs.push_back(p.tensor);
                 }
                 const auto fn = [net](const std::vector<Tensor>& in) {
                   std::vector<Tensor> flat;
                   for (const Tensor& level : backbone::backbone_forward(net, in[0], true)) {
                     flat.push_back(ops::reshape(level, Shape{level.numel()}));
                   }
                   return ops::concat(flat, 0);
                 };
                 return check_projected("backbone", fn, inputs, rng, eps, tol);
               }});
  r.push_back({"scale_downsample", [](Rng& rng, double eps, double tol) {
                 ParameterStore store;
                 const backbone::BackboneConfig cfg{2, 2, 1, true, true};
                 const auto net = backbone::Backbone::create(store, "bb", 2, cfg, rng);
                 jitter_offsets(store, rng);
                 std::vector<Tensor> inputs{random_tensor({1, 2, 8, 8}, rng)};
                 for (const auto& conv : net.scale_down) {
                   inputs.push_back(conv.weight);
                   inputs.push_back(conv.bias);
                 }
                 const auto fn = [net](const std::vector<Tensor>& in) {
                   return backbone::downsample_scale_feature(net, in[0], 1);
                 };
                 return check_projected("scale_downsample", fn, inputs, rng, eps, tol);
               }});
  r.push_back({"fuse_multiscale", [](Rng& rng, double eps, double tol) {
                 ParameterStore store;
                 const backbone::BackboneConfig cfg{1, 2, 1, false, false};
                 const auto net = backbone::Backbone::create(store, "bb", 2, cfg, rng);
                 std::vector<Tensor> inputs{random_tensor({1, 1, 4, 4}, rng), random_tensor({1, 2, 2, 2}, rng)};
                 for (std::size_t l = 0; l < net.upsample.size(); ++l) {
                   inputs.push_back(net.upsample[l].weight);
                   inputs.push_back(net.upsample_norm[l].gamma);
                   inputs.push_back(net.upsample_norm[l].beta);
                 }
                 const auto fn = [net](const std::vector<Tensor>& in) {
                   return backbone::fuse_multiscale(net, {in[0], in[1]}, true);
                 };
                 return check_projected("fuse_multiscale", fn, inputs, rng, eps, tol);
               }});
  r.push_back({"backbone_amfm", [](Rng& rng, double eps, double tol) {
                 ParameterStore store;
                 const backbone::BackboneConfig cfg{1, 2, 1, true, true};
                 const auto net = backbone::Backbone::create(store, "bb", 2, cfg, rng);
                 jitter_offsets(store, rng);
                 std::vector<Tensor> inputs{random_tensor({1, 2, 8, 8}, rng), random_tensor({1, 1, 8, 8}, rng)};
                 for (const Parameter& p : store.all()) {
                   if (p.trainable) inputs.push_back(p.tensor);
                 }
                 const auto fn = [net](const std::vector<Tensor>& in) {
                   return backbone::backbone_amfm_forward(net, in[0], in[1], true);
                 };
                 return check_projected("backbone_amfm", fn, inputs, rng, eps, tol);
               }});
  r.push_back({"detection_losses", [](Rng& rng, double eps, double tol) {
                 ParameterStore store;
                 const auto det = head::DetectionHead::create(store, "head", 3, rng);
                 jitter_offsets(store, rng);
                 // Away from the rare-positive prior: at p ≈ 0.01 the focal
                 // gradients of easy negatives sit near roundoff.
                 Tensor cls_bias = det.cls.bias;
                 for (double& v : cls_bias.values()) v = rng.uniform(-1.0, 1.0);
                 head::HeadConfig cfg;
                 const auto anchors = head::generate_anchors(2, 2, 0.0, 0.0, 1.0, 1.0, cfg.anchor, 0.0);
                 const std::vector<Box3D> gts{{0.6, 0.9, 0.1, 1.7, 3.8, 1.4, 0.3}};
                 const auto targets = head::match_anchors(anchors, gts, cfg.pos_iou, cfg.neg_iou);
                 const auto fn = [det, anchors, gts, targets, cfg](const std::vector<Tensor>& in) {
                   const auto out = head::head_forward(det, in[0]);
                   auto terms = head::scene_losses(out, 0, anchors, targets, gts, cfg);
                   terms.mem = ops::sum(in[0]);
                   return head::total_loss(terms, targets.num_positive, cfg.weights);
                 };
                 return finite_difference_check("detection_losses", fn,
                                                {random_tensor({1, 3, 2, 2}, rng, 0.5), det.cls.weight, det.box.weight,
                                                 det.box.bias},
                                                eps, tol);
               }});
  return r;
}

}  // namespace

const std::vector<Case>& registry() {
  static const std::vector<Case> cases = build_registry();
  return cases;
}

Case broken_fixture() {
  return {"broken_fixture", [](Rng& rng, double eps, double tol) {
            // Forward x², backward claims x.
            const auto fn = [](const std::vector<Tensor>& in) {
              std::vector<double> out(in[0].numel());
              for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[0].at(i) * in[0].at(i);
              Tensor x = in[0];
              const Tensor sq = make_result(in[0].shape(), std::move(out), {x}, [](detail::Node& n) {
                auto g = n.inputs[0]->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.inputs[0]->value[i];
              });
              return ops::sum(sq);
            };
            return finite_difference_check("broken_fixture", fn, {away_from_zero({4}, rng)}, eps, tol);
          }};
}

std::vector<GradReport> run_suite(const SuiteOptions& options) {
  const Rng root(options.seed);
  std::vector<GradReport> reports;
  std::uint64_t stream = 0;
  for (const Case& c : registry()) {
    Rng rng = root.split(++stream);
    reports.push_back(c.run(rng, options.eps, options.tol));
  }
  if (options.include_broken_fixture) {
    Rng rng = root.split(++stream);
    reports.push_back(broken_fixture().run(rng, options.eps, options.tol));
  }
  return reports;
}

}  // namespace hvpr::gradcheck
