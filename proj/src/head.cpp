#include "hvpr/head.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "hvpr/error.hpp"

namespace hvpr::head {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr std::size_t kBoxChannels = kResidualDim + 2;  // residuals + direction logits

}  // namespace

std::vector<Box3D> generate_anchors(std::size_t rows, std::size_t cols, double x0, double y0, double cell_x,
                                    double cell_y, const AnchorSize& size, double z_center) {
  std::vector<Box3D> anchors;
  anchors.reserve(rows * cols * kAnchorsPerCell);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = x0 + (static_cast<double>(c) + 0.5) * cell_x;
      const double y = y0 + (static_cast<double>(r) + 0.5) * cell_y;
      for (double heading : {0.0, kPi / 2}) anchors.push_back({x, y, z_center, size.w, size.l, size.h, heading});
    }
  }
  return anchors;
}

std::vector<Box3D> generate_anchors(const pillars::GridSpec& grid, std::size_t stride, const AnchorSize& size,
                                    double z_center) {
  if (stride == 0 || grid.rows() % stride != 0 || grid.cols() % stride != 0) {
    throw ShapeError("generate_anchors: grid is not divisible by the head stride " + std::to_string(stride));
  }
  const double s = static_cast<double>(stride);
  return generate_anchors(grid.rows() / stride, grid.cols() / stride, grid.x.min, grid.y.min, grid.voxel_x * s,
                          grid.voxel_y * s, size, z_center);
}

double anchor_diagonal(const Box3D& anchor) { return std::sqrt(anchor.w * anchor.w + anchor.l * anchor.l); }

AssignedTargets match_anchors(const std::vector<Box3D>& anchors, const std::vector<Box3D>& gts, double pos_thr,
                              double neg_thr) {
  if (!(pos_thr > 0.0 && pos_thr < 1.0 && neg_thr > 0.0 && neg_thr < 1.0 && pos_thr >= neg_thr)) {
    throw ConfigError("match_anchors: thresholds must lie in (0, 1) with pos ≥ neg");
  }
  const std::size_t a_count = anchors.size();
  AssignedTargets t;
  t.labels.assign(a_count, AnchorLabel::negative);
  t.matched.assign(a_count, -1);
  t.best_iou.assign(a_count, 0.0);
  t.direction.assign(a_count, 0);
  if (gts.empty()) return t;

  std::vector<double> gt_best(gts.size(), -1.0);
  std::vector<std::size_t> gt_anchor(gts.size(), 0);
  for (std::size_t a = 0; a < a_count; ++a) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double iou = rotated_bev_iou(anchors[a], gts[g]);
      if (iou > t.best_iou[a] || (t.matched[a] < 0 && iou > 0.0)) {
        t.best_iou[a] = iou;
        t.matched[a] = static_cast<long>(g);
      }
      if (iou > gt_best[g]) {
        gt_best[g] = iou;
        gt_anchor[g] = a;
      }
    }
  }
  for (std::size_t a = 0; a < a_count; ++a) {
    if (t.best_iou[a] > pos_thr) {
      t.labels[a] = AnchorLabel::positive;
    } else if (t.best_iou[a] < neg_thr) {
      t.labels[a] = AnchorLabel::negative;
    } else {
      t.labels[a] = AnchorLabel::ignored;
    }
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gt_best[g] <= 0.0) continue;  // no anchor touches this box
    const std::size_t a = gt_anchor[g];
    t.labels[a] = AnchorLabel::positive;
    t.matched[a] = static_cast<long>(g);
  }
  for (std::size_t a = 0; a < a_count; ++a) {
    if (t.labels[a] == AnchorLabel::positive) {
      ++t.num_positive;
      t.direction[a] = gts[static_cast<std::size_t>(t.matched[a])].heading >= 0.0 ? 1 : 0;
    } else {
      t.matched[a] = -1;
    }
  }
  return t;
}

double wrap_to_anchor(double theta_gt, double theta_anchor) {
  double d = theta_gt - theta_anchor;
  d -= kPi * std::floor((d + kPi / 2) / kPi);
  return theta_anchor + d;
}

Residual encode_residuals(const Box3D& gt, const Box3D& anchor) {
  if (!(gt.w > 0.0 && gt.l > 0.0 && gt.h > 0.0) || !(anchor.w > 0.0 && anchor.l > 0.0 && anchor.h > 0.0)) {
    throw DataError("encode_residuals: box sizes must be positive");
  }
  const double d = anchor_diagonal(anchor);
  return {(gt.x - anchor.x) / d,          (gt.y - anchor.y) / d,          (gt.z - anchor.z) / anchor.h,
          std::log(gt.w / anchor.w),      std::log(gt.l / anchor.l),      std::log(gt.h / anchor.h),
          std::sin(gt.heading - anchor.heading)};
}

Residual encode_wrapped(const Box3D& gt, const Box3D& anchor) {
  Box3D wrapped = gt;
  wrapped.heading = wrap_to_anchor(gt.heading, anchor.heading);
  return encode_residuals(wrapped, anchor);
}

Box3D decode_residuals(const Residual& r, const Box3D& anchor, bool flip) {
  const double d = anchor_diagonal(anchor);
  Box3D b;
  b.x = anchor.x + r[0] * d;
  b.y = anchor.y + r[1] * d;
  b.z = anchor.z + r[2] * anchor.h;
  b.w = anchor.w * std::exp(r[3]);
  b.l = anchor.l * std::exp(r[4]);
  b.h = anchor.h * std::exp(r[5]);
  double heading = anchor.heading + std::asin(std::clamp(r[6], -1.0, 1.0));
  if (flip) heading += kPi;
  b.heading = normalize_angle(heading);
  return b;
}

bool hemisphere_flip(double decoded_heading, bool positive_hemisphere) {
  return (normalize_angle(decoded_heading) >= 0.0) != positive_hemisphere;
}

Tensor total_loss(const LossTerms& terms, std::size_t num_positive, const LossWeights& w) {
  const Tensor parts[] = {terms.reg, terms.dir, terms.cls, terms.mem};
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(num_positive, 1));
  const double weights[] = {w.reg * norm, w.dir * norm, w.cls * norm, w.mem * norm};
  return ops::weighted_sum(parts, weights);
}

std::vector<std::size_t> nms(const std::vector<Box3D>& boxes, const std::vector<double>& scores, double iou_thr) {
  if (boxes.size() != scores.size()) throw ShapeError("nms: box and score counts differ");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> kept;
  std::vector<bool> suppressed(boxes.size(), false);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t a = order[i];
    if (suppressed[a]) continue;
    kept.push_back(a);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const std::size_t b = order[j];
      if (!suppressed[b] && rotated_bev_iou(boxes[a], boxes[b]) > iou_thr) suppressed[b] = true;
    }
  }
  return kept;
}

DetectionHead DetectionHead::create(ParameterStore& store, const std::string& name, std::size_t in_channels,
                                    Rng& rng) {
  DetectionHead h;
  h.cls = nn::Conv2d::create(store, name + ".cls", in_channels, kAnchorsPerCell, 1, 1, 0, rng, false);
  // Prior probability 0.01 for foreground keeps the early focal loss from
  // being swamped by easy negatives.
  h.cls.bias = store.constant(name + ".cls.bias", Shape{kAnchorsPerCell}, -std::log(99.0));
  h.box = nn::Conv2d::create(store, name + ".box", in_channels, kAnchorsPerCell * kBoxChannels, 1, 1, 0, rng);
  return h;
}

HeadOutputs head_forward(const DetectionHead& head, const Tensor& features) {
  if (features.rank() != 4) throw ShapeError("head_forward: expected a B × C × H × W feature map");
  const std::size_t batch = features.dim(0), height = features.dim(2), width = features.dim(3);
  const std::size_t per_scene = height * width * kAnchorsPerCell;
  const Tensor cls_map = head.cls(features);
  const Tensor box_map = head.box(features);

  std::vector<std::size_t> cls_idx, res_idx, dir_idx;
  cls_idx.reserve(batch * per_scene);
  res_idx.reserve(batch * per_scene * kResidualDim);
  dir_idx.reserve(batch * per_scene * 2);
  const std::size_t plane = height * width;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        const std::size_t cell = r * width + c;
        for (std::size_t a = 0; a < kAnchorsPerCell; ++a) {
          cls_idx.push_back((b * kAnchorsPerCell + a) * plane + cell);
          const std::size_t base = b * kAnchorsPerCell * kBoxChannels + a * kBoxChannels;
          for (std::size_t j = 0; j < kResidualDim; ++j) res_idx.push_back((base + j) * plane + cell);
          for (std::size_t j = 0; j < 2; ++j) dir_idx.push_back((base + kResidualDim + j) * plane + cell);
        }
      }
    }
  }
  HeadOutputs out;
  out.anchors_per_scene = per_scene;
  out.cls = ops::gather_flat(cls_map, cls_idx);
  out.residuals = ops::reshape(ops::gather_flat(box_map, res_idx), Shape{batch * per_scene, kResidualDim});
  out.direction = ops::reshape(ops::gather_flat(box_map, dir_idx), Shape{batch * per_scene, 2});
  return out;
}

LossTerms scene_losses(const HeadOutputs& out, std::size_t offset, const std::vector<Box3D>& anchors,
                       const AssignedTargets& targets, const std::vector<Box3D>& gts, const HeadConfig& config) {
  if (anchors.size() != out.anchors_per_scene || targets.labels.size() != anchors.size()) {
    throw ShapeError("scene_losses: anchor count does not match the head output");
  }
  std::vector<std::size_t> cls_rows, pos_rows;
  std::vector<int> cls_targets, dir_targets;
  std::vector<double> reg_targets;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (targets.labels[a] == AnchorLabel::ignored) continue;
    cls_rows.push_back(offset + a);
    cls_targets.push_back(targets.labels[a] == AnchorLabel::positive ? 1 : 0);
    if (targets.labels[a] != AnchorLabel::positive) continue;
    pos_rows.push_back(offset + a);
    dir_targets.push_back(targets.direction[a]);
    const Residual r = encode_wrapped(gts[static_cast<std::size_t>(targets.matched[a])], anchors[a]);
    reg_targets.insert(reg_targets.end(), r.begin(), r.end());
  }
  LossTerms terms;
  terms.cls = ops::focal_loss(ops::gather_flat(out.cls, cls_rows), cls_targets, config.focal_alpha,
                              config.focal_gamma);
  if (pos_rows.empty()) {
    terms.reg = Tensor::scalar(0.0);
    terms.dir = Tensor::scalar(0.0);
  } else {
    const Tensor target(Shape{pos_rows.size(), kResidualDim}, std::move(reg_targets));
    terms.reg = ops::smooth_l1_sum(ops::sub(ops::gather_rows(out.residuals, pos_rows), target));
    terms.dir = ops::softmax_cross_entropy(ops::gather_rows(out.direction, pos_rows), dir_targets);
  }
  terms.mem = Tensor::scalar(0.0);
  return terms;
}

std::vector<ScoredBox> predict(const HeadOutputs& out, std::size_t index, const std::vector<Box3D>& anchors,
                               const HeadConfig& config) {
  if (anchors.size() != out.anchors_per_scene) throw ShapeError("predict: anchor count does not match the head");
  const std::size_t offset = index * out.anchors_per_scene;
  if (offset + anchors.size() > out.cls.numel()) throw ShapeError("predict: scene index out of range");
  const auto cls = out.cls.values();
  const auto res = out.residuals.values();
  const auto dir = out.direction.values();
  std::vector<Box3D> boxes;
  std::vector<double> scores;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const std::size_t i = offset + a;
    const double score = 1.0 / (1.0 + std::exp(-cls[i]));
    if (!(score > config.score_threshold)) continue;
    Residual r;
    std::copy_n(res.begin() + static_cast<std::ptrdiff_t>(i * kResidualDim), kResidualDim, r.begin());
    const Box3D unflipped = decode_residuals(r, anchors[a], false);
    const bool positive = dir[2 * i + 1] > dir[2 * i];
    boxes.push_back(decode_residuals(r, anchors[a], hemisphere_flip(unflipped.heading, positive)));
    scores.push_back(score);
  }
  std::vector<ScoredBox> result;
  for (std::size_t k : nms(boxes, scores, config.nms_iou)) result.push_back({boxes[k], scores[k]});
  return result;
}

}  // namespace hvpr::head
