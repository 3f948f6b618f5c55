#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "hvpr/geometry.hpp"
#include "hvpr/nn.hpp"
#include "hvpr/pillars.hpp"

// Anchors, target assignment, the residual box codec, the loss stack and
// decoded predictions with rotated NMS.
namespace hvpr::head {

inline constexpr std::size_t kResidualDim = 7;
inline constexpr std::size_t kAnchorsPerCell = 2;  // headings 0 and π/2

struct AnchorSize {
  double w = 1.6, l = 3.9, h = 1.5;
};

// Anchors of a head grid with `rows` × `cols` cells of size cell_x × cell_y
// whose lower corner is (x0, y0). Index = (row·cols + col)·2 + heading.
std::vector<Box3D> generate_anchors(std::size_t rows, std::size_t cols, double x0, double y0, double cell_x,
                                    double cell_y, const AnchorSize& size, double z_center);
// Head grid at `stride` pillars per cell over a pillar grid.
std::vector<Box3D> generate_anchors(const pillars::GridSpec& grid, std::size_t stride, const AnchorSize& size,
                                    double z_center);
double anchor_diagonal(const Box3D& anchor);

enum class AnchorLabel : int { negative = 0, positive = 1, ignored = -1 };

struct AssignedTargets {
  std::vector<AnchorLabel> labels;
  std::vector<long> matched;      // GT index for positives, −1 otherwise
  std::vector<double> best_iou;   // best BEV IoU per anchor
  std::vector<int> direction;     // 1 iff θ_gt ≥ 0, for positives
  std::size_t num_positive = 0;
};

// IoU > pos_thr → positive, IoU < neg_thr → negative, otherwise ignored;
// each GT's best anchor is forced positive.
AssignedTargets match_anchors(const std::vector<Box3D>& anchors, const std::vector<Box3D>& gts, double pos_thr = 0.6,
                              double neg_thr = 0.45);

using Residual = std::array<double, kResidualDim>;

// θ_gt shifted by a multiple of π into [θ_a − π/2, θ_a + π/2).
double wrap_to_anchor(double theta_gt, double theta_anchor);
// Eq-style residuals; the heading term is sin(θ_gt − θ_a). Throws DataError
// on non-positive sizes.
Residual encode_residuals(const Box3D& gt, const Box3D& anchor);
// Residuals against the heading-wrapped target, always decodable.
Residual encode_wrapped(const Box3D& gt, const Box3D& anchor);
// Inverse of encode_residuals with θ = θ_a + asin(Δθ); `flip` adds π.
Box3D decode_residuals(const Residual& residual, const Box3D& anchor, bool flip);
// The flip that moves a decoded heading into the hemisphere named by
// `positive_hemisphere` (θ ≥ 0).
bool hemisphere_flip(double decoded_heading, bool positive_hemisphere);

struct LossWeights {
  double reg = 2.0;
  double dir = 0.2;
  double cls = 1.0;
  double mem = 1.0;
};

struct LossTerms {
  Tensor reg, dir, cls, mem;  // single-element sums
};

// (λ_reg L_reg + λ_dir L_dir + λ_cls L_cls + λ_mem L_mem) / max(N_pos, 1).
Tensor total_loss(const LossTerms& terms, std::size_t num_positive, const LossWeights& weights);

// Greedy rotated-BEV suppression. Score ties go to the lower index; kept
// indices come back in score order.
std::vector<std::size_t> nms(const std::vector<Box3D>& boxes, const std::vector<double>& scores,
                             double iou_thr = 0.1);

struct HeadConfig {
  AnchorSize anchor;
  double anchor_z = -0.95;
  double pos_iou = 0.6;
  double neg_iou = 0.45;
  double nms_iou = 0.1;
  double score_threshold = 0.3;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  LossWeights weights;
};

// Two 1×1 convolution branches: class logits, and residual + direction
// logits for every anchor of a cell.
struct DetectionHead {
  nn::Conv2d cls;
  nn::Conv2d box;

  static DetectionHead create(ParameterStore& store, const std::string& name, std::size_t in_channels, Rng& rng);
};

struct HeadOutputs {
  Tensor cls;        // (B·A)
  Tensor residuals;  // (B·A) × 7
  Tensor direction;  // (B·A) × 2
  std::size_t anchors_per_scene = 0;
};

HeadOutputs head_forward(const DetectionHead& head, const Tensor& features);

// Loss terms of one scene whose anchors start at `offset` in `out`.
LossTerms scene_losses(const HeadOutputs& out, std::size_t offset, const std::vector<Box3D>& anchors,
                       const AssignedTargets& targets, const std::vector<Box3D>& gts, const HeadConfig& config);

struct ScoredBox {
  Box3D box;
  double score = 0.0;
};

// Decode scene `index` of a batch: scores σ(logit) > threshold, then NMS.
std::vector<ScoredBox> predict(const HeadOutputs& out, std::size_t index, const std::vector<Box3D>& anchors,
                               const HeadConfig& config);

}  // namespace hvpr::head
