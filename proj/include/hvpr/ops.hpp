#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hvpr/tensor.hpp"

// Differentiable operations. Matrices are row-major N×C with one row per
// item (pillar, point, memory slot); images are B×C×H×W.
namespace hvpr::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
// Σ_i weights[i]·terms[i] over single-element tensors.
Tensor weighted_sum(std::span<const Tensor> terms, std::span<const double> weights);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// x: N×I, weight: I×O, bias: O (may be undefined) → N×O.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
// a: N×C, b: M×C → N×M with entry (n, m) = <a_n, b_m>.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Concatenation along `axis`; all other extents must agree.
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
// a: N×M; cols holds N·k column indices → N×k with out(n, j) = a(n, cols[n·k + j]).
Tensor take_along_rows(const Tensor& a, std::span<const std::size_t> cols, std::size_t k);
Tensor softmax_rows(const Tensor& a);
// features: M×C; probs: N×K; idx: N·K rows of features → N×C with
// out_n = Σ_k probs(n, k) · features[idx[n·K + k]].
Tensor aggregate(const Tensor& features, std::span<const std::size_t> idx, const Tensor& probs);
// Row-wise max over groups of rows. segment[i] < count names the group of
// row i; every group must be non-empty. Ties route the gradient to the
// lowest row.
Tensor segment_max(const Tensor& x, std::span<const std::size_t> segment, std::size_t count);

struct GridCell {
  std::size_t batch = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  auto operator<=>(const GridCell&) const = default;
};

// x: N×C scattered into a zero B×C×H×W image at `cells`. Duplicate cells
// are rejected.
Tensor scatter_to_image(const Tensor& x, std::span<const GridCell> cells, std::size_t batch,
                        std::size_t height, std::size_t width);
Tensor gather_from_image(const Tensor& image, std::span<const GridCell> cells);

// x: B×Ci×H×W, weight: Co×Ci×k×k, bias: Co (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad);
// x: B×Ci×H×W, weight: Ci×Co×k×k → B×Co×((H−1)·stride + k)×((W−1)·stride + k).
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride);
// Reductions across the channel axis of B×C×H×W → B×1×H×W.
Tensor channel_max(const Tensor& x);
Tensor channel_mean(const Tensor& x);
// features: B×C×H×W times attention: B×1×H×W broadcast over channels.
Tensor mul_channel_broadcast(const Tensor& features, const Tensor& attention);

// Normalizes axis 1 of an N×C matrix or B×C×H×W image. Training mode uses
// batch statistics and updates the running buffers in place.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum, double eps);

// Σ_n ‖x_n‖₂ over the rows of an N×C matrix; zero rows take subgradient 0.
Tensor row_norm_sum(const Tensor& x);
double smooth_l1(double x);
Tensor smooth_l1_sum(const Tensor& x);
// Σ −α_t (1 − p_t)^γ log p_t over a flat vector of logits.
Tensor focal_loss(const Tensor& logits, std::span<const int> targets, double alpha, double gamma);
// Σ_n −log softmax(logits_n)[target_n] over an N×K matrix.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets);
Tensor gather_flat(const Tensor& x, std::span<const std::size_t> idx);

}  // namespace hvpr::ops
