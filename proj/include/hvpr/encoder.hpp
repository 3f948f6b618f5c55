#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hvpr/nn.hpp"
#include "hvpr/pillars.hpp"
#include "hvpr/scene.hpp"

// Two-stream feature encoder: a tiny PointNet over pillars, a PointNet++
// style point stream, and the correlation/top-K fusion joining them.
namespace hvpr::encoder {

// Calls into the point stream (point_stream_forward and fuse_point_features)
// since the last reset. Inference must leave this at zero.
std::size_t point_stream_invocations();
void reset_point_stream_invocations();

// Shared linear → batch norm → ReLU per point, then max over each pillar.
struct TinyPointNet {
  nn::Linear linear;
  nn::BatchNorm norm;

  static TinyPointNet create(ParameterStore& store, const std::string& name, std::size_t in_dim,
                             std::size_t channels, Rng& rng);
};

// points: P × D real points, pillar[i] the owner of row i → N × C.
Tensor tiny_pointnet_forward(const TinyPointNet& net, const Tensor& points, std::span<const std::size_t> pillar,
                             std::size_t num_pillars, bool training);
// Padded form: features N × N_vox × D with counts[n] real rows per pillar.
Tensor tiny_pointnet_forward(const TinyPointNet& net, const Tensor& padded, std::span<const std::size_t> counts,
                             bool training);

// Greedy farthest point sampling from `start`; ties go to the lowest index.
std::vector<std::size_t> farthest_point_sampling(std::span<const Vec3> positions, std::size_t count,
                                                 std::size_t start);

// Per center, up to max_samples point indices within `radius`, in index
// order. A center with no neighbor gets its nearest point.
std::vector<std::vector<std::size_t>> ball_query(std::span<const Vec3> centers, std::span<const Vec3> positions,
                                                 double radius, std::size_t max_samples);

// Inverse-distance weights over the (up to) 3 nearest sources of each query:
// w_i ∝ 1 / (d_i + 1e-8).
struct Interpolation {
  std::vector<std::size_t> indices;  // queries × k
  Tensor weights;                    // queries × k
};
Interpolation three_nn_weights(std::span<const Vec3> queries, std::span<const Vec3> sources);
Tensor fp_interpolate(std::span<const Vec3> queries, std::span<const Vec3> sources, const Tensor& source_features);

struct PointStreamConfig {
  std::size_t channels = 64;
  std::size_t sa1_channels = 32;
  std::size_t sa2_channels = 64;
  std::size_t fp_channels = 64;
  double radius1 = 0.4;
  double radius2 = 0.8;
  std::size_t max_samples = 16;
  std::size_t ratio = 4;  // M → M/ratio → M/ratio²
};

struct PointStream {
  PointStreamConfig config;
  nn::Linear sa1, sa2, fp2, fp1;

  static PointStream create(ParameterStore& store, const std::string& name, const PointStreamConfig& config,
                            Rng& rng);
};

struct PointFeatureSet {
  Tensor features;  // M × C
  std::vector<Vec3> positions;
};

// Relative offsets p_j − p_center for every grouped point, center-major.
std::vector<Vec3> grouped_offsets(std::span<const Vec3> centers, std::span<const Vec3> positions,
                                  const std::vector<std::vector<std::size_t>>& groups);

// Two set-abstraction layers followed by two feature-propagation layers,
// returning one C-dim feature per input point. The cloud is processed in
// lexicographic point order so the result is permutation-equivariant.
// Throws DataError when the cloud has fewer than ratio² points.
PointFeatureSet point_stream_forward(const PointStream& stream, std::span<const Point> points);

struct TopKSelection {
  std::size_t k = 0;
  std::vector<std::size_t> indices;  // rows × k, descending score
  Tensor probs;                      // rows × k
};

// (n, m) = <f_vox(n), f_pts(m)>.
Tensor correlation(const Tensor& queries, const Tensor& items);
// Per row, the K largest scores (ties to the lowest index) and a softmax over
// exactly those scores. Gradients flow through the selected scores only.
TopKSelection topk_softmax(const Tensor& scores, std::size_t k);
// g_n = Σ_k probs(n, k) · items[indices(n, k)].
Tensor aggregate(const Tensor& items, const TopKSelection& selection);

struct AttentiveRead {
  Tensor aggregated;  // rows × C
  TopKSelection selection;
};
// correlation → topk_softmax → aggregate. Shared by point fusion and the
// memory read.
AttentiveRead attentive_read(const Tensor& queries, const Tensor& items, std::size_t k);

// Aggregated point features g_pts for the pillars of one scene.
AttentiveRead fuse_point_features(const Tensor& voxel_features, const PointFeatureSet& points, std::size_t k);

// Per-pillar [f_vox ; g] scattered into a B × 2C × rows × cols image.
Tensor build_hybrid_image(const Tensor& voxel_features, const Tensor& aggregated,
                          std::span<const ops::GridCell> cells, std::size_t batch, const pillars::GridSpec& grid);
// Single-scene form.
Tensor build_voxel_point_image(const Tensor& voxel_features, const Tensor& aggregated_points,
                               const std::vector<pillars::PillarCoord>& coords, const pillars::GridSpec& grid);

}  // namespace hvpr::encoder
