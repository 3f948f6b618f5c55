#include "hvpr/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hvpr/error.hpp"

namespace hvpr::encoder {

namespace {

std::size_t g_point_stream_calls = 0;

double dist2(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

std::vector<Vec3> positions_of(std::span<const Point> points) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const Point& p : points) out.push_back({p.x, p.y, p.z});
  return out;
}

// Grouped rows [offset (3) ; extra] as a constant matrix plus segment ids.
struct Groups {
  std::vector<std::size_t> members;
  std::vector<std::size_t> segment;
  Tensor offsets;  // rows × 3
};

Groups build_groups(std::span<const Vec3> centers, std::span<const Vec3> positions, double radius,
                    std::size_t max_samples) {
  const auto groups = ball_query(centers, positions, radius, max_samples);
  Groups g;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    for (std::size_t j : groups[c]) {
      g.members.push_back(j);
      g.segment.push_back(c);
    }
  }
  const auto offsets = grouped_offsets(centers, positions, groups);
  g.offsets = Tensor(Shape{offsets.size(), 3});
  auto v = g.offsets.values();
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    v[3 * i] = offsets[i].x;
    v[3 * i + 1] = offsets[i].y;
    v[3 * i + 2] = offsets[i].z;
  }
  return g;
}

}  // namespace

std::size_t point_stream_invocations() { return g_point_stream_calls; }
void reset_point_stream_invocations() { g_point_stream_calls = 0; }

TinyPointNet TinyPointNet::create(ParameterStore& store, const std::string& name, std::size_t in_dim,
                                  std::size_t channels, Rng& rng) {
  return {nn::Linear::create(store, name + ".linear", in_dim, channels, rng, false),
          nn::BatchNorm::create(store, name + ".norm", channels)};
}

Tensor tiny_pointnet_forward(const TinyPointNet& net, const Tensor& points, std::span<const std::size_t> pillar,
                             std::size_t num_pillars, bool training) {
  if (num_pillars == 0) return Tensor(Shape{0, net.linear.weight.dim(1)});
  const Tensor embedded = ops::relu(net.norm(net.linear(points), training));
  return ops::segment_max(embedded, pillar, num_pillars);
}

Tensor tiny_pointnet_forward(const TinyPointNet& net, const Tensor& padded, std::span<const std::size_t> counts,
                             bool training) {
  if (padded.rank() != 3 || padded.dim(0) != counts.size()) {
    throw ShapeError("tiny_pointnet_forward: expected N × N_vox × D features matching counts");
  }
  const std::size_t slots = padded.dim(1), width = padded.dim(2);
  std::vector<std::size_t> rows, pillar;
  for (std::size_t n = 0; n < counts.size(); ++n) {
    if (counts[n] == 0 || counts[n] > slots) throw ShapeError("tiny_pointnet_forward: pillar count out of range");
    for (std::size_t s = 0; s < counts[n]; ++s) {
      rows.push_back(n * slots + s);
      pillar.push_back(n);
    }
  }
  const Tensor flat = ops::reshape(padded, Shape{padded.dim(0) * slots, width});
  return tiny_pointnet_forward(net, ops::gather_rows(flat, rows), pillar, counts.size(), training);
}

std::vector<std::size_t> farthest_point_sampling(std::span<const Vec3> positions, std::size_t count,
                                                 std::size_t start) {
  if (count > positions.size()) {
    throw ShapeError("farthest_point_sampling: requested " + std::to_string(count) + " of " +
                     std::to_string(positions.size()) + " points");
  }
  if (count == 0) return {};
  if (start >= positions.size()) throw ShapeError("farthest_point_sampling: start index out of range");
  std::vector<std::size_t> selected{start};
  std::vector<double> min_d(positions.size(), std::numeric_limits<double>::infinity());
  std::size_t last = start;
  while (selected.size() < count) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < positions.size(); ++i) {
      min_d[i] = std::min(min_d[i], dist2(positions[i], positions[last]));
      if (min_d[i] > best_d) {
        best_d = min_d[i];
        best = i;
      }
    }
    selected.push_back(best);
    last = best;
  }
  return selected;
}

std::vector<std::vector<std::size_t>> ball_query(std::span<const Vec3> centers, std::span<const Vec3> positions,
                                                 double radius, std::size_t max_samples) {
  if (!(radius > 0.0)) throw ConfigError("ball_query: radius must be positive");
  const double r2 = radius * radius;
  std::vector<std::vector<std::size_t>> groups(centers.size());
  for (std::size_t c = 0; c < centers.size(); ++c) {
    auto& g = groups[c];
    std::size_t nearest = 0;
    double nearest_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const double d = dist2(centers[c], positions[i]);
      if (d < nearest_d) {
        nearest_d = d;
        nearest = i;
      }
      if (d <= r2 && g.size() < max_samples) g.push_back(i);
    }
    if (g.empty() && !positions.empty()) g.push_back(nearest);
  }
  return groups;
}

Interpolation three_nn_weights(std::span<const Vec3> queries, std::span<const Vec3> sources) {
  if (sources.empty()) throw ShapeError("fp_interpolate: needs at least one source point");
  const std::size_t k = std::min<std::size_t>(3, sources.size());
  Interpolation out{std::vector<std::size_t>(queries.size() * k), Tensor(Shape{queries.size(), k})};
  auto w = out.weights.values();
  std::vector<std::size_t> order(sources.size());
  std::vector<double> d2(sources.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (std::size_t i = 0; i < sources.size(); ++i) d2[i] = dist2(queries[q], sources[i]);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return d2[a] < d2[b] || (d2[a] == d2[b] && a < b); });
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out.indices[q * k + j] = order[j];
      w[q * k + j] = 1.0 / (std::sqrt(d2[order[j]]) + 1e-8);
      total += w[q * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) w[q * k + j] /= total;
  }
  return out;
}

Tensor fp_interpolate(std::span<const Vec3> queries, std::span<const Vec3> sources, const Tensor& source_features) {
  const Interpolation interp = three_nn_weights(queries, sources);
  return ops::aggregate(source_features, interp.indices, interp.weights);
}

PointStream PointStream::create(ParameterStore& store, const std::string& name, const PointStreamConfig& config,
                                Rng& rng) {
  PointStream s;
  s.config = config;
  s.sa1 = nn::Linear::create(store, name + ".sa1", 3 + 1, config.sa1_channels, rng);
  s.sa2 = nn::Linear::create(store, name + ".sa2", 3 + config.sa1_channels, config.sa2_channels, rng);
  s.fp2 = nn::Linear::create(store, name + ".fp2", config.sa2_channels + config.sa1_channels, config.fp_channels, rng);
  s.fp1 = nn::Linear::create(store, name + ".fp1", config.fp_channels + 4, config.channels, rng);
  return s;
}

std::vector<Vec3> grouped_offsets(std::span<const Vec3> centers, std::span<const Vec3> positions,
                                  const std::vector<std::vector<std::size_t>>& groups) {
  std::vector<Vec3> out;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    for (std::size_t j : groups[c]) {
      out.push_back({positions[j].x - centers[c].x, positions[j].y - centers[c].y, positions[j].z - centers[c].z});
    }
  }
  return out;
}

PointFeatureSet point_stream_forward(const PointStream& stream, std::span<const Point> input) {
  ++g_point_stream_calls;
  const auto& cfg = stream.config;
  const std::size_t m = input.size();
  if (m < cfg.ratio * cfg.ratio || m == 0) {
    throw DataError("point stream: cloud of " + std::to_string(m) + " points is smaller than the " +
                    std::to_string(cfg.ratio * cfg.ratio) + " needed by the set-abstraction layers");
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Point& p = input[a];
    const Point& q = input[b];
    if (p.x != q.x) return p.x < q.x;
    if (p.y != q.y) return p.y < q.y;
    if (p.z != q.z) return p.z < q.z;
    if (p.reflectance != q.reflectance) return p.reflectance < q.reflectance;
    return a < b;
  });
  std::vector<Point> points(m);
  for (std::size_t i = 0; i < m; ++i) points[i] = input[order[i]];
  const auto pos = positions_of(points);

  Tensor raw(Shape{m, 4});
  Tensor reflect(Shape{m, 1});
  for (std::size_t i = 0; i < m; ++i) {
    raw.values()[4 * i] = points[i].x;
    raw.values()[4 * i + 1] = points[i].y;
    raw.values()[4 * i + 2] = points[i].z;
    raw.values()[4 * i + 3] = points[i].reflectance;
    reflect.values()[i] = points[i].reflectance;
  }

  // Set abstraction 1: M → M/ratio.
  const std::size_t n1 = (m + cfg.ratio - 1) / cfg.ratio;
  const auto idx1 = farthest_point_sampling(pos, n1, 0);
  std::vector<Vec3> pos1;
  for (std::size_t i : idx1) pos1.push_back(pos[i]);
  const Groups g1 = build_groups(pos1, pos, cfg.radius1, cfg.max_samples);
  const Tensor in1[] = {g1.offsets, ops::gather_rows(reflect, g1.members)};
  const Tensor h1 = ops::segment_max(ops::relu(stream.sa1(ops::concat(in1, 1))), g1.segment, n1);

  // Set abstraction 2: M/ratio → M/ratio².
  const std::size_t n2 = (n1 + cfg.ratio - 1) / cfg.ratio;
  const auto idx2 = farthest_point_sampling(pos1, n2, 0);
  std::vector<Vec3> pos2;
  for (std::size_t i : idx2) pos2.push_back(pos1[i]);
  const Groups g2 = build_groups(pos2, pos1, cfg.radius2, cfg.max_samples);
  const Tensor in2[] = {g2.offsets, ops::gather_rows(h1, g2.members)};
  const Tensor h2 = ops::segment_max(ops::relu(stream.sa2(ops::concat(in2, 1))), g2.segment, n2);

  // Feature propagation back to the SA1 centers, then to every point.
  const Tensor up2[] = {fp_interpolate(pos1, pos2, h2), h1};
  const Tensor f1 = ops::relu(stream.fp2(ops::concat(up2, 1)));
  const Tensor up1[] = {fp_interpolate(pos, pos1, f1), raw};
  const Tensor sorted_features = stream.fp1(ops::concat(up1, 1));

  std::vector<std::size_t> inverse(m);
  for (std::size_t i = 0; i < m; ++i) inverse[order[i]] = i;
  return {ops::gather_rows(sorted_features, inverse), positions_of(input)};
}

Tensor correlation(const Tensor& queries, const Tensor& items) {
  if (queries.rank() != 2 || items.rank() != 2 || queries.dim(1) != items.dim(1)) {
    throw ShapeError("correlation: channel mismatch between " + shape_str(queries.shape()) + " and " +
                     shape_str(items.shape()));
  }
  return ops::matmul_nt(queries, items);
}

TopKSelection topk_softmax(const Tensor& scores, std::size_t k) {
  if (scores.rank() != 2) throw ShapeError("topk_softmax: expected a score matrix");
  const std::size_t rows = scores.dim(0), width = scores.dim(1);
  if (k == 0 || k > width) {
    throw ShapeError("topk_softmax: K = " + std::to_string(k) + " exceeds row length " + std::to_string(width));
  }
  TopKSelection sel;
  sel.k = k;
  sel.indices.resize(rows * k);
  std::vector<std::size_t> order(width);
  const auto v = scores.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &v[r * width];
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [row](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    std::copy_n(order.begin(), k, sel.indices.begin() + static_cast<std::ptrdiff_t>(r * k));
  }
  sel.probs = ops::softmax_rows(ops::take_along_rows(scores, sel.indices, k));
  return sel;
}

Tensor aggregate(const Tensor& items, const TopKSelection& selection) {
  return ops::aggregate(items, selection.indices, selection.probs);
}

AttentiveRead attentive_read(const Tensor& queries, const Tensor& items, std::size_t k) {
  AttentiveRead out;
  out.selection = topk_softmax(correlation(queries, items), k);
  out.aggregated = aggregate(items, out.selection);
  return out;
}

AttentiveRead fuse_point_features(const Tensor& voxel_features, const PointFeatureSet& points, std::size_t k) {
  ++g_point_stream_calls;
  return attentive_read(voxel_features, points.features, std::min(k, points.features.dim(0)));
}

Tensor build_hybrid_image(const Tensor& voxel_features, const Tensor& aggregated,
                          std::span<const ops::GridCell> cells, std::size_t batch, const pillars::GridSpec& grid) {
  if (voxel_features.dim(0) != aggregated.dim(0)) {
    throw ShapeError("build_hybrid_image: voxel and aggregated rows differ");
  }
  const Tensor parts[] = {voxel_features, aggregated};
  return ops::scatter_to_image(ops::concat(parts, 1), cells, batch, grid.rows(), grid.cols());
}

Tensor build_voxel_point_image(const Tensor& voxel_features, const Tensor& aggregated_points,
                               const std::vector<pillars::PillarCoord>& coords, const pillars::GridSpec& grid) {
  const auto cells = pillars::grid_cells(coords, 0);
  return build_hybrid_image(voxel_features, aggregated_points, cells, 1, grid);
}

}  // namespace hvpr::encoder
