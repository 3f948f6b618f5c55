#include "hvpr/memory.hpp"

#include <cmath>

#include "hvpr/error.hpp"

namespace hvpr::memory {

namespace {
std::size_t g_reads = 0;
}

MemoryBank init_memory(std::size_t items, std::size_t channels, Rng& rng) {
  if (items == 0 || channels == 0) throw ConfigError("memory bank needs T > 0 and C > 0");
  Tensor bank(Shape{items, channels});
  auto v = bank.values();
  for (std::size_t t = 0; t < items; ++t) {
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        v[t * channels + c] = rng.normal();
        norm2 += v[t * channels + c] * v[t * channels + c];
      }
    } while (norm2 == 0.0);
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t c = 0; c < channels; ++c) v[t * channels + c] *= inv;
  }
  return {bank};
}

MemoryBank create_memory(ParameterStore& store, std::size_t items, std::size_t channels, Rng& rng) {
  MemoryBank bank = init_memory(items, channels, rng);
  bank.items = store.adopt("memory.items", bank.items);
  return bank;
}

std::size_t memory_read_invocations() { return g_reads; }
void reset_memory_read_invocations() { g_reads = 0; }

MemoryReadout memory_read(const Tensor& voxel_features, const MemoryBank& bank, std::size_t k) {
  ++g_reads;
  if (k > bank.size()) {
    throw ShapeError("memory_read: K = " + std::to_string(k) + " exceeds bank size " + std::to_string(bank.size()));
  }
  return encoder::attentive_read(voxel_features, bank.items, k);
}

Tensor memory_loss(const Tensor& aggregated_points, const Tensor& aggregated_memory) {
  if (aggregated_points.shape() != aggregated_memory.shape()) {
    throw ShapeError("memory_loss: " + shape_str(aggregated_points.shape()) + " vs " +
                     shape_str(aggregated_memory.shape()));
  }
  return ops::row_norm_sum(ops::sub(aggregated_points, aggregated_memory));
}

double mean_alignment_distance(const Tensor& aggregated_points, const Tensor& aggregated_memory) {
  if (aggregated_points.shape() != aggregated_memory.shape() || aggregated_points.rank() != 2) {
    throw ShapeError("mean_alignment_distance: misaligned inputs");
  }
  const std::size_t rows = aggregated_points.dim(0), cols = aggregated_points.dim(1);
  if (rows == 0) return 0.0;
  const auto a = aggregated_points.values(), b = aggregated_memory.values();
  double total = 0.0;
  for (std::size_t n = 0; n < rows; ++n) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = a[n * cols + c] - b[n * cols + c];
      s += d * d;
    }
    total += std::sqrt(s);
  }
  return total / static_cast<double>(rows);
}

Tensor build_voxel_memory_image(const Tensor& voxel_features, const Tensor& aggregated_memory,
                                const std::vector<pillars::PillarCoord>& coords, const pillars::GridSpec& grid) {
  return encoder::build_voxel_point_image(voxel_features, aggregated_memory, coords, grid);
}

}  // namespace hvpr::memory
