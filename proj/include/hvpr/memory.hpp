#pragma once

#include <cstddef>
#include <vector>

#include "hvpr/encoder.hpp"
#include "hvpr/optim.hpp"
#include "hvpr/pillars.hpp"

// Trainable prototype bank read by voxel features. At inference it is the
// only source of point-level information.
namespace hvpr::memory {

struct MemoryBank {
  Tensor items;  // T × C
  std::size_t size() const { return items.dim(0); }
  std::size_t channels() const { return items.dim(1); }
};

// Standard normal items scaled to unit L2 norm.
MemoryBank init_memory(std::size_t items, std::size_t channels, Rng& rng);
// Same, registered in `store` as "memory.items".
MemoryBank create_memory(ParameterStore& store, std::size_t items, std::size_t channels, Rng& rng);

using MemoryReadout = encoder::AttentiveRead;

// Number of memory_read calls since the last reset; used to show training
// and inference go through this one function.
std::size_t memory_read_invocations();
void reset_memory_read_invocations();

// Throws ShapeError when K exceeds the bank size.
MemoryReadout memory_read(const Tensor& voxel_features, const MemoryBank& bank, std::size_t k);

// Σ_n ‖g_pts(n) − g_mem(n)‖₂.
Tensor memory_loss(const Tensor& aggregated_points, const Tensor& aggregated_memory);
// Mean of the same per-pillar norms, without a graph. 0 for no pillars.
double mean_alignment_distance(const Tensor& aggregated_points, const Tensor& aggregated_memory);

Tensor build_voxel_memory_image(const Tensor& voxel_features, const Tensor& aggregated_memory,
                                const std::vector<pillars::PillarCoord>& coords, const pillars::GridSpec& grid);

}  // namespace hvpr::memory
