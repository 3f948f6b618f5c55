#include <cmath>

#include "doctest.h"
#include "hvpr/error.hpp"
#include "hvpr/gradcheck.hpp"
#include "hvpr/memory.hpp"
#include "oracles.hpp"

using namespace hvpr;

namespace {

Tensor randn(Shape s, Rng& rng) {
  Tensor t(std::move(s));
  for (double& v : t.values()) v = rng.normal();
  return t;
}

}  // namespace

TEST_SUITE("memory") {

TEST_CASE("init gives unit items, seeded") {
  Rng a(3), b(3);
  const auto bank = memory::init_memory(2000, 64, a);
  CHECK(bank.items.shape() == Shape{2000, 64});
  for (std::size_t t = 0; t < 2000; ++t) {
    double s = 0.0;
    for (std::size_t c = 0; c < 64; ++c) s += bank.items.at(t * 64 + c) * bank.items.at(t * 64 + c);
    CHECK(std::abs(std::sqrt(s) - 1.0) <= 1e-12);
  }
  const auto again = memory::init_memory(2000, 64, b);
  for (std::size_t i = 0; i < bank.items.numel(); ++i) REQUIRE(bank.items.at(i) == again.items.at(i));

  ParameterStore store;
  Rng c(3);
  memory::create_memory(store, 8, 4, c);
  CHECK(store.find("memory.items") != nullptr);
}

TEST_CASE("read equals the composed fusion path") {
  Rng rng(4);
  const auto bank = memory::init_memory(12, 5, rng);
  const Tensor q = randn({6, 5}, rng);
  const auto read = memory::memory_read(q, bank, 4);
  const auto ref = encoder::aggregate(bank.items, encoder::topk_softmax(encoder::correlation(q, bank.items), 4));
  for (std::size_t i = 0; i < ref.numel(); ++i) CHECK(read.aggregated.at(i) == ref.at(i));

  // oracle: full sort per row, then weighted sum by hand
  for (std::size_t n = 0; n < 6; ++n) {
    std::vector<double> row(12);
    for (std::size_t t = 0; t < 12; ++t) {
      double s = 0.0;
      for (std::size_t c = 0; c < 5; ++c) s += q.at(n * 5 + c) * bank.items.at(t * 5 + c);
      row[t] = s;
    }
    const auto top = oracle::full_sort_topk(row, 4);
    for (std::size_t c = 0; c < 5; ++c) {
      double g = 0.0;
      for (std::size_t k = 0; k < 4; ++k) g += top.probs[k] * bank.items.at(top.indices[k] * 5 + c);
      CHECK(std::abs(read.aggregated.at(n * 5 + c) - g) <= 1e-12);
    }
  }
  CHECK_THROWS_AS(memory::memory_read(q, bank, 13), ShapeError);
}

TEST_CASE("identical items read back unchanged") {
  Rng rng(5);
  Tensor items(Shape{6, 3});
  for (std::size_t t = 0; t < 6; ++t) {
    items.values()[t * 3] = 0.5;
    items.values()[t * 3 + 1] = -1.0;
    items.values()[t * 3 + 2] = 2.0;
  }
  const memory::MemoryBank bank{items};
  const auto read = memory::memory_read(randn({4, 3}, rng), bank, 6);
  for (std::size_t n = 0; n < 4; ++n) {
    CHECK(read.aggregated.at(n * 3) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(read.aggregated.at(n * 3 + 1) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(read.aggregated.at(n * 3 + 2) == doctest::Approx(2.0).epsilon(1e-12));
  }
  const auto grid = pillars::GridSpec::desk();
  const std::vector<pillars::PillarCoord> coords{{2, 3}, {9, 9}, {0, 0}, {31, 31}};
  const Tensor img = memory::build_voxel_memory_image(randn({4, 3}, rng), read.aggregated, coords, grid);
  const Tensor back = ops::gather_from_image(img, pillars::grid_cells(coords, 0));
  for (std::size_t n = 0; n < 4; ++n) CHECK(back.at(n * 6 + 5) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("read stays in the selected envelope and rows normalize") {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const auto bank = memory::init_memory(16, 4, rng);
    const auto read = memory::memory_read(randn({3, 4}, rng), bank, 5);
    for (std::size_t n = 0; n < 3; ++n) {
      double sum = 0.0;
      for (std::size_t k = 0; k < 5; ++k) sum += read.selection.probs.at(n * 5 + k);
      CHECK(std::abs(sum - 1.0) <= 1e-9);
      for (std::size_t c = 0; c < 4; ++c) {
        double lo = INFINITY, hi = -INFINITY;
        for (std::size_t k = 0; k < 5; ++k) {
          const double v = bank.items.at(read.selection.indices[n * 5 + k] * 4 + c);
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        CHECK(read.aggregated.at(n * 4 + c) >= lo - 1e-12);
        CHECK(read.aggregated.at(n * 4 + c) <= hi + 1e-12);
      }
    }
  }
}

TEST_CASE("loss fixtures") {
  Tensor a(Shape{1, 4}, {3, 4, 0, 0}), z(Shape{1, 4});
  CHECK(memory::memory_loss(a, z).item() == doctest::Approx(5.0));
  CHECK(memory::memory_loss(a, a).item() == 0.0);
  Tensor dup(Shape{2, 4}, {3, 4, 0, 0, 3, 4, 0, 0});
  CHECK(memory::memory_loss(dup, Tensor(Shape{2, 4})).item() == doctest::Approx(10.0));
  CHECK(memory::mean_alignment_distance(dup, Tensor(Shape{2, 4})) == doctest::Approx(5.0));
  CHECK(memory::mean_alignment_distance(Tensor(Shape{0, 4}), Tensor(Shape{0, 4})) == 0.0);
  CHECK_THROWS_AS(memory::memory_loss(a, Tensor(Shape{2, 4})), ShapeError);
}

TEST_CASE("loss gradient is the negative unit difference") {
  Rng rng(7);
  const Tensor gp = randn({3, 5}, rng);
  Tensor gm = randn({3, 5}, rng);
  gm.set_requires_grad(true);
  memory::memory_loss(gp, gm).backward();
  for (std::size_t n = 0; n < 3; ++n) {
    double norm = 0.0;
    for (std::size_t c = 0; c < 5; ++c) norm += std::pow(gp.at(n * 5 + c) - gm.at(n * 5 + c), 2);
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < 5; ++c) {
      CHECK(gm.grad()[n * 5 + c] == doctest::Approx(-(gp.at(n * 5 + c) - gm.at(n * 5 + c)) / norm).epsilon(1e-12));
    }
  }
  const auto report = finite_difference_check(
      "memory_loss", [](const std::vector<Tensor>& in) { return memory::memory_loss(in[0], in[1]); },
      {gp, randn({3, 5}, rng)}, 1e-6, 1e-4);
  CHECK(report.passed);

  // bank gradient through the read
  const auto bank = memory::init_memory(8, 5, rng);
  const Tensor q = randn({3, 5}, rng);
  const auto through_read = finite_difference_check(
      "memory_read_loss",
      [&](const std::vector<Tensor>& in) {
        return memory::memory_loss(gp, memory::memory_read(in[0], memory::MemoryBank{in[1]}, 3).aggregated);
      },
      {q, bank.items}, 1e-6, 1e-4);
  CHECK(through_read.passed);
}

TEST_CASE("read counter") {
  Rng rng(8);
  const auto bank = memory::init_memory(8, 3, rng);
  memory::reset_memory_read_invocations();
  memory::memory_read(randn({2, 3}, rng), bank, 2);
  memory::memory_read(randn({2, 3}, rng), bank, 2);
  CHECK(memory::memory_read_invocations() == 2);
}

}  // TEST_SUITE
