#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hvpr/gradcheck.hpp"
#include "hvpr/rng.hpp"

// Registry of every differentiable op and module, each wrapped as a
// randomized small-shape gradient check.
namespace hvpr::gradcheck {

struct Case {
  std::string name;
  std::function<GradReport(Rng& rng, double eps, double tol)> run;
};

const std::vector<Case>& registry();

// A deliberately wrong backward pass; used to show the suite fails loudly.
Case broken_fixture();

struct SuiteOptions {
  std::uint64_t seed = 0;
  double eps = 1e-5;
  double tol = 1e-4;
  bool include_broken_fixture = false;
};

// Runs every registered case with its own RNG stream split from the seed.
std::vector<GradReport> run_suite(const SuiteOptions& options);

}  // namespace hvpr::gradcheck
