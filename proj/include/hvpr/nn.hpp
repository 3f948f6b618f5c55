#pragma once

#include <string>

#include "hvpr/ops.hpp"
#include "hvpr/optim.hpp"

// Parameterized layers over the ops in ops.hpp. Each holds handles into a
// ParameterStore, so copies share weights.
namespace hvpr::nn {

struct Linear {
  Tensor weight;  // in × out
  Tensor bias;    // out

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                       Rng& rng, bool with_bias = true);
  Tensor operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }
};

struct BatchNorm {
  Tensor gamma, beta;
  Tensor running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-3;

  static BatchNorm create(ParameterStore& store, const std::string& name, std::size_t channels);
  Tensor operator()(const Tensor& x, bool training) const {
    Tensor mean = running_mean, var = running_var;
    return ops::batch_norm(x, gamma, beta, mean, var, training, momentum, eps);
  }
};

struct Conv2d {
  Tensor weight;  // out × in × k × k
  Tensor bias;
  std::size_t stride = 1;
  std::size_t pad = 0;

  static Conv2d create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                       std::size_t kernel, std::size_t stride, std::size_t pad, Rng& rng, bool with_bias = true);
  Tensor operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias, stride, pad); }
};

struct ConvTranspose2d {
  Tensor weight;  // in × out × k × k
  Tensor bias;
  std::size_t stride = 1;

  static ConvTranspose2d create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                                std::size_t kernel, std::size_t stride, Rng& rng, bool with_bias = true);
  Tensor operator()(const Tensor& x) const { return ops::conv_transpose2d(x, weight, bias, stride); }
};

}  // namespace hvpr::nn
