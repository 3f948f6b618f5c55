#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hvpr/rng.hpp"
#include "hvpr/tensor.hpp"

namespace hvpr {

struct Parameter {
  std::string name;
  Tensor tensor;
  // Buffers (normalization running statistics) are checkpointed but never
  // updated by the optimizer.
  bool trainable = true;
};

// Owns every named tensor of a model in creation order. Names are unique.
class ParameterStore {
 public:
  // Glorot-uniform weight in ±√(6/(fan_in+fan_out)).
  Tensor glorot(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
  Tensor constant(const std::string& name, Shape shape, double value);
  Tensor buffer(const std::string& name, Shape shape, double value);
  // Registers an existing tensor (e.g. a memory bank built elsewhere).
  Tensor adopt(const std::string& name, Tensor tensor);

  std::span<Parameter> all() { return params_; }
  std::span<const Parameter> all() const { return params_; }
  const Parameter* find(const std::string& name) const;
  std::size_t size() const { return params_.size(); }
  std::size_t trainable_count() const;

  void zero_grad();

 private:
  Tensor add(const std::string& name, Tensor tensor, bool trainable);
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Decoupled: p ← p − lr·weight_decay·p before the adaptive step.
  double weight_decay = 0.0;
};

class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  // One bias-corrected update of every trainable parameter. Throws
  // ConfigError naming the first trainable parameter without a gradient.
  void step(std::span<Parameter> params, double lr);

  std::uint64_t step_count() const { return step_; }
  const AdamOptions& options() const { return options_; }

  // Moment buffers keyed "m/<name>" and "v/<name>", for checkpointing.
  std::vector<std::pair<std::string, Tensor>> state() const;
  void load_state(std::uint64_t step, const std::vector<std::pair<std::string, Tensor>>& state);

 private:
  AdamOptions options_;
  std::uint64_t step_ = 0;
  std::map<std::string, std::vector<double>> first_;
  std::map<std::string, std::vector<double>> second_;
};

// lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total_steps)).
double cosine_lr(long step, long total_steps, double lr_max, double lr_min);

}  // namespace hvpr
