#include "hvpr/optim.hpp"

#include <cmath>
#include <numbers>

#include "hvpr/error.hpp"

namespace hvpr {

Tensor ParameterStore::add(const std::string& name, Tensor tensor, bool trainable) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  tensor.set_requires_grad(trainable);
  index_[name] = params_.size();
  params_.push_back({name, tensor, trainable});
  return tensor;
}

Tensor ParameterStore::glorot(const std::string& name, Shape shape, std::size_t fan_in,
                              std::size_t fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.values()) v = rng.uniform(-limit, limit);
  return add(name, t, true);
}

Tensor ParameterStore::constant(const std::string& name, Shape shape, double value) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = value;
  return add(name, t, true);
}

Tensor ParameterStore::buffer(const std::string& name, Shape shape, double value) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = value;
  return add(name, t, false);
}

Tensor ParameterStore::adopt(const std::string& name, Tensor tensor) { return add(name, tensor, true); }

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

std::size_t ParameterStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.trainable;
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) {
    if (p.trainable) p.tensor.zero_grad();
  }
}

void Adam::step(std::span<Parameter> params, double lr) {
  for (const auto& p : params) {
    if (p.trainable && !p.tensor.has_grad()) {
      throw ConfigError("adam: parameter '" + p.name + "' has no gradient");
    }
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double bias1 = 1.0 - std::pow(options_.beta1, t);
  const double bias2 = 1.0 - std::pow(options_.beta2, t);
  for (auto& p : params) {
    if (!p.trainable) continue;
    auto values = p.tensor.values();
    const auto grad = p.tensor.grad();
    auto& m = first_[p.name];
    auto& v = second_[p.name];
    if (m.size() != values.size()) {
      m.assign(values.size(), 0.0);
      v.assign(values.size(), 0.0);
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g;
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g * g;
      values[i] -= lr * options_.weight_decay * values[i];
      values[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + options_.eps);
    }
  }
}

std::vector<std::pair<std::string, Tensor>> Adam::state() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [name, m] : first_) {
    out.emplace_back("m/" + name, Tensor(Shape{m.size()}, m));
    out.emplace_back("v/" + name, Tensor(Shape{m.size()}, second_.at(name)));
  }
  return out;
}

void Adam::load_state(std::uint64_t step, const std::vector<std::pair<std::string, Tensor>>& state) {
  step_ = step;
  first_.clear();
  second_.clear();
  for (const auto& [key, tensor] : state) {
    std::vector<double> data(tensor.values().begin(), tensor.values().end());
    if (key.rfind("m/", 0) == 0) {
      first_[key.substr(2)] = std::move(data);
    } else if (key.rfind("v/", 0) == 0) {
      second_[key.substr(2)] = std::move(data);
    } else {
      throw DataError("adam: unknown optimizer state entry '" + key + "'");
    }
  }
}

double cosine_lr(long step, long total_steps, double lr_max, double lr_min) {
  if (total_steps <= 0) throw ConfigError("cosine_lr: total_steps must be positive");
  if (step < 0 || step > total_steps) {
    throw ConfigError("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                      std::to_string(total_steps) + "]");
  }
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

}  // namespace hvpr
