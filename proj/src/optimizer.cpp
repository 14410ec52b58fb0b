#include "seekr/optimizer.hpp"

#include <cmath>

#include "seekr/error.hpp"

namespace seekr {

std::string_view optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::momentum: return "momentum";
    case OptimizerKind::adam: return "adam";
  }
  return "?";
}

OptimizerKind parse_optimizer(std::string_view name) {
  for (auto k : {OptimizerKind::sgd, OptimizerKind::momentum, OptimizerKind::adam})
    if (optimizer_name(k) == name) return k;
  throw ConfigError("optimizer", "expected sgd, momentum or adam, got '" + std::string(name) + "'");
}

namespace {

void check_gradients(const ModelState& model, const Gradients& grads) {
  const auto names = model.parameter_names();
  if (grads.size() != names.size())
    throw ContractError("optimizer: expected " + std::to_string(names.size()) + " gradient tensors, got " +
                        std::to_string(grads.size()));
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!grads[i].all_finite()) throw TrainingError("non-finite gradient in " + names[i]);
}

}  // namespace

void optimizer_step(ModelState& model, const Gradients& gradients, double lr) {
  check_gradients(model, gradients);
  std::size_t p = 0;
  model.for_each_parameter([&](const std::string&, Tensor& t) {
    const Tensor& g = gradients[p++];
    for (std::size_t i = 0; i < t.size(); ++i) t[i] -= lr * g[i];
  });
}

void Optimizer::step(ModelState& model, const Gradients& gradients) {
  check_gradients(model, gradients);
  if (first_.empty()) {
    for (const auto& g : gradients) {
      first_.push_back(Tensor::zeros(g.dims()));
      second_.push_back(Tensor::zeros(g.dims()));
    }
  }
  ++t_;
  double scale = 1.0;
  if (config_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& g : gradients)
      for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
    const double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) scale = config_.clip_norm / norm;
  }
  const double lr = config_.learning_rate;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  std::size_t p = 0;
  model.for_each_parameter([&](const std::string&, Tensor& t) {
    const Tensor& g = gradients[p];
    Tensor& m = first_[p];
    Tensor& v = second_[p];
    ++p;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double gi = scale * g[i];
      switch (config_.kind) {
        case OptimizerKind::sgd:
          t[i] -= lr * gi;
          break;
        case OptimizerKind::momentum:
          m[i] = config_.momentum * m[i] + gi;
          t[i] -= lr * m[i];
          break;
        case OptimizerKind::adam:
          m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
          v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
          t[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.epsilon);
          break;
      }
    }
  });
}

}  // namespace seekr
