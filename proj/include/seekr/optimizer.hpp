#pragma once

#include <string_view>
#include <vector>

#include "seekr/model.hpp"

namespace seekr {

enum class OptimizerKind { sgd, momentum, adam };
std::string_view optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;  // global gradient-norm clip; 0 disables
};

// θ ← θ − lr·g. Throws TrainingError naming the first non-finite gradient tensor.
void optimizer_step(ModelState& model, const Gradients& gradients, double lr);

// Stateful optimizer over a model's parameters in canonical order.
class Optimizer {
 public:
  explicit Optimizer(const OptimizerConfig& config) : config_(config) {}

  // Validates all gradients before touching any parameter.
  void step(ModelState& model, const Gradients& gradients);
  std::size_t steps() const noexcept { return t_; }

 private:
  OptimizerConfig config_;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  std::size_t t_ = 0;
};

}  // namespace seekr
