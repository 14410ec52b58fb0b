#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "seekr/tensor.hpp"

namespace seekr {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  bool valid() const noexcept { return tape != nullptr; }
  const Tensor& value() const;
  const Dims& dims() const { return value().dims(); }
};

// Reverse-mode recording of differentiable ops.
//
// Ops append a node holding their forward value plus a closure that, during
// backward, reads the output gradient and accumulates into input gradients.
// Closures run in exact reverse recording order. A tape built with
// record_backward = false keeps values only (inference).
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t out)>;

  explicit Tape(bool record_backward = true) : record_backward_(record_backward) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Borrowed value; the referenced tensor must outlive the tape.
  Var constant_ref(const Tensor& value);
  Var parameter(Tensor value);
  Var parameter_ref(const Tensor& value);

  // Marks an intermediate whose gradient callers will ask for after backward.
  void watch(Var v);
  bool is_watched(Var v) const { return nodes_.at(v.id).watched; }

  void backward(Var loss);
  bool backward_done() const noexcept { return backward_done_; }
  bool records_backward() const noexcept { return record_backward_; }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
  }
  // Gradient after backward. Nodes that received no gradient report zeros.
  Tensor grad(Var v) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // --- op authoring -------------------------------------------------------
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }
  // Gradient flowing into `id` during backward; nullptr if none arrived.
  const Tensor* output_grad(std::size_t id) const {
    return nodes_[id].has_grad ? &nodes_[id].grad : nullptr;
  }
  // Accumulator for an input's gradient; nullptr if the input needs none.
  Tensor* input_grad(std::size_t id);

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    bool requires_grad = false;
    bool watched = false;
    bool has_grad = false;
    Tensor grad;
  };

  Var push(Node node);

  bool record_backward_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::vector<std::pair<std::size_t, BackwardFn>> ops_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

}  // namespace seekr
