#include "seekr/tape.hpp"

#include "seekr/error.hpp"

namespace seekr {

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::constant_ref(const Tensor& value) {
  Node n;
  n.external = &value;
  return push(std::move(n));
}

Var Tape::parameter(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = record_backward_;
  return push(std::move(n));
}

Var Tape::parameter_ref(const Tensor& value) {
  Node n;
  n.external = &value;
  n.requires_grad = record_backward_;
  return push(std::move(n));
}

void Tape::watch(Var v) {
  if (v.tape != this) throw UsageError("watch: node belongs to another tape");
  nodes_.at(v.id).watched = true;
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  if (record_backward_) {
    for (const Var& in : inputs) {
      if (in.tape != this) throw UsageError("op input belongs to another tape");
      n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
    }
  }
  Var out = push(std::move(n));
  if (record_backward_ && nodes_[out.id].requires_grad) ops_.emplace_back(out.id, std::move(fn));
  return out;
}

Tensor* Tape::input_grad(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(value(id).dims());
    n.has_grad = true;
  }
  return &n.grad;
}

void Tape::backward(Var loss) {
  if (!record_backward_) throw UsageError("backward on a tape recorded without gradients");
  if (backward_done_) throw UsageError("backward already consumed for this tape");
  if (loss.tape != this || loss.id >= nodes_.size() || ops_.empty()) {
    throw UsageError("backward before forward: loss node was not produced by an op on this tape");
  }
  if (value(loss.id).size() != 1) {
    throw ContractError("backward: loss must be scalar, got " + dims_to_string(value(loss.id).dims()));
  }
  Tensor* seed = input_grad(loss.id);
  if (seed) (*seed)[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    if (it->first > loss.id || !nodes_[it->first].has_grad) continue;
    it->second(*this, it->first);
  }
  backward_done_ = true;
}

Tensor Tape::grad(Var v) const {
  if (v.tape != this) throw UsageError("grad: node belongs to another tape");
  if (!backward_done_) throw UsageError("grad requested before backward");
  const Node& n = nodes_.at(v.id);
  if (n.has_grad) return n.grad;
  return Tensor(value(v.id).dims());
}

}  // namespace seekr
