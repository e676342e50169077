#include "mgta/tape.hpp"

#include "mgta/errors.hpp"

namespace mgta {

const Tensor& Var::value() const {
  if (!tape_) throw InternalError("use of an unbound Var");
  return tape_->value(id_);
}

std::size_t Tape::push(Node node) {
  if (precision_ == DType::kF32) node.value.round_to(DType::kF32);
  if (!node.value.all_finite()) {
    throw NumericError("non-finite value produced by op '" + node.op + "' with shape " +
                       to_string(node.value.shape()));
  }
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return Var(this, push(std::move(n)));
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = true;
  return Var(this, push(std::move(n)));
}

Var Tape::param(ParamStore& store, const std::string& name) {
  const std::size_t index = store.index_of(name);
  auto key = std::make_pair(static_cast<const ParamStore*>(&store), index);
  if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.op = "param:" + name;
  n.value = store.at(index).value;
  n.requires_grad = true;
  n.store = &store;
  n.param_index = index;
  const std::size_t id = push(std::move(n));
  param_nodes_[key] = id;
  return Var(this, id);
}

Var Tape::record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  for (const auto& in : inputs) {
    if (in.tape() != this) throw InternalError(std::string("op '") + op + "' mixes tapes");
    if (nodes_[in.id()].requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return Var(this, push(std::move(n)));
}

Tensor* Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return nullptr;
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape(), 0.0);
  return &n.grad;
}

void Tape::backward(Var root) {
  const Tensor& v = value(root.id());
  if (v.size() != 1) {
    throw DimensionError("backward() without a seed needs a scalar root, got shape " +
                         to_string(v.shape()));
  }
  backward(root, Tensor(v.shape(), 1.0));
}

void Tape::backward(Var root, const Tensor& seed) {
  if (seed.shape() != value(root.id()).shape()) {
    throw DimensionError("backward seed shape " + to_string(seed.shape()) +
                         " does not match root " + to_string(value(root.id()).shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  trace_.clear();
  if (Tensor* g = grad_buffer(root.id())) {
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += seed[i];
  } else {
    return;
  }
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) {
      trace_.push_back(id);
      // nodes_ is not resized during backward, so n.grad stays valid.
      n.backward(*this, n.grad);
    }
  }
  for (auto& n : nodes_) {
    if (n.store && !n.grad.empty()) {
      Tensor& dst = n.store->at(n.param_index).grad;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
    }
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

}  // namespace mgta
