#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mgta/param_store.hpp"
#include "mgta/tensor.hpp"

namespace mgta {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode record of executed ops. Forward outputs are checked for
/// finiteness as they are recorded; backward() replays the ops in exact
/// reverse order and flushes parameter gradients into their ParamStore.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  explicit Tape(DType precision = DType::kF64) : precision_(precision) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  DType precision() const { return precision_; }

  Var constant(Tensor value);
  Var leaf(Tensor value);
  // One node per parameter per tape; repeated calls return the same Var.
  Var param(ParamStore& store, const std::string& name);

  Var record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn fn);
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id()); }

  // Accumulation buffer for a node's gradient; nullptr when the node is not
  // differentiable. Only valid during backward().
  Tensor* grad_buffer(std::size_t id);

  void backward(Var root);
  void backward(Var root, const Tensor& seed);

  // Gradient of the last backward() w.r.t. v; zeros if none reached it.
  Tensor grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
  // Node ids whose backward functions ran, in the order they ran.
  const std::vector<std::size_t>& backward_trace() const { return trace_; }

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
    ParamStore* store = nullptr;
    std::size_t param_index = 0;
  };

  std::size_t push(Node node);

  DType precision_;
  std::vector<Node> nodes_;
  std::map<std::pair<const ParamStore*, std::size_t>, std::size_t> param_nodes_;
  std::vector<std::size_t> trace_;
};

}  // namespace mgta
