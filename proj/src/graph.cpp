#include "lkaseg/graph.hpp"

#include <cmath>
#include <stdexcept>

#include "lkaseg/errors.hpp"

namespace lkaseg {

void ParamStore::claim_name(const std::string& name) {
  if (!names_.emplace(name, 0).second) {
    throw std::logic_error("duplicate parameter name: " + name);
  }
}

Parameter& ParamStore::add(std::string name, Tensor init) {
  claim_name(name);
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->grad = Tensor(init.shape());
  p->value = std::move(init);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParamStore::add_kaiming(std::string name, Shape shape, int fan_in) {
  const double stddev = std::sqrt(2.0 / std::max(fan_in, 1));
  return add(std::move(name), random_normal(shape, rng_, 0.0, stddev));
}

Buffer& ParamStore::add_buffer(std::string name, Tensor init) {
  claim_name(name);
  auto b = std::make_unique<Buffer>();
  b->name = std::move(name);
  b->value = std::move(init);
  buffers_.push_back(std::move(b));
  return *buffers_.back();
}

Parameter* ParamStore::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

Buffer* ParamStore::find_buffer(std::string_view name) const {
  for (const auto& b : buffers_) {
    if (b->name == name) return b.get();
  }
  return nullptr;
}

std::int64_t ParamStore::scalar_count() const {
  std::int64_t total = 0;
  for (const auto& p : params_) total += static_cast<std::int64_t>(p->value.size());
  return total;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

const Tensor& Var::value() const { return graph->value(id); }

Graph::Graph(NormMode mode, bool record) : mode_(mode), record_(record) {}

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::input(Tensor value) {
  require_finite(value, "graph input");
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::variable(Tensor value) {
  require_finite(value, "graph variable");
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_;
  n.keep_grad = true;
  return push(std::move(n));
}

Var Graph::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
  require_finite(p.value, "parameter " + p.name);
  Node n;
  n.value = p.value;
  n.requires_grad = record_;
  n.param = &p;
  Var v = push(std::move(n));
  param_nodes_.emplace(&p, v.id);
  return v;
}

Var Graph::record(const char* op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericalError(std::string("non-finite value produced by ") + op);
  }
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const Var& in : inputs) {
      if (in.graph != this || in.id < 0 || in.id >= static_cast<int>(nodes_.size())) {
        throw std::logic_error(std::string(op) + ": input does not belong to this graph");
      }
      n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(in.id)].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  return push(std::move(n));
}

Tensor& Graph::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

Tensor Graph::grad_of(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  return n.has_grad ? n.grad : Tensor(n.value.shape());
}

void Graph::backward(Var loss) {
  if (!record_) throw std::logic_error("backward: graph was built without recording");
  if (backward_done_) throw std::logic_error("backward: already called on this graph");
  if (loss.graph != this) throw std::logic_error("backward: loss belongs to another graph");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + loss.shape().str());
  }
  backward_done_ = true;
  grad(loss.id).fill(1.0);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) continue;
    if (n.param != nullptr) {
      n.param->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, n.grad);
    }
    if (!n.keep_grad) {
      n.grad = Tensor();
      n.has_grad = false;
    }
  }
}

}  // namespace lkaseg
