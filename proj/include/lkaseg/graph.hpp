#pragma once

// Define-by-run reverse-mode autodiff. A Graph is a tape of recorded
// operations; every op appends one node whose inputs precede it, so the tape
// order is already topological and backward() walks it in reverse.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lkaseg/kernels.hpp"
#include "lkaseg/tensor.hpp"

namespace lkaseg {

/// Trainable tensor with its gradient slot.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Non-trainable state (normalisation running statistics).
struct Buffer {
  std::string name;
  Tensor value;
};

/// Ordered, named parameter tree. Registration order is the canonical order
/// used by checkpoints and the optimiser. Elements have stable addresses.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Parameter& add(std::string name, Tensor init);
  /// Fan-in scaled normal init, std = sqrt(2 / fan_in).
  Parameter& add_kaiming(std::string name, Shape shape, int fan_in);
  Buffer& add_buffer(std::string name, Tensor init);

  const std::vector<std::unique_ptr<Parameter>>& params() const { return params_; }
  const std::vector<std::unique_ptr<Buffer>>& buffers() const { return buffers_; }
  Parameter* find(std::string_view name) const;
  Buffer* find_buffer(std::string_view name) const;

  /// Number of trainable scalars.
  std::int64_t scalar_count() const;
  void zero_grad();
  std::mt19937_64& rng() { return rng_; }

 private:
  void claim_name(const std::string& name);

  std::vector<std::unique_ptr<Parameter>> params_;
  std::vector<std::unique_ptr<Buffer>> buffers_;
  std::unordered_map<std::string, int> names_;
  std::mt19937_64 rng_;
};

class Graph;

/// Handle to a node on a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

class Graph {
 public:
  /// `record = false` builds values only (inference); backward() is then rejected.
  explicit Graph(NormMode mode = NormMode::kTrain, bool record = true);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  NormMode mode() const { return mode_; }
  bool training() const { return mode_ == NormMode::kTrain; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  /// Constant leaf (no gradient flows into it).
  Var input(Tensor value);
  /// Leaf bound to a parameter; the same parameter always maps to one node.
  Var param(Parameter& p);
  /// Leaf whose gradient is kept on the tape (readable via grad_of after backward).
  Var variable(Tensor value);

  /// Appends an op result. `inputs` must already be on this tape.
  Var record(const char* op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  /// Gradient buffer for `id`, zero-allocated on first use.
  Tensor& grad(int id);
  /// Gradient of a leaf created with variable(); zero tensor if untouched.
  Tensor grad_of(Var v) const;

  /// Reverse pass from a single-element loss; accumulates into Parameter::grad.
  /// Rejected if called twice on one tape.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    bool keep_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Var push(Node node);

  NormMode mode_;
  bool record_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
};

}  // namespace lkaseg
