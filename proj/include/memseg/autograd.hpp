/* Copyright 2026 The Memseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef MEMSEG_AUTOGRAD_HPP_
#define MEMSEG_AUTOGRAD_HPP_

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "memseg/tensor.hpp"

namespace memseg::ag {

class Graph;

// Handle to a node recorded on a Graph. Cheap to copy; only valid while the
// owning Graph is alive.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  int dim(int i) const { return value().dim(i); }
  Graph& graph() const { return *graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, int id) : graph_(graph), id_(id) {}
  Graph* graph_ = nullptr;
  int id_ = -1;
};

// Per-parameter gradient tensors, ordered like the parameter list they were
// requested for.
using Gradient = std::vector<Tensor>;

// Records a forward expression so its scalar output can be differentiated
// with respect to registered parameters. Node ids are assigned in creation
// order, which is a valid topological order, so backward is a reverse sweep.
//
// A graph built with recording=false evaluates the same expressions but keeps
// no adjoint closures; backward() on it is a StateError.
class Graph {
 public:
  // `self` is the id of the node being differentiated, so adjoints can read
  // their own forward output.
  using Backward = std::function<void(Graph&, int self, const Tensor& upstream)>;

  explicit Graph(bool recording = true) : recording_(recording) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }

  Var constant(Tensor value);
  // Trainable leaf keyed by the parameter's address; registering the same
  // tensor twice returns the same node.
  Var param(const Tensor& parameter);

  // Internal: append an op node. `parents` decide whether the node needs a
  // gradient; `backward` is dropped when none do.
  Var record(Tensor value, const std::vector<Var>& parents, Backward backward);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  void accumulate(int id, const Tensor& delta);
  void accumulate(int id, Tensor&& delta);

  // Reverse sweep from a single-element loss.
  void backward(Var loss);

  // Gradient of the last backward() with respect to `parameter`; zeros when
  // the parameter did not take part in the expression.
  Tensor grad(const Tensor& parameter) const;
  Gradient gradients(std::span<const Tensor* const> parameters) const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  bool recording_;
  bool backward_done_ = false;
  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, int> params_;
};

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var scale(Var a, double factor);
Var relu(Var x);
Var reshape(Var a, Shape shape);
Var softmax_rows(Var a);
Var softmax_channels(Var x);
Var conv1x1(Var x, Var w, Var bias);
Var conv3x3(Var x, Var w, Var bias, int stride);
Var bilinear_resize(Var x, int out_h, int out_w);
Var adaptive_avg_pool(Var x, int grid);
Var concat_channels(const std::vector<Var>& parts);
Var sum(Var a);
// Value pass-through with no gradient flow.
Var stop_gradient(Var a);
// Mean over non-ignored pixels of -log(max(p[label], 1e-12)); probs is
// K x H x W, labels is H*W row-major. Zero when every pixel is ignored.
Var cross_entropy(Var probs, std::span<const std::uint8_t> labels, std::uint8_t ignore_label);

}  // namespace memseg::ag

#endif  // MEMSEG_AUTOGRAD_HPP_
