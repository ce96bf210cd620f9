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
#include "memseg/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "memseg/error.hpp"
#include "memseg/ops.hpp"

namespace memseg::ag {

const Tensor& Var::value() const {
  if (!graph_) throw StateError("use of an unbound Var");
  return graph_->value(id_);
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), false, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::param(const Tensor& parameter) {
  if (auto it = params_.find(&parameter); it != params_.end()) return Var(this, it->second);
  nodes_.push_back(Node{parameter, Tensor(), recording_, nullptr});
  const int id = static_cast<int>(nodes_.size()) - 1;
  params_.emplace(&parameter, id);
  return Var(this, id);
}

Var Graph::record(Tensor value, const std::vector<Var>& parents, Backward backward) {
  bool needs = false;
  for (const Var& p : parents) {
    if (&p.graph() != this) throw StateError("mixing Vars from different graphs");
    needs = needs || requires_grad(p.id());
  }
  needs = needs && recording_;
  nodes_.push_back(Node{std::move(value), Tensor(), needs, needs ? std::move(backward) : nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Graph::accumulate(int id, const Tensor& delta) {
  Node& node = nodes_[static_cast<std::size_t>(id)];
  if (!node.requires_grad) return;
  if (node.grad.shape() != node.value.shape()) {
    node.grad = delta;
    return;
  }
  for (std::size_t i = 0; i < delta.size(); ++i) node.grad[i] += delta[i];
}

void Graph::accumulate(int id, Tensor&& delta) {
  Node& node = nodes_[static_cast<std::size_t>(id)];
  if (!node.requires_grad) return;
  if (node.grad.shape() != node.value.shape()) {
    node.grad = std::move(delta);
    return;
  }
  for (std::size_t i = 0; i < delta.size(); ++i) node.grad[i] += delta[i];
}

void Graph::backward(Var loss) {
  if (!recording_) throw StateError("backward on a graph that was not recording");
  if (nodes_.empty() || !loss.valid() || &loss.graph() != this) {
    throw StateError("backward before any forward expression was recorded");
  }
  if (backward_done_) throw StateError("backward called twice on the same graph");
  if (loss.value().size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + shape_to_string(loss.shape()));
  }
  backward_done_ = true;
  Node& root = nodes_[static_cast<std::size_t>(loss.id())];
  if (!root.requires_grad) return;
  root.grad = Tensor(root.value.shape(), 1.0);
  for (int id = loss.id(); id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.backward || node.grad.shape() != node.value.shape()) continue;
    node.backward(*this, id, node.grad);
    // Intermediate adjoints are dead once propagated.
    node.grad = Tensor();
  }
}

Tensor Graph::grad(const Tensor& parameter) const {
  if (!backward_done_) throw StateError("gradient requested before backward");
  auto it = params_.find(&parameter);
  if (it == params_.end()) return Tensor(parameter.shape());
  const Node& node = nodes_[static_cast<std::size_t>(it->second)];
  if (node.grad.shape() != node.value.shape()) return Tensor(parameter.shape());
  return node.grad;
}

Gradient Graph::gradients(std::span<const Tensor* const> parameters) const {
  Gradient out;
  out.reserve(parameters.size());
  for (const Tensor* p : parameters) out.push_back(grad(*p));
  return out;
}

Var matmul(Var a, Var b) {
  return a.graph().record(
      ops::matmul(a.value(), b.value()), {a, b},
      [ia = a.id(), ib = b.id()](Graph& g, int, const Tensor& dy) {
        const Tensor& av = g.value(ia);
        const Tensor& bv = g.value(ib);
        const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
        if (g.requires_grad(ia)) {
          Tensor da({m, k});
          ops::gemm(false, true, m, k, n, dy.data().data(), bv.data().data(), da.data().data(),
                    false);
          g.accumulate(ia, std::move(da));
        }
        if (g.requires_grad(ib)) {
          Tensor db({k, n});
          ops::gemm(true, false, k, n, m, av.data().data(), dy.data().data(), db.data().data(),
                    false);
          g.accumulate(ib, std::move(db));
        }
      });
}

Var transpose(Var a) {
  return a.graph().record(ops::transpose(a.value()), {a},
                          [ia = a.id()](Graph& g, int, const Tensor& dy) {
                            g.accumulate(ia, ops::transpose(dy));
                          });
}

Var add(Var a, Var b) {
  return a.graph().record(ops::add(a.value(), b.value()), {a, b},
                          [ia = a.id(), ib = b.id()](Graph& g, int, const Tensor& dy) {
                            g.accumulate(ia, dy);
                            g.accumulate(ib, dy);
                          });
}

Var scale(Var a, double factor) {
  return a.graph().record(ops::scale(a.value(), factor), {a},
                          [ia = a.id(), factor](Graph& g, int, const Tensor& dy) {
                            g.accumulate(ia, ops::scale(dy, factor));
                          });
}

Var relu(Var x) {
  return x.graph().record(ops::relu(x.value()), {x},
                          [ix = x.id()](Graph& g, int, const Tensor& dy) {
                            const Tensor& xv = g.value(ix);
                            Tensor dx = dy;
                            for (std::size_t i = 0; i < dx.size(); ++i)
                              if (!(xv[i] > 0.0)) dx[i] = 0.0;
                            g.accumulate(ix, std::move(dx));
                          });
}

Var reshape(Var a, Shape shape) {
  return a.graph().record(a.value().reshaped(std::move(shape)), {a},
                          [ia = a.id()](Graph& g, int, const Tensor& dy) {
                            g.accumulate(ia, dy.reshaped(g.value(ia).shape()));
                          });
}

Var softmax_rows(Var a) {
  return a.graph().record(ops::softmax_rows(a.value()), {a},
                          [ia = a.id()](Graph& g, int self, const Tensor& dy) {
                            g.accumulate(ia, ops::softmax_rows_backward(g.value(self), dy));
                          });
}

Var softmax_channels(Var x) {
  return x.graph().record(ops::softmax_channels(x.value()), {x},
                          [ix = x.id()](Graph& g, int self, const Tensor& dy) {
                            g.accumulate(ix, ops::softmax_channels_backward(g.value(self), dy));
                          });
}

Var conv1x1(Var x, Var w, Var bias) {
  return x.graph().record(
      ops::conv1x1(x.value(), w.value(), bias.value()), {x, w, bias},
      [ix = x.id(), iw = w.id(), ib = bias.id()](Graph& g, int, const Tensor& dy) {
        const Tensor& xv = g.value(ix);
        const Tensor& wv = g.value(iw);
        const int cout = wv.dim(0), cin = wv.dim(1);
        const int plane = xv.dim(1) * xv.dim(2);
        if (g.requires_grad(iw)) {
          Tensor dw({cout, cin});
          ops::gemm(false, true, cout, cin, plane, dy.data().data(), xv.data().data(),
                    dw.data().data(), false);
          g.accumulate(iw, std::move(dw));
        }
        if (g.requires_grad(ib)) {
          Tensor db({cout});
          for (int co = 0; co < cout; ++co) {
            const double* row = dy.data().data() + static_cast<std::size_t>(co) * plane;
            double total = 0.0;
            for (int p = 0; p < plane; ++p) total += row[p];
            db[static_cast<std::size_t>(co)] = total;
          }
          g.accumulate(ib, std::move(db));
        }
        if (g.requires_grad(ix)) {
          Tensor dx(xv.shape());
          ops::gemm(true, false, cin, plane, cout, wv.data().data(), dy.data().data(),
                    dx.data().data(), false);
          g.accumulate(ix, std::move(dx));
        }
      });
}

Var conv3x3(Var x, Var w, Var bias, int stride) {
  return x.graph().record(
      ops::conv3x3(x.value(), w.value(), bias.value(), stride), {x, w, bias},
      [ix = x.id(), iw = w.id(), ib = bias.id(), stride](Graph& g, int, const Tensor& dy) {
        auto grads = ops::conv3x3_backward(g.value(ix), g.value(iw), dy, stride,
                                           g.requires_grad(ix));
        g.accumulate(iw, std::move(grads.dw));
        g.accumulate(ib, std::move(grads.db));
        if (g.requires_grad(ix)) g.accumulate(ix, std::move(grads.dx));
      });
}

Var bilinear_resize(Var x, int out_h, int out_w) {
  return x.graph().record(ops::bilinear_resize(x.value(), out_h, out_w), {x},
                          [ix = x.id()](Graph& g, int, const Tensor& dy) {
                            const Tensor& xv = g.value(ix);
                            g.accumulate(ix,
                                         ops::bilinear_resize_backward(dy, xv.dim(1), xv.dim(2)));
                          });
}

Var adaptive_avg_pool(Var x, int grid) {
  return x.graph().record(ops::adaptive_avg_pool(x.value(), grid), {x},
                          [ix = x.id()](Graph& g, int, const Tensor& dy) {
                            const Tensor& xv = g.value(ix);
                            g.accumulate(ix, ops::adaptive_avg_pool_backward(dy, xv.dim(1),
                                                                             xv.dim(2)));
                          });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  std::vector<const Tensor*> values;
  values.reserve(parts.size());
  for (const Var& p : parts) values.push_back(&p.value());
  std::vector<int> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return parts.front().graph().record(
      ops::concat_channels(values), parts, [ids](Graph& g, int, const Tensor& dy) {
        std::size_t offset = 0;
        for (int id : ids) {
          const Tensor& part = g.value(id);
          if (g.requires_grad(id)) {
            std::vector<double> slice(dy.data().begin() + static_cast<std::ptrdiff_t>(offset),
                                      dy.data().begin() +
                                          static_cast<std::ptrdiff_t>(offset + part.size()));
            g.accumulate(id, Tensor(part.shape(), std::move(slice)));
          }
          offset += part.size();
        }
      });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return a.graph().record(Tensor({1}, std::vector<double>{total}), {a},
                          [ia = a.id()](Graph& g, int, const Tensor& dy) {
                            g.accumulate(ia, Tensor(g.value(ia).shape(), dy[0]));
                          });
}

Var stop_gradient(Var a) { return a.graph().constant(a.value()); }

Var cross_entropy(Var probs, std::span<const std::uint8_t> labels, std::uint8_t ignore_label) {
  const Tensor& p = probs.value();
  require_rank(p, 3, "cross_entropy probs");
  const int k = p.dim(0);
  const std::size_t plane = static_cast<std::size_t>(p.dim(1)) * p.dim(2);
  if (labels.size() != plane) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for probs " +
                     shape_to_string(p.shape()));
  }
  constexpr double kFloor = 1e-12;
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < plane; ++i) {
    const std::uint8_t label = labels[i];
    if (label == ignore_label) continue;
    if (label >= k) throw InputError("cross_entropy: label " + std::to_string(label) + " >= K");
    total -= std::log(std::max(p[label * plane + i], kFloor));
    ++counted;
  }
  const double loss = counted ? total / static_cast<double>(counted) : 0.0;
  std::vector<std::uint8_t> kept(labels.begin(), labels.end());
  return probs.graph().record(
      Tensor({1}, std::vector<double>{loss}), {probs},
      [ip = probs.id(), kept = std::move(kept), ignore_label, counted](Graph& g, int,
                                                                       const Tensor& dy) {
        if (!counted) return;
        const Tensor& pv = g.value(ip);
        const std::size_t plane = kept.size();
        Tensor dp(pv.shape());
        const double scale = dy[0] / static_cast<double>(counted);
        for (std::size_t i = 0; i < plane; ++i) {
          if (kept[i] == ignore_label) continue;
          const double v = pv[kept[i] * plane + i];
          if (v > kFloor) dp[kept[i] * plane + i] = -scale / v;
        }
        g.accumulate(ip, std::move(dp));
      });
}

}  // namespace memseg::ag
