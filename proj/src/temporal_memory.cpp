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
#include "memseg/temporal_memory.hpp"

#include <cmath>
#include <vector>

#include "memseg/error.hpp"

namespace memseg {

TemporalMemory push(TemporalMemory mem, const Tensor& feat) {
  if (mem.capacity < 1) throw ConfigError("temporal memory capacity must be >= 1");
  if (feat.rank() != 3) throw ShapeError("temporal memory entries must be C x h x w");
  if (!mem.buffer.empty() && mem.buffer.front().shape() != feat.shape()) {
    throw ShapeError("temporal memory: pushed " + shape_to_string(feat.shape()) +
                     " into buffer of " + shape_to_string(mem.buffer.front().shape()));
  }
  mem.buffer.push_back(feat);
  while (static_cast<int>(mem.buffer.size()) > mem.capacity) mem.buffer.pop_front();
  return mem;
}

ag::Var attend(ag::Graph& g, const ProjectionSet& proj, const TemporalMemory& mem,
               ag::Var current) {
  if (mem.buffer.empty()) return current;
  const Shape& shape = current.shape();
  if (shape.size() != 3 || shape != mem.buffer.front().shape()) {
    throw ShapeError("attend: current " + shape_to_string(shape) + " vs buffer " +
                     shape_to_string(mem.buffer.front().shape()));
  }
  const int hw = shape[1] * shape[2], half = proj.dim() / 2;
  const ConvVars q = bind(g, proj.g_q);
  const ConvVars k = bind(g, proj.g_k);
  const ConvVars v = bind(g, proj.g_v);
  const ConvVars o = bind(g, proj.g_o);

  // Stack buffered pixels along a leading axis: (len*hw) x C/2.
  std::vector<ag::Var> keys, values;
  for (const Tensor& frame : mem.buffer) {
    ag::Var f = g.constant(frame);
    keys.push_back(ag::reshape(
        ag::transpose(ag::reshape(ag::conv1x1(f, k.weight, k.bias), {half, hw})), {hw, half, 1}));
    values.push_back(ag::reshape(
        ag::transpose(ag::reshape(ag::conv1x1(f, v.weight, v.bias), {half, hw})), {hw, half, 1}));
  }
  const int n = hw * static_cast<int>(mem.buffer.size());
  ag::Var key_mat = ag::reshape(ag::concat_channels(keys), {n, half});
  ag::Var value_mat = ag::reshape(ag::concat_channels(values), {n, half});

  ag::Var queries =
      ag::transpose(ag::reshape(ag::conv1x1(current, q.weight, q.bias), {half, hw}));
  const double divisor = std::sqrt(static_cast<double>(half));
  ag::Var weights =
      ag::softmax_rows(ag::scale(ag::matmul(queries, ag::transpose(key_mat)), 1.0 / divisor));
  ag::Var mixed = ag::transpose(ag::matmul(weights, value_mat));  // C/2 x hw
  ag::Var out = ag::conv1x1(ag::reshape(mixed, {half, shape[1], shape[2]}), o.weight, o.bias);
  return ag::add(current, out);
}

Tensor attend(const ProjectionSet& proj, const TemporalMemory& mem, const Tensor& current) {
  ag::Graph g(false);
  return attend(g, proj, mem, g.constant(current)).value();
}

}  // namespace memseg
