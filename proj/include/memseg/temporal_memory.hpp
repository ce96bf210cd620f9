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
#ifndef MEMSEG_TEMPORAL_MEMORY_HPP_
#define MEMSEG_TEMPORAL_MEMORY_HPP_

#include <deque>

#include "memseg/attention.hpp"
#include "memseg/autograd.hpp"
#include "memseg/tensor.hpp"

namespace memseg {

// Rolling buffer of recent stride-8 features, oldest first.
struct TemporalMemory {
  int capacity = 2;
  std::deque<Tensor> buffer;

  std::size_t size() const { return buffer.size(); }
  bool empty() const { return buffer.empty(); }
};

// Appends `feat`, evicting the oldest entry past capacity. Throws ShapeError
// when `feat` does not match the buffered shape.
TemporalMemory push(TemporalMemory mem, const Tensor& feat);

// current + g_o(attention of q(current) over k/v of every buffered pixel),
// with the same sqrt(C/2) scaling as the memory attention. An empty buffer
// returns `current` unchanged.
ag::Var attend(ag::Graph& g, const ProjectionSet& proj, const TemporalMemory& mem,
               ag::Var current);
Tensor attend(const ProjectionSet& proj, const TemporalMemory& mem, const Tensor& current);

}  // namespace memseg

#endif  // MEMSEG_TEMPORAL_MEMORY_HPP_
