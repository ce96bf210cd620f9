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
#include "memseg/parameters.hpp"

#include <cmath>

#include "memseg/rng.hpp"

namespace memseg {
namespace {

Tensor glorot(std::uint64_t seed, const std::string& name, Shape shape, int fan_in, int fan_out) {
  Rng rng = substream(seed, "init/" + name);
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = uniform(rng, -a, a);
  return t;
}

}  // namespace

ConvParams init_conv1x1(std::uint64_t seed, const std::string& name, int cin, int cout) {
  return {glorot(seed, name, {cout, cin}, cin, cout), Tensor({cout})};
}

ConvParams init_conv3x3(std::uint64_t seed, const std::string& name, int cin, int cout) {
  return {glorot(seed, name, {cout, cin, 3, 3}, cin * 9, cout * 9), Tensor({cout})};
}

void append_conv(ParameterList& list, const std::string& name, ConvParams& conv) {
  list.push_back({name + ".weight", &conv.weight});
  list.push_back({name + ".bias", &conv.bias});
}

ConvVars bind(ag::Graph& g, const ConvParams& conv, bool trainable) {
  if (trainable) return {g.param(conv.weight), g.param(conv.bias)};
  return {g.constant(conv.weight), g.constant(conv.bias)};
}

}  // namespace memseg
