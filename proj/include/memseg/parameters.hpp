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
#ifndef MEMSEG_PARAMETERS_HPP_
#define MEMSEG_PARAMETERS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "memseg/autograd.hpp"
#include "memseg/tensor.hpp"

namespace memseg {

// Weight + bias of a 1x1 (Cout x Cin) or 3x3 (Cout x Cin x 3 x 3) conv.
struct ConvParams {
  Tensor weight;
  Tensor bias;
};

struct NamedParameter {
  std::string name;
  Tensor* tensor;
};
using ParameterList = std::vector<NamedParameter>;

// Glorot-uniform weights in [-a, a], a = sqrt(6 / (fan_in + fan_out)), zero
// bias. The stream is substream(seed, "init/" + name), so every parameter is
// a pure function of (seed, name, shape).
ConvParams init_conv1x1(std::uint64_t seed, const std::string& name, int cin, int cout);
ConvParams init_conv3x3(std::uint64_t seed, const std::string& name, int cin, int cout);

void append_conv(ParameterList& list, const std::string& name, ConvParams& conv);

// Binds a conv's tensors to a graph: trainable ones as parameters, frozen
// ones as constants.
struct ConvVars {
  ag::Var weight;
  ag::Var bias;
};
ConvVars bind(ag::Graph& g, const ConvParams& conv, bool trainable = true);

}  // namespace memseg

#endif  // MEMSEG_PARAMETERS_HPP_
