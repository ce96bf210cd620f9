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
#ifndef MEMSEG_CONTEXT_HEAD_HPP_
#define MEMSEG_CONTEXT_HEAD_HPP_

#include <array>
#include <cstdint>
#include <vector>

#include "memseg/autograd.hpp"
#include "memseg/encoder.hpp"
#include "memseg/parameters.hpp"

namespace memseg {

// Which stride-8 feature plays the role of the memory-facing representation.
enum class MemoryFeatureSource {
  kBottleneck,       // learned 1x1 projection of x2 (default)
  kBackboneStride8,  // x2 itself; requires C2 == embed_dim
  kContextFeatures,  // the head output C_wi
};

struct ContextHeadConfig {
  int embed_dim = 32;
  int ppm_channels = 16;
  std::vector<int> pool_grids{1, 2, 3, 6};
  MemoryFeatureSource memory_source = MemoryFeatureSource::kBottleneck;
};

// Pyramid pooling on x4 followed by a top-down fusion down to stride 8.
// Pool branches and fusion convs are followed by ReLU; lateral and
// bottleneck projections are linear.
struct ContextHeadWeights {
  ContextHeadConfig config;
  std::vector<ConvParams> pool_projections;  // C4 -> ppm_channels, one per grid
  ConvParams pool_fuse;                      // C4 + grids*ppm_channels -> C
  ConvParams lateral2;                       // C2 -> C
  ConvParams lateral3;                       // C3 -> C
  ConvParams pyramid_fuse;                   // 3C -> C
  ConvParams bottleneck;                     // C2 -> C
};

ContextHeadWeights init_context_head(std::uint64_t seed, const ContextHeadConfig& config,
                                     const std::array<int, 4>& encoder_channels);

// A grid larger than x4's spatial dims is skipped (its branch contributes
// zeros) with a logged warning.
Tensor pyramid_pool(const ContextHeadWeights& w, const Tensor& x4);
Tensor topdown_fuse(const ContextHeadWeights& w, const MultiLevelFeatures& features,
                    const Tensor& pooled);
Tensor bottleneck(const ContextHeadWeights& w, const MultiLevelFeatures& features);

ag::Var pyramid_pool(ag::Graph& g, const ContextHeadWeights& w, ag::Var x4);
ag::Var topdown_fuse(ag::Graph& g, const ContextHeadWeights& w, const FeatureVars& features,
                     ag::Var pooled);
ag::Var bottleneck(ag::Graph& g, const ContextHeadWeights& w, const FeatureVars& features);

struct HeadVars {
  ag::Var context;          // C_wi, C x H/8 x W/8
  ag::Var memory_features;  // R, C x H/8 x W/8
};
HeadVars run_context_head(ag::Graph& g, const ContextHeadWeights& w, const FeatureVars& features);

void append_parameters(ParameterList& list, ContextHeadWeights& weights);

}  // namespace memseg

#endif  // MEMSEG_CONTEXT_HEAD_HPP_
