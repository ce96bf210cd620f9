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
#ifndef MEMSEG_ATTENTION_HPP_
#define MEMSEG_ATTENTION_HPP_

#include <cstdint>
#include <string>

#include "memseg/autograd.hpp"
#include "memseg/parameters.hpp"
#include "memseg/segmentation.hpp"
#include "memseg/tensor.hpp"

namespace memseg {

// 1x1 projections: q, k, v map C -> C/2 and o maps C/2 -> C.
struct ProjectionSet {
  ConvParams g_q;
  ConvParams g_k;
  ConvParams g_v;
  ConvParams g_o;

  int dim() const { return g_q.weight.dim(1); }
};

// Throws ConfigError when `dim` is odd or < 2.
ProjectionSet init_projections(std::uint64_t seed, const std::string& prefix, int dim);
void append_parameters(ParameterList& list, const std::string& prefix, ProjectionSet& proj);

// O = softmax_rows(q(r)^T k(c') / sqrt(C/2)), hw x hw.
ag::Var relations(ag::Graph& g, const ProjectionSet& proj, ag::Var r, ag::Var c_bi_prime);
// g_o(O v(c')), reshaped back to C x h x w.
ag::Var refine(ag::Graph& g, const ProjectionSet& proj, ag::Var o, ag::Var c_bi_prime);
// softmax over classes of bilinear_resize(cls(concat(c_wi, c_bi))).
ag::Var fuse_and_classify(ag::Graph& g, const ConvParams& cls, ag::Var c_wi, ag::Var c_bi,
                          int out_h, int out_w);

Tensor relations(const ProjectionSet& proj, const Tensor& r, const Tensor& c_bi_prime);
Tensor refine(const ProjectionSet& proj, const Tensor& o, const Tensor& c_bi_prime);
ProbabilityMap fuse_and_classify(const ConvParams& cls, const Tensor& c_wi, const Tensor& c_bi,
                                 int out_h, int out_w);

}  // namespace memseg

#endif  // MEMSEG_ATTENTION_HPP_
