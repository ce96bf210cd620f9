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
#include "memseg/attention.hpp"

#include <cmath>

#include "memseg/error.hpp"

namespace memseg {
namespace {

void check_pair(const ag::Var& a, const ag::Var& b, const char* what) {
  if (a.shape().size() != 3 || a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": expected equal C x h x w inputs, got " +
                     shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
}

// C x h x w -> C x hw
ag::Var flatten(ag::Var x) { return ag::reshape(x, {x.dim(0), x.dim(1) * x.dim(2)}); }

}  // namespace

ProjectionSet init_projections(std::uint64_t seed, const std::string& prefix, int dim) {
  if (dim < 2 || dim % 2 != 0) {
    throw ConfigError("attention embedding dim must be even and >= 2, got " +
                      std::to_string(dim));
  }
  const int half = dim / 2;
  return {init_conv1x1(seed, prefix + ".g_q", dim, half),
          init_conv1x1(seed, prefix + ".g_k", dim, half),
          init_conv1x1(seed, prefix + ".g_v", dim, half),
          init_conv1x1(seed, prefix + ".g_o", half, dim)};
}

void append_parameters(ParameterList& list, const std::string& prefix, ProjectionSet& proj) {
  append_conv(list, prefix + ".g_q", proj.g_q);
  append_conv(list, prefix + ".g_k", proj.g_k);
  append_conv(list, prefix + ".g_v", proj.g_v);
  append_conv(list, prefix + ".g_o", proj.g_o);
}

ag::Var relations(ag::Graph& g, const ProjectionSet& proj, ag::Var r, ag::Var c_bi_prime) {
  check_pair(r, c_bi_prime, "relations");
  if (r.dim(0) != proj.dim()) throw ShapeError("relations: channel count != projection dim");
  const ConvVars q = bind(g, proj.g_q);
  const ConvVars k = bind(g, proj.g_k);
  ag::Var queries = flatten(ag::conv1x1(r, q.weight, q.bias));
  ag::Var keys = flatten(ag::conv1x1(c_bi_prime, k.weight, k.bias));
  const double divisor = std::sqrt(static_cast<double>(proj.dim() / 2));
  return ag::softmax_rows(ag::scale(ag::matmul(ag::transpose(queries), keys), 1.0 / divisor));
}

ag::Var refine(ag::Graph& g, const ProjectionSet& proj, ag::Var o, ag::Var c_bi_prime) {
  if (c_bi_prime.shape().size() != 3) throw ShapeError("refine: expected C x h x w features");
  const int h = c_bi_prime.dim(1), w = c_bi_prime.dim(2);
  if (o.shape() != Shape{h * w, h * w}) {
    throw ShapeError("refine: attention map " + shape_to_string(o.shape()) +
                     " does not match " + std::to_string(h * w) + " pixels");
  }
  const ConvVars v = bind(g, proj.g_v);
  const ConvVars out = bind(g, proj.g_o);
  ag::Var values = flatten(ag::conv1x1(c_bi_prime, v.weight, v.bias));
  ag::Var mixed = ag::matmul(values, ag::transpose(o));  // C/2 x hw, column i = sum_j O[i,j] v_j
  ag::Var spatial = ag::reshape(mixed, {proj.dim() / 2, h, w});
  return ag::conv1x1(spatial, out.weight, out.bias);
}

ag::Var fuse_and_classify(ag::Graph& g, const ConvParams& cls, ag::Var c_wi, ag::Var c_bi,
                          int out_h, int out_w) {
  check_pair(c_wi, c_bi, "fuse_and_classify");
  const ConvVars head = bind(g, cls);
  ag::Var logits = ag::conv1x1(ag::concat_channels({c_wi, c_bi}), head.weight, head.bias);
  return ag::softmax_channels(ag::bilinear_resize(logits, out_h, out_w));
}

Tensor relations(const ProjectionSet& proj, const Tensor& r, const Tensor& c_bi_prime) {
  ag::Graph g(false);
  return relations(g, proj, g.constant(r), g.constant(c_bi_prime)).value();
}

Tensor refine(const ProjectionSet& proj, const Tensor& o, const Tensor& c_bi_prime) {
  ag::Graph g(false);
  return refine(g, proj, g.constant(o), g.constant(c_bi_prime)).value();
}

ProbabilityMap fuse_and_classify(const ConvParams& cls, const Tensor& c_wi, const Tensor& c_bi,
                                 int out_h, int out_w) {
  ag::Graph g(false);
  return {fuse_and_classify(g, cls, g.constant(c_wi), g.constant(c_bi), out_h, out_w).value()};
}

}  // namespace memseg
