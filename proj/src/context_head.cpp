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
#include "memseg/context_head.hpp"

#include <string>

#include "memseg/error.hpp"
#include "memseg/log.hpp"

namespace memseg {

ContextHeadWeights init_context_head(std::uint64_t seed, const ContextHeadConfig& config,
                                     const std::array<int, 4>& ch) {
  if (config.embed_dim < 1 || config.ppm_channels < 1) {
    throw ConfigError("context head dims must be positive");
  }
  if (config.pool_grids.empty()) throw ConfigError("context head needs at least one pool grid");
  if (config.memory_source == MemoryFeatureSource::kBackboneStride8 &&
      ch[1] != config.embed_dim) {
    throw ConfigError("memory source x2 needs encoder C2 == embed_dim");
  }
  const int c = config.embed_dim;
  ContextHeadWeights w;
  w.config = config;
  for (int grid : config.pool_grids) {
    if (grid < 1) throw ConfigError("pool grid must be positive");
    w.pool_projections.push_back(
        init_conv1x1(seed, "head.pool" + std::to_string(grid), ch[3], config.ppm_channels));
  }
  const int pooled_in = ch[3] + static_cast<int>(config.pool_grids.size()) * config.ppm_channels;
  w.pool_fuse = init_conv1x1(seed, "head.pool_fuse", pooled_in, c);
  w.lateral2 = init_conv1x1(seed, "head.lateral2", ch[1], c);
  w.lateral3 = init_conv1x1(seed, "head.lateral3", ch[2], c);
  w.pyramid_fuse = init_conv1x1(seed, "head.pyramid_fuse", 3 * c, c);
  w.bottleneck = init_conv1x1(seed, "head.bottleneck", ch[1], c);
  return w;
}

ag::Var pyramid_pool(ag::Graph& g, const ContextHeadWeights& w, ag::Var x4) {
  const int h = x4.dim(1), wd = x4.dim(2);
  std::vector<ag::Var> parts{x4};
  for (std::size_t i = 0; i < w.config.pool_grids.size(); ++i) {
    const int grid = w.config.pool_grids[i];
    if (grid > h || grid > wd) {
      warn_once("ppm-skip-" + std::to_string(grid) + "-" + std::to_string(h) + "x" +
                    std::to_string(wd),
                "pyramid pooling grid " + std::to_string(grid) + " skipped for " +
                    std::to_string(h) + "x" + std::to_string(wd) + " input");
      parts.push_back(g.constant(Tensor({w.config.ppm_channels, h, wd})));
      continue;
    }
    const ConvVars proj = bind(g, w.pool_projections[i]);
    ag::Var pooled = ag::adaptive_avg_pool(x4, grid);
    ag::Var projected = ag::relu(ag::conv1x1(pooled, proj.weight, proj.bias));
    parts.push_back(ag::bilinear_resize(projected, h, wd));
  }
  const ConvVars fuse = bind(g, w.pool_fuse);
  return ag::relu(ag::conv1x1(ag::concat_channels(parts), fuse.weight, fuse.bias));
}

ag::Var topdown_fuse(ag::Graph& g, const ContextHeadWeights& w, const FeatureVars& f,
                     ag::Var pooled) {
  const int h2 = f.x2.dim(1), w2 = f.x2.dim(2);
  const int h3 = f.x3.dim(1), w3 = f.x3.dim(2);
  if (pooled.dim(1) != f.x4.dim(1) || pooled.dim(2) != f.x4.dim(2) || h3 * 2 != h2 ||
      w3 * 2 != w2) {
    throw ShapeError("topdown_fuse: inconsistent feature pyramid");
  }
  const ConvVars lat3 = bind(g, w.lateral3);
  const ConvVars lat2 = bind(g, w.lateral2);
  ag::Var level4 = pooled;
  ag::Var level3 =
      ag::add(ag::conv1x1(f.x3, lat3.weight, lat3.bias), ag::bilinear_resize(level4, h3, w3));
  ag::Var level2 =
      ag::add(ag::conv1x1(f.x2, lat2.weight, lat2.bias), ag::bilinear_resize(level3, h2, w2));
  ag::Var stacked = ag::concat_channels(
      {level2, ag::bilinear_resize(level3, h2, w2), ag::bilinear_resize(level4, h2, w2)});
  const ConvVars fuse = bind(g, w.pyramid_fuse);
  return ag::relu(ag::conv1x1(stacked, fuse.weight, fuse.bias));
}

ag::Var bottleneck(ag::Graph& g, const ContextHeadWeights& w, const FeatureVars& f) {
  const ConvVars b = bind(g, w.bottleneck);
  return ag::conv1x1(f.x2, b.weight, b.bias);
}

HeadVars run_context_head(ag::Graph& g, const ContextHeadWeights& w, const FeatureVars& f) {
  ag::Var context = topdown_fuse(g, w, f, pyramid_pool(g, w, f.x4));
  switch (w.config.memory_source) {
    case MemoryFeatureSource::kBottleneck:
      return {context, bottleneck(g, w, f)};
    case MemoryFeatureSource::kBackboneStride8:
      return {context, f.x2};
    case MemoryFeatureSource::kContextFeatures:
      return {context, context};
  }
  throw ConfigError("unknown memory feature source");
}

Tensor pyramid_pool(const ContextHeadWeights& w, const Tensor& x4) {
  ag::Graph g(false);
  return pyramid_pool(g, w, g.constant(x4)).value();
}

Tensor topdown_fuse(const ContextHeadWeights& w, const MultiLevelFeatures& features,
                    const Tensor& pooled) {
  ag::Graph g(false);
  FeatureVars f{g.constant(features.x1), g.constant(features.x2), g.constant(features.x3),
                g.constant(features.x4)};
  return topdown_fuse(g, w, f, g.constant(pooled)).value();
}

Tensor bottleneck(const ContextHeadWeights& w, const MultiLevelFeatures& features) {
  ag::Graph g(false);
  FeatureVars f{g.constant(features.x1), g.constant(features.x2), g.constant(features.x3),
                g.constant(features.x4)};
  return bottleneck(g, w, f).value();
}

void append_parameters(ParameterList& list, ContextHeadWeights& w) {
  for (std::size_t i = 0; i < w.pool_projections.size(); ++i) {
    append_conv(list, "head.pool" + std::to_string(w.config.pool_grids[i]),
                w.pool_projections[i]);
  }
  append_conv(list, "head.pool_fuse", w.pool_fuse);
  append_conv(list, "head.lateral2", w.lateral2);
  append_conv(list, "head.lateral3", w.lateral3);
  append_conv(list, "head.pyramid_fuse", w.pyramid_fuse);
  if (w.config.memory_source == MemoryFeatureSource::kBottleneck) {
    append_conv(list, "head.bottleneck", w.bottleneck);
  }
}

}  // namespace memseg
