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
#include <random>

#include <gtest/gtest.h>

#include "memseg/context_head.hpp"
#include "memseg/encoder.hpp"
#include "memseg/error.hpp"
#include "memseg/ops.hpp"
#include "test_util.hpp"

namespace memseg {
namespace {

using testing::random_tensor;

TEST(EncoderTest, InitIsDeterministicPerSeed) {
  const EncoderWeights a = init_encoder(7, {});
  const EncoderWeights b = init_encoder(7, {});
  const EncoderWeights c = init_encoder(8, {});
  ASSERT_EQ(a.convs.size(), 8u);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.convs.size(); ++i) {
    EXPECT_EQ(a.convs[i].weight, b.convs[i].weight);
    if (!(a.convs[i].weight == c.convs[i].weight)) any_diff = true;
  }
  EXPECT_TRUE(any_diff);
}

TEST(EncoderTest, DefaultChannelsAndGlorotBound) {
  const EncoderConfig config;
  EXPECT_EQ(config.channels, (std::array<int, 4>{16, 32, 64, 64}));
  const EncoderWeights w = init_encoder(1, config);
  const double bound = std::sqrt(6.0 / (3 * 9 + 16 * 9));
  for (double v : w.convs[0].weight.data()) EXPECT_LE(std::abs(v), bound);
}

TEST(EncoderTest, LevelShapesFollowStrides) {
  std::mt19937_64 rng(3);
  const EncoderWeights w = init_encoder(2, {});
  const MultiLevelFeatures f = encode(w, random_tensor(rng, {3, 64, 64}, 0.0, 1.0));
  EXPECT_EQ(f.x1.shape(), (Shape{16, 16, 16}));
  EXPECT_EQ(f.x2.shape(), (Shape{32, 8, 8}));
  EXPECT_EQ(f.x3.shape(), (Shape{64, 4, 4}));
  EXPECT_EQ(f.x4.shape(), (Shape{64, 2, 2}));
  EXPECT_TRUE(f.x4.all_finite());
}

TEST(EncoderTest, ZeroImageGivesZeroFeatures) {
  const EncoderWeights w = init_encoder(2, {});
  const MultiLevelFeatures f = encode(w, Tensor({3, 32, 64}));
  for (const Tensor* t : {&f.x1, &f.x2, &f.x3, &f.x4}) {
    for (double v : t->data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(EncoderTest, DeterministicForward) {
  std::mt19937_64 rng(5);
  const EncoderWeights w = init_encoder(2, {});
  const Tensor img = random_tensor(rng, {3, 32, 32}, 0.0, 1.0);
  EXPECT_EQ(encode(w, img).x4, encode(w, img).x4);
}

TEST(EncoderTest, RejectsIndivisibleDims) {
  const EncoderWeights w = init_encoder(2, {});
  EXPECT_THROW(encode(w, Tensor({3, 48, 64})), ShapeError);
  EXPECT_THROW(encode(w, Tensor({1, 32, 32})), ShapeError);
}

TEST(EncoderTest, FrozenEncoderContributesNoParameters) {
  EncoderConfig config;
  config.trainable = false;
  EncoderWeights w = init_encoder(2, config);
  ParameterList list;
  append_parameters(list, w);
  EXPECT_TRUE(list.empty());
  w.config.trainable = true;
  append_parameters(list, w);
  EXPECT_EQ(list.size(), 16u);
}

ContextHeadWeights small_head(MemoryFeatureSource source = MemoryFeatureSource::kBottleneck) {
  ContextHeadConfig config;
  config.embed_dim = 8;
  config.ppm_channels = 4;
  config.memory_source = source;
  return init_context_head(11, config, {4, 8, 8, 8});
}

TEST(ContextHeadTest, PyramidPoolKeepsSpatialDims) {
  std::mt19937_64 rng(1);
  const ContextHeadWeights w = small_head();
  const Tensor out = pyramid_pool(w, random_tensor(rng, {8, 6, 6}));
  EXPECT_EQ(out.shape(), (Shape{8, 6, 6}));
}

TEST(ContextHeadTest, PooledBranchesOfConstantInputAreConstant) {
  const Tensor x({8, 6, 6}, 2.5);
  for (int grid : {1, 2, 3, 6}) {
    const Tensor pooled = ops::adaptive_avg_pool(x, grid);
    for (double v : pooled.data()) EXPECT_DOUBLE_EQ(v, 2.5);
  }
  // Constant input through the whole module yields a spatially constant map.
  const Tensor out = pyramid_pool(small_head(), x);
  for (int c = 0; c < 8; ++c) {
    for (int y = 0; y < 6; ++y) {
      for (int xx = 0; xx < 6; ++xx) EXPECT_NEAR(out.at(c, y, xx), out.at(c, 0, 0), 1e-12);
    }
  }
}

TEST(ContextHeadTest, GridOneIsGlobalAverage) {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor(rng, {3, 4, 5});
  const Tensor pooled = ops::adaptive_avg_pool(x, 1);
  const Tensor broadcast = ops::bilinear_resize(pooled, 4, 5);
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (int y = 0; y < 4; ++y) {
      for (int xx = 0; xx < 5; ++xx) mean += x.at(c, y, xx);
    }
    mean /= 20.0;
    for (int y = 0; y < 4; ++y) {
      for (int xx = 0; xx < 5; ++xx) EXPECT_NEAR(broadcast.at(c, y, xx), mean, 1e-12);
    }
  }
}

TEST(ContextHeadTest, SmallInputSkipsLargeGrids) {
  std::mt19937_64 rng(4);
  const Tensor out = pyramid_pool(small_head(), random_tensor(rng, {8, 2, 2}));
  EXPECT_EQ(out.shape(), (Shape{8, 2, 2}));
  EXPECT_TRUE(out.all_finite());
}

MultiLevelFeatures random_features(std::mt19937_64& rng, int h, int w) {
  return {random_tensor(rng, {4, h / 4, w / 4}), random_tensor(rng, {8, h / 8, w / 8}),
          random_tensor(rng, {8, h / 16, w / 16}), random_tensor(rng, {8, h / 32, w / 32})};
}

TEST(ContextHeadTest, TopdownShapeAndZeroInput) {
  std::mt19937_64 rng(6);
  const ContextHeadWeights w = small_head();
  const MultiLevelFeatures f = random_features(rng, 64, 96);
  const Tensor out = topdown_fuse(w, f, pyramid_pool(w, f.x4));
  EXPECT_EQ(out.shape(), (Shape{8, 8, 12}));
  EXPECT_EQ(out, topdown_fuse(w, f, pyramid_pool(w, f.x4)));

  const MultiLevelFeatures zero{Tensor({4, 16, 24}), Tensor({8, 8, 12}), Tensor({8, 4, 6}),
                                Tensor({8, 2, 3})};
  const Tensor fused = topdown_fuse(w, zero, pyramid_pool(w, zero.x4));
  for (double v : fused.data()) EXPECT_EQ(v, 0.0);
}

TEST(ContextHeadTest, TopdownRejectsInconsistentPyramid) {
  std::mt19937_64 rng(6);
  const ContextHeadWeights w = small_head();
  MultiLevelFeatures f = random_features(rng, 64, 64);
  f.x3 = random_tensor(rng, {8, 3, 4});
  EXPECT_THROW(topdown_fuse(w, f, f.x4), ShapeError);
}

TEST(ContextHeadTest, IdentityBottleneckPassesStride8Level) {
  std::mt19937_64 rng(8);
  ContextHeadWeights w = small_head();
  w.bottleneck.weight = Tensor({8, 8});
  for (int i = 0; i < 8; ++i) w.bottleneck.weight.at(i, i) = 1.0;
  const MultiLevelFeatures f = random_features(rng, 64, 64);
  const Tensor r = bottleneck(w, f);
  EXPECT_EQ(r.shape(), (Shape{8, 8, 8}));
  EXPECT_EQ(r, f.x2);
}

TEST(ContextHeadTest, MemorySourceSwitch) {
  std::mt19937_64 rng(9);
  const MultiLevelFeatures f = random_features(rng, 64, 64);
  for (auto source : {MemoryFeatureSource::kBottleneck, MemoryFeatureSource::kBackboneStride8,
                      MemoryFeatureSource::kContextFeatures}) {
    const ContextHeadWeights w = small_head(source);
    ag::Graph g(false);
    const FeatureVars vars{g.constant(f.x1), g.constant(f.x2), g.constant(f.x3),
                           g.constant(f.x4)};
    const HeadVars out = run_context_head(g, w, vars);
    EXPECT_EQ(out.context.shape(), out.memory_features.shape());
    if (source == MemoryFeatureSource::kBackboneStride8) {
      EXPECT_EQ(out.memory_features.value(), f.x2);
    }
    if (source == MemoryFeatureSource::kContextFeatures) {
      EXPECT_EQ(out.memory_features.value(), out.context.value());
    }
  }
  ContextHeadConfig bad;
  bad.memory_source = MemoryFeatureSource::kBackboneStride8;
  EXPECT_THROW(init_context_head(1, bad, {16, 16, 64, 64}), ConfigError);
}

}  // namespace
}  // namespace memseg
