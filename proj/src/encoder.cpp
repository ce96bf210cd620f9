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
#include "memseg/encoder.hpp"

#include <string>

#include "memseg/error.hpp"

namespace memseg {
namespace {

constexpr const char* kConvNames[8] = {"stem0",   "stem1",   "stage2a", "stage2b",
                                       "stage3a", "stage3b", "stage4a", "stage4b"};
constexpr int kConvStrides[8] = {2, 2, 2, 1, 2, 1, 2, 1};

void check_image(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("encode: expected a 3 x H x W image, got " + shape_to_string(image.shape()));
  }
  if (image.dim(1) % kEncoderStride || image.dim(2) % kEncoderStride) {
    throw ShapeError("encode: image dims " + std::to_string(image.dim(1)) + "x" +
                     std::to_string(image.dim(2)) + " are not divisible by 32");
  }
}

}  // namespace

EncoderWeights init_encoder(std::uint64_t seed, const EncoderConfig& config) {
  for (int c : config.channels) {
    if (c < 1) throw ConfigError("encoder channels must be positive");
  }
  const auto& ch = config.channels;
  const int in_ch[8] = {3, ch[0], ch[0], ch[1], ch[1], ch[2], ch[2], ch[3]};
  const int out_ch[8] = {ch[0], ch[0], ch[1], ch[1], ch[2], ch[2], ch[3], ch[3]};
  EncoderWeights w{config, seed, {}};
  for (int i = 0; i < 8; ++i) {
    w.convs.push_back(
        init_conv3x3(seed, std::string("encoder.") + kConvNames[i], in_ch[i], out_ch[i]));
  }
  return w;
}

static FeatureVars encode_prefix(ag::Graph& g, const EncoderWeights& weights, ag::Var image,
                          int convs) {
  check_image(image.value());
  const bool trainable = weights.config.trainable;
  ag::Var levels[8];
  ag::Var x = image;
  for (int i = 0; i < convs; ++i) {
    const ConvVars conv = bind(g, weights.convs[static_cast<std::size_t>(i)], trainable);
    x = ag::relu(ag::conv3x3(x, conv.weight, conv.bias, kConvStrides[i]));
    levels[i] = x;
  }
  return {levels[1], levels[3], levels[5], levels[7]};
}

FeatureVars encode(ag::Graph& g, const EncoderWeights& weights, ag::Var image) {
  return encode_prefix(g, weights, image, 8);
}

FeatureVars encode_to_stride8(ag::Graph& g, const EncoderWeights& weights, ag::Var image) {
  return encode_prefix(g, weights, image, 4);
}

MultiLevelFeatures encode(const EncoderWeights& weights, const Tensor& image) {
  ag::Graph g(false);
  return values(encode(g, weights, g.constant(image)));
}

MultiLevelFeatures values(const FeatureVars& vars) {
  return {vars.x1.value(), vars.x2.value(), vars.x3.value(), vars.x4.value()};
}

void append_parameters(ParameterList& list, EncoderWeights& weights) {
  if (!weights.config.trainable) return;
  for (std::size_t i = 0; i < weights.convs.size(); ++i) {
    append_conv(list, std::string("encoder.") + kConvNames[i], weights.convs[i]);
  }
}

}  // namespace memseg
