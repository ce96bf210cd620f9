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
#ifndef MEMSEG_ENCODER_HPP_
#define MEMSEG_ENCODER_HPP_

#include <array>
#include <cstdint>
#include <vector>

#include "memseg/autograd.hpp"
#include "memseg/parameters.hpp"
#include "memseg/tensor.hpp"

namespace memseg {

struct EncoderConfig {
  std::array<int, 4> channels{16, 32, 64, 64};
  bool trainable = true;
};

// Small all-convolutional backbone: a stem of two stride-2 3x3 convs, then
// three stages of (stride-2 3x3, stride-1 3x3), each followed by ReLU.
// Levels come out at strides 4, 8, 16 and 32.
struct EncoderWeights {
  EncoderConfig config;
  std::uint64_t seed = 0;
  // stem0, stem1, stage2a, stage2b, stage3a, stage3b, stage4a, stage4b
  std::vector<ConvParams> convs;
};

struct MultiLevelFeatures {
  Tensor x1;  // C1 x H/4  x W/4
  Tensor x2;  // C2 x H/8  x W/8
  Tensor x3;  // C3 x H/16 x W/16
  Tensor x4;  // C4 x H/32 x W/32
};

struct FeatureVars {
  ag::Var x1;
  ag::Var x2;
  ag::Var x3;
  ag::Var x4;
};

inline constexpr int kEncoderStride = 32;

EncoderWeights init_encoder(std::uint64_t seed, const EncoderConfig& config);

// Throws ShapeError unless the image is 3 x H x W with H, W divisible by 32.
MultiLevelFeatures encode(const EncoderWeights& weights, const Tensor& image);
FeatureVars encode(ag::Graph& g, const EncoderWeights& weights, ag::Var image);
// Runs only the stem and the first stage; the returned x3, x4 are invalid.
FeatureVars encode_to_stride8(ag::Graph& g, const EncoderWeights& weights, ag::Var image);

MultiLevelFeatures values(const FeatureVars& vars);

void append_parameters(ParameterList& list, EncoderWeights& weights);

}  // namespace memseg

#endif  // MEMSEG_ENCODER_HPP_
