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
#ifndef MEMSEG_MODEL_HPP_
#define MEMSEG_MODEL_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>

#include "memseg/attention.hpp"
#include "memseg/autograd.hpp"
#include "memseg/context_head.hpp"
#include "memseg/encoder.hpp"
#include "memseg/memory_bank.hpp"
#include "memseg/parameters.hpp"
#include "memseg/segmentation.hpp"
#include "memseg/temporal_memory.hpp"

namespace memseg {

// kEnsemble names the pair (A, B); a single Model is never of that variant.
enum class ModelVariant { kBaseline, kDecoderA, kDecoderB, kEnsemble };

std::string variant_name(ModelVariant variant);
// Throws ConfigError for unknown names.
ModelVariant parse_variant(const std::string& name);

struct ModelConfig {
  int num_classes = 5;
  EncoderConfig encoder;
  ContextHeadConfig head;
  int temporal_capacity = 2;
  TransformMode transform_mode = TransformMode::kUpsampleFeatures;
  MomentumSchedule momentum;
};

// Weights of one decoder variant plus its feature memory.
//
// `first_pass` classifies C_wi alone. For the baseline it is the whole
// prediction head; for A and B it supplies guidance masks (frame 0 for A,
// every frame for B) and is trained on detached C_wi.
struct Model {
  ModelConfig config;
  ModelVariant variant = ModelVariant::kDecoderA;
  std::uint64_t seed = 0;
  EncoderWeights encoder;
  ContextHeadWeights head;
  ConvParams first_pass;  // C -> K
  ProjectionSet attention;
  ProjectionSet temporal;  // decoder B only
  ConvParams classifier;   // 2C -> K
  FeatureMemory memory;

  int num_classes() const { return config.num_classes; }
  int embed_dim() const { return config.head.embed_dim; }
  bool uses_memory() const { return variant != ModelVariant::kBaseline; }
};

// Fresh weights; the memory starts as zeros until init_memory is run.
// Throws ConfigError for kEnsemble, K < 2 or an odd embedding dim.
Model build_model(std::uint64_t seed, const ModelConfig& config, ModelVariant variant);

// Trainable tensors of the variant, in a fixed order.
ParameterList parameters(Model& model);

// One frame's forward pass on a graph.
struct DecoderVars {
  ag::Var probs;             // K x H x W
  ag::Var first_pass;        // K x H x W; aliases probs for the baseline
  ag::Var memory_features;   // stride-8 input of the memory transform (invalid for baseline)
  ag::Var bottleneck;        // R before temporal attention (invalid for baseline)
  SegmentationMask guidance;  // the P actually used (empty for baseline)
};

// `guidance` null means "use the first-pass argmax". Decoder B attends over
// `temporal` before the memory path.
DecoderVars decoder_forward(ag::Graph& g, const Model& model, ag::Var image,
                            const SegmentationMask* guidance, const TemporalMemory& temporal);

ProbabilityMap baseline_forward(const Model& model, const Tensor& frame);
ProbabilityMap first_pass_forward(const Model& model, const Tensor& frame);
// The stride-8 memory-facing feature R alone, without gradients. Skips the
// deeper encoder stages when the configured source does not need them.
Tensor memory_features_forward(const Model& model, const Tensor& frame);
ProbabilityMap decoder_a_forward(const Model& model, const Tensor& frame,
                                 const GuidanceMask& guidance);
// Returns the prediction and `temporal` with this frame's R pushed.
// `guidance` overrides the current-frame first pass when non-null.
std::pair<ProbabilityMap, TemporalMemory> decoder_b_forward(
    const Model& model, const Tensor& frame, const TemporalMemory& temporal,
    const GuidanceMask* guidance = nullptr);

// argmax_k (p_a + p_b) per pixel, ties to the lowest class.
SegmentationMask ensemble(const ProbabilityMap& p_a, const ProbabilityMap& p_b);

void append_model(io::TensorBundle& bundle, const Model& model, const std::string& prefix = "");
Model read_model(const io::TensorBundle& bundle, const std::string& prefix = "");
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace memseg

#endif  // MEMSEG_MODEL_HPP_
