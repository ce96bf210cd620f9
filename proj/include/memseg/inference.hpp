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
#ifndef MEMSEG_INFERENCE_HPP_
#define MEMSEG_INFERENCE_HPP_

#include <cstddef>
#include <functional>
#include <vector>

#include "memseg/model.hpp"
#include "memseg/segmentation.hpp"
#include "memseg/tensor.hpp"

namespace memseg {

struct InferenceConfig {
  std::vector<double> scales{0.75, 1.0, 1.25, 1.5, 1.75};
  bool flip = true;
  int stages = 0;
  // Whether saved stage masks replace decoder B's current-frame first pass.
  bool stage_feedback_b = false;

  // Throws ConfigError on empty or non-positive scales or negative stages.
  void validate() const;
};

// dim * scale rounded up to a multiple of 32; 0 when dim * scale < 32.
int scaled_dim(int dim, double scale);

// One test-time branch. Indices are 2 * scale_index (+1 when flipped), so
// they stay stable when other scales are skipped.
struct Branch {
  int index = 0;
  double scale = 1.0;
  bool flipped = false;
};
using BranchPredictor = std::function<ProbabilityMap(const Tensor& image, const Branch& branch)>;

// Runs `predict` on every rescaled (and, with cfg.flip, mirrored) copy of
// `frame`, maps each result back to the frame size and orientation, then
// averages in branch order and renormalizes per pixel. A single branch is
// returned untouched. Throws InputError when every scale is skipped.
ProbabilityMap multi_scale_flip_infer(const Tensor& frame, const InferenceConfig& cfg,
                                      const BranchPredictor& predict);

// Convenience for stateless variants (baseline, decoder A with fixed guidance).
ProbabilityMap multi_scale_flip_infer(const Model& model, const Tensor& frame,
                                      const InferenceConfig& cfg,
                                      const GuidanceMask* guidance = nullptr);

struct VideoResult {
  std::vector<SegmentationMask> masks;
  std::vector<ProbabilityMap> probs;
};

// Frames in order. Decoder A uses the single-scale first-pass argmax for
// frame 0 and the previous prediction afterwards; decoder B keeps one
// temporal memory per branch. `stage_guidance`, when given, replaces P per
// frame (for B only with cfg.stage_feedback_b). Throws InputError on an
// empty clip.
VideoResult video_infer(const Model& model, const std::vector<Tensor>& frames,
                        const InferenceConfig& cfg,
                        const std::vector<SegmentationMask>* stage_guidance = nullptr);

struct StageResult {
  int stage = 0;
  VideoResult result;
  std::size_t changed_pixels = 0;  // vs the previous stage; 0 for stage 0
};

// One inference round given the previous stage's masks (null for stage 0).
using StagePass = std::function<VideoResult(const std::vector<SegmentationMask>* guidance)>;

// Stage 0 plus n_stages feedback rounds, all retained.
std::vector<StageResult> multi_stage_infer(const StagePass& pass, int n_stages);
std::vector<StageResult> multi_stage_infer(const Model& model, const std::vector<Tensor>& frames,
                                           const InferenceConfig& cfg, int n_stages);

}  // namespace memseg

#endif  // MEMSEG_INFERENCE_HPP_
