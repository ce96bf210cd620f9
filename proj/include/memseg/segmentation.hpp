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
#ifndef MEMSEG_SEGMENTATION_HPP_
#define MEMSEG_SEGMENTATION_HPP_

#include <cstddef>
#include <cstdint>
#include <vector>

#include "memseg/tensor.hpp"

namespace memseg {

inline constexpr std::uint8_t kIgnoreLabel = 255;

// Per-pixel class labels in [0, K) plus kIgnoreLabel.
struct SegmentationMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  SegmentationMask() = default;
  SegmentationMask(int h, int w, std::uint8_t fill = 0);
  SegmentationMask(int h, int w, std::vector<std::uint8_t> values);

  std::size_t size() const { return labels.size(); }
  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const SegmentationMask&, const SegmentationMask&) = default;
};

// Per-pixel class distribution, K x H x W.
struct ProbabilityMap {
  Tensor probs;

  int classes() const { return probs.dim(0); }
  int height() const { return probs.dim(1); }
  int width() const { return probs.dim(2); }
};

enum class GuidanceSource {
  kPreviousFramePrediction,
  kCurrentFrameFirstPass,
  kGroundTruth,
  kSavedStageMask,
};

// Mask used to index the feature memory per pixel. Labels are always in
// [0, K); make_guidance enforces that.
struct GuidanceMask {
  SegmentationMask labels;
  GuidanceSource source = GuidanceSource::kGroundTruth;
};

// Throws InputError on any label outside [0, num_classes).
GuidanceMask make_guidance(SegmentationMask labels, GuidanceSource source, int num_classes);
// Ground truth to guidance: ignore pixels become class 0 (background).
GuidanceMask guidance_from_ground_truth(const SegmentationMask& gt, int num_classes);

// Top-left nearest-neighbour resize; never introduces new label values.
SegmentationMask nearest_resize(const SegmentationMask& mask, int out_h, int out_w);
SegmentationMask hflip(const SegmentationMask& mask);

// Per-pixel argmax over the channel axis of K x H x W; ties go to the lowest
// class index.
SegmentationMask argmax_channels(const Tensor& scores);

std::size_t count_differences(const SegmentationMask& a, const SegmentationMask& b);

// Throws ShapeError unless the probabilities are K x H x W with per-pixel
// sums within `tol` of 1 and entries in [0, 1].
void check_probability_map(const ProbabilityMap& map, double tol = 1e-6);

}  // namespace memseg

#endif  // MEMSEG_SEGMENTATION_HPP_
