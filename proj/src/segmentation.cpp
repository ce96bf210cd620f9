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
#include "memseg/segmentation.hpp"

#include <cmath>
#include <string>

#include "memseg/error.hpp"
#include "memseg/ops.hpp"

namespace memseg {

SegmentationMask::SegmentationMask(int h, int w, std::uint8_t fill)
    : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

SegmentationMask::SegmentationMask(int h, int w, std::vector<std::uint8_t> values)
    : height(h), width(w), labels(std::move(values)) {
  if (labels.size() != static_cast<std::size_t>(h) * w) {
    throw ShapeError("mask data length does not match " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
}

GuidanceMask make_guidance(SegmentationMask labels, GuidanceSource source, int num_classes) {
  for (std::uint8_t v : labels.labels) {
    if (v >= num_classes) {
      throw InputError("guidance label " + std::to_string(v) + " outside [0," +
                       std::to_string(num_classes) + ")");
    }
  }
  return GuidanceMask{std::move(labels), source};
}

GuidanceMask guidance_from_ground_truth(const SegmentationMask& gt, int num_classes) {
  SegmentationMask labels = gt;
  for (std::uint8_t& v : labels.labels)
    if (v == kIgnoreLabel) v = 0;
  return make_guidance(std::move(labels), GuidanceSource::kGroundTruth, num_classes);
}

SegmentationMask nearest_resize(const SegmentationMask& mask, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ConfigError("nearest_resize: target dims must be >= 1");
  if (out_h == mask.height && out_w == mask.width) return mask;
  SegmentationMask out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const int sy = ops::nearest_source_index(y, mask.height, out_h);
    for (int x = 0; x < out_w; ++x) {
      out.at(y, x) = mask.at(sy, ops::nearest_source_index(x, mask.width, out_w));
    }
  }
  return out;
}

SegmentationMask hflip(const SegmentationMask& mask) {
  SegmentationMask out(mask.height, mask.width);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) out.at(y, x) = mask.at(y, mask.width - 1 - x);
  return out;
}

SegmentationMask argmax_channels(const Tensor& scores) {
  require_rank(scores, 3, "argmax_channels");
  const int k = scores.dim(0), h = scores.dim(1), w = scores.dim(2);
  if (k > 255) throw ShapeError("argmax_channels: more than 255 classes");
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  SegmentationMask out(h, w);
  for (std::size_t p = 0; p < plane; ++p) {
    int best = 0;
    double best_value = scores[p];
    for (int c = 1; c < k; ++c) {
      const double v = scores[c * plane + p];
      if (v > best_value) {
        best_value = v;
        best = c;
      }
    }
    out.labels[p] = static_cast<std::uint8_t>(best);
  }
  return out;
}

std::size_t count_differences(const SegmentationMask& a, const SegmentationMask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError("count_differences: mask dims differ");
  }
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.labels.size(); ++i) n += a.labels[i] != b.labels[i];
  return n;
}

void check_probability_map(const ProbabilityMap& map, double tol) {
  require_rank(map.probs, 3, "probability map");
  const int k = map.classes();
  const std::size_t plane = static_cast<std::size_t>(map.height()) * map.width();
  for (std::size_t p = 0; p < plane; ++p) {
    double total = 0.0;
    for (int c = 0; c < k; ++c) {
      const double v = map.probs[c * plane + p];
      if (!(v >= 0.0 && v <= 1.0 + tol)) throw ShapeError("probability outside [0,1]");
      total += v;
    }
    if (std::abs(total - 1.0) > tol) throw ShapeError("probabilities do not sum to 1");
  }
}

}  // namespace memseg
