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
#ifndef MEMSEG_MEMORY_BANK_HPP_
#define MEMSEG_MEMORY_BANK_HPP_

#include <cstdint>
#include <filesystem>
#include <vector>

#include "memseg/rng.hpp"
#include "memseg/segmentation.hpp"
#include "memseg/tensor.hpp"
#include "memseg/tensor_io.hpp"

namespace memseg {

enum class MomentumMode { kConstant, kPoly };

// m(t) = m0 for kConstant, m0 * (1 - t / total_steps)^power for kPoly.
struct MomentumSchedule {
  double m0 = 0.1;
  MomentumMode mode = MomentumMode::kConstant;
  double power = 0.9;
  std::int64_t total_steps = 0;  // required by kPoly

  void validate() const;
  double at(std::int64_t t) const;
};

// Dataset-level class representations, K x C, plus the update counter.
struct FeatureMemory {
  Tensor matrix;
  MomentumSchedule schedule;
  std::int64_t t = 0;

  int classes() const { return matrix.dim(0); }
  int dim() const { return matrix.dim(1); }
};

// How pixel features are matched to ground-truth labels inside transform_T.
enum class TransformMode {
  kUpsampleFeatures,  // bilinearly upsample r to the mask size (default)
  kNearestLabels,     // nearest-downsample the mask to r's grid (fast)
};

// Per-class candidate representations for one image.
//
// Rows start as copies of `memory`. For each class k present in `gt`, the
// pixel features R_k (N x C) are weighted by (1 - S_i) / sum_j (1 - S_j),
// where S is cosine similarity to memory[k]; when the denominator is zero the
// plain mean is used. Ignore pixels never contribute.
Tensor transform_T(const Tensor& r, const SegmentationMask& gt, const Tensor& memory,
                   TransformMode mode = TransformMode::kUpsampleFeatures);

// memory <- (1 - m) * memory + m * target with m = schedule.at(t); t += 1.
void update_memory(FeatureMemory& memory, const Tensor& target);
void update_memory(FeatureMemory& memory, const Tensor& r_prev, const SegmentationMask& gt_prev,
                   TransformMode mode = TransformMode::kUpsampleFeatures);

// Per-pixel memory lookup at feature resolution h x w: C x h x w. The
// guidance is nearest-downsampled first. Throws InputError on labels >= K.
Tensor gather(const Tensor& memory, const SegmentationMask& guidance, int h, int w);
Tensor gather(const Tensor& memory, const GuidanceMask& guidance, int h, int w);

// Single-pass initialization: for each class, one stride-8 pixel embedding
// whose nearest-downsampled label is that class, chosen uniformly by
// reservoir sampling. Classes never seen get uniform [-0.1, 0.1] rows.
class MemoryInitializer {
 public:
  MemoryInitializer(std::uint64_t seed, int num_classes, int dim);

  void observe(const Tensor& features, const SegmentationMask& gt);
  FeatureMemory finish(const MomentumSchedule& schedule);

 private:
  int num_classes_;
  int dim_;
  Rng reservoir_rng_;
  Rng fallback_rng_;
  std::vector<std::uint64_t> seen_;
  Tensor chosen_;
};

void append_memory(io::TensorBundle& bundle, const FeatureMemory& memory);
FeatureMemory read_memory(const io::TensorBundle& bundle);
void save_memory(const std::filesystem::path& path, const FeatureMemory& memory);
FeatureMemory load_memory(const std::filesystem::path& path);

}  // namespace memseg

#endif  // MEMSEG_MEMORY_BANK_HPP_
