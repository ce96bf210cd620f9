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
#ifndef MEMSEG_TRAINING_HPP_
#define MEMSEG_TRAINING_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "memseg/autograd.hpp"
#include "memseg/dataset.hpp"
#include "memseg/model.hpp"
#include "memseg/rng.hpp"

namespace memseg {

struct AugmentationConfig {
  double scale_min = 0.5;
  double scale_max = 2.0;
  double flip_probability = 0.5;
  double brightness = 0.1;
  double contrast = 0.1;
  double saturation = 0.1;

  void validate() const;
};

// Guidance for decoder A after warm-up.
enum class GuidanceMode {
  kPreviousGroundTruth,  // previous frame's ground truth (default)
  kPreviousPrediction,   // live no-grad prediction on the previous frame
};

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.05;
  int steps = 2000;
  int crop_height = 64;
  int crop_width = 64;
  int batch_size = 4;
  double warmup_fraction = 0.2;
  GuidanceMode guidance_mode = GuidanceMode::kPreviousGroundTruth;
  AugmentationConfig augment;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints

  void validate() const;
  // Steps [0, warmup_steps()) train with ground-truth guidance.
  std::int64_t warmup_steps() const;
};

struct FrameRef {
  std::size_t video = 0;
  int frame = 0;
  bool has_previous() const { return frame > 0; }
};

// Uniform over all (video, frame) pairs. Throws ConfigError when there are
// no frames.
FrameRef sample_frame(const std::vector<int>& frame_counts, Rng& rng);

// One random geometric + photometric transform, shared by a frame, its
// predecessors and their masks.
struct AugmentParams {
  int scaled_height = 0;
  int scaled_width = 0;
  bool flip = false;
  double brightness = 0.0;
  double contrast = 1.0;
  double saturation = 1.0;
  int offset_y = 0;  // crop start when scaled >= crop, paste start otherwise
  int offset_x = 0;
  int crop_height = 0;
  int crop_width = 0;
};

AugmentParams draw_augmentation(const AugmentationConfig& cfg, int height, int width,
                                int crop_height, int crop_width, Rng& rng);
// Identity transform: no rescale, flip or jitter, top-left crop.
AugmentParams identity_augmentation(int height, int width, int crop_height, int crop_width);
// Bilinear rescale, flip, colour jitter, then crop or zero-pad.
Tensor apply_augmentation(const AugmentParams& p, const Tensor& frame);
// Nearest rescale, flip, then crop or pad with the ignore label.
SegmentationMask apply_augmentation(const AugmentParams& p, const SegmentationMask& mask);

// Mean over non-ignored pixels of -log max(p[gt], 1e-12); 0 with a warning
// when every pixel is ignored.
double cross_entropy_loss(const ProbabilityMap& probs, const SegmentationMask& gt);

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

// Decoupled weight decay: p *= 1 - lr * wd, then the bias-corrected Adam
// step with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
void adamw_step(const ParameterList& params, const ag::Gradient& grads, AdamState& state,
                double lr, double weight_decay);

// A training example after augmentation.
struct TrainSample {
  Tensor frame;
  SegmentationMask gt;
  std::optional<Tensor> previous_frame;
  std::optional<SegmentationMask> previous_gt;
  std::vector<Tensor> history;  // up to temporal_capacity earlier frames, oldest first
};

struct TrainState {
  Model model;
  AdamState adam;
  Rng sampler_rng;
  Rng augment_rng;
  std::int64_t step = 0;
};

// Fresh state: memory initialized from the un-augmented training frames.
TrainState init_training(Model model, const std::vector<VideoClip>& clips,
                         const TrainConfig& cfg);
// Builds the feature memory from one pass over `clips` with the current weights.
FeatureMemory init_memory(const Model& model, const std::vector<VideoClip>& clips,
                          std::uint64_t seed);

std::vector<TrainSample> make_batch(TrainState& state, const std::vector<VideoClip>& clips,
                                    const TrainConfig& cfg);

struct StepReport {
  double loss = 0.0;
  bool ground_truth_guidance = false;
};

// Forward, backward, AdamW, then one memory update from this step's
// features (averaged transform over the batch). Advances state.step.
StepReport train_step(TrainState& state, const std::vector<TrainSample>& batch,
                      const TrainConfig& cfg);

// Scalar loss of one batch on a graph, without touching any state.
ag::Var batch_loss(ag::Graph& g, const Model& model, const std::vector<TrainSample>& batch,
                   bool ground_truth_guidance, const TrainConfig& cfg,
                   std::vector<ag::Var>* memory_features = nullptr);

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

// Runs steps until state.step == cfg.steps, writing one JSON line per step to
// `log` ({"step", "loss", "lr", "memory_t"}) and checkpoints every
// cfg.checkpoint_every steps through `checkpoint`.
void run_training(TrainState& state, const std::vector<VideoClip>& clips, const TrainConfig& cfg,
                  std::ostream* log,
                  const std::function<void(const TrainState&)>& checkpoint = nullptr);

}  // namespace memseg

#endif  // MEMSEG_TRAINING_HPP_
