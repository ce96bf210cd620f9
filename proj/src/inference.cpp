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
#include "memseg/inference.hpp"

#include <cmath>
#include <string>

#include "memseg/error.hpp"
#include "memseg/log.hpp"
#include "memseg/ops.hpp"

namespace memseg {

void InferenceConfig::validate() const {
  if (scales.empty()) throw ConfigError("inference needs at least one scale");
  for (double s : scales) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("inference scales must be positive");
  }
  if (stages < 0) throw ConfigError("stages must be >= 0");
}

int scaled_dim(int dim, double scale) {
  const double target = dim * scale;
  if (target < kEncoderStride) return 0;
  return static_cast<int>(std::ceil(target / kEncoderStride - 1e-9)) * kEncoderStride;
}

ProbabilityMap multi_scale_flip_infer(const Tensor& frame, const InferenceConfig& cfg,
                                      const BranchPredictor& predict) {
  cfg.validate();
  require_rank(frame, 3, "multi_scale_flip_infer");
  const int h = frame.dim(1), w = frame.dim(2);
  std::vector<Tensor> outputs;
  for (std::size_t i = 0; i < cfg.scales.size(); ++i) {
    const double s = cfg.scales[i];
    const int sh = scaled_dim(h, s), sw = scaled_dim(w, s);
    if (sh == 0 || sw == 0) {
      warn_once("tta-skip-" + std::to_string(s) + "-" + std::to_string(h) + "x" +
                    std::to_string(w),
                "scale " + std::to_string(s) + " skipped: below 32 px for " + std::to_string(h) +
                    "x" + std::to_string(w) + " input");
      continue;
    }
    const Tensor scaled = ops::bilinear_resize(frame, sh, sw);
    const int base = 2 * static_cast<int>(i);
    outputs.push_back(
        ops::bilinear_resize(predict(scaled, {base, s, false}).probs, h, w));
    if (cfg.flip) {
      const Tensor mirrored = ops::hflip(predict(ops::hflip(scaled), {base + 1, s, true}).probs);
      outputs.push_back(ops::bilinear_resize(mirrored, h, w));
    }
  }
  if (outputs.empty()) throw InputError("every inference scale was below 32 px");
  if (outputs.size() == 1) return {std::move(outputs.front())};

  Tensor avg = outputs.front();
  for (std::size_t i = 1; i < outputs.size(); ++i) avg = ops::add(avg, outputs[i]);
  const int k = avg.dim(0);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  auto a = avg.data();
  for (std::size_t p = 0; p < hw; ++p) {
    double z = 0.0;
    for (int c = 0; c < k; ++c) z += a[static_cast<std::size_t>(c) * hw + p];
    for (int c = 0; c < k; ++c) a[static_cast<std::size_t>(c) * hw + p] /= z;
  }
  return {std::move(avg)};
}

namespace {

const SegmentationMask* oriented(const SegmentationMask* mask, const Branch& branch,
                                 SegmentationMask& storage) {
  if (mask == nullptr || !branch.flipped) return mask;
  storage = hflip(*mask);
  return &storage;
}

}  // namespace

ProbabilityMap multi_scale_flip_infer(const Model& model, const Tensor& frame,
                                      const InferenceConfig& cfg, const GuidanceMask* guidance) {
  if (model.variant == ModelVariant::kDecoderB) {
    throw ConfigError("decoder_b inference needs a temporal memory; use video_infer");
  }
  const SegmentationMask* p = guidance ? &guidance->labels : nullptr;
  if (model.variant == ModelVariant::kDecoderA && p == nullptr) {
    throw InputError("decoder_a inference needs a guidance mask");
  }
  return multi_scale_flip_infer(frame, cfg, [&](const Tensor& image, const Branch& branch) {
    SegmentationMask storage;
    ag::Graph g(false);
    const DecoderVars out =
        decoder_forward(g, model, g.constant(image), oriented(p, branch, storage), {});
    return ProbabilityMap{out.probs.value()};
  });
}

VideoResult video_infer(const Model& model, const std::vector<Tensor>& frames,
                        const InferenceConfig& cfg,
                        const std::vector<SegmentationMask>* stage_guidance) {
  if (frames.empty()) throw InputError("video_infer: empty clip");
  if (stage_guidance && stage_guidance->size() != frames.size()) {
    throw InputError("video_infer: stage guidance count does not match frame count");
  }
  cfg.validate();
  VideoResult result;
  std::vector<TemporalMemory> temporal(2 * cfg.scales.size());
  for (TemporalMemory& t : temporal) t.capacity = model.config.temporal_capacity;

  for (std::size_t n = 0; n < frames.size(); ++n) {
    const Tensor& frame = frames[n];
    const SegmentationMask* p = nullptr;
    SegmentationMask first_pass;
    switch (model.variant) {
      case ModelVariant::kBaseline:
        break;
      case ModelVariant::kDecoderA:
        if (stage_guidance) {
          p = &(*stage_guidance)[n];
        } else if (n == 0) {
          first_pass = argmax_channels(first_pass_forward(model, frame).probs);
          p = &first_pass;
        } else {
          p = &result.masks[n - 1];
        }
        break;
      case ModelVariant::kDecoderB:
        if (stage_guidance && cfg.stage_feedback_b) p = &(*stage_guidance)[n];
        break;
      case ModelVariant::kEnsemble:
        throw ConfigError("video_infer runs one model; ensemble the two results instead");
    }
    ProbabilityMap probs =
        multi_scale_flip_infer(frame, cfg, [&](const Tensor& image, const Branch& branch) {
          SegmentationMask storage;
          ag::Graph g(false);
          TemporalMemory& mem = temporal[static_cast<std::size_t>(branch.index)];
          const DecoderVars out =
              decoder_forward(g, model, g.constant(image), oriented(p, branch, storage), mem);
          if (model.variant == ModelVariant::kDecoderB) mem = push(mem, out.bottleneck.value());
          return ProbabilityMap{out.probs.value()};
        });
    result.masks.push_back(argmax_channels(probs.probs));
    result.probs.push_back(std::move(probs));
  }
  return result;
}

std::vector<StageResult> multi_stage_infer(const StagePass& pass, int n_stages) {
  if (n_stages < 0) throw ConfigError("stages must be >= 0");
  std::vector<StageResult> stages;
  stages.push_back({0, pass(nullptr), 0});
  for (int s = 1; s <= n_stages; ++s) {
    const std::vector<SegmentationMask>& prev = stages.back().result.masks;
    VideoResult next = pass(&prev);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < prev.size(); ++i) changed += count_differences(prev[i], next.masks[i]);
    stages.push_back({s, std::move(next), changed});
  }
  return stages;
}

std::vector<StageResult> multi_stage_infer(const Model& model, const std::vector<Tensor>& frames,
                                           const InferenceConfig& cfg, int n_stages) {
  return multi_stage_infer(
      [&](const std::vector<SegmentationMask>* guidance) {
        return video_infer(model, frames, cfg, guidance);
      },
      n_stages);
}

}  // namespace memseg
