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
#include "memseg/training.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "memseg/error.hpp"
#include "memseg/log.hpp"
#include "memseg/ops.hpp"
#include "memseg/tensor_io.hpp"

namespace memseg {
namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEpsilon = 1e-8;

// Source row/column for output index i, or -1 when it falls in the padding.
int crop_source(int i, int scaled, int crop, int offset) {
  const int s = scaled >= crop ? i + offset : i - offset;
  return s >= 0 && s < scaled ? s : -1;
}

void color_jitter(const AugmentParams& p, Tensor& x) {
  if (p.brightness == 0.0 && p.contrast == 1.0 && p.saturation == 1.0) return;
  const int h = x.dim(1), w = x.dim(2);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  auto d = x.data();
  auto gray = [&](std::size_t i) { return 0.299 * d[i] + 0.587 * d[hw + i] + 0.114 * d[2 * hw + i]; };
  for (double& v : d) v += p.brightness;
  double mean = 0.0;
  for (std::size_t i = 0; i < hw; ++i) mean += gray(i);
  mean /= static_cast<double>(hw);
  for (double& v : d) v = mean + p.contrast * (v - mean);
  for (std::size_t i = 0; i < hw; ++i) {
    const double g = gray(i);
    for (std::size_t c = 0; c < 3; ++c) d[c * hw + i] = g + p.saturation * (d[c * hw + i] - g);
  }
  for (double& v : d) v = std::clamp(v, 0.0, 1.0);
}

std::string param_key(const std::string& kind, const std::string& name) {
  return "adam." + kind + "/" + name;
}

}  // namespace

void AugmentationConfig::validate() const {
  if (!(scale_min > 0.0) || !(scale_max >= scale_min)) {
    throw ConfigError("augmentation scale range must satisfy 0 < min <= max");
  }
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
    throw ConfigError("flip probability must lie in [0, 1]");
  }
  if (!(brightness >= 0.0) || !(contrast >= 0.0 && contrast < 1.0) ||
      !(saturation >= 0.0 && saturation < 1.0)) {
    throw ConfigError("colour jitter deltas must be nonnegative (contrast, saturation < 1)");
  }
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (crop_height < 32 || crop_width < 32 || crop_height % 32 || crop_width % 32) {
    throw ConfigError("crop dims must be positive multiples of 32");
  }
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    throw ConfigError("warmup_fraction must lie in [0, 1]");
  }
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  augment.validate();
}

std::int64_t TrainConfig::warmup_steps() const {
  return static_cast<std::int64_t>(std::floor(warmup_fraction * steps));
}

FrameRef sample_frame(const std::vector<int>& frame_counts, Rng& rng) {
  std::uint64_t total = 0;
  for (int c : frame_counts) total += static_cast<std::uint64_t>(std::max(c, 0));
  if (total == 0) throw ConfigError("training split has no frames");
  std::uint64_t idx = uniform_index(rng, total);
  for (std::size_t v = 0; v < frame_counts.size(); ++v) {
    const auto n = static_cast<std::uint64_t>(std::max(frame_counts[v], 0));
    if (idx < n) return {v, static_cast<int>(idx)};
    idx -= n;
  }
  throw StateError("sample_frame: index out of range");
}

AugmentParams identity_augmentation(int height, int width, int crop_height, int crop_width) {
  AugmentParams p;
  p.scaled_height = height;
  p.scaled_width = width;
  p.crop_height = crop_height;
  p.crop_width = crop_width;
  return p;
}

AugmentParams draw_augmentation(const AugmentationConfig& cfg, int height, int width,
                                int crop_height, int crop_width, Rng& rng) {
  AugmentParams p = identity_augmentation(height, width, crop_height, crop_width);
  const double s = uniform(rng, cfg.scale_min, cfg.scale_max);
  p.scaled_height = std::max(1, static_cast<int>(std::lround(height * s)));
  p.scaled_width = std::max(1, static_cast<int>(std::lround(width * s)));
  p.flip = uniform(rng, 0.0, 1.0) < cfg.flip_probability;
  p.brightness = uniform(rng, -cfg.brightness, cfg.brightness);
  p.contrast = 1.0 + uniform(rng, -cfg.contrast, cfg.contrast);
  p.saturation = 1.0 + uniform(rng, -cfg.saturation, cfg.saturation);
  p.offset_y = static_cast<int>(
      uniform_index(rng, static_cast<std::uint64_t>(std::abs(p.scaled_height - crop_height)) + 1));
  p.offset_x = static_cast<int>(
      uniform_index(rng, static_cast<std::uint64_t>(std::abs(p.scaled_width - crop_width)) + 1));
  return p;
}

Tensor apply_augmentation(const AugmentParams& p, const Tensor& frame) {
  require_rank(frame, 3, "augment");
  Tensor x = ops::bilinear_resize(frame, p.scaled_height, p.scaled_width);
  if (p.flip) x = ops::hflip(x);
  color_jitter(p, x);
  const int c = x.dim(0);
  Tensor out({c, p.crop_height, p.crop_width});
  for (int y = 0; y < p.crop_height; ++y) {
    const int sy = crop_source(y, p.scaled_height, p.crop_height, p.offset_y);
    if (sy < 0) continue;
    for (int xx = 0; xx < p.crop_width; ++xx) {
      const int sx = crop_source(xx, p.scaled_width, p.crop_width, p.offset_x);
      if (sx < 0) continue;
      for (int ch = 0; ch < c; ++ch) out.at(ch, y, xx) = x.at(ch, sy, sx);
    }
  }
  return out;
}

SegmentationMask apply_augmentation(const AugmentParams& p, const SegmentationMask& mask) {
  SegmentationMask m = nearest_resize(mask, p.scaled_height, p.scaled_width);
  if (p.flip) m = hflip(m);
  SegmentationMask out(p.crop_height, p.crop_width, kIgnoreLabel);
  for (int y = 0; y < p.crop_height; ++y) {
    const int sy = crop_source(y, p.scaled_height, p.crop_height, p.offset_y);
    if (sy < 0) continue;
    for (int x = 0; x < p.crop_width; ++x) {
      const int sx = crop_source(x, p.scaled_width, p.crop_width, p.offset_x);
      if (sx >= 0) out.at(y, x) = m.at(sy, sx);
    }
  }
  return out;
}

double cross_entropy_loss(const ProbabilityMap& probs, const SegmentationMask& gt) {
  if (probs.height() != gt.height || probs.width() != gt.width) {
    throw ShapeError("cross_entropy_loss: probability map and mask dims differ");
  }
  const std::size_t hw = gt.labels.size();
  const auto p = probs.probs.data();
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < hw; ++i) {
    const int k = gt.labels[i];
    if (k == kIgnoreLabel) continue;
    if (k >= probs.classes()) throw InputError("cross_entropy_loss: label out of range");
    total -= std::log(std::max(p[static_cast<std::size_t>(k) * hw + i], 1e-12));
    ++n;
  }
  if (n == 0) {
    warn_once("ce-all-ignored", "cross-entropy over a fully ignored mask is reported as 0");
    return 0.0;
  }
  return total / static_cast<double>(n);
}

void adamw_step(const ParameterList& params, const ag::Gradient& grads, AdamState& state,
                double lr, double weight_decay) {
  if (grads.size() != params.size()) throw ShapeError("adamw_step: gradient count mismatch");
  if (state.m.empty()) {
    for (const NamedParameter& p : params) {
      state.m.emplace_back(p.tensor->shape());
      state.v.emplace_back(p.tensor->shape());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adamw_step: optimizer state mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].tensor;
    const Tensor& g = grads[i];
    if (g.shape() != p.shape() || state.m[i].shape() != p.shape()) {
      throw ShapeError("adamw_step: shape mismatch for " + params[i].name);
    }
    auto pd = p.data();
    auto md = state.m[i].data();
    auto vd = state.v[i].data();
    const auto gd = g.data();
    for (std::size_t j = 0; j < pd.size(); ++j) {
      pd[j] *= 1.0 - lr * weight_decay;
      md[j] = kBeta1 * md[j] + (1.0 - kBeta1) * gd[j];
      vd[j] = kBeta2 * vd[j] + (1.0 - kBeta2) * gd[j] * gd[j];
      pd[j] -= lr * (md[j] / c1) / (std::sqrt(vd[j] / c2) + kEpsilon);
    }
  }
}

FeatureMemory init_memory(const Model& model, const std::vector<VideoClip>& clips,
                          std::uint64_t seed) {
  MemoryInitializer init(seed, model.num_classes(), model.embed_dim());
  for (const VideoClip& clip : clips) {
    for (std::size_t t = 0; t < clip.frames.size(); ++t) {
      init.observe(memory_features_forward(model, clip.frames[t]), clip.masks[t]);
    }
  }
  return init.finish(model.config.momentum);
}

TrainState init_training(Model model, const std::vector<VideoClip>& clips,
                         const TrainConfig& cfg) {
  cfg.validate();
  TrainState state{std::move(model), {}, substream(cfg.seed, "train/sampler"),
                   substream(cfg.seed, "train/augment"), 0};
  if (state.model.uses_memory()) {
    state.model.memory = init_memory(state.model, clips, substream_seed(cfg.seed, "memory"));
  }
  return state;
}

std::vector<TrainSample> make_batch(TrainState& state, const std::vector<VideoClip>& clips,
                                    const TrainConfig& cfg) {
  std::vector<int> counts;
  for (const VideoClip& c : clips) counts.push_back(static_cast<int>(c.frames.size()));
  const bool want_history = state.model.variant == ModelVariant::kDecoderB;
  const bool want_previous = state.model.variant == ModelVariant::kDecoderA &&
                             cfg.guidance_mode == GuidanceMode::kPreviousPrediction;
  std::vector<TrainSample> batch;
  for (int b = 0; b < cfg.batch_size; ++b) {
    const FrameRef ref = sample_frame(counts, state.sampler_rng);
    const VideoClip& clip = clips[ref.video];
    const Tensor& frame = clip.frames[static_cast<std::size_t>(ref.frame)];
    const AugmentParams p = draw_augmentation(cfg.augment, frame.dim(1), frame.dim(2),
                                              cfg.crop_height, cfg.crop_width,
                                              state.augment_rng);
    TrainSample s;
    s.frame = apply_augmentation(p, frame);
    s.gt = apply_augmentation(p, clip.masks[static_cast<std::size_t>(ref.frame)]);
    if (ref.has_previous()) {
      const auto prev = static_cast<std::size_t>(ref.frame - 1);
      s.previous_gt = apply_augmentation(p, clip.masks[prev]);
      if (want_previous) s.previous_frame = apply_augmentation(p, clip.frames[prev]);
    }
    if (want_history) {
      const int first = std::max(0, ref.frame - state.model.config.temporal_capacity);
      for (int t = first; t < ref.frame; ++t) {
        s.history.push_back(apply_augmentation(p, clip.frames[static_cast<std::size_t>(t)]));
      }
    }
    batch.push_back(std::move(s));
  }
  return batch;
}

ag::Var batch_loss(ag::Graph& g, const Model& model, const std::vector<TrainSample>& batch,
                   bool ground_truth_guidance, const TrainConfig& cfg,
                   std::vector<ag::Var>* memory_features) {
  if (batch.empty()) throw InputError("empty training batch");
  const int k = model.num_classes();
  ag::Var total;
  for (const TrainSample& s : batch) {
    std::optional<SegmentationMask> guidance;
    if (model.uses_memory() && ground_truth_guidance) {
      guidance = guidance_from_ground_truth(s.gt, k).labels;
    } else if (model.variant == ModelVariant::kDecoderA) {
      if (cfg.guidance_mode == GuidanceMode::kPreviousGroundTruth && s.previous_gt) {
        guidance = guidance_from_ground_truth(*s.previous_gt, k).labels;
      } else if (cfg.guidance_mode == GuidanceMode::kPreviousPrediction && s.previous_frame) {
        ag::Graph eval(false);
        const DecoderVars prev =
            decoder_forward(eval, model, eval.constant(*s.previous_frame), nullptr, {});
        guidance = argmax_channels(prev.probs.value());
      }
    }
    TemporalMemory temporal;
    temporal.capacity = model.config.temporal_capacity;
    for (const Tensor& past : s.history) {
      temporal = push(temporal, memory_features_forward(model, past));
    }
    const DecoderVars out = decoder_forward(g, model, g.constant(s.frame),
                                            guidance ? &*guidance : nullptr, temporal);
    ag::Var loss = ag::cross_entropy(out.probs, s.gt.labels, kIgnoreLabel);
    if (model.uses_memory()) {
      loss = ag::add(loss, ag::cross_entropy(out.first_pass, s.gt.labels, kIgnoreLabel));
      if (memory_features) memory_features->push_back(out.memory_features);
    }
    total = total.valid() ? ag::add(total, loss) : loss;
  }
  return ag::scale(total, 1.0 / static_cast<double>(batch.size()));
}

StepReport train_step(TrainState& state, const std::vector<TrainSample>& batch,
                      const TrainConfig& cfg) {
  StepReport report;
  report.ground_truth_guidance = state.step < cfg.warmup_steps();
  Model& model = state.model;
  ag::Graph g;
  std::vector<ag::Var> features;
  const ag::Var loss = batch_loss(g, model, batch, report.ground_truth_guidance, cfg, &features);
  report.loss = loss.value()[0];
  g.backward(loss);
  const ParameterList params = parameters(model);
  std::vector<const Tensor*> ptrs;
  for (const NamedParameter& p : params) ptrs.push_back(p.tensor);
  adamw_step(params, g.gradients(ptrs), state.adam, cfg.lr, cfg.weight_decay);

  if (model.uses_memory()) {
    Tensor target(model.memory.matrix.shape());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      target = ops::add(target, transform_T(features[i].value(), batch[i].gt,
                                            model.memory.matrix, model.config.transform_mode));
    }
    update_memory(model.memory, ops::scale(target, 1.0 / static_cast<double>(batch.size())));
  }
  ++state.step;
  return report;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  io::TensorBundle bundle;
  append_model(bundle, state.model);
  bundle.attrs["train.step"] = std::to_string(state.step);
  bundle.attrs["adam.step"] = std::to_string(state.adam.step);
  bundle.attrs["rng.sampler"] = rng_state(state.sampler_rng);
  bundle.attrs["rng.augment"] = rng_state(state.augment_rng);
  Model copy = state.model;
  const ParameterList params = parameters(copy);
  for (std::size_t i = 0; i < state.adam.m.size() && i < params.size(); ++i) {
    bundle.add(param_key("m", params[i].name), state.adam.m[i]);
    bundle.add(param_key("v", params[i].name), state.adam.v[i]);
  }
  io::save_bundle(path, bundle);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  const io::TensorBundle bundle = io::load_bundle(path);
  TrainState state{read_model(bundle), {}, {}, {}, 0};
  try {
    state.step = std::stoll(bundle.attr("train.step"));
    state.adam.step = std::stoll(bundle.attr("adam.step"));
  } catch (const std::logic_error&) {
    throw IoError("checkpoint " + path.string() + " has a malformed step counter");
  }
  set_rng_state(state.sampler_rng, bundle.attr("rng.sampler"));
  set_rng_state(state.augment_rng, bundle.attr("rng.augment"));
  if (state.adam.step > 0) {
    for (const NamedParameter& p : parameters(state.model)) {
      state.adam.m.push_back(bundle.at(param_key("m", p.name)));
      state.adam.v.push_back(bundle.at(param_key("v", p.name)));
    }
  }
  return state;
}

void run_training(TrainState& state, const std::vector<VideoClip>& clips, const TrainConfig& cfg,
                  std::ostream* log, const std::function<void(const TrainState&)>& checkpoint) {
  cfg.validate();
  while (state.step < cfg.steps) {
    const std::vector<TrainSample> batch = make_batch(state, clips, cfg);
    const std::int64_t index = state.step;
    const StepReport report = train_step(state, batch, cfg);
    if (!std::isfinite(report.loss)) {
      throw StateError("training diverged at step " + std::to_string(index));
    }
    if (log) {
      nlohmann::json line{{"step", index},
                          {"loss", report.loss},
                          {"lr", cfg.lr},
                          {"memory_t", state.model.memory.t}};
      *log << line.dump() << "\n";
    }
    if (checkpoint && cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0) {
      checkpoint(state);
    }
  }
}

}  // namespace memseg
