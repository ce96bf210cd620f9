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
#include "memseg/memory_bank.hpp"

#include <charconv>
#include <cmath>
#include <string>

#include "memseg/error.hpp"
#include "memseg/log.hpp"
#include "memseg/ops.hpp"

namespace memseg {
namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& s, const std::string& key) {
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw IoError("memory checkpoint: bad value for '" + key + "': " + s);
  }
  return v;
}

void check_memory(const Tensor& memory) {
  if (memory.rank() != 2) {
    throw ShapeError("memory must be K x C, got " + shape_to_string(memory.shape()));
  }
}

}  // namespace

void MomentumSchedule::validate() const {
  if (!(m0 >= 0.0 && m0 <= 1.0)) throw ConfigError("momentum m0 must lie in [0, 1]");
  if (mode == MomentumMode::kPoly) {
    if (total_steps <= 0) throw ConfigError("poly momentum needs total_steps > 0");
    if (!(power >= 0.0)) throw ConfigError("poly momentum power must be nonnegative");
  }
}

double MomentumSchedule::at(std::int64_t t) const {
  if (mode == MomentumMode::kConstant) return m0;
  const double frac = std::min(1.0, static_cast<double>(t) / static_cast<double>(total_steps));
  return m0 * std::pow(1.0 - frac, power);
}

Tensor transform_T(const Tensor& r, const SegmentationMask& gt, const Tensor& memory,
                   TransformMode mode) {
  require_rank(r, 3, "transform_T features");
  check_memory(memory);
  const int k_classes = memory.dim(0);
  const int c = memory.dim(1);
  if (r.dim(0) != c) {
    throw ShapeError("transform_T: feature channels " + std::to_string(r.dim(0)) +
                     " != memory dim " + std::to_string(c));
  }
  if (gt.height < 1 || gt.width < 1) throw ShapeError("transform_T: empty mask");

  Tensor feats;
  SegmentationMask labels;
  if (mode == TransformMode::kUpsampleFeatures) {
    feats = ops::bilinear_resize(r, gt.height, gt.width);
    labels = gt;
  } else {
    feats = r;
    labels = nearest_resize(gt, r.dim(1), r.dim(2));
  }
  const std::size_t hw = labels.size();
  const auto f = feats.data();

  std::vector<double> mem_norm(static_cast<std::size_t>(k_classes));
  for (int k = 0; k < k_classes; ++k) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += memory.at(k, j) * memory.at(k, j);
    mem_norm[static_cast<std::size_t>(k)] = std::sqrt(s);
  }

  Tensor weighted({k_classes, c});
  Tensor plain({k_classes, c});
  std::vector<double> denom(static_cast<std::size_t>(k_classes), 0.0);
  std::vector<std::size_t> count(static_cast<std::size_t>(k_classes), 0);
  std::vector<double> pixel(static_cast<std::size_t>(c));
  for (std::size_t i = 0; i < hw; ++i) {
    const int k = labels.labels[i];
    if (k == kIgnoreLabel) continue;
    if (k >= k_classes) {
      throw InputError("transform_T: label " + std::to_string(k) + " >= K=" +
                       std::to_string(k_classes));
    }
    double dot = 0.0, norm2 = 0.0;
    for (int j = 0; j < c; ++j) {
      pixel[static_cast<std::size_t>(j)] = f[static_cast<std::size_t>(j) * hw + i];
      dot += pixel[static_cast<std::size_t>(j)] * memory.at(k, j);
      norm2 += pixel[static_cast<std::size_t>(j)] * pixel[static_cast<std::size_t>(j)];
    }
    const double norm = std::sqrt(norm2);
    const double mn = mem_norm[static_cast<std::size_t>(k)];
    double sim = 0.0;
    if (norm >= 1e-12 && mn >= 1e-12) sim = std::clamp(dot / (norm * mn), -1.0, 1.0);
    const double wgt = 1.0 - sim;
    denom[static_cast<std::size_t>(k)] += wgt;
    ++count[static_cast<std::size_t>(k)];
    for (int j = 0; j < c; ++j) {
      weighted.at(k, j) += wgt * pixel[static_cast<std::size_t>(j)];
      plain.at(k, j) += pixel[static_cast<std::size_t>(j)];
    }
  }

  Tensor out = memory;
  for (int k = 0; k < k_classes; ++k) {
    const std::size_t n = count[static_cast<std::size_t>(k)];
    if (n == 0) continue;
    const double d = denom[static_cast<std::size_t>(k)];
    for (int j = 0; j < c; ++j) {
      out.at(k, j) = d > 0.0 ? weighted.at(k, j) / d : plain.at(k, j) / static_cast<double>(n);
    }
  }
  return out;
}

void update_memory(FeatureMemory& memory, const Tensor& target) {
  if (target.shape() != memory.matrix.shape()) {
    throw ShapeError("update_memory: target " + shape_to_string(target.shape()) +
                     " vs memory " + shape_to_string(memory.matrix.shape()));
  }
  const double m = memory.schedule.at(memory.t);
  auto dst = memory.matrix.data();
  const auto src = target.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = (1.0 - m) * dst[i] + m * src[i];
  ++memory.t;
}

void update_memory(FeatureMemory& memory, const Tensor& r_prev, const SegmentationMask& gt_prev,
                   TransformMode mode) {
  update_memory(memory, transform_T(r_prev, gt_prev, memory.matrix, mode));
}

Tensor gather(const Tensor& memory, const SegmentationMask& guidance, int h, int w) {
  check_memory(memory);
  const int k_classes = memory.dim(0);
  const int c = memory.dim(1);
  const SegmentationMask small = nearest_resize(guidance, h, w);
  Tensor out({c, h, w});
  auto o = out.data();
  const std::size_t hw = small.size();
  for (std::size_t i = 0; i < hw; ++i) {
    const int k = small.labels[i];
    if (k >= k_classes) {
      throw InputError("gather: guidance label " + std::to_string(k) + " >= K=" +
                       std::to_string(k_classes));
    }
    for (int j = 0; j < c; ++j) o[static_cast<std::size_t>(j) * hw + i] = memory.at(k, j);
  }
  return out;
}

Tensor gather(const Tensor& memory, const GuidanceMask& guidance, int h, int w) {
  return gather(memory, guidance.labels, h, w);
}

MemoryInitializer::MemoryInitializer(std::uint64_t seed, int num_classes, int dim)
    : num_classes_(num_classes),
      dim_(dim),
      reservoir_rng_(substream(seed, "memory/reservoir")),
      fallback_rng_(substream(seed, "memory/fallback")),
      seen_(static_cast<std::size_t>(num_classes), 0),
      chosen_({num_classes, dim}) {
  if (num_classes < 1 || dim < 1) throw ConfigError("memory needs K >= 1 and C >= 1");
}

void MemoryInitializer::observe(const Tensor& features, const SegmentationMask& gt) {
  require_rank(features, 3, "memory init features");
  if (features.dim(0) != dim_) throw ShapeError("memory init: feature channel mismatch");
  const int h = features.dim(1), w = features.dim(2);
  const SegmentationMask small = nearest_resize(gt, h, w);
  const auto f = features.data();
  const std::size_t hw = small.size();
  for (std::size_t i = 0; i < hw; ++i) {
    const int k = small.labels[i];
    if (k == kIgnoreLabel) continue;
    if (k >= num_classes_) throw InputError("memory init: label out of range");
    const std::uint64_t n = ++seen_[static_cast<std::size_t>(k)];
    if (uniform_index(reservoir_rng_, n) != 0) continue;
    for (int j = 0; j < dim_; ++j) chosen_.at(k, j) = f[static_cast<std::size_t>(j) * hw + i];
  }
}

FeatureMemory MemoryInitializer::finish(const MomentumSchedule& schedule) {
  schedule.validate();
  for (int k = 0; k < num_classes_; ++k) {
    if (seen_[static_cast<std::size_t>(k)] > 0) continue;
    spdlog::warn("class {} never observed during memory init; using random fallback row", k);
    for (int j = 0; j < dim_; ++j) chosen_.at(k, j) = uniform(fallback_rng_, -0.1, 0.1);
  }
  return {chosen_, schedule, 0};
}

void append_memory(io::TensorBundle& bundle, const FeatureMemory& memory) {
  bundle.attrs["memory.K"] = std::to_string(memory.classes());
  bundle.attrs["memory.C"] = std::to_string(memory.dim());
  bundle.attrs["memory.t"] = std::to_string(memory.t);
  bundle.attrs["memory.m0"] = format_double(memory.schedule.m0);
  bundle.attrs["memory.mode"] = memory.schedule.mode == MomentumMode::kPoly ? "poly" : "constant";
  bundle.attrs["memory.power"] = format_double(memory.schedule.power);
  bundle.attrs["memory.total_steps"] = std::to_string(memory.schedule.total_steps);
  bundle.add("memory", memory.matrix);
}

FeatureMemory read_memory(const io::TensorBundle& bundle) {
  FeatureMemory m;
  m.matrix = bundle.at("memory");
  const auto k = parse_number<int>(bundle.attr("memory.K"), "memory.K");
  const auto c = parse_number<int>(bundle.attr("memory.C"), "memory.C");
  if (m.matrix.shape() != Shape{k, c}) throw IoError("memory checkpoint: K/C header mismatch");
  m.t = parse_number<std::int64_t>(bundle.attr("memory.t"), "memory.t");
  m.schedule.m0 = parse_number<double>(bundle.attr("memory.m0"), "memory.m0");
  const std::string& mode = bundle.attr("memory.mode");
  if (mode != "constant" && mode != "poly") throw IoError("memory checkpoint: bad mode " + mode);
  m.schedule.mode = mode == "poly" ? MomentumMode::kPoly : MomentumMode::kConstant;
  m.schedule.power = parse_number<double>(bundle.attr("memory.power"), "memory.power");
  m.schedule.total_steps =
      parse_number<std::int64_t>(bundle.attr("memory.total_steps"), "memory.total_steps");
  return m;
}

void save_memory(const std::filesystem::path& path, const FeatureMemory& memory) {
  io::TensorBundle bundle;
  append_memory(bundle, memory);
  io::save_bundle(path, bundle);
}

FeatureMemory load_memory(const std::filesystem::path& path) {
  return read_memory(io::load_bundle(path));
}

}  // namespace memseg
