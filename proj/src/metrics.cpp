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
#include "memseg/metrics.hpp"

#include <string>

#include "memseg/error.hpp"
#include "memseg/log.hpp"

namespace memseg {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : k_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs K >= 1");
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (std::uint64_t c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(int k) const {
  std::uint64_t s = 0;
  for (int p = 0; p < k_; ++p) s += count(k, p);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(int k) const {
  std::uint64_t s = 0;
  for (int g = 0; g < k_; ++g) s += count(g, k);
  return s;
}

void ConfusionMatrix::add(const SegmentationMask& pred, const SegmentationMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw ShapeError("confusion: prediction " + std::to_string(pred.height) + "x" +
                     std::to_string(pred.width) + " vs ground truth " +
                     std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const int g = gt.labels[i];
    if (g == kIgnoreLabel) continue;
    const int p = pred.labels[i];
    if (g >= k_ || p >= k_) {
      throw InputError("confusion: label " + std::to_string(g >= k_ ? g : p) + " >= K=" +
                       std::to_string(k_));
    }
    ++counts_[static_cast<std::size_t>(g) * k_ + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ShapeError("confusion: cannot merge different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::vector<std::optional<double>> per_class_iou(const ConfusionMatrix& cm) {
  std::vector<std::optional<double>> out;
  for (int k = 0; k < cm.classes(); ++k) {
    const std::uint64_t tp = cm.count(k, k);
    const std::uint64_t uni = cm.row_sum(k) + cm.col_sum(k) - tp;
    if (uni == 0) {
      out.emplace_back();
    } else {
      out.emplace_back(static_cast<double>(tp) / static_cast<double>(uni));
    }
  }
  return out;
}

double miou(const ConfusionMatrix& cm) {
  // Extended precision keeps the single final rounding, so small cases such
  // as (1/2 + 2/3) / 2 come out as the nearest double to the true mean.
  long double sum = 0.0L;
  int n = 0;
  for (int k = 0; k < cm.classes(); ++k) {
    const std::uint64_t tp = cm.count(k, k);
    const std::uint64_t uni = cm.row_sum(k) + cm.col_sum(k) - tp;
    if (uni == 0) continue;
    sum += static_cast<long double>(tp) / static_cast<long double>(uni);
    ++n;
  }
  if (n == 0) {
    warn_once("miou-empty", "mIoU of an empty confusion matrix is reported as 0");
    return 0.0;
  }
  return static_cast<double>(sum / n);
}

double pixel_accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) return 0.0;
  std::uint64_t correct = 0;
  for (int k = 0; k < cm.classes(); ++k) correct += cm.count(k, k);
  return static_cast<double>(correct) / static_cast<double>(total);
}

nlohmann::json metrics_json(const ConfusionMatrix& cm) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& iou : per_class_iou(cm)) {
    per_class.push_back(iou ? nlohmann::json(*iou) : nlohmann::json(nullptr));
  }
  return {{"miou", miou(cm)}, {"per_class_iou", per_class}, {"pixel_acc", pixel_accuracy(cm)}};
}

}  // namespace memseg
