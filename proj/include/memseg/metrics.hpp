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
#ifndef MEMSEG_METRICS_HPP_
#define MEMSEG_METRICS_HPP_

#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "memseg/segmentation.hpp"

namespace memseg {

// K x K pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  int classes() const { return k_; }
  std::uint64_t count(int gt, int pred) const {
    return counts_[static_cast<std::size_t>(gt) * k_ + pred];
  }
  std::uint64_t total() const;
  std::uint64_t row_sum(int k) const;
  std::uint64_t col_sum(int k) const;

  // Counts every pixel whose ground truth is not ignored. Throws ShapeError
  // on a dim mismatch and InputError on out-of-range labels.
  void add(const SegmentationMask& pred, const SegmentationMask& gt);
  void merge(const ConfusionMatrix& other);

 private:
  int k_;
  std::vector<std::uint64_t> counts_;
};

inline void confusion(const SegmentationMask& pred, const SegmentationMask& gt,
                      ConfusionMatrix& acc) {
  acc.add(pred, gt);
}

// IoU per class; empty for classes with zero union.
std::vector<std::optional<double>> per_class_iou(const ConfusionMatrix& cm);
// Mean IoU over classes with nonzero union; 0 (with a warning) when none.
double miou(const ConfusionMatrix& cm);
double pixel_accuracy(const ConfusionMatrix& cm);

// {"miou", "per_class_iou" (null for zero-union classes), "pixel_acc"}.
nlohmann::json metrics_json(const ConfusionMatrix& cm);

}  // namespace memseg

#endif  // MEMSEG_METRICS_HPP_
