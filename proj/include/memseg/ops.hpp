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
#ifndef MEMSEG_OPS_HPP_
#define MEMSEG_OPS_HPP_

#include <vector>

#include "memseg/tensor.hpp"

// Forward numerics on plain tensors, plus the adjoint kernels the autograd
// layer needs. Nothing in here records anything.
namespace memseg::ops {

// Dense GEMM on row-major buffers: c (m x n) = op(a) * op(b) [+ c].
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a,
          const double* b, double* c, bool accumulate);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& x);

// Row-wise softmax of a 2-D tensor, stabilised by subtracting the row max.
Tensor softmax_rows(const Tensor& a);
// dL/da given y = softmax_rows(a) and dL/dy.
Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy);

// Softmax over the channel axis of a C x H x W tensor, independently per pixel.
Tensor softmax_channels(const Tensor& x);
Tensor softmax_channels_backward(const Tensor& y, const Tensor& dy);

// x: Cin x H x W, w: Cout x Cin, bias: Cout.
Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& bias);

// x: Cin x H x W, w: Cout x Cin x 3 x 3, bias: Cout. Zero padding 1.
// Output spatial dims are ceil(in / stride). stride must be 1 or 2.
Tensor conv3x3(const Tensor& x, const Tensor& w, const Tensor& bias, int stride);

struct Conv3x3Grads {
  Tensor dx;
  Tensor dw;
  Tensor db;
};
Conv3x3Grads conv3x3_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                              int stride, bool need_dx);

// align_corners=false bilinear resize of C x H x W.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);
Tensor bilinear_resize_backward(const Tensor& dy, int in_h, int in_w);

// Source index used by nearest resizing: floor(dst * in / out).
inline int nearest_source_index(int dst, int in, int out) {
  return static_cast<int>((static_cast<long long>(dst) * in) / out);
}
Tensor nearest_resize(const Tensor& x, int out_h, int out_w);

// Adaptive average pooling of C x H x W onto a grid x grid output. Bin i
// spans [floor(i*H/g), ceil((i+1)*H/g)).
Tensor adaptive_avg_pool(const Tensor& x, int grid);
Tensor adaptive_avg_pool_backward(const Tensor& dy, int in_h, int in_w);

// a: N x C, b: C. Entries whose vectors have norm below 1e-12 are 0.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor concat_channels(const std::vector<const Tensor*>& parts);

// Reverses the last axis.
Tensor hflip(const Tensor& x);

}  // namespace memseg::ops

#endif  // MEMSEG_OPS_HPP_
