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
#include "memseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <mutex>

#include <cblas.h>

#include "memseg/error.hpp"

namespace memseg::ops {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}

void require_positive_dims(int out_h, int out_w, const char* what) {
  if (out_h < 1 || out_w < 1) {
    throw ConfigError(std::string(what) + ": target dims must be >= 1, got " +
                      std::to_string(out_h) + "x" + std::to_string(out_w));
  }
}

// One axis of an align_corners=false linear interpolation.
struct LinearTap {
  int lo;
  int hi;
  double frac;
};

std::vector<LinearTap> linear_taps(int in, int out) {
  std::vector<LinearTap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    double src = (d + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int lo = static_cast<int>(src);
    if (lo > in - 1) lo = in - 1;
    const int hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(d)] = {lo, hi, src - lo};
  }
  return taps;
}

struct Bin {
  int begin;
  int end;
};

std::vector<Bin> adaptive_bins(int in, int grid) {
  std::vector<Bin> bins(static_cast<std::size_t>(grid));
  for (int i = 0; i < grid; ++i) {
    const int begin = (i * in) / grid;
    const int end = ((i + 1) * in + grid - 1) / grid;
    bins[static_cast<std::size_t>(i)] = {begin, end};
  }
  return bins;
}

Tensor im2col(const Tensor& x, int stride, int out_h, int out_w) {
  const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int plane = out_h * out_w;
  Tensor col({cin * 9, plane});
  double* dst = col.data().data();
  const double* src = x.data().data();
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* row = dst + static_cast<std::size_t>((c * 3 + ky) * 3 + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - 1;
          double* out_row = row + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= h) continue;
          const double* in_row = src + (static_cast<std::size_t>(c) * h + iy) * w + kx - 1;
          // Output columns whose tap lands inside the row.
          const int lo = kx == 0 ? 1 : 0;
          const int hi = std::min(out_w, w - kx >= 0 ? (w - kx) / stride + 1 : 0);
          if (stride == 1) {
            if (hi > lo) std::memcpy(out_row + lo, in_row + lo, sizeof(double) * (hi - lo));
          } else {
            for (int ox = lo; ox < hi; ++ox) out_row[ox] = in_row[ox * stride];
          }
        }
      }
    }
  }
  return col;
}

void col2im_add(const Tensor& col, int stride, int out_h, int out_w, Tensor& dx) {
  const int cin = dx.dim(0), h = dx.dim(1), w = dx.dim(2);
  const int plane = out_h * out_w;
  const double* src = col.data().data();
  double* dst = dx.data().data();
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* row = src + static_cast<std::size_t>((c * 3 + ky) * 3 + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          const double* in_row = row + static_cast<std::size_t>(oy) * out_w;
          double* out_row = dst + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - 1;
            if (ix >= 0 && ix < w) out_row[ix] += in_row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a,
          const double* b, double* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
    return;
  }
  // One BLAS thread per caller keeps results independent of the machine's
  // core count; parallelism comes from --jobs instead.
  static std::once_flag single_thread;
  std::call_once(single_thread, [] { openblas_set_num_threads(1); });
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, 1.0, a, trans_a ? m : k, b,
              trans_b ? k : n, accumulate ? 1.0 : 0.0, c, n);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_to_string(a.shape()) +
                     " x " + shape_to_string(b.shape()));
  }
  Tensor out({a.dim(0), b.dim(1)});
  gemm(false, false, a.dim(0), b.dim(1), a.dim(1), a.data().data(), b.data().data(),
       out.data().data(), false);
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out = a;
  for (double& v : out.data()) v *= factor;
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  require_rank(a, 2, "softmax_rows");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    const double* in = a.data().data() + static_cast<std::size_t>(i) * n;
    double* o = out.data().data() + static_cast<std::size_t>(i) * n;
    const double hi = *std::max_element(in, in + n);
    double total = 0.0;
    for (int j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - hi);
      total += o[j];
    }
    for (int j = 0; j < n; ++j) o[j] /= total;
  }
  return out;
}

Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy) {
  require_same_shape(y, dy, "softmax_rows_backward");
  const int m = y.dim(0), n = y.dim(1);
  Tensor dx({m, n});
  for (int i = 0; i < m; ++i) {
    const double* yr = y.data().data() + static_cast<std::size_t>(i) * n;
    const double* gr = dy.data().data() + static_cast<std::size_t>(i) * n;
    double* out = dx.data().data() + static_cast<std::size_t>(i) * n;
    double dot = 0.0;
    for (int j = 0; j < n; ++j) dot += yr[j] * gr[j];
    for (int j = 0; j < n; ++j) out[j] = yr[j] * (gr[j] - dot);
  }
  return dx;
}

Tensor softmax_channels(const Tensor& x) {
  require_rank(x, 3, "softmax_channels");
  const int c = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor out(x.shape());
  const double* in = x.data().data();
  double* o = out.data().data();
  for (std::size_t p = 0; p < plane; ++p) {
    double hi = in[p];
    for (int k = 1; k < c; ++k) hi = std::max(hi, in[k * plane + p]);
    double total = 0.0;
    for (int k = 0; k < c; ++k) {
      const double e = std::exp(in[k * plane + p] - hi);
      o[k * plane + p] = e;
      total += e;
    }
    for (int k = 0; k < c; ++k) o[k * plane + p] /= total;
  }
  return out;
}

Tensor softmax_channels_backward(const Tensor& y, const Tensor& dy) {
  require_same_shape(y, dy, "softmax_channels_backward");
  const int c = y.dim(0);
  const std::size_t plane = static_cast<std::size_t>(y.dim(1)) * y.dim(2);
  Tensor dx(y.shape());
  for (std::size_t p = 0; p < plane; ++p) {
    double dot = 0.0;
    for (int k = 0; k < c; ++k) dot += y[k * plane + p] * dy[k * plane + p];
    for (int k = 0; k < c; ++k) dx[k * plane + p] = y[k * plane + p] * (dy[k * plane + p] - dot);
  }
  return dx;
}

Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank(x, 3, "conv1x1 input");
  require_rank(w, 2, "conv1x1 weight");
  if (w.dim(1) != x.dim(0)) {
    throw ShapeError("conv1x1: weight " + shape_to_string(w.shape()) +
                     " does not accept input " + shape_to_string(x.shape()));
  }
  if (bias.size() != static_cast<std::size_t>(w.dim(0))) {
    throw ShapeError("conv1x1: bias " + shape_to_string(bias.shape()) + " for weight " +
                     shape_to_string(w.shape()));
  }
  const int cout = w.dim(0), cin = w.dim(1);
  const int plane = x.dim(1) * x.dim(2);
  Tensor out({cout, x.dim(1), x.dim(2)});
  double* o = out.data().data();
  for (int co = 0; co < cout; ++co) {
    std::fill(o + static_cast<std::size_t>(co) * plane, o + static_cast<std::size_t>(co + 1) * plane,
              bias[static_cast<std::size_t>(co)]);
  }
  gemm(false, false, cout, plane, cin, w.data().data(), x.data().data(), o, true);
  return out;
}

Tensor conv3x3(const Tensor& x, const Tensor& w, const Tensor& bias, int stride) {
  if (stride != 1 && stride != 2) {
    throw ConfigError("conv3x3: unsupported stride " + std::to_string(stride));
  }
  require_rank(x, 3, "conv3x3 input");
  require_rank(w, 4, "conv3x3 weight");
  if (w.dim(1) != x.dim(0) || w.dim(2) != 3 || w.dim(3) != 3) {
    throw ShapeError("conv3x3: weight " + shape_to_string(w.shape()) +
                     " does not accept input " + shape_to_string(x.shape()));
  }
  if (bias.size() != static_cast<std::size_t>(w.dim(0))) {
    throw ShapeError("conv3x3: bias " + shape_to_string(bias.shape()));
  }
  const int cout = w.dim(0);
  const int out_h = (x.dim(1) + stride - 1) / stride;
  const int out_w = (x.dim(2) + stride - 1) / stride;
  const int plane = out_h * out_w;
  const Tensor col = im2col(x, stride, out_h, out_w);
  Tensor out({cout, out_h, out_w});
  double* o = out.data().data();
  for (int co = 0; co < cout; ++co) {
    std::fill(o + static_cast<std::size_t>(co) * plane, o + static_cast<std::size_t>(co + 1) * plane,
              bias[static_cast<std::size_t>(co)]);
  }
  gemm(false, false, cout, plane, x.dim(0) * 9, w.data().data(), col.data().data(), o, true);
  return out;
}

Conv3x3Grads conv3x3_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                              int stride, bool need_dx) {
  const int cout = w.dim(0), cin9 = w.dim(1) * 9;
  const int out_h = dy.dim(1), out_w = dy.dim(2);
  const int plane = out_h * out_w;
  const Tensor col = im2col(x, stride, out_h, out_w);
  Conv3x3Grads g{Tensor(), Tensor(w.shape()), Tensor({cout})};
  gemm(false, true, cout, cin9, plane, dy.data().data(), col.data().data(), g.dw.data().data(),
       false);
  for (int co = 0; co < cout; ++co) {
    double total = 0.0;
    const double* row = dy.data().data() + static_cast<std::size_t>(co) * plane;
    for (int p = 0; p < plane; ++p) total += row[p];
    g.db[static_cast<std::size_t>(co)] = total;
  }
  if (need_dx) {
    Tensor dcol({cin9, plane});
    gemm(true, false, cin9, plane, cout, w.data().data(), dy.data().data(), dcol.data().data(),
         false);
    g.dx = Tensor(x.shape());
    col2im_add(dcol, stride, out_h, out_w, g.dx);
  }
  return g;
}

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  require_positive_dims(out_h, out_w, "bilinear_resize");
  require_rank(x, 3, "bilinear_resize");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == out_h && w == out_w) return x;
  const auto ty = linear_taps(h, out_h);
  const auto tx = linear_taps(w, out_w);
  // Horizontal pass over every input row, then a vertical blend of two rows.
  std::vector<double> rows(static_cast<std::size_t>(h) * out_w);
  Tensor out({c, out_h, out_w});
  const double* src = x.data().data();
  double* dst = out.data().data();
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      const double* in = src + (static_cast<std::size_t>(ch) * h + y) * w;
      double* row = rows.data() + static_cast<std::size_t>(y) * out_w;
      for (int xo = 0; xo < out_w; ++xo) {
        const LinearTap& vx = tx[static_cast<std::size_t>(xo)];
        row[xo] = (1.0 - vx.frac) * in[vx.lo] + vx.frac * in[vx.hi];
      }
    }
    for (int y = 0; y < out_h; ++y) {
      const LinearTap& vy = ty[static_cast<std::size_t>(y)];
      const double* top = rows.data() + static_cast<std::size_t>(vy.lo) * out_w;
      const double* bottom = rows.data() + static_cast<std::size_t>(vy.hi) * out_w;
      double* o = dst + (static_cast<std::size_t>(ch) * out_h + y) * out_w;
      for (int xo = 0; xo < out_w; ++xo) o[xo] = (1.0 - vy.frac) * top[xo] + vy.frac * bottom[xo];
    }
  }
  return out;
}

Tensor bilinear_resize_backward(const Tensor& dy, int in_h, int in_w) {
  const int c = dy.dim(0), out_h = dy.dim(1), out_w = dy.dim(2);
  if (in_h == out_h && in_w == out_w) return dy;
  const auto ty = linear_taps(in_h, out_h);
  const auto tx = linear_taps(in_w, out_w);
  std::vector<double> rows(static_cast<std::size_t>(in_h) * out_w);
  Tensor dx({c, in_h, in_w});
  const double* g = dy.data().data();
  double* dst = dx.data().data();
  for (int ch = 0; ch < c; ++ch) {
    std::fill(rows.begin(), rows.end(), 0.0);
    for (int y = 0; y < out_h; ++y) {
      const LinearTap& vy = ty[static_cast<std::size_t>(y)];
      const double* gy = g + (static_cast<std::size_t>(ch) * out_h + y) * out_w;
      double* top = rows.data() + static_cast<std::size_t>(vy.lo) * out_w;
      double* bottom = rows.data() + static_cast<std::size_t>(vy.hi) * out_w;
      for (int xo = 0; xo < out_w; ++xo) {
        top[xo] += gy[xo] * (1.0 - vy.frac);
        bottom[xo] += gy[xo] * vy.frac;
      }
    }
    for (int y = 0; y < in_h; ++y) {
      const double* row = rows.data() + static_cast<std::size_t>(y) * out_w;
      double* d = dst + (static_cast<std::size_t>(ch) * in_h + y) * in_w;
      for (int xo = 0; xo < out_w; ++xo) {
        const LinearTap& vx = tx[static_cast<std::size_t>(xo)];
        d[vx.lo] += row[xo] * (1.0 - vx.frac);
        d[vx.hi] += row[xo] * vx.frac;
      }
    }
  }
  return dx;
}

Tensor nearest_resize(const Tensor& x, int out_h, int out_w) {
  require_positive_dims(out_h, out_w, "nearest_resize");
  require_rank(x, 3, "nearest_resize");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out({c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < out_h; ++y)
      for (int xo = 0; xo < out_w; ++xo)
        out.at(ch, y, xo) =
            x.at(ch, nearest_source_index(y, h, out_h), nearest_source_index(xo, w, out_w));
  return out;
}

Tensor adaptive_avg_pool(const Tensor& x, int grid) {
  require_rank(x, 3, "adaptive_avg_pool");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto by = adaptive_bins(h, grid);
  const auto bx = adaptive_bins(w, grid);
  Tensor out({c, grid, grid});
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < grid; ++i) {
      for (int j = 0; j < grid; ++j) {
        const Bin& ry = by[static_cast<std::size_t>(i)];
        const Bin& rx = bx[static_cast<std::size_t>(j)];
        double total = 0.0;
        for (int y = ry.begin; y < ry.end; ++y)
          for (int xi = rx.begin; xi < rx.end; ++xi) total += x.at(ch, y, xi);
        out.at(ch, i, j) = total / ((ry.end - ry.begin) * (rx.end - rx.begin));
      }
    }
  }
  return out;
}

Tensor adaptive_avg_pool_backward(const Tensor& dy, int in_h, int in_w) {
  const int c = dy.dim(0), grid = dy.dim(1);
  const auto by = adaptive_bins(in_h, grid);
  const auto bx = adaptive_bins(in_w, grid);
  Tensor dx({c, in_h, in_w});
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < grid; ++i) {
      for (int j = 0; j < grid; ++j) {
        const Bin& ry = by[static_cast<std::size_t>(i)];
        const Bin& rx = bx[static_cast<std::size_t>(j)];
        const double g = dy.at(ch, i, j) / ((ry.end - ry.begin) * (rx.end - rx.begin));
        for (int y = ry.begin; y < ry.end; ++y)
          for (int xi = rx.begin; xi < rx.end; ++xi) dx.at(ch, y, xi) += g;
      }
    }
  }
  return dx;
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "cosine_similarity rows");
  const int n = a.dim(0), c = a.dim(1);
  if (b.size() != static_cast<std::size_t>(c)) {
    throw ShapeError("cosine_similarity: " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  double b_norm = 0.0;
  for (int k = 0; k < c; ++k) b_norm += b[static_cast<std::size_t>(k)] * b[static_cast<std::size_t>(k)];
  b_norm = std::sqrt(b_norm);
  Tensor out({n});
  if (b_norm < 1e-12) return out;
  for (int i = 0; i < n; ++i) {
    const double* row = a.data().data() + static_cast<std::size_t>(i) * c;
    double dot = 0.0, norm = 0.0;
    for (int k = 0; k < c; ++k) {
      dot += row[k] * b[static_cast<std::size_t>(k)];
      norm += row[k] * row[k];
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) continue;
    out[static_cast<std::size_t>(i)] = std::clamp(dot / (norm * b_norm), -1.0, 1.0);
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  return concat_channels(std::vector<const Tensor*>{&a, &b});
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  int h = -1, w = -1, total = 0;
  for (const Tensor* p : parts) {
    if (p->rank() == 0) continue;
    require_rank(*p, 3, "concat_channels");
    if (h < 0) {
      h = p->dim(1);
      w = p->dim(2);
    } else if (p->dim(1) != h || p->dim(2) != w) {
      throw ShapeError("concat_channels: spatial mismatch " + shape_to_string(p->shape()) +
                       " vs (" + std::to_string(h) + "," + std::to_string(w) + ")");
    }
    total += p->dim(0);
  }
  if (h < 0) return Tensor();
  Tensor out({total, h, w});
  auto it = out.data().begin();
  for (const Tensor* p : parts) it = std::copy(p->data().begin(), p->data().end(), it);
  return out;
}

Tensor hflip(const Tensor& x) {
  if (x.rank() < 1) return x;
  const int w = x.dim(x.rank() - 1);
  Tensor out(x.shape());
  const std::size_t rows = w ? x.size() / w : 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * w;
    double* o = out.data().data() + r * w;
    for (int j = 0; j < w; ++j) o[j] = in[w - 1 - j];
  }
  return out;
}

}  // namespace memseg::ops
