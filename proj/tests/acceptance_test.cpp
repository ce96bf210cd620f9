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
// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any fails. `--only N[,M...]` runs a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "memseg/attention.hpp"
#include "memseg/cli.hpp"
#include "memseg/dataset.hpp"
#include "memseg/inference.hpp"
#include "memseg/log.hpp"
#include "memseg/memory_bank.hpp"
#include "memseg/metrics.hpp"
#include "memseg/model.hpp"
#include "memseg/ops.hpp"
#include "memseg/rng.hpp"
#include "memseg/segmentation.hpp"
#include "memseg/temporal_memory.hpp"
#include "memseg/training.hpp"
#include "test_util.hpp"

namespace memseg {
namespace {

namespace fs = std::filesystem;
using testing::random_mask;
using testing::random_tensor;
using testing::TempDir;
using Matrix = std::vector<std::vector<double>>;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, a);
  return buf;
}

// ---------------------------------------------------------------------------
// Brute-force references. Everything here works on plain loops over pixels
// and channels and shares no code with the library.

// Half-pixel bilinear sampling with edge clamping.
double bilinear_at(const Tensor& x, int c, int h, int w, int out_h, int out_w, int y, int xo) {
  auto tap = [](int d, int in, int out) {
    double src = (d + 0.5) * static_cast<double>(in) / out - 0.5;
    src = std::max(src, 0.0);
    int lo = std::min(static_cast<int>(std::floor(src)), in - 1);
    int hi = std::min(lo + 1, in - 1);
    return std::tuple<int, int, double>{lo, hi, src - lo};
  };
  const auto [y0, y1, fy] = tap(y, h, out_h);
  const auto [x0, x1, fx] = tap(xo, w, out_w);
  const double top = (1 - fx) * x.at(c, y0, x0) + fx * x.at(c, y0, x1);
  const double bottom = (1 - fx) * x.at(c, y1, x0) + fx * x.at(c, y1, x1);
  return (1 - fy) * top + fy * bottom;
}

// Per-class candidates from features sampled at mask position (y, x).
Tensor transform_reference(const std::function<double(int, int, int)>& feature, int c,
                           const SegmentationMask& gt, const Tensor& memory) {
  const int k_classes = memory.dim(0);
  Tensor out = memory;
  for (int k = 0; k < k_classes; ++k) {
    std::vector<std::vector<double>> members;
    for (int y = 0; y < gt.height; ++y) {
      for (int x = 0; x < gt.width; ++x) {
        if (gt.at(y, x) != k) continue;
        std::vector<double> f(static_cast<std::size_t>(c));
        for (int j = 0; j < c; ++j) f[static_cast<std::size_t>(j)] = feature(j, y, x);
        members.push_back(f);
      }
    }
    if (members.empty()) continue;
    double mem_norm = 0;
    for (int j = 0; j < c; ++j) mem_norm += memory.at(k, j) * memory.at(k, j);
    std::vector<double> dissim;
    double total = 0;
    for (const auto& f : members) {
      double dot = 0, norm = 0;
      for (int j = 0; j < c; ++j) {
        dot += f[static_cast<std::size_t>(j)] * memory.at(k, j);
        norm += f[static_cast<std::size_t>(j)] * f[static_cast<std::size_t>(j)];
      }
      const double s = (norm > 0 && mem_norm > 0) ? dot / std::sqrt(norm * mem_norm) : 0.0;
      dissim.push_back(1.0 - s);
      total += 1.0 - s;
    }
    for (int j = 0; j < c; ++j) {
      double acc = 0;
      for (std::size_t i = 0; i < members.size(); ++i) {
        const double w = total > 0 ? dissim[i] / total : 1.0 / static_cast<double>(members.size());
        acc += w * members[i][static_cast<std::size_t>(j)];
      }
      out.at(k, j) = acc;
    }
  }
  return out;
}

// Rows are pixels: out[i][o] = b[o] + sum_c W[o][c] x[c][i].
Matrix project_pixels(const ConvParams& p, const Tensor& x) {
  const int cout = p.weight.dim(0), cin = p.weight.dim(1), h = x.dim(1), w = x.dim(2);
  Matrix out;
  for (int y = 0; y < h; ++y) {
    for (int xo = 0; xo < w; ++xo) {
      std::vector<double> row(static_cast<std::size_t>(cout));
      for (int o = 0; o < cout; ++o) {
        double acc = p.bias[static_cast<std::size_t>(o)];
        for (int c = 0; c < cin; ++c) acc += p.weight.at(o, c) * x.at(c, y, xo);
        row[static_cast<std::size_t>(o)] = acc;
      }
      out.push_back(row);
    }
  }
  return out;
}

Matrix softmax_scores(const Matrix& q, const Matrix& k, double scale) {
  Matrix a(q.size(), std::vector<double>(k.size()));
  for (std::size_t i = 0; i < q.size(); ++i) {
    double top = -INFINITY;
    for (std::size_t j = 0; j < k.size(); ++j) {
      double dot = 0;
      for (std::size_t d = 0; d < q[i].size(); ++d) dot += q[i][d] * k[j][d];
      a[i][j] = dot / scale;
      top = std::max(top, a[i][j]);
    }
    double z = 0;
    for (double& v : a[i]) {
      v = std::exp(v - top);
      z += v;
    }
    for (double& v : a[i]) v /= z;
  }
  return a;
}

// g_o applied to the attention-weighted sum of values, channel-major.
Tensor mix_values(const Matrix& a, const Matrix& values, const ConvParams& g_o, int h, int w) {
  const int c = g_o.weight.dim(0), half = g_o.weight.dim(1);
  Tensor out({c, h, w});
  for (int i = 0; i < h * w; ++i) {
    std::vector<double> mixed(static_cast<std::size_t>(half), 0.0);
    for (std::size_t j = 0; j < values.size(); ++j) {
      for (int d = 0; d < half; ++d) {
        mixed[static_cast<std::size_t>(d)] +=
            a[static_cast<std::size_t>(i)][j] * values[j][static_cast<std::size_t>(d)];
      }
    }
    for (int o = 0; o < c; ++o) {
      double acc = g_o.bias[static_cast<std::size_t>(o)];
      for (int d = 0; d < half; ++d) acc += g_o.weight.at(o, d) * mixed[static_cast<std::size_t>(d)];
      out.at(o, i / w, i % w) = acc;
    }
  }
  return out;
}

double worst_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

ProjectionSet random_projections(std::mt19937_64& rng, int c) {
  ProjectionSet p = init_projections(rng(), "acc", c);
  for (ConvParams* cp : {&p.g_q, &p.g_k, &p.g_v, &p.g_o}) {
    cp->weight = random_tensor(rng, cp->weight.shape(), -0.8, 0.8);
    cp->bias = random_tensor(rng, cp->bias.shape(), -0.3, 0.3);
  }
  return p;
}

// ---------------------------------------------------------------------------

Outcome equation_oracles() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2026);
  const int kInstances = 120;
  double worst_t = 0, worst_rel = 0, worst_ref = 0, worst_tma = 0;
  auto dim = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  for (int n = 0; n < kInstances; ++n) {
    // transform_T: features at h x w, labels at the same or a larger grid.
    {
      const int k = dim(2, 8), c = dim(1, 16), h = dim(1, 16), w = dim(1, 16);
      const Tensor memory = random_tensor(rng, {k, c});
      const Tensor r = random_tensor(rng, {c, h, w});
      const int gh = h * dim(1, 2), gw = w * dim(1, 2);
      const SegmentationMask gt = random_mask(rng, gh, gw, k, 0.1);
      const Tensor got = transform_T(r, gt, memory, TransformMode::kUpsampleFeatures);
      const Tensor want = transform_reference(
          [&](int j, int y, int x) { return bilinear_at(r, j, h, w, gh, gw, y, x); }, c, gt, memory);
      worst_t = std::max(worst_t, worst_abs_diff(got, want));
      SegmentationMask small(h, w);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) small.at(y, x) = gt.at(y * gh / h, x * gw / w);
      }
      const Tensor got_n = transform_T(r, gt, memory, TransformMode::kNearestLabels);
      const Tensor want_n =
          transform_reference([&](int j, int y, int x) { return r.at(j, y, x); }, c, small, memory);
      worst_t = std::max(worst_t, worst_abs_diff(got_n, want_n));
    }
    // relations / refine.
    {
      const int c = 2 * dim(1, 8), h = dim(1, 16), w = dim(1, 16);
      const ProjectionSet p = random_projections(rng, c);
      const Tensor r = random_tensor(rng, {c, h, w});
      const Tensor cb = random_tensor(rng, {c, h, w});
      const Matrix a = softmax_scores(project_pixels(p.g_q, r), project_pixels(p.g_k, cb),
                                      std::sqrt(c / 2.0));
      const Tensor o = relations(p, r, cb);
      for (int i = 0; i < h * w; ++i) {
        for (int j = 0; j < h * w; ++j) {
          worst_rel = std::max(worst_rel, std::abs(o.at(i, j) - a[static_cast<std::size_t>(i)]
                                                                 [static_cast<std::size_t>(j)]));
        }
      }
      worst_ref = std::max(worst_ref, worst_abs_diff(refine(p, o, cb),
                                                   mix_values(a, project_pixels(p.g_v, cb),
                                                              p.g_o, h, w)));
    }
    // Temporal memory attention over 1..3 buffered frames.
    {
      const int c = 2 * dim(1, 8), h = dim(1, 16), w = dim(1, 16);
      const ProjectionSet p = random_projections(rng, c);
      TemporalMemory mem;
      mem.capacity = 3;
      const int frames = dim(1, 3);
      for (int f = 0; f < frames; ++f) mem = push(mem, random_tensor(rng, {c, h, w}));
      const Tensor cur = random_tensor(rng, {c, h, w});
      Matrix keys, values;
      for (const Tensor& f : mem.buffer) {
        for (auto& row : project_pixels(p.g_k, f)) keys.push_back(row);
        for (auto& row : project_pixels(p.g_v, f)) values.push_back(row);
      }
      const Matrix a = softmax_scores(project_pixels(p.g_q, cur), keys, std::sqrt(c / 2.0));
      Tensor want = mix_values(a, values, p.g_o, h, w);
      for (std::size_t i = 0; i < want.size(); ++i) want[i] += cur[i];
      worst_tma = std::max(worst_tma, worst_abs_diff(attend(p, mem, cur), want));
    }
  }
  const double secs = seconds_since(start);
  const double worst = std::max({worst_t, worst_rel, worst_ref, worst_tma});
  std::ostringstream d;
  d << kInstances << " instances each; max abs err transform " << fmt("%.2e", worst_t)
    << ", relations " << fmt("%.2e", worst_rel) << ", refine " << fmt("%.2e", worst_ref)
    << ", temporal " << fmt("%.2e", worst_tma) << "; " << fmt("%.1f", secs) << " s";
  return {worst <= 1e-6 && secs < 30.0, d.str()};
}

Outcome memory_dynamics() {
  std::mt19937_64 rng(7);
  double worst_gap = 0;       // |dist_n - 0.75^n dist_0|
  double worst_excess = 0;    // dist_n - 0.75^n dist_0, positive means bound violated
  for (int trial = 0; trial < 10; ++trial) {
    const int k = 2 + trial % 7, c = 1 + 3 * trial % 16;
    FeatureMemory mem;
    mem.matrix = random_tensor(rng, {k, c}, -2.0, 2.0);
    mem.schedule.m0 = 0.25;
    mem.schedule.mode = MomentumMode::kConstant;
    const Tensor target = random_tensor(rng, {k, c}, -2.0, 2.0);
    auto dist = [&] {
      double s = 0;
      for (std::size_t i = 0; i < target.size(); ++i) {
        const double d = mem.matrix[i] - target[i];
        s += d * d;
      }
      return std::sqrt(s);
    };
    const double d0 = dist();
    for (int n = 1; n <= 40; ++n) {
      update_memory(mem, target);
      const double bound = std::pow(0.75, n) * d0;
      worst_gap = std::max(worst_gap, std::abs(dist() - bound));
      worst_excess = std::max(worst_excess, dist() - bound);
    }
  }
  std::ostringstream d;
  d << "10 random memories, n = 1..40; max |dist - 0.75^n dist0| = " << fmt("%.2e", worst_gap)
    << ", max bound excess = " << fmt("%.2e", worst_excess);
  return {worst_gap <= 1e-9 && worst_excess <= 1e-9, d.str()};
}

AugmentationConfig no_augmentation() {
  AugmentationConfig a;
  a.scale_min = a.scale_max = 1.0;
  a.flip_probability = 0.0;
  a.brightness = a.contrast = a.saturation = 0.0;
  return a;
}

Outcome decoder_a_gradients() {
  const auto start = Clock::now();
  SyntheticConfig sc;
  sc.n_videos = 2;
  sc.n_val = 0;
  sc.frames_per_video = 3;
  sc.height = sc.width = 32;
  sc.num_classes = 4;
  std::vector<VideoClip> clips;
  for (int i = 0; i < sc.n_videos; ++i) clips.push_back(synthesize_video(sc, i).clip);
  ModelConfig mc;
  mc.num_classes = 4;
  mc.encoder.channels = {4, 8, 8, 8};
  mc.head.embed_dim = 8;
  mc.head.ppm_channels = 4;
  TrainConfig tc;
  tc.batch_size = 1;
  tc.crop_height = tc.crop_width = 32;
  tc.augment = no_augmentation();
  tc.seed = 3;

  double worst = 0;
  std::string worst_name;
  std::size_t checked = 0;
  for (bool gt_guidance : {true, false}) {
    TrainState state = init_training(build_model(6, mc, ModelVariant::kDecoderA), clips, tc);
    std::vector<TrainSample> batch = make_batch(state, clips, tc);
    while (!batch[0].previous_gt) batch = make_batch(state, clips, tc);
    Model& model = state.model;
    ag::Graph g;
    g.backward(batch_loss(g, model, batch, gt_guidance, tc));
    const ParameterList params = parameters(model);
    std::vector<const Tensor*> ptrs;
    for (const NamedParameter& p : params) ptrs.push_back(p.tensor);
    const ag::Gradient grads = g.gradients(ptrs);
    auto total = [&] {
      ag::Graph e(false);
      return batch_loss(e, model, batch, gt_guidance, tc).value()[0];
    };
    // The first-pass head trains on detached features: the other parameters
    // only see the main term.
    auto main_term = [&] {
      double v = total();
      for (const TrainSample& s : batch) {
        v -= cross_entropy_loss(first_pass_forward(model, s.frame), s.gt) /
             static_cast<double>(batch.size());
      }
      return v;
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& t = *params[i].tensor;
      const bool head = params[i].name.rfind("first_pass", 0) == 0;
      for (std::size_t j = 0; j < t.size(); ++j) {
        const double saved = t[j], h = 1e-5;
        t[j] = saved + h;
        const double up = head ? total() : main_term();
        t[j] = saved - h;
        const double down = head ? total() : main_term();
        t[j] = saved;
        const double fd = (up - down) / (2 * h);
        const double err = std::abs(grads[i][j] - fd) /
                           std::max({std::abs(grads[i][j]), std::abs(fd), 1e-5});
        if (err > worst) {
          worst = err;
          worst_name = params[i].name;
        }
        ++checked;
      }
    }
  }
  const double secs = seconds_since(start);
  std::ostringstream d;
  d << checked << " parameter entries (GT and previous-frame guidance); max rel err "
    << fmt("%.2e", worst) << " (" << worst_name << "); " << fmt("%.1f", secs) << " s";
  return {worst <= 1e-4 && secs < 120.0, d.str()};
}

// ---------------------------------------------------------------------------
// Toy reproduction shared by the later criteria.

struct ToyRun {
  std::vector<VideoClip> train;
  std::vector<VideoClip> val;
  std::map<std::pair<int, ModelVariant>, Model> models;  // (seed, variant)
};

InferenceConfig plain_inference() {
  InferenceConfig c;
  c.scales = {1.0};
  c.flip = false;
  return c;
}

struct Scores {
  double miou = 0;
  double pixel_acc = 0;
  std::vector<VideoResult> results;
};

Scores evaluate(const Model& model, const std::vector<VideoClip>& clips) {
  Scores s;
  ConfusionMatrix cm(model.num_classes());
  for (const VideoClip& clip : clips) {
    s.results.push_back(video_infer(model, clip.frames, plain_inference()));
    for (std::size_t t = 0; t < clip.frames.size(); ++t) cm.add(s.results.back().masks[t], clip.masks[t]);
  }
  s.miou = miou(cm);
  s.pixel_acc = pixel_accuracy(cm);
  return s;
}

Outcome table_one(ToyRun& toy, const fs::path& scratch) {
  const auto start = Clock::now();
  SyntheticConfig sc;  // 64 x 64, 8 frames, K = 5
  sc.n_videos = 50;
  sc.n_val = 10;
  sc.seed = 0;
  const DatasetManifest manifest = generate_synthetic(sc, scratch / "toy");
  for (const VideoEntry& v : manifest.split("train")) toy.train.push_back(load_clip(manifest, v.id));
  for (const VideoEntry& v : manifest.split("val")) toy.val.push_back(load_clip(manifest, v.id));

  ModelConfig mc;
  mc.num_classes = manifest.num_classes;
  std::ostringstream d;
  int wins = 0;
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  for (std::uint64_t seed : seeds) {
    TrainConfig tc;
    tc.seed = seed;
    mc.momentum.total_steps = tc.steps;
    std::map<ModelVariant, Scores> scores;
    std::vector<ModelVariant> variants{ModelVariant::kBaseline, ModelVariant::kDecoderA};
    if (seed == 0) variants.push_back(ModelVariant::kDecoderB);
    for (ModelVariant v : variants) {
      TrainState state =
          init_training(build_model(substream_seed(seed, "model"), mc, v), toy.train, tc);
      run_training(state, toy.train, tc, nullptr);
      scores[v] = evaluate(state.model, toy.val);
      toy.models.emplace(std::make_pair(static_cast<int>(seed), v), std::move(state.model));
    }
    const double base = scores[ModelVariant::kBaseline].miou;
    const double a = scores[ModelVariant::kDecoderA].miou;
    const bool win = a - base >= 0.005;
    wins += win ? 1 : 0;
    d << "seed " << seed << ": baseline " << fmt("%.4f", base) << ", A " << fmt("%.4f", a)
      << " (" << (win ? "+" : "") << fmt("%.4f", a - base) << ")";
    if (seed == 0) {
      const Scores& b = scores[ModelVariant::kDecoderB];
      ConfusionMatrix cm(mc.num_classes);
      for (std::size_t i = 0; i < toy.val.size(); ++i) {
        for (std::size_t t = 0; t < toy.val[i].frames.size(); ++t) {
          cm.add(ensemble(scores[ModelVariant::kDecoderA].results[i].probs[t],
                          b.results[i].probs[t]),
                 toy.val[i].masks[t]);
        }
      }
      d << ", B " << fmt("%.4f", b.miou) << ", ensemble(A,B) mIoU " << fmt("%.4f", miou(cm))
        << " acc " << fmt("%.4f", pixel_accuracy(cm));
    }
    d << "; ";
  }
  const double secs = seconds_since(start);
  d << "A ahead by >= 0.005 on " << wins << "/3 seeds; " << fmt("%.0f", secs) << " s";
  return {wins >= 2 && secs < 900.0, d.str()};
}

Outcome multi_stage(const ToyRun& toy) {
  if (toy.models.empty()) return {false, "needs the trained toy models (criterion 4)"};
  std::ostringstream d;
  bool ok = true;
  for (ModelVariant v : {ModelVariant::kDecoderA, ModelVariant::kDecoderB}) {
    const Model& model = toy.models.at({0, v});
    const int n_stages = 4;
    std::vector<ConfusionMatrix> cms(n_stages + 1, ConfusionMatrix(model.num_classes()));
    std::vector<std::size_t> changed(n_stages + 1, 0);
    for (const VideoClip& clip : toy.val) {
      const std::vector<StageResult> stages =
          multi_stage_infer(model, clip.frames, plain_inference(), n_stages);
      if (stages.size() != static_cast<std::size_t>(n_stages + 1)) {
        ok = false;
        continue;
      }
      bool settled = false;
      for (int s = 0; s <= n_stages; ++s) {
        const auto& masks = stages[static_cast<std::size_t>(s)].result.masks;
        for (std::size_t t = 0; t < masks.size(); ++t) cms[s].add(masks[t], clip.masks[t]);
        changed[s] += stages[static_cast<std::size_t>(s)].changed_pixels;
        if (s == 0) continue;
        std::size_t recount = 0;
        const auto& prev = stages[static_cast<std::size_t>(s - 1)].result.masks;
        for (std::size_t t = 0; t < masks.size(); ++t) {
          for (std::size_t p = 0; p < masks[t].size(); ++p) {
            recount += masks[t].labels[p] != prev[t].labels[p];
          }
        }
        if (recount != stages[static_cast<std::size_t>(s)].changed_pixels) ok = false;
        // Once two consecutive stages agree, every later stage must too.
        if (settled && recount != 0) ok = false;
        if (recount == 0) settled = true;
      }
    }
    d << variant_name(v) << " stage mIoU/changed:";
    for (int s = 0; s <= n_stages; ++s) {
      d << " " << fmt("%.4f", miou(cms[s])) << "/" << changed[s];
    }
    d << "; ";
  }
  // A pass with a known fixed point: relabel toward a target one class at a
  // time, then stay.
  SegmentationMask target(4, 4);
  for (std::size_t p = 0; p < target.size(); ++p) target.labels[p] = static_cast<std::uint8_t>(p % 3);
  const StagePass toward = [&](const std::vector<SegmentationMask>* g) {
    VideoResult r;
    SegmentationMask m = g ? (*g)[0] : SegmentationMask(4, 4);
    for (std::size_t p = 0; p < m.size(); ++p) {
      if (m.labels[p] != target.labels[p]) {
        m.labels[p] = target.labels[p];
        break;
      }
    }
    r.masks.push_back(m);
    return r;
  };
  const auto stages = multi_stage_infer(toward, 16);
  bool settled = false;
  for (const StageResult& s : stages) {
    if (settled && s.changed_pixels != 0) ok = false;
    if (s.stage > 0 && s.changed_pixels == 0) settled = true;
  }
  ok = ok && settled && stages.back().result.masks[0] == target;
  d << "synthetic fixed point reached and held";
  return {ok, d.str()};
}

Outcome ensemble_oracle(const ToyRun& toy) {
  std::mt19937_64 rng(61);
  const int k = 5, h = 1000, w = 1000;
  // Probabilities on a coarse grid so that exact ties occur often.
  auto coarse_map = [&] {
    Tensor t({k, h, w});
    std::uniform_int_distribution<int> q(0, 7);
    for (double& v : t.data()) v = q(rng) / 8.0;
    return ProbabilityMap{t};
  };
  const ProbabilityMap a = coarse_map(), b = coarse_map();
  const SegmentationMask got = ensemble(a, b);
  std::size_t mismatches = 0, ties = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int best = 0;
      double best_v = -1;
      int n_best = 0;
      for (int c = 0; c < k; ++c) {
        const double v = a.probs.at(c, y, x) + b.probs.at(c, y, x);
        if (v > best_v) {
          best_v = v;
          best = c;
          n_best = 1;
        } else if (v == best_v) {
          ++n_best;
        }
      }
      ties += n_best > 1;
      mismatches += got.at(y, x) != best;
    }
  }
  // Self-ensemble against the single-model argmax, on random and model maps.
  std::size_t self_mismatch = count_differences(ensemble(a, a), argmax_channels(a.probs));
  std::size_t model_maps = 0;
  for (const auto& [key, model] : toy.models) {
    if (key.first != 0 || !model.uses_memory()) continue;
    for (const VideoClip& clip : toy.val) {
      const VideoResult r = video_infer(model, clip.frames, plain_inference());
      for (const ProbabilityMap& p : r.probs) {
        self_mismatch += count_differences(ensemble(p, p), argmax_channels(p.probs));
        ++model_maps;
      }
    }
  }
  std::ostringstream d;
  d << "10^6 pixels (" << ties << " with tied sums): " << mismatches
    << " mismatches; self-ensemble mismatches " << self_mismatch << " over random + "
    << model_maps << " model maps";
  return {mismatches == 0 && self_mismatch == 0, d.str()};
}

Outcome tta_plumbing(const ToyRun& toy) {
  std::mt19937_64 rng(71);
  bool exact = true;
  std::size_t frames = 0;
  // Reference chains built from the single-frame forwards.
  auto check = [&](const Model& model, const std::vector<Tensor>& clip) {
    const VideoResult r = video_infer(model, clip, plain_inference());
    TemporalMemory temporal;
    temporal.capacity = model.config.temporal_capacity;
    SegmentationMask prev;
    for (std::size_t t = 0; t < clip.size(); ++t) {
      Tensor want;
      switch (model.variant) {
        case ModelVariant::kBaseline:
          want = baseline_forward(model, clip[t]).probs;
          break;
        case ModelVariant::kDecoderA: {
          const SegmentationMask guide =
              t == 0 ? argmax_channels(first_pass_forward(model, clip[t]).probs) : prev;
          want = decoder_a_forward(model, clip[t],
                                   make_guidance(guide, GuidanceSource::kPreviousFramePrediction,
                                                 model.num_classes()))
                     .probs;
          break;
        }
        default: {
          auto [p, next] = decoder_b_forward(model, clip[t], temporal);
          temporal = std::move(next);
          want = p.probs;
        }
      }
      exact = exact && r.probs[t].probs == want;
      prev = argmax_channels(want);
      ++frames;
    }
  };
  for (const auto& [key, model] : toy.models) {
    if (key.first != 0) continue;
    for (std::size_t i = 0; i < 3 && i < toy.val.size(); ++i) check(model, toy.val[i].frames);
  }
  ModelConfig small;
  small.num_classes = 4;
  small.encoder.channels = {4, 8, 8, 8};
  small.head.embed_dim = 8;
  small.head.ppm_channels = 4;
  for (ModelVariant v : {ModelVariant::kBaseline, ModelVariant::kDecoderA, ModelVariant::kDecoderB}) {
    std::vector<Tensor> clip;
    for (int t = 0; t < 4; ++t) clip.push_back(random_tensor(rng, {3, 32, 32}, 0.0, 1.0));
    check(build_model(9, small, v), clip);
  }

  // Zero encoder kernels with random biases make every feature map spatially
  // constant, so the only spatial structure comes from a guidance mask that
  // is constant over 8 x 8 blocks and is mirrored with the input.
  double worst = 0;
  for (ModelVariant v : {ModelVariant::kBaseline, ModelVariant::kDecoderA, ModelVariant::kDecoderB}) {
    Model m = build_model(12, small, v);
    for (const NamedParameter& p : parameters(m)) {
      if (p.name.rfind("encoder.", 0) == 0 && p.name.ends_with(".weight")) p.tensor->fill(0.0);
      if (p.name.ends_with(".bias")) *p.tensor = random_tensor(rng, p.tensor->shape(), 0.0, 0.5);
    }
    m.memory.matrix = random_tensor(rng, m.memory.matrix.shape());
    const Tensor frame = random_tensor(rng, {3, 64, 64}, 0.0, 1.0);
    const SegmentationMask guide = nearest_resize(random_mask(rng, 8, 8, 4), 64, 64);
    InferenceConfig cfg;
    cfg.scales = {1.0};
    cfg.flip = true;
    std::vector<Tensor> branches(2);
    multi_scale_flip_infer(frame, cfg, [&](const Tensor& img, const Branch& branch) {
      const SegmentationMask p = branch.flipped ? hflip(guide) : guide;
      ag::Graph g(false);
      TemporalMemory mem;
      mem.capacity = 2;
      if (v == ModelVariant::kDecoderB) mem = push(mem, memory_features_forward(m, img));
      Tensor probs =
          decoder_forward(g, m, g.constant(img), v == ModelVariant::kBaseline ? nullptr : &p, mem)
              .probs.value();
      branches[static_cast<std::size_t>(branch.index)] = branch.flipped ? ops::hflip(probs) : probs;
      return ProbabilityMap{probs};
    });
    worst = std::max(worst, worst_abs_diff(branches[0], branches[1]));
  }
  std::ostringstream d;
  d << "single unflipped branch bit-exact on " << frames << " frames: " << (exact ? "yes" : "no")
    << "; symmetric models max |flip - plain| " << fmt("%.2e", worst);
  return {exact && worst <= 1e-6, d.str()};
}

Outcome metric_oracle() {
  std::mt19937_64 rng(81);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int k = std::uniform_int_distribution<int>(2, 4)(rng);
    const int h = std::uniform_int_distribution<int>(1, 8)(rng);
    const int w = std::uniform_int_distribution<int>(1, 8)(rng);
    const SegmentationMask gt = random_mask(rng, h, w, k, 0.15);
    const SegmentationMask pred = random_mask(rng, h, w, k);
    ConfusionMatrix cm(k);
    cm.add(pred, gt);
    // Set-based count: intersection and union of the pixel sets per class.
    double sum = 0;
    int present = 0;
    for (int c = 0; c < k; ++c) {
      int inter = 0, uni = 0;
      for (std::size_t p = 0; p < gt.size(); ++p) {
        if (gt.labels[p] == kIgnoreLabel) continue;
        const bool in_gt = gt.labels[p] == c, in_pred = pred.labels[p] == c;
        inter += in_gt && in_pred;
        uni += in_gt || in_pred;
      }
      if (uni == 0) continue;
      sum += static_cast<double>(inter) / uni;
      ++present;
    }
    const double want = present ? sum / present : 0.0;
    worst = std::max(worst, std::abs(miou(cm) - want));
  }
  ConfusionMatrix example(2);
  example.add(SegmentationMask(1, 4, {0, 1, 1, 1}), SegmentationMask(1, 4, {0, 0, 1, 1}));
  const double worked = miou(example);
  std::ostringstream d;
  d << "20 random cases max err " << fmt("%.2e", worst) << "; worked example "
    << fmt("%.17g", worked) << (worked == 7.0 / 12.0 ? " == 7/12" : " != 7/12");
  return {worst <= 1e-12 && worked == 7.0 / 12.0, d.str()};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return files;
}

Outcome determinism(const fs::path& scratch) {
  const fs::path config = scratch / "det.json";
  std::ofstream(config) << R"({
    "model": {"encoder_channels": [8, 16, 16, 16], "embed_dim": 16, "ppm_channels": 8},
    "train": {"steps": 30, "batch_size": 2},
    "infer": {"scales": [0.75, 1.0], "stages": 2, "save_probs": true}
  })";
  std::ostringstream sink;
  auto run = [&](const std::vector<std::string>& args) {
    std::ostringstream err;
    const int code = run_cli(args, sink, err);
    if (code != 0) throw std::runtime_error("memseg " + args[0] + " failed: " + err.str());
  };
  run({"gen-data", "--out", (scratch / "det_data").string(), "--videos", "6", "--val", "3",
       "--frames", "4", "--seed", "4"});
  std::vector<std::map<std::string, std::string>> outputs;
  const std::vector<std::string> jobs{"1", "1", "3"};
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const fs::path out = scratch / ("det_run" + std::to_string(i));
    fs::create_directories(out);
    for (const char* v : {"decoder_a", "decoder_b"}) {
      const std::string ckpt = (out / (std::string(v) + ".mstf")).string();
      const std::string pred = (out / (std::string("pred_") + v)).string();
      run({"train", "--config", config.string(), "--data", (scratch / "det_data").string(),
           "--variant", v, "--seed", "9", "--jobs", jobs[i], "--out", ckpt});
      run({"infer", "--config", config.string(), "--data", (scratch / "det_data").string(),
           "--checkpoint", ckpt, "--out", pred, "--jobs", jobs[i]});
      run({"eval", "--data", (scratch / "det_data").string(), "--pred", pred, "--jobs", jobs[i]});
    }
    run({"ensemble", "--data", (scratch / "det_data").string(), "--probs-a",
         (out / "pred_decoder_a").string(), "--probs-b", (out / "pred_decoder_b").string(),
         "--out", (out / "ens").string(), "--jobs", jobs[i]});
    outputs.push_back(snapshot(out));
  }
  std::size_t masks = 0, reports = 0;
  for (const auto& [name, bytes] : outputs[0]) {
    masks += name.ends_with(".pgm");
    reports += name.ends_with("report.json");
  }
  const bool same = outputs[0] == outputs[1] && outputs[0] == outputs[2];
  std::ostringstream d;
  d << outputs[0].size() << " files (" << masks << " masks, " << reports
    << " reports, checkpoints, logs) compared over 3 runs (--jobs 1, 1, 3): "
    << (same ? "byte-identical" : "DIFFERENT");
  return {same && masks > 0 && reports == 3, d.str()};
}

}  // namespace
}  // namespace memseg

int main(int argc, char** argv) {
  using namespace memseg;
  init_logging("error");
  std::set<int> only;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--only") {
      std::stringstream list(argv[i + 1]);
      for (std::string item; std::getline(list, item, ',');) only.insert(std::stoi(item));
    }
  }
  auto wanted = [&](int n) { return only.empty() || only.count(n) > 0; };

  TempDir scratch("acceptance");
  ToyRun toy;
  const std::vector<std::pair<int, std::pair<std::string, std::function<Outcome()>>>> criteria{
      {1, {"equation oracles", equation_oracles}},
      {2, {"memory update dynamics", memory_dynamics}},
      {3, {"decoder A gradients", decoder_a_gradients}},
      {4, {"toy ablation: decoder A vs baseline",
           [&] { return table_one(toy, scratch.path()); }}},
      {5, {"multi-stage inference", [&] { return multi_stage(toy); }}},
      {6, {"ensemble correctness", [&] { return ensemble_oracle(toy); }}},
      {7, {"test-time augmentation plumbing", [&] { return tta_plumbing(toy); }}},
      {8, {"metric oracle", metric_oracle}},
      {9, {"end-to-end determinism", [&] { return determinism(scratch.path()); }}},
  };
  int failures = 0;
  for (const auto& [n, item] : criteria) {
    if (!wanted(n)) continue;
    Outcome o;
    try {
      o = item.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", n, item.first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
