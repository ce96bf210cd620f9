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
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include <gtest/gtest.h>

#include "memseg/dataset.hpp"
#include "memseg/error.hpp"
#include "memseg/metrics.hpp"
#include "test_util.hpp"

namespace memseg {
namespace {

namespace fs = std::filesystem;
using testing::random_mask;

using testing::TempDir;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

SyntheticConfig small_config() {
  SyntheticConfig c;
  c.n_videos = 3;
  c.n_val = 1;
  c.frames_per_video = 4;
  c.height = 32;
  c.width = 64;
  c.num_classes = 4;
  c.seed = 5;
  return c;
}

TEST(SyntheticTest, ConfigValidation) {
  SyntheticConfig c = small_config();
  c.num_classes = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.height = 48;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.num_classes = 30;  // 29 shapes of at least 7x7 cannot share a 32x64 frame
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SyntheticTest, EveryClassAppearsInEveryVideo) {
  const SyntheticConfig c = small_config();
  for (int i = 0; i < c.n_videos; ++i) {
    const SyntheticVideo v = synthesize_video(c, i);
    std::vector<bool> seen(4, false);
    for (const auto& m : v.clip.masks) {
      for (auto l : m.labels) seen[l] = true;
    }
    for (bool s : seen) EXPECT_TRUE(s);
  }
}

TEST(SyntheticTest, MotionFollowsClosedForm) {
  const SyntheticConfig c = small_config();
  const SyntheticVideo v = synthesize_video(c, 1);
  for (const ShapeTrack& s : v.tracks) {
    for (int t = 0; t < c.frames_per_video; ++t) {
      EXPECT_EQ(s.center_x(t, c.width), (((s.cx + t * s.vx) % 64) + 64) % 64);
      EXPECT_EQ(s.center_y(t, c.height), (((s.cy + t * s.vy) % 32) + 32) % 32);
    }
  }
  // Re-render the masks from the tracks, later classes painted on top.
  for (int t = 0; t < c.frames_per_video; ++t) {
    for (int y = 0; y < c.height; ++y) {
      for (int x = 0; x < c.width; ++x) {
        int expect = 0;
        for (const ShapeTrack& s : v.tracks) {
          const int cx = s.center_x(t, c.width), cy = s.center_y(t, c.height);
          int dx = std::abs(x - cx), dy = std::abs(y - cy);
          dx = std::min(dx, c.width - dx);
          dy = std::min(dy, c.height - dy);
          const bool in = s.kind == ShapeKind::kRectangle
                              ? dx <= s.half_w && dy <= s.half_h
                              : dx * dx + dy * dy <= s.half_w * s.half_w;
          if (in) expect = s.class_id;
        }
        ASSERT_EQ(v.clip.masks[static_cast<std::size_t>(t)].at(y, x), expect);
      }
    }
  }
}

TEST(SyntheticTest, SameSeedSameBytes) {
  TempDir a("gen_a"), b("gen_b");
  generate_synthetic(small_config(), a.path());
  generate_synthetic(small_config(), b.path());
  EXPECT_EQ(slurp(a.path() / "manifest.json"), slurp(b.path() / "manifest.json"));
  for (int t = 0; t < 4; ++t) {
    EXPECT_EQ(slurp(frame_path(a.path(), "video_002", t)), slurp(frame_path(b.path(), "video_002", t)));
    EXPECT_EQ(slurp(mask_path(a.path(), "video_000", t)), slurp(mask_path(b.path(), "video_000", t)));
  }
  const DatasetManifest m = load_manifest(a.path());
  EXPECT_EQ(m.split("train").size(), 2u);
  EXPECT_EQ(m.split("val").size(), 1u);
  EXPECT_EQ(m.split("val")[0].id, "video_002");
}

TEST(DatasetIoTest, ClipRoundTrip) {
  TempDir dir("clip");
  const SyntheticConfig c = small_config();
  const DatasetManifest m = generate_synthetic(c, dir.path());
  const SyntheticVideo v = synthesize_video(c, 0);
  const VideoClip back = load_clip(m, "video_000");
  ASSERT_EQ(back.frames.size(), 4u);
  EXPECT_EQ(back.masks, v.clip.masks);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(back.frames[t], v.clip.frames[t]);
  EXPECT_THROW(load_clip(m, "video_999"), ManifestError);
}

TEST(DatasetIoTest, TruncatedAndMissingFiles) {
  TempDir dir("trunc");
  const DatasetManifest m = generate_synthetic(small_config(), dir.path());
  const fs::path mp = mask_path(dir.path(), "video_001", 2);
  const std::string bytes = slurp(mp);
  std::ofstream(mp, std::ios::binary | std::ios::trunc) << bytes.substr(0, bytes.size() / 2);
  try {
    load_clip(m, "video_001");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(mp.string()), std::string::npos);
  }
  std::ofstream(mp, std::ios::binary | std::ios::trunc) << "P5\n64";
  EXPECT_THROW(read_pgm(mp), IoError);
  fs::remove(frame_path(dir.path(), "video_000", 0));
  EXPECT_THROW(load_clip(m, "video_000"), IoError);
}

TEST(DatasetIoTest, ManifestErrors) {
  TempDir dir("manifest");
  DatasetManifest m = generate_synthetic(small_config(), dir.path());
  std::ofstream(dir.path() / "manifest.json", std::ios::trunc)
      << R"({"version": 7, "num_classes": 4, "height": 32, "width": 64, "videos": []})";
  EXPECT_THROW(load_manifest(dir.path()), VersionError);
  std::ofstream(dir.path() / "manifest.json", std::ios::trunc) << "{not json";
  EXPECT_THROW(load_manifest(dir.path()), ManifestError);
  m.num_classes = 3;  // masks contain label 3
  save_manifest(m);
  EXPECT_THROW(load_clip(load_manifest(dir.path()), "video_000"), ManifestError);
}

SegmentationMask row(std::vector<std::uint8_t> v) {
  const int w = static_cast<int>(v.size());
  return SegmentationMask(1, w, std::move(v));
}

TEST(ConfusionTest, DiagonalIgnoredAndHandCount) {
  ConfusionMatrix cm(3);
  confusion(row({0, 1, 2, 2}), row({0, 1, 2, 2}), cm);
  EXPECT_EQ(cm.count(2, 2), 2u);
  EXPECT_EQ(cm.total(), cm.count(0, 0) + cm.count(1, 1) + cm.count(2, 2));
  ConfusionMatrix ignored(3);
  confusion(row({0, 1}), row({kIgnoreLabel, kIgnoreLabel}), ignored);
  EXPECT_EQ(ignored.total(), 0u);

  // gt [[0,1],[1,1]] vs pred [[1,1],[0,1]]
  ConfusionMatrix hand(2);
  confusion(SegmentationMask(2, 2, {1, 1, 0, 1}), SegmentationMask(2, 2, {0, 1, 1, 1}), hand);
  EXPECT_EQ(hand.count(0, 0), 0u);
  EXPECT_EQ(hand.count(0, 1), 1u);
  EXPECT_EQ(hand.count(1, 0), 1u);
  EXPECT_EQ(hand.count(1, 1), 2u);
  EXPECT_THROW(confusion(row({0}), row({0, 1}), hand), ShapeError);
}

TEST(MiouTest, WorkedExamples) {
  ConfusionMatrix perfect(2);
  confusion(row({0, 1, 1}), row({0, 1, 1}), perfect);
  EXPECT_EQ(miou(perfect), 1.0);

  ConfusionMatrix cm(2);
  confusion(row({0, 1, 1, 1}), row({0, 0, 1, 1}), cm);
  EXPECT_EQ(miou(cm), 7.0 / 12.0);

  ConfusionMatrix disjoint(2);
  confusion(row({1, 0, 1}), row({0, 1, 0}), disjoint);
  EXPECT_EQ(miou(disjoint), 0.0);

  ConfusionMatrix empty(3);
  EXPECT_EQ(miou(empty), 0.0);
}

TEST(MiouTest, MatchesSetOracleOnRandomCases) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 2 + static_cast<int>(rng() % 3);
    const int h = 1 + static_cast<int>(rng() % 8), w = 1 + static_cast<int>(rng() % 8);
    const SegmentationMask gt = random_mask(rng, h, w, k, 0.2);
    const SegmentationMask pred = random_mask(rng, h, w, k);
    double sum = 0;
    int n = 0;
    for (int c = 0; c < k; ++c) {
      int inter = 0, uni = 0;
      for (std::size_t i = 0; i < gt.labels.size(); ++i) {
        if (gt.labels[i] == kIgnoreLabel) continue;
        const bool in_gt = gt.labels[i] == c, in_pred = pred.labels[i] == c;
        inter += in_gt && in_pred;
        uni += in_gt || in_pred;
      }
      if (uni > 0) sum += static_cast<double>(inter) / uni, ++n;
    }
    ConfusionMatrix cm(k);
    confusion(pred, gt, cm);
    EXPECT_NEAR(miou(cm), n ? sum / n : 0.0, 1e-12);
  }
}

TEST(MiouTest, RelabelingInvarianceAndAccumulation) {
  std::mt19937_64 rng(22);
  const SegmentationMask gt = random_mask(rng, 6, 6, 3), pred = random_mask(rng, 6, 6, 3);
  auto relabel = [](SegmentationMask m) {
    for (auto& v : m.labels) v = static_cast<std::uint8_t>((v + 1) % 3);
    return m;
  };
  ConfusionMatrix a(3), b(3);
  confusion(pred, gt, a);
  confusion(relabel(pred), relabel(gt), b);
  EXPECT_NEAR(miou(a), miou(b), 1e-15);

  ConfusionMatrix split(3), whole(3);
  const SegmentationMask gt2 = random_mask(rng, 6, 6, 3), pred2 = random_mask(rng, 6, 6, 3);
  confusion(pred, gt, split);
  confusion(pred2, gt2, split);
  std::vector<std::uint8_t> g(gt.labels), p(pred.labels);
  g.insert(g.end(), gt2.labels.begin(), gt2.labels.end());
  p.insert(p.end(), pred2.labels.begin(), pred2.labels.end());
  confusion(SegmentationMask(12, 6, p), SegmentationMask(12, 6, g), whole);
  EXPECT_EQ(miou(split), miou(whole));
  EXPECT_EQ(split.total(), 72u);
}

TEST(MiouTest, JsonReport) {
  ConfusionMatrix cm(3);
  confusion(row({0, 1, 1, 1}), row({0, 0, 1, 1}), cm);
  const nlohmann::json j = metrics_json(cm);
  EXPECT_TRUE(j["miou"].is_number());
  ASSERT_EQ(j["per_class_iou"].size(), 3u);
  EXPECT_TRUE(j["per_class_iou"][2].is_null());
  EXPECT_DOUBLE_EQ(j["pixel_acc"].get<double>(), 0.75);
}

}  // namespace
}  // namespace memseg
