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
#ifndef MEMSEG_DATASET_HPP_
#define MEMSEG_DATASET_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "memseg/segmentation.hpp"
#include "memseg/tensor.hpp"

namespace memseg {

// Ordered frames (3 x H x W in [0, 1]) with their ground-truth masks.
struct VideoClip {
  std::string id;
  std::vector<Tensor> frames;
  std::vector<SegmentationMask> masks;
};

struct VideoEntry {
  std::string id;
  int frames = 0;
  std::string split;  // "train" or "val"
};

inline constexpr int kManifestVersion = 1;

// On-disk layout under `root`:
//   manifest.json
//   <video id>/frame_<t>.ppm   (binary P6)
//   <video id>/mask_<t>.pgm    (binary P5)
// with t zero-padded to three digits.
struct DatasetManifest {
  std::filesystem::path root;
  int num_classes = 0;
  int height = 0;
  int width = 0;
  std::vector<VideoEntry> videos;

  // Entries of one split in manifest order.
  std::vector<VideoEntry> split(const std::string& name) const;
  const VideoEntry& video(const std::string& id) const;
};

std::filesystem::path frame_path(const std::filesystem::path& root, const std::string& id, int t);
std::filesystem::path mask_path(const std::filesystem::path& root, const std::string& id, int t);

// Throws VersionError for an unknown version and ManifestError for missing
// or malformed fields.
DatasetManifest load_manifest(const std::filesystem::path& root);
void save_manifest(const DatasetManifest& manifest);

// Frames are quantized to 8 bits on save. Throws IoError naming the path on
// a missing or corrupt file and ManifestError when dims or labels disagree
// with the manifest.
VideoClip load_clip(const DatasetManifest& manifest, const std::string& id);
void save_clip(const std::filesystem::path& root, const VideoClip& clip);

void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const SegmentationMask& mask);
SegmentationMask read_pgm(const std::filesystem::path& path);

struct SyntheticConfig {
  int n_videos = 50;
  int n_val = 10;  // the last n_val videos form the val split
  int frames_per_video = 8;
  int height = 64;
  int width = 64;
  int num_classes = 5;
  std::uint64_t seed = 0;

  // Throws ConfigError on K < 2, dims not divisible by 32, or shapes that
  // cannot fit.
  void validate() const;
};

enum class ShapeKind { kRectangle, kDisk };

// One moving foreground object. Its center at frame t is
// (cx + t * vx, cy + t * vy) modulo the frame size; drawing wraps around.
struct ShapeTrack {
  int class_id = 1;
  ShapeKind kind = ShapeKind::kRectangle;
  int cx = 0;
  int cy = 0;
  int vx = 0;
  int vy = 0;
  int half_w = 0;  // radius for disks
  int half_h = 0;

  int center_x(int t, int width) const;
  int center_y(int t, int height) const;
  bool covers(int x, int y, int t, int height, int width) const;
};

struct SyntheticVideo {
  VideoClip clip;
  std::vector<ShapeTrack> tracks;  // classes 1..K-1 in paint order
};

// Deterministic in (config, index); redraws until every class is visible.
SyntheticVideo synthesize_video(const SyntheticConfig& config, int index);
std::string synthetic_video_id(int index);

// Writes every clip plus manifest.json under `root`.
DatasetManifest generate_synthetic(const SyntheticConfig& config,
                                   const std::filesystem::path& root);

}  // namespace memseg

#endif  // MEMSEG_DATASET_HPP_
