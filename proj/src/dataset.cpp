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
#include "memseg/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "memseg/error.hpp"
#include "memseg/rng.hpp"

namespace memseg {
namespace fs = std::filesystem;
namespace {

std::string padded(int t) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03d", t);
  return buf;
}

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::string& header,
                 const std::vector<unsigned char>& payload) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << header;
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

// Parses "P5"/"P6" headers: magic, width, height, maxval, one whitespace.
struct Netpbm {
  int width = 0;
  int height = 0;
  std::size_t offset = 0;
};

Netpbm parse_header(const std::vector<unsigned char>& bytes, const char* magic,
                    const fs::path& path) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) {
    return IoError("corrupt image " + path.string() + ": " + why);
  };
  if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1]) {
    throw fail(std::string("expected magic ") + magic);
  }
  pos = 2;
  int fields[3] = {0, 0, 0};
  for (int& field : fields) {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw fail("truncated header");
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > 1 << 20) throw fail("header value too large");
    }
    field = static_cast<int>(v);
  }
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw fail("truncated header");
  ++pos;
  if (fields[0] < 1 || fields[1] < 1) throw fail("empty image");
  if (fields[2] != 255) throw fail("only maxval 255 is supported");
  return {fields[0], fields[1], pos};
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

int wrap(int v, int n) { return ((v % n) + n) % n; }
// Signed offset of a from b on a ring of size n, in [-n/2, n/2).
int ring_offset(int a, int b, int n) { return wrap(a - b + n / 2, n) - n / 2; }

struct Rgb {
  double r, g, b;
};

Rgb hue_color(double hue, double sat, double val) {
  const double h = 6.0 * (hue - std::floor(hue));
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = val * (1 - sat), q = val * (1 - sat * f), t = val * (1 - sat * (1 - f));
  switch (sector) {
    case 0: return {val, t, p};
    case 1: return {q, val, p};
    case 2: return {p, val, t};
    case 3: return {p, q, val};
    case 4: return {t, p, val};
    default: return {val, p, q};
  }
}

int min_half_size(const SyntheticConfig&) { return 3; }
int max_half_size(const SyntheticConfig& c) { return std::max(3, std::min(c.height, c.width) / 5); }

}  // namespace

std::vector<VideoEntry> DatasetManifest::split(const std::string& name) const {
  std::vector<VideoEntry> out;
  for (const VideoEntry& v : videos) {
    if (v.split == name) out.push_back(v);
  }
  return out;
}

const VideoEntry& DatasetManifest::video(const std::string& id) const {
  for (const VideoEntry& v : videos) {
    if (v.id == id) return v;
  }
  throw ManifestError("manifest under " + root.string() + " has no video '" + id + "'");
}

fs::path frame_path(const fs::path& root, const std::string& id, int t) {
  return root / id / ("frame_" + padded(t) + ".ppm");
}

fs::path mask_path(const fs::path& root, const std::string& id, int t) {
  return root / id / ("mask_" + padded(t) + ".pgm");
}

DatasetManifest load_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError("malformed manifest " + path.string() + ": " + e.what());
  }
  try {
    if (!j.contains("version")) throw ManifestError("manifest " + path.string() + " has no version");
    if (!j["version"].is_number_integer() || j["version"].get<int>() != kManifestVersion) {
      throw VersionError("manifest " + path.string() + " has unsupported version " +
                         j["version"].dump() + " (expected " +
                         std::to_string(kManifestVersion) + ")");
    }
    DatasetManifest m;
    m.root = root;
    m.num_classes = j.at("num_classes").get<int>();
    m.height = j.at("height").get<int>();
    m.width = j.at("width").get<int>();
    if (m.num_classes < 2 || m.num_classes > 254 || m.height < 1 || m.width < 1) {
      throw ManifestError("manifest " + path.string() + " has invalid dims or class count");
    }
    for (const auto& v : j.at("videos")) {
      VideoEntry e{v.at("id").get<std::string>(), v.at("frames").get<int>(),
                   v.at("split").get<std::string>()};
      if (e.frames < 1 || (e.split != "train" && e.split != "val") || e.id.empty() ||
          e.id.find('/') != std::string::npos || e.id.find("..") != std::string::npos) {
        throw ManifestError("manifest " + path.string() + " has an invalid entry for '" +
                            e.id + "'");
      }
      m.videos.push_back(std::move(e));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError("malformed manifest " + path.string() + ": " + e.what());
  }
}

void save_manifest(const DatasetManifest& m) {
  nlohmann::json j;
  j["version"] = kManifestVersion;
  j["num_classes"] = m.num_classes;
  j["height"] = m.height;
  j["width"] = m.width;
  j["videos"] = nlohmann::json::array();
  for (const VideoEntry& v : m.videos) {
    j["videos"].push_back({{"id", v.id}, {"frames", v.frames}, {"split", v.split}});
  }
  fs::create_directories(m.root);
  std::ofstream out(m.root / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (m.root / "manifest.json").string());
  out << j.dump(2) << "\n";
}

void write_ppm(const fs::path& path, const Tensor& image) {
  require_rank(image, 3, "write_ppm");
  if (image.dim(0) != 3) throw ShapeError("write_ppm: expected 3 channels");
  const int h = image.dim(1), w = image.dim(2);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<unsigned char> payload(3 * hw);
  const auto d = image.data();
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t c = 0; c < 3; ++c) payload[3 * p + c] = quantize(d[c * hw + p]);
  }
  write_bytes(path, "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n", payload);
}

Tensor read_ppm(const fs::path& path) {
  const std::vector<unsigned char> bytes = read_bytes(path);
  const Netpbm hdr = parse_header(bytes, "P6", path);
  const std::size_t hw = static_cast<std::size_t>(hdr.height) * hdr.width;
  if (bytes.size() - hdr.offset < 3 * hw) throw IoError("truncated image " + path.string());
  Tensor out({3, hdr.height, hdr.width});
  auto d = out.data();
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t c = 0; c < 3; ++c) d[c * hw + p] = bytes[hdr.offset + 3 * p + c] / 255.0;
  }
  return out;
}

void write_pgm(const fs::path& path, const SegmentationMask& mask) {
  write_bytes(path,
              "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n",
              {mask.labels.begin(), mask.labels.end()});
}

SegmentationMask read_pgm(const fs::path& path) {
  const std::vector<unsigned char> bytes = read_bytes(path);
  const Netpbm hdr = parse_header(bytes, "P5", path);
  const std::size_t hw = static_cast<std::size_t>(hdr.height) * hdr.width;
  if (bytes.size() - hdr.offset < hw) throw IoError("truncated mask " + path.string());
  const auto begin = bytes.begin() + static_cast<std::ptrdiff_t>(hdr.offset);
  return SegmentationMask(hdr.height, hdr.width,
                          std::vector<std::uint8_t>(begin, begin + static_cast<std::ptrdiff_t>(hw)));
}

VideoClip load_clip(const DatasetManifest& manifest, const std::string& id) {
  const VideoEntry& entry = manifest.video(id);
  VideoClip clip;
  clip.id = id;
  for (int t = 0; t < entry.frames; ++t) {
    const fs::path fp = frame_path(manifest.root, id, t);
    const fs::path mp = mask_path(manifest.root, id, t);
    Tensor frame = read_ppm(fp);
    SegmentationMask mask = read_pgm(mp);
    if (frame.dim(1) != manifest.height || frame.dim(2) != manifest.width ||
        mask.height != manifest.height || mask.width != manifest.width) {
      throw ManifestError("dims of " + fp.string() + " or " + mp.string() +
                          " disagree with the manifest");
    }
    for (std::uint8_t v : mask.labels) {
      if (v != kIgnoreLabel && v >= manifest.num_classes) {
        throw ManifestError("mask " + mp.string() + " has label " + std::to_string(v) +
                            " but the manifest declares K=" +
                            std::to_string(manifest.num_classes));
      }
    }
    clip.frames.push_back(std::move(frame));
    clip.masks.push_back(std::move(mask));
  }
  return clip;
}

void save_clip(const fs::path& root, const VideoClip& clip) {
  if (clip.frames.size() != clip.masks.size()) {
    throw InputError("clip " + clip.id + " has unequal frame and mask counts");
  }
  for (std::size_t t = 0; t < clip.frames.size(); ++t) {
    write_ppm(frame_path(root, clip.id, static_cast<int>(t)), clip.frames[t]);
    write_pgm(mask_path(root, clip.id, static_cast<int>(t)), clip.masks[t]);
  }
}

void SyntheticConfig::validate() const {
  if (num_classes < 2 || num_classes > 254) throw ConfigError("num_classes must lie in [2, 254]");
  if (height < 32 || width < 32 || height % 32 || width % 32) {
    throw ConfigError("frame dims must be positive multiples of 32");
  }
  if (n_videos < 1 || frames_per_video < 1) throw ConfigError("need at least one video and frame");
  if (n_val < 0 || n_val > n_videos) throw ConfigError("n_val must lie in [0, n_videos]");
  const int side = 2 * min_half_size(*this) + 1;
  if (static_cast<long>(num_classes - 1) * side * side * 2 > static_cast<long>(height) * width) {
    throw ConfigError("cannot fit " + std::to_string(num_classes - 1) + " shapes into " +
                      std::to_string(height) + "x" + std::to_string(width) + " frames");
  }
}

int ShapeTrack::center_x(int t, int width) const { return wrap(cx + t * vx, width); }
int ShapeTrack::center_y(int t, int height) const { return wrap(cy + t * vy, height); }

bool ShapeTrack::covers(int x, int y, int t, int height, int width) const {
  const int dx = ring_offset(x, center_x(t, width), width);
  const int dy = ring_offset(y, center_y(t, height), height);
  if (kind == ShapeKind::kRectangle) return std::abs(dx) <= half_w && std::abs(dy) <= half_h;
  return dx * dx + dy * dy <= half_w * half_w;
}

std::string synthetic_video_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "video_%03d", index);
  return buf;
}

SyntheticVideo synthesize_video(const SyntheticConfig& config, int index) {
  config.validate();
  const int h = config.height, w = config.width, k = config.num_classes;
  const int lo = min_half_size(config), hi = max_half_size(config);
  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng rng = substream(config.seed, "synthetic/" + std::to_string(index) + "/" +
                                         std::to_string(attempt));
    SyntheticVideo video;
    video.clip.id = synthetic_video_id(index);
    for (int c = 1; c < k; ++c) {
      ShapeTrack s;
      s.class_id = c;
      s.kind = uniform_index(rng, 2) == 0 ? ShapeKind::kRectangle : ShapeKind::kDisk;
      s.cx = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(w)));
      s.cy = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(h)));
      s.vx = static_cast<int>(uniform_index(rng, 7)) - 3;
      s.vy = static_cast<int>(uniform_index(rng, 7)) - 3;
      s.half_w = lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
      s.half_h = lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
      video.tracks.push_back(s);
    }
    // Class colours are shared across videos; each video only shifts brightness.
    std::vector<Rgb> palette{{0.35, 0.35, 0.35}};
    for (int c = 1; c < k; ++c) palette.push_back(hue_color((c - 1.0) / (k - 1.0), 0.75, 0.9));
    const double brightness = uniform(rng, -0.08, 0.08);

    std::vector<bool> seen(static_cast<std::size_t>(k), false);
    for (int t = 0; t < config.frames_per_video; ++t) {
      SegmentationMask mask(h, w, 0);
      for (const ShapeTrack& s : video.tracks) {
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            if (s.covers(x, y, t, h, w)) mask.at(y, x) = static_cast<std::uint8_t>(s.class_id);
          }
        }
      }
      Tensor frame({3, h, w});
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const int c = mask.at(y, x);
          seen[static_cast<std::size_t>(c)] = true;
          const Rgb& col = palette[static_cast<std::size_t>(c)];
          const double rgb[3] = {col.r, col.g, col.b};
          for (int ch = 0; ch < 3; ++ch) {
            const double v = rgb[ch] + brightness + uniform(rng, -0.04, 0.04);
            frame.at(ch, y, x) = quantize(v) / 255.0;
          }
        }
      }
      video.clip.frames.push_back(std::move(frame));
      video.clip.masks.push_back(std::move(mask));
    }
    if (std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) return video;
  }
  throw ConfigError("could not place every class visibly in video " + std::to_string(index));
}

DatasetManifest generate_synthetic(const SyntheticConfig& config, const fs::path& root) {
  config.validate();
  DatasetManifest manifest;
  manifest.root = root;
  manifest.num_classes = config.num_classes;
  manifest.height = config.height;
  manifest.width = config.width;
  for (int i = 0; i < config.n_videos; ++i) {
    const SyntheticVideo video = synthesize_video(config, i);
    save_clip(root, video.clip);
    manifest.videos.push_back({video.clip.id, config.frames_per_video,
                               i >= config.n_videos - config.n_val ? "val" : "train"});
  }
  save_manifest(manifest);
  return manifest;
}

}  // namespace memseg
