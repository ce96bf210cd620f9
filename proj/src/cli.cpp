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
#include "memseg/cli.hpp"

#include <atomic>
#include <cstdio>
#include <deque>
#include <exception>
#include <functional>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>
#include <utility>

#include <CLI11.hpp>

#include "memseg/error.hpp"
#include "memseg/log.hpp"
#include "memseg/metrics.hpp"
#include "memseg/tensor_io.hpp"

namespace memseg {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

template <class E>
struct EnumName {
  const char* name;
  E value;
};

constexpr EnumName<MemoryFeatureSource> kMemorySources[] = {
    {"bottleneck", MemoryFeatureSource::kBottleneck},
    {"backbone_stride8", MemoryFeatureSource::kBackboneStride8},
    {"context", MemoryFeatureSource::kContextFeatures},
};
constexpr EnumName<TransformMode> kTransformModes[] = {
    {"upsample_features", TransformMode::kUpsampleFeatures},
    {"nearest_labels", TransformMode::kNearestLabels},
};
constexpr EnumName<MomentumMode> kMomentumModes[] = {
    {"constant", MomentumMode::kConstant},
    {"poly", MomentumMode::kPoly},
};
constexpr EnumName<GuidanceMode> kGuidanceModes[] = {
    {"previous_gt", GuidanceMode::kPreviousGroundTruth},
    {"previous_prediction", GuidanceMode::kPreviousPrediction},
};

template <class E, std::size_t N>
E parse_enum(const std::string& s, const EnumName<E> (&table)[N], const std::string& what) {
  std::string options;
  for (const auto& entry : table) {
    if (s == entry.name) return entry.value;
    options += options.empty() ? entry.name : std::string(", ") + entry.name;
  }
  throw ConfigError("unknown " + what + " '" + s + "' (expected " + options + ")");
}

template <class E, std::size_t N>
std::string enum_name(E value, const EnumName<E> (&table)[N]) {
  for (const auto& entry : table) {
    if (entry.value == value) return entry.name;
  }
  throw StateError("enum value without a name");
}

// Strict reader for one JSON object: typed lookups and a final check that
// every key present was consumed.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j.is_object()) throw ConfigError(context_ + ": expected a JSON object");
  }

  void read(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) type_error(key, "an integer");
      const auto x = v->get<std::int64_t>();
      if (x < INT32_MIN || x > INT32_MAX) type_error(key, "a 32-bit integer");
      out = static_cast<int>(x);
    }
  }
  void read(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) type_error(key, "a nonnegative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) type_error(key, "a number");
      out = v->get<double>();
    }
  }
  void read(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) type_error(key, "a boolean");
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) type_error(key, "a string");
      out = v->get<std::string>();
    }
  }
  void read(const std::string& key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) type_error(key, "an array of numbers");
      out.clear();
      for (const json& e : *v) {
        if (!e.is_number()) type_error(key, "an array of numbers");
        out.push_back(e.get<double>());
      }
    }
  }
  void read(const std::string& key, std::vector<int>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) type_error(key, "an array of integers");
      out.clear();
      for (const json& e : *v) {
        if (!e.is_number_integer()) type_error(key, "an array of integers");
        out.push_back(e.get<int>());
      }
    }
  }
  void read(const std::string& key, std::array<int, 4>& out) {
    std::vector<int> v(out.begin(), out.end());
    read(key, v);
    if (v.size() != 4) type_error(key, "an array of 4 integers");
    std::copy(v.begin(), v.end(), out.begin());
  }
  template <class E, std::size_t N>
  void read_enum(const std::string& key, E& out, const EnumName<E> (&table)[N]) {
    std::string s;
    if (find(key)) {
      read(key, s);
      out = parse_enum(s, table, context_ + "." + key);
    }
  }

  // Null when absent.
  const json* child(const std::string& key) { return find(key); }
  std::string path(const std::string& key) const { return context_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) {
        throw ConfigError("unknown config key '" + context_ + "." + item.key() + "'");
      }
    }
  }

 private:
  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  [[noreturn]] void type_error(const std::string& key, const std::string& expected) const {
    throw ConfigError("config key '" + context_ + "." + key + "' must be " + expected);
  }

  const json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

void read_paths(const json& j, RunPaths& p) {
  ObjectReader r(j, "paths");
  r.read("data", p.data);
  r.read("out", p.out);
  r.read("checkpoint", p.checkpoint);
  r.read("log", p.log);
  r.read("resume", p.resume);
  r.read("pred", p.pred);
  r.read("probs_a", p.probs_a);
  r.read("probs_b", p.probs_b);
  r.finish();
}

void read_data(const json& j, SyntheticConfig& d) {
  ObjectReader r(j, "data");
  r.read("n_videos", d.n_videos);
  r.read("n_val", d.n_val);
  r.read("frames_per_video", d.frames_per_video);
  r.read("height", d.height);
  r.read("width", d.width);
  r.read("num_classes", d.num_classes);
  r.finish();
}

void read_model_config(const json& j, ModelConfig& m) {
  ObjectReader r(j, "model");
  r.read("encoder_channels", m.encoder.channels);
  r.read("encoder_trainable", m.encoder.trainable);
  r.read("embed_dim", m.head.embed_dim);
  r.read("ppm_channels", m.head.ppm_channels);
  r.read("pool_grids", m.head.pool_grids);
  r.read_enum("memory_source", m.head.memory_source, kMemorySources);
  r.read("temporal_capacity", m.temporal_capacity);
  r.read_enum("transform_mode", m.transform_mode, kTransformModes);
  if (const json* mom = r.child("momentum")) {
    ObjectReader mr(*mom, r.path("momentum"));
    mr.read("m0", m.momentum.m0);
    mr.read_enum("mode", m.momentum.mode, kMomentumModes);
    mr.read("power", m.momentum.power);
    mr.finish();
  }
  r.finish();
}

void read_train(const json& j, TrainConfig& t) {
  ObjectReader r(j, "train");
  r.read("lr", t.lr);
  r.read("weight_decay", t.weight_decay);
  r.read("steps", t.steps);
  r.read("crop_height", t.crop_height);
  r.read("crop_width", t.crop_width);
  r.read("batch_size", t.batch_size);
  r.read("warmup_fraction", t.warmup_fraction);
  r.read_enum("guidance", t.guidance_mode, kGuidanceModes);
  r.read("checkpoint_every", t.checkpoint_every);
  if (const json* a = r.child("augment")) {
    ObjectReader ar(*a, r.path("augment"));
    ar.read("scale_min", t.augment.scale_min);
    ar.read("scale_max", t.augment.scale_max);
    ar.read("flip_probability", t.augment.flip_probability);
    ar.read("brightness", t.augment.brightness);
    ar.read("contrast", t.augment.contrast);
    ar.read("saturation", t.augment.saturation);
    ar.finish();
  }
  r.finish();
}

void read_infer(const json& j, RunConfig& c) {
  ObjectReader r(j, "infer");
  r.read("scales", c.infer.scales);
  r.read("flip", c.infer.flip);
  r.read("stages", c.infer.stages);
  r.read("stage_feedback_b", c.infer.stage_feedback_b);
  r.read("save_probs", c.save_probs);
  r.read("ensemble_stage", c.ensemble_stage);
  r.finish();
}

void require_path(const std::string& value, const std::string& flag,
                  const std::string& command) {
  if (value.empty()) throw ConfigError(command + " needs " + flag);
}

std::vector<VideoClip> load_split(const DatasetManifest& manifest, const std::string& split,
                                  int jobs) {
  const std::vector<VideoEntry> entries = manifest.split(split);
  if (entries.empty()) {
    throw ManifestError("split '" + split + "' of " + manifest.root.string() + " has no videos");
  }
  std::vector<VideoClip> clips(entries.size());
  parallel_for(entries.size(), jobs,
               [&](std::size_t i) { clips[i] = load_clip(manifest, entries[i].id); });
  return clips;
}

std::string format_number(const json& v) {
  if (v.is_null()) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << v.get<double>();
  return s.str();
}

// One row per stage: stage, mIoU, pixel accuracy, changed pixels, IoU per class.
void print_table(std::ostream& out, const json& stages) {
  const std::size_t k = stages.empty() ? 0 : stages[0]["per_class_iou"].size();
  out << std::left << std::setw(8) << "stage" << std::setw(10) << "mIoU" << std::setw(10)
      << "pixAcc" << std::setw(10) << "changed";
  for (std::size_t c = 0; c < k; ++c) out << std::setw(9) << ("iou" + std::to_string(c));
  out << "\n";
  for (const json& row : stages) {
    out << std::setw(8) << row["stage"].get<int>() << std::setw(10) << format_number(row["miou"])
        << std::setw(10) << format_number(row["pixel_acc"]) << std::setw(10)
        << (row.contains("changed_pixels") ? std::to_string(row["changed_pixels"].get<std::uint64_t>())
                                           : std::string("-"));
    for (const json& v : row["per_class_iou"]) out << std::setw(9) << format_number(v);
    out << "\n";
  }
  out << std::right;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << "\n";
  if (!f) throw IoError("failed writing " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
}

int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  require_path(cfg.paths.out, "--out", "gen-data");
  SyntheticConfig sc = cfg.data;
  sc.seed = cfg.seed;
  const DatasetManifest m = generate_synthetic(sc, cfg.paths.out);
  out << "wrote " << m.videos.size() << " videos (" << m.split("val").size() << " val) to "
      << m.root.string() << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  require_path(cfg.paths.data, "--data", "train");
  require_path(cfg.paths.out, "--out", "train");
  if (cfg.variant == ModelVariant::kEnsemble) {
    throw ConfigError(
        "the ensemble is not trained; train decoder_a and decoder_b and run `ensemble`");
  }
  const DatasetManifest manifest = load_manifest(cfg.paths.data);
  const std::vector<VideoClip> clips = load_split(manifest, "train", cfg.jobs);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  ModelConfig mc = cfg.model;
  mc.num_classes = manifest.num_classes;
  mc.momentum.total_steps = tc.steps;

  const bool resuming = !cfg.paths.resume.empty();
  TrainState state = resuming ? load_checkpoint(cfg.paths.resume)
                              : init_training(build_model(substream_seed(cfg.seed, "model"), mc,
                                                          cfg.variant),
                                              clips, tc);
  if (state.model.variant != cfg.variant) {
    throw ConfigError("checkpoint holds a " + variant_name(state.model.variant) +
                      " model, not " + variant_name(cfg.variant));
  }
  if (state.model.num_classes() != manifest.num_classes) {
    throw ConfigError("checkpoint has " + std::to_string(state.model.num_classes()) +
                      " classes but the dataset has " + std::to_string(manifest.num_classes));
  }
  const fs::path out_path = cfg.paths.out;
  const fs::path log_path = cfg.paths.log.empty() ? fs::path(cfg.paths.out + ".log.jsonl")
                                                  : fs::path(cfg.paths.log);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  std::ofstream log(log_path, resuming ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write " + log_path.string());
  spdlog::info("training {} for {} steps on {} videos", variant_name(cfg.variant), tc.steps,
               clips.size());
  run_training(state, clips, tc, &log,
               [&](const TrainState& s) { save_checkpoint(out_path, s); });
  save_checkpoint(out_path, state);
  out << "trained " << variant_name(cfg.variant) << " to step " << state.step << ", wrote "
      << out_path.string() << "\n";
  return 0;
}

int cmd_infer(const RunConfig& cfg, std::ostream& out) {
  require_path(cfg.paths.data, "--data", "infer");
  require_path(cfg.paths.checkpoint, "--checkpoint", "infer");
  require_path(cfg.paths.out, "--out", "infer");
  if (cfg.variant == ModelVariant::kEnsemble) {
    throw ConfigError("infer runs one model; use `ensemble` on two saved probability sets");
  }
  const Model model = load_model(cfg.paths.checkpoint);
  const DatasetManifest manifest = load_manifest(cfg.paths.data);
  if (model.num_classes() != manifest.num_classes) {
    throw ConfigError("model has " + std::to_string(model.num_classes()) +
                      " classes but the dataset has " + std::to_string(manifest.num_classes));
  }
  const std::vector<VideoEntry> entries = manifest.split(cfg.split);
  if (entries.empty()) throw ManifestError("split '" + cfg.split + "' has no videos");
  const fs::path dir = cfg.paths.out;
  const int n_stages = cfg.infer.stages;
  std::vector<std::vector<std::size_t>> changed(entries.size());
  parallel_for(entries.size(), cfg.jobs, [&](std::size_t i) {
    const VideoClip clip = load_clip(manifest, entries[i].id);
    const std::vector<StageResult> stages =
        multi_stage_infer(model, clip.frames, cfg.infer, n_stages);
    fs::create_directories(dir / clip.id);
    for (const StageResult& s : stages) {
      for (std::size_t t = 0; t < clip.frames.size(); ++t) {
        const int frame = static_cast<int>(t);
        write_pgm(stage_mask_path(dir, clip.id, frame, s.stage), s.result.masks[t]);
        if (cfg.save_probs) {
          io::save_tensor(stage_probs_path(dir, clip.id, frame, s.stage), s.result.probs[t].probs,
                          io::Precision::kFloat64);
        }
      }
      changed[i].push_back(s.changed_pixels);
    }
  });
  json summary{{"variant", variant_name(model.variant)},
               {"split", cfg.split},
               {"videos", entries.size()},
               {"stages", n_stages + 1}};
  json per_stage = json::array();
  for (int s = 0; s <= n_stages; ++s) {
    std::uint64_t total = 0;
    for (const auto& c : changed) total += c[static_cast<std::size_t>(s)];
    per_stage.push_back(total);
  }
  summary["changed_pixels"] = per_stage;
  write_json(dir / "infer.json", summary);
  out << "wrote " << n_stages + 1 << " stage(s) of masks for " << entries.size()
      << " videos to " << dir.string() << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  require_path(cfg.paths.data, "--data", "eval");
  require_path(cfg.paths.pred, "--pred", "eval");
  const DatasetManifest manifest = load_manifest(cfg.paths.data);
  const std::vector<VideoEntry> entries = manifest.split(cfg.split);
  if (entries.empty()) throw ManifestError("split '" + cfg.split + "' has no videos");
  const fs::path pred = cfg.paths.pred;
  int n_stages = 0;
  while (fs::exists(stage_mask_path(pred, entries[0].id, 0, n_stages))) ++n_stages;
  if (n_stages == 0) {
    throw IoError("no stage masks under " + pred.string() + " (expected " +
                  stage_mask_path(pred, entries[0].id, 0, 0).string() + ")");
  }
  const int k = manifest.num_classes;
  std::vector<std::vector<ConfusionMatrix>> per_video(
      entries.size(), std::vector<ConfusionMatrix>(static_cast<std::size_t>(n_stages),
                                                   ConfusionMatrix(k)));
  parallel_for(entries.size(), cfg.jobs, [&](std::size_t i) {
    for (int t = 0; t < entries[i].frames; ++t) {
      const SegmentationMask gt = read_pgm(mask_path(manifest.root, entries[i].id, t));
      for (int s = 0; s < n_stages; ++s) {
        const SegmentationMask p = read_pgm(stage_mask_path(pred, entries[i].id, t, s));
        if (p.height != gt.height || p.width != gt.width) {
          throw ShapeError("prediction " + stage_mask_path(pred, entries[i].id, t, s).string() +
                           " does not match its ground truth size");
        }
        per_video[i][static_cast<std::size_t>(s)].add(p, gt);
      }
    }
  });
  json info;
  const fs::path info_path = pred / "infer.json";
  if (fs::exists(info_path)) info = read_json_file(info_path);
  json stages = json::array();
  for (int s = 0; s < n_stages; ++s) {
    ConfusionMatrix cm(k);
    for (const auto& v : per_video) cm.merge(v[static_cast<std::size_t>(s)]);
    json row = metrics_json(cm);
    row["stage"] = s;
    if (info.contains("changed_pixels") && s < static_cast<int>(info["changed_pixels"].size())) {
      row["changed_pixels"] = info["changed_pixels"][static_cast<std::size_t>(s)];
    }
    stages.push_back(row);
  }
  json report{{"split", cfg.split},
              {"num_classes", k},
              {"videos", entries.size()},
              {"variant", info.contains("variant") ? info["variant"] : json()},
              {"stages", stages}};
  const fs::path report_path = cfg.paths.out.empty() ? pred / "report.json" : fs::path(cfg.paths.out);
  write_json(report_path, report);
  print_table(out, stages);
  return 0;
}

int cmd_ensemble(const RunConfig& cfg, std::ostream& out) {
  require_path(cfg.paths.data, "--data", "ensemble");
  require_path(cfg.paths.probs_a, "--probs-a", "ensemble");
  require_path(cfg.paths.probs_b, "--probs-b", "ensemble");
  require_path(cfg.paths.out, "--out", "ensemble");
  const DatasetManifest manifest = load_manifest(cfg.paths.data);
  const std::vector<VideoEntry> entries = manifest.split(cfg.split);
  if (entries.empty()) throw ManifestError("split '" + cfg.split + "' has no videos");
  const int k = manifest.num_classes;
  const fs::path dir = cfg.paths.out;
  const int stage = cfg.ensemble_stage;
  std::vector<ConfusionMatrix> per_video(entries.size(), ConfusionMatrix(k));
  parallel_for(entries.size(), cfg.jobs, [&](std::size_t i) {
    const std::string& id = entries[i].id;
    fs::create_directories(dir / id);
    for (int t = 0; t < entries[i].frames; ++t) {
      const ProbabilityMap a{io::load_tensor(stage_probs_path(cfg.paths.probs_a, id, t, stage))};
      const ProbabilityMap b{io::load_tensor(stage_probs_path(cfg.paths.probs_b, id, t, stage))};
      if (a.probs.shape() != b.probs.shape() || a.probs.rank() != 3 || a.classes() != k) {
        throw ShapeError("probability maps for " + id + " frame " + std::to_string(t) +
                         " disagree in shape or class count");
      }
      const SegmentationMask mask = ensemble(a, b);
      write_pgm(stage_mask_path(dir, id, t, 0), mask);
      per_video[i].add(mask, read_pgm(mask_path(manifest.root, id, t)));
    }
  });
  ConfusionMatrix cm(k);
  for (const auto& v : per_video) cm.merge(v);
  json row = metrics_json(cm);
  row["stage"] = 0;
  const json stages = json::array({row});
  write_json(dir / "report.json", json{{"split", cfg.split},
                                       {"num_classes", k},
                                       {"videos", entries.size()},
                                       {"variant", "ensemble"},
                                       {"stages", stages}});
  print_table(out, stages);
  return 0;
}

// Registers command-line overrides. Each flag writes into a scratch config;
// apply() copies the flags that were actually given onto the real config.
class Overrides {
 public:
  template <class Field>
  CLI::Option* add(CLI::App* app, const std::string& name, Field field, const std::string& help) {
    auto& slot = field(scratch_);
    CLI::Option* opt = app->add_option(name, slot, help);
    appliers_.emplace_back(opt, [this, field](RunConfig& c) { field(c) = field(scratch_); });
    return opt;
  }
  template <class Field>
  CLI::Option* add_flag(CLI::App* app, const std::string& name, Field field,
                        const std::string& help) {
    auto& slot = field(scratch_);
    CLI::Option* opt = app->add_flag(name, slot, help);
    appliers_.emplace_back(opt, [this, field](RunConfig& c) { field(c) = field(scratch_); });
    return opt;
  }
  // String-valued flag parsed into the config by `apply_fn`.
  CLI::Option* add_parsed(CLI::App* app, const std::string& name,
                          std::function<void(const std::string&, RunConfig&)> apply_fn,
                          const std::string& help) {
    std::string& slot = strings_.emplace_back();
    CLI::Option* opt = app->add_option(name, slot, help);
    appliers_.emplace_back(opt, [&slot, apply_fn](RunConfig& c) { apply_fn(slot, c); });
    return opt;
  }
  void apply(RunConfig& c) const {
    for (const auto& [opt, fn] : appliers_) {
      if (opt->count() > 0) fn(c);
    }
  }

 private:
  RunConfig scratch_;
  std::deque<std::string> strings_;
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> appliers_;
};

#define MEMSEG_FIELD(expr) [](RunConfig& c) -> auto& { return c.expr; }

void add_common(CLI::App* app, Overrides& o, std::string& config_path) {
  app->add_option("--config", config_path, "JSON run config; flags override its values");
  o.add(app, "--seed", MEMSEG_FIELD(seed), "seed for every random stream");
  o.add(app, "--jobs", MEMSEG_FIELD(jobs), "worker threads for per-video work");
}

void add_variant(CLI::App* app, Overrides& o) {
  o.add_parsed(
      app, "--variant", [](const std::string& s, RunConfig& c) { c.variant = parse_variant(s); },
      "baseline, decoder_a or decoder_b");
}

}  // namespace

void RunConfig::validate() const {
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (split != "train" && split != "val") throw ConfigError("split must be train or val");
  if (ensemble_stage < 0) throw ConfigError("ensemble_stage must be >= 0");
  if (model.temporal_capacity < 1) throw ConfigError("temporal_capacity must be >= 1");
  data.validate();
  train.validate();
  infer.validate();
  MomentumSchedule m = model.momentum;
  if (m.mode == MomentumMode::kPoly && m.total_steps <= 0) m.total_steps = std::max(train.steps, 1);
  m.validate();
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  ObjectReader r(j, "config");
  r.read("seed", c.seed);
  std::string variant = variant_name(c.variant);
  r.read("variant", variant);
  c.variant = parse_variant(variant);
  r.read("jobs", c.jobs);
  r.read("split", c.split);
  if (const json* p = r.child("paths")) read_paths(*p, c.paths);
  if (const json* d = r.child("data")) read_data(*d, c.data);
  if (const json* m = r.child("model")) read_model_config(*m, c.model);
  if (const json* t = r.child("train")) read_train(*t, c.train);
  if (const json* i = r.child("infer")) read_infer(*i, c);
  r.finish();
  return c;
}

json run_config_to_json(const RunConfig& c) {
  const auto& m = c.model;
  const auto& t = c.train;
  return json{
      {"seed", c.seed},
      {"variant", variant_name(c.variant)},
      {"jobs", c.jobs},
      {"split", c.split},
      {"paths",
       {{"data", c.paths.data},
        {"out", c.paths.out},
        {"checkpoint", c.paths.checkpoint},
        {"log", c.paths.log},
        {"resume", c.paths.resume},
        {"pred", c.paths.pred},
        {"probs_a", c.paths.probs_a},
        {"probs_b", c.paths.probs_b}}},
      {"data",
       {{"n_videos", c.data.n_videos},
        {"n_val", c.data.n_val},
        {"frames_per_video", c.data.frames_per_video},
        {"height", c.data.height},
        {"width", c.data.width},
        {"num_classes", c.data.num_classes}}},
      {"model",
       {{"encoder_channels", m.encoder.channels},
        {"encoder_trainable", m.encoder.trainable},
        {"embed_dim", m.head.embed_dim},
        {"ppm_channels", m.head.ppm_channels},
        {"pool_grids", m.head.pool_grids},
        {"memory_source", enum_name(m.head.memory_source, kMemorySources)},
        {"temporal_capacity", m.temporal_capacity},
        {"transform_mode", enum_name(m.transform_mode, kTransformModes)},
        {"momentum",
         {{"m0", m.momentum.m0},
          {"mode", enum_name(m.momentum.mode, kMomentumModes)},
          {"power", m.momentum.power}}}}},
      {"train",
       {{"lr", t.lr},
        {"weight_decay", t.weight_decay},
        {"steps", t.steps},
        {"crop_height", t.crop_height},
        {"crop_width", t.crop_width},
        {"batch_size", t.batch_size},
        {"warmup_fraction", t.warmup_fraction},
        {"guidance", enum_name(t.guidance_mode, kGuidanceModes)},
        {"checkpoint_every", t.checkpoint_every},
        {"augment",
         {{"scale_min", t.augment.scale_min},
          {"scale_max", t.augment.scale_max},
          {"flip_probability", t.augment.flip_probability},
          {"brightness", t.augment.brightness},
          {"contrast", t.augment.contrast},
          {"saturation", t.augment.saturation}}}}},
      {"infer",
       {{"scales", c.infer.scales},
        {"flip", c.infer.flip},
        {"stages", c.infer.stages},
        {"stage_feedback_b", c.infer.stage_feedback_b},
        {"save_probs", c.save_probs},
        {"ensemble_stage", c.ensemble_stage}}},
  };
}

fs::path stage_mask_path(const fs::path& dir, const std::string& video, int frame, int stage) {
  char name[48];
  std::snprintf(name, sizeof(name), "%03d_stage%d.pgm", frame, stage);
  return dir / video / name;
}

fs::path stage_probs_path(const fs::path& dir, const std::string& video, int frame, int stage) {
  char name[48];
  std::snprintf(name, sizeof(name), "%03d_stage%d.mstf", frame, stage);
  return dir / video / name;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  init_logging();
  CLI::App app{"Memory-guided video scene parsing on synthetic clips", "memseg"};
  app.require_subcommand(1);
  Overrides o;
  std::string config_path;

  CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic video dataset");
  add_common(gen, o, config_path);
  o.add(gen, "--out", MEMSEG_FIELD(paths.out), "dataset directory")->required();
  o.add(gen, "--videos", MEMSEG_FIELD(data.n_videos), "number of videos");
  o.add(gen, "--val", MEMSEG_FIELD(data.n_val), "videos held out for validation");
  o.add(gen, "--frames", MEMSEG_FIELD(data.frames_per_video), "frames per video");
  o.add(gen, "--height", MEMSEG_FIELD(data.height), "frame height");
  o.add(gen, "--width", MEMSEG_FIELD(data.width), "frame width");
  o.add(gen, "--classes", MEMSEG_FIELD(data.num_classes), "number of classes K");

  CLI::App* train = app.add_subcommand("train", "train one model variant");
  add_common(train, o, config_path);
  add_variant(train, o);
  o.add(train, "--data", MEMSEG_FIELD(paths.data), "dataset directory");
  o.add(train, "--out", MEMSEG_FIELD(paths.out), "checkpoint to write");
  o.add(train, "--log", MEMSEG_FIELD(paths.log), "JSON-lines training log");
  o.add(train, "--resume", MEMSEG_FIELD(paths.resume), "checkpoint to continue from");
  o.add(train, "--steps", MEMSEG_FIELD(train.steps), "optimizer steps");
  o.add(train, "--lr", MEMSEG_FIELD(train.lr), "learning rate");
  o.add(train, "--weight-decay", MEMSEG_FIELD(train.weight_decay), "AdamW weight decay");
  o.add(train, "--batch-size", MEMSEG_FIELD(train.batch_size), "frames per step");
  o.add(train, "--crop-height", MEMSEG_FIELD(train.crop_height), "training crop height");
  o.add(train, "--crop-width", MEMSEG_FIELD(train.crop_width), "training crop width");
  o.add(train, "--warmup", MEMSEG_FIELD(train.warmup_fraction),
        "fraction of steps guided by ground truth");
  o.add(train, "--checkpoint-every", MEMSEG_FIELD(train.checkpoint_every),
        "save every N steps (0 = only at the end)");
  o.add_parsed(
      train, "--guidance",
      [](const std::string& s, RunConfig& c) {
        c.train.guidance_mode = parse_enum(s, kGuidanceModes, "guidance");
      },
      "previous_gt or previous_prediction");
  o.add(train, "--embed-dim", MEMSEG_FIELD(model.head.embed_dim), "memory embedding dim C");
  o.add(train, "--temporal-capacity", MEMSEG_FIELD(model.temporal_capacity),
        "frames kept for temporal attention");
  o.add_parsed(
      train, "--memory-source",
      [](const std::string& s, RunConfig& c) {
        c.model.head.memory_source = parse_enum(s, kMemorySources, "memory source");
      },
      "bottleneck, backbone_stride8 or context");
  o.add_parsed(
      train, "--transform-mode",
      [](const std::string& s, RunConfig& c) {
        c.model.transform_mode = parse_enum(s, kTransformModes, "transform mode");
      },
      "upsample_features or nearest_labels");
  o.add(train, "--momentum", MEMSEG_FIELD(model.momentum.m0), "memory momentum m0");
  o.add_parsed(
      train, "--momentum-mode",
      [](const std::string& s, RunConfig& c) {
        c.model.momentum.mode = parse_enum(s, kMomentumModes, "momentum mode");
      },
      "constant or poly");

  CLI::App* infer = app.add_subcommand("infer", "predict masks for a split");
  add_common(infer, o, config_path);
  o.add(infer, "--data", MEMSEG_FIELD(paths.data), "dataset directory");
  o.add(infer, "--checkpoint", MEMSEG_FIELD(paths.checkpoint), "trained model");
  o.add(infer, "--out", MEMSEG_FIELD(paths.out), "prediction directory");
  o.add(infer, "--split", MEMSEG_FIELD(split), "train or val");
  o.add(infer, "--stages", MEMSEG_FIELD(infer.stages), "feedback rounds after stage 0");
  o.add(infer, "--scales", MEMSEG_FIELD(infer.scales), "test-time scales, e.g. 0.75,1,1.25")
      ->delimiter(',');
  o.add_flag(infer, "--flip,!--no-flip", MEMSEG_FIELD(infer.flip), "add flipped branches");
  o.add_flag(infer, "--stage-feedback-b", MEMSEG_FIELD(infer.stage_feedback_b),
             "feed stage masks back into decoder B");
  o.add_flag(infer, "--save-probs", MEMSEG_FIELD(save_probs), "also write probability maps");

  CLI::App* eval = app.add_subcommand("eval", "score predicted masks");
  add_common(eval, o, config_path);
  o.add(eval, "--data", MEMSEG_FIELD(paths.data), "dataset directory");
  o.add(eval, "--pred", MEMSEG_FIELD(paths.pred), "prediction directory");
  o.add(eval, "--split", MEMSEG_FIELD(split), "train or val");
  o.add(eval, "--out", MEMSEG_FIELD(paths.out), "report path (default <pred>/report.json)");

  CLI::App* ens = app.add_subcommand("ensemble", "combine two saved probability sets");
  add_common(ens, o, config_path);
  o.add(ens, "--data", MEMSEG_FIELD(paths.data), "dataset directory");
  o.add(ens, "--probs-a", MEMSEG_FIELD(paths.probs_a), "first prediction directory");
  o.add(ens, "--probs-b", MEMSEG_FIELD(paths.probs_b), "second prediction directory");
  o.add(ens, "--out", MEMSEG_FIELD(paths.out), "output directory");
  o.add(ens, "--split", MEMSEG_FIELD(split), "train or val");
  o.add(ens, "--stage", MEMSEG_FIELD(ensemble_stage), "stage of the saved maps to combine");

  std::vector<const char*> argv{"memseg"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = run_config_from_json(read_json_file(config_path));
    o.apply(cfg);
    cfg.validate();
    if (gen->parsed()) return cmd_gen_data(cfg, out);
    if (train->parsed()) return cmd_train(cfg, out);
    if (infer->parsed()) return cmd_infer(cfg, out);
    if (eval->parsed()) return cmd_eval(cfg, out);
    if (ens->parsed()) return cmd_ensemble(cfg, out);
    throw StateError("no subcommand dispatched");
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ManifestError& e) {
    err << "dataset error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 1;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace memseg
