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
#include "memseg/model.hpp"

#include <charconv>
#include <sstream>

#include "memseg/error.hpp"
#include "memseg/ops.hpp"

namespace memseg {
namespace {

constexpr const char* kAttrPrefix = "model.";

ag::Var classify_context(ag::Graph& g, const ConvParams& cls, ag::Var context, int h, int w) {
  const ConvVars head = bind(g, cls);
  return ag::softmax_channels(
      ag::bilinear_resize(ag::conv1x1(context, head.weight, head.bias), h, w));
}

// Every tensor that defines the model, trainable or not.
ParameterList state_tensors(Model& m) {
  ParameterList list;
  EncoderWeights& enc = m.encoder;
  const bool trainable = enc.config.trainable;
  enc.config.trainable = true;
  append_parameters(list, enc);
  enc.config.trainable = trainable;
  for (std::size_t i = 0; i < m.head.pool_projections.size(); ++i) {
    append_conv(list, "head.pool" + std::to_string(m.head.config.pool_grids[i]),
                m.head.pool_projections[i]);
  }
  append_conv(list, "head.pool_fuse", m.head.pool_fuse);
  append_conv(list, "head.lateral2", m.head.lateral2);
  append_conv(list, "head.lateral3", m.head.lateral3);
  append_conv(list, "head.pyramid_fuse", m.head.pyramid_fuse);
  append_conv(list, "head.bottleneck", m.head.bottleneck);
  append_conv(list, "first_pass", m.first_pass);
  if (m.uses_memory()) {
    append_parameters(list, "attention", m.attention);
    append_conv(list, "classifier", m.classifier);
  }
  if (m.variant == ModelVariant::kDecoderB) append_parameters(list, "temporal", m.temporal);
  return list;
}

std::string join_ints(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(values[i]);
  }
  return out;
}

template <typename T>
T parse_attr(const io::TensorBundle& b, const std::string& key) {
  const std::string& s = b.attr(key);
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw IoError("model checkpoint: bad value for '" + key + "': " + s);
  }
  return v;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    int v = 0;
    auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (res.ec != std::errc()) throw IoError("model checkpoint: bad integer list " + s);
    out.push_back(v);
  }
  return out;
}

}  // namespace

std::string variant_name(ModelVariant variant) {
  switch (variant) {
    case ModelVariant::kBaseline:
      return "baseline";
    case ModelVariant::kDecoderA:
      return "decoder_a";
    case ModelVariant::kDecoderB:
      return "decoder_b";
    case ModelVariant::kEnsemble:
      return "ensemble";
  }
  return "unknown";
}

ModelVariant parse_variant(const std::string& name) {
  for (ModelVariant v : {ModelVariant::kBaseline, ModelVariant::kDecoderA,
                         ModelVariant::kDecoderB, ModelVariant::kEnsemble}) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown model variant '" + name +
                    "' (expected baseline, decoder_a, decoder_b or ensemble)");
}

Model build_model(std::uint64_t seed, const ModelConfig& config, ModelVariant variant) {
  if (variant == ModelVariant::kEnsemble) {
    throw ConfigError("an ensemble is a pair of decoder_a and decoder_b models");
  }
  if (config.num_classes < 2 || config.num_classes > 254) {
    throw ConfigError("num_classes must lie in [2, 254]");
  }
  if (config.temporal_capacity < 1) throw ConfigError("temporal capacity must be >= 1");
  config.momentum.validate();
  const int c = config.head.embed_dim;
  const int k = config.num_classes;
  Model m;
  m.config = config;
  m.variant = variant;
  m.seed = seed;
  m.encoder = init_encoder(seed, config.encoder);
  m.head = init_context_head(seed, config.head, config.encoder.channels);
  m.first_pass = init_conv1x1(seed, "first_pass", c, k);
  m.attention = init_projections(seed, "attention", c);
  m.temporal = init_projections(seed, "temporal", c);
  m.classifier = init_conv1x1(seed, "classifier", 2 * c, k);
  m.memory.matrix = Tensor({k, c});
  m.memory.schedule = config.momentum;
  return m;
}

ParameterList parameters(Model& m) {
  ParameterList list;
  append_parameters(list, m.encoder);
  ParameterList head;
  append_parameters(head, m.head);
  for (const NamedParameter& p : head) {
    if (!m.uses_memory() && p.name.rfind("head.bottleneck", 0) == 0) continue;
    list.push_back(p);
  }
  append_conv(list, "first_pass", m.first_pass);
  if (m.uses_memory()) {
    append_parameters(list, "attention", m.attention);
    append_conv(list, "classifier", m.classifier);
  }
  if (m.variant == ModelVariant::kDecoderB) append_parameters(list, "temporal", m.temporal);
  return list;
}

DecoderVars decoder_forward(ag::Graph& g, const Model& model, ag::Var image,
                            const SegmentationMask* guidance, const TemporalMemory& temporal) {
  const int out_h = image.dim(1), out_w = image.dim(2);
  const FeatureVars features = encode(g, model.encoder, image);
  const HeadVars head = run_context_head(g, model.head, features);
  DecoderVars out;
  if (!model.uses_memory()) {
    out.probs = classify_context(g, model.first_pass, head.context, out_h, out_w);
    out.first_pass = out.probs;
    return out;
  }
  out.first_pass =
      classify_context(g, model.first_pass, ag::stop_gradient(head.context), out_h, out_w);
  out.bottleneck = head.memory_features;
  out.memory_features = model.variant == ModelVariant::kDecoderB
                            ? attend(g, model.temporal, temporal, head.memory_features)
                            : head.memory_features;
  out.guidance = guidance ? *guidance : argmax_channels(out.first_pass.value());
  const int h = head.context.dim(1), w = head.context.dim(2);
  ag::Var gathered = g.constant(gather(model.memory.matrix, out.guidance, h, w));
  ag::Var o = relations(g, model.attention, out.memory_features, gathered);
  ag::Var refined = refine(g, model.attention, o, gathered);
  out.probs = fuse_and_classify(g, model.classifier, head.context, refined, out_h, out_w);
  return out;
}

ProbabilityMap baseline_forward(const Model& model, const Tensor& frame) {
  if (model.variant != ModelVariant::kBaseline) {
    throw ConfigError("baseline_forward called on " + variant_name(model.variant));
  }
  ag::Graph g(false);
  return {decoder_forward(g, model, g.constant(frame), nullptr, {}).probs.value()};
}

ProbabilityMap first_pass_forward(const Model& model, const Tensor& frame) {
  ag::Graph g(false);
  const FeatureVars features = encode(g, model.encoder, g.constant(frame));
  const HeadVars head = run_context_head(g, model.head, features);
  return {classify_context(g, model.first_pass, head.context, frame.dim(1), frame.dim(2))
              .value()};
}

Tensor memory_features_forward(const Model& model, const Tensor& frame) {
  ag::Graph g(false);
  switch (model.head.config.memory_source) {
    case MemoryFeatureSource::kBottleneck:
      return bottleneck(g, model.head, encode_to_stride8(g, model.encoder, g.constant(frame)))
          .value();
    case MemoryFeatureSource::kBackboneStride8:
      return encode_to_stride8(g, model.encoder, g.constant(frame)).x2.value();
    case MemoryFeatureSource::kContextFeatures:
      break;
  }
  const FeatureVars features = encode(g, model.encoder, g.constant(frame));
  return run_context_head(g, model.head, features).memory_features.value();
}

ProbabilityMap decoder_a_forward(const Model& model, const Tensor& frame,
                                 const GuidanceMask& guidance) {
  if (model.variant != ModelVariant::kDecoderA) {
    throw ConfigError("decoder_a_forward called on " + variant_name(model.variant));
  }
  ag::Graph g(false);
  return {decoder_forward(g, model, g.constant(frame), &guidance.labels, {}).probs.value()};
}

std::pair<ProbabilityMap, TemporalMemory> decoder_b_forward(const Model& model,
                                                            const Tensor& frame,
                                                            const TemporalMemory& temporal,
                                                            const GuidanceMask* guidance) {
  if (model.variant != ModelVariant::kDecoderB) {
    throw ConfigError("decoder_b_forward called on " + variant_name(model.variant));
  }
  ag::Graph g(false);
  const DecoderVars out = decoder_forward(g, model, g.constant(frame),
                                          guidance ? &guidance->labels : nullptr, temporal);
  return {ProbabilityMap{out.probs.value()}, push(temporal, out.bottleneck.value())};
}

SegmentationMask ensemble(const ProbabilityMap& p_a, const ProbabilityMap& p_b) {
  if (p_a.probs.shape() != p_b.probs.shape()) {
    throw ShapeError("ensemble: " + shape_to_string(p_a.probs.shape()) + " vs " +
                     shape_to_string(p_b.probs.shape()));
  }
  return argmax_channels(ops::add(p_a.probs, p_b.probs));
}

void append_model(io::TensorBundle& bundle, const Model& model, const std::string& prefix) {
  const std::string p = prefix + kAttrPrefix;
  const ModelConfig& c = model.config;
  bundle.attrs[p + "variant"] = variant_name(model.variant);
  bundle.attrs[p + "seed"] = std::to_string(model.seed);
  bundle.attrs[p + "num_classes"] = std::to_string(c.num_classes);
  bundle.attrs[p + "encoder.channels"] =
      join_ints({c.encoder.channels.begin(), c.encoder.channels.end()});
  bundle.attrs[p + "encoder.trainable"] = c.encoder.trainable ? "1" : "0";
  bundle.attrs[p + "head.embed_dim"] = std::to_string(c.head.embed_dim);
  bundle.attrs[p + "head.ppm_channels"] = std::to_string(c.head.ppm_channels);
  bundle.attrs[p + "head.pool_grids"] = join_ints(c.head.pool_grids);
  bundle.attrs[p + "head.memory_source"] =
      std::to_string(static_cast<int>(c.head.memory_source));
  bundle.attrs[p + "temporal_capacity"] = std::to_string(c.temporal_capacity);
  bundle.attrs[p + "transform_mode"] = std::to_string(static_cast<int>(c.transform_mode));
  Model copy = model;
  for (const NamedParameter& np : state_tensors(copy)) {
    bundle.add(prefix + np.name, *np.tensor);
  }
  io::TensorBundle memory;
  append_memory(memory, model.memory);
  for (auto& [key, value] : memory.attrs) bundle.attrs[prefix + key] = value;
  bundle.add(prefix + "memory", model.memory.matrix);
}

Model read_model(const io::TensorBundle& bundle, const std::string& prefix) {
  const std::string p = prefix + kAttrPrefix;
  io::TensorBundle memory_part;
  for (const auto& [key, value] : bundle.attrs) {
    if (key.rfind(prefix + "memory.", 0) == 0) memory_part.attrs[key.substr(prefix.size())] = value;
  }
  memory_part.add("memory", bundle.at(prefix + "memory"));
  const FeatureMemory memory = read_memory(memory_part);

  ModelConfig c;
  c.num_classes = parse_attr<int>(bundle, p + "num_classes");
  const std::vector<int> channels = parse_ints(bundle.attr(p + "encoder.channels"));
  if (channels.size() != 4) throw IoError("model checkpoint: encoder needs 4 channel counts");
  for (int i = 0; i < 4; ++i) c.encoder.channels[static_cast<std::size_t>(i)] = channels[static_cast<std::size_t>(i)];
  c.encoder.trainable = bundle.attr(p + "encoder.trainable") == "1";
  c.head.embed_dim = parse_attr<int>(bundle, p + "head.embed_dim");
  c.head.ppm_channels = parse_attr<int>(bundle, p + "head.ppm_channels");
  c.head.pool_grids = parse_ints(bundle.attr(p + "head.pool_grids"));
  c.head.memory_source =
      static_cast<MemoryFeatureSource>(parse_attr<int>(bundle, p + "head.memory_source"));
  c.temporal_capacity = parse_attr<int>(bundle, p + "temporal_capacity");
  c.transform_mode = static_cast<TransformMode>(parse_attr<int>(bundle, p + "transform_mode"));
  c.momentum = memory.schedule;

  Model m = build_model(parse_attr<std::uint64_t>(bundle, p + "seed"), c,
                        parse_variant(bundle.attr(p + "variant")));
  for (const NamedParameter& np : state_tensors(m)) {
    const Tensor& stored = bundle.at(prefix + np.name);
    if (stored.shape() != np.tensor->shape()) {
      throw IoError("model checkpoint: " + np.name + " has shape " +
                    shape_to_string(stored.shape()) + ", expected " +
                    shape_to_string(np.tensor->shape()));
    }
    *np.tensor = stored;
  }
  m.memory = memory;
  return m;
}

void save_model(const std::filesystem::path& path, const Model& model) {
  io::TensorBundle bundle;
  append_model(bundle, model);
  io::save_bundle(path, bundle);
}

Model load_model(const std::filesystem::path& path) { return read_model(io::load_bundle(path)); }

}  // namespace memseg
