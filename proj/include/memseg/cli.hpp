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
#ifndef MEMSEG_CLI_HPP_
#define MEMSEG_CLI_HPP_

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "memseg/dataset.hpp"
#include "memseg/inference.hpp"
#include "memseg/model.hpp"
#include "memseg/training.hpp"

namespace memseg {

struct RunPaths {
  std::string data;        // dataset root (manifest.json)
  std::string out;         // command output: dataset dir, checkpoint, mask dir or report
  std::string checkpoint;  // model to run inference with
  std::string log;         // training log; defaults to <out>.log.jsonl
  std::string resume;      // training checkpoint to continue from
  std::string pred;        // mask directory to evaluate
  std::string probs_a;     // probability maps of the first ensemble member
  std::string probs_b;     // probability maps of the second ensemble member
};

// Everything one invocation needs. Loaded from JSON (unknown keys are
// rejected) and then overridden by command-line flags. `seed` drives every
// random stream: dataset synthesis, model init and training.
struct RunConfig {
  std::uint64_t seed = 0;
  ModelVariant variant = ModelVariant::kDecoderA;
  int jobs = 1;
  std::string split = "val";
  bool save_probs = false;
  int ensemble_stage = 0;
  RunPaths paths;
  SyntheticConfig data;
  ModelConfig model;
  TrainConfig train;
  InferenceConfig infer;

  void validate() const;
};

// Throws ConfigError on unknown keys, wrong types or invalid values.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& config);

// Layout of inference outputs under a prediction directory.
std::filesystem::path stage_mask_path(const std::filesystem::path& dir, const std::string& video,
                                      int frame, int stage);
std::filesystem::path stage_probs_path(const std::filesystem::path& dir, const std::string& video,
                                       int frame, int stage);

// Calls fn(i) for i in [0, n) on up to `jobs` threads. The first exception by
// index is rethrown after all workers finish.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

// Subcommands gen-data, train, infer, eval and ensemble. Returns 0 on
// success, 2 on user or configuration errors and 1 on internal failures.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace memseg

#endif  // MEMSEG_CLI_HPP_
