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
#ifndef MEMSEG_RNG_HPP_
#define MEMSEG_RNG_HPP_

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace memseg {

using Rng = std::mt19937_64;

// Independent stream derived from one run seed and a label, e.g.
// substream(seed, "sampler") and substream(seed, "init/encoder.stem0.w").
std::uint64_t substream_seed(std::uint64_t seed, std::string_view label);
Rng substream(std::uint64_t seed, std::string_view label);

double uniform(Rng& rng, double lo, double hi);
// Uniform integer in [0, n).
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);

}  // namespace memseg

#endif  // MEMSEG_RNG_HPP_
