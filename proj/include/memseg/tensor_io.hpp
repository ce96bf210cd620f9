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
#ifndef MEMSEG_TENSOR_IO_HPP_
#define MEMSEG_TENSOR_IO_HPP_

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "memseg/tensor.hpp"

// Binary tensor container.
//
// A tensor record is
//   magic "MSTF" | u32 rank | u32 dims[rank] | f32 data[prod(dims)]
// with every integer and float little-endian. Records tagged "MSTD" carry f64
// payloads instead; checkpoints use them so resumed training is bit-exact.
//
// A bundle groups named records plus string attributes:
//   magic "MSTB" | u32 version | u32 n_attrs | (str key, str value)* |
//   u32 n_sections | (str name, record)*
// where str is u32 length followed by raw bytes.
namespace memseg::io {

enum class Precision { kFloat32, kFloat64 };

void write_tensor(std::ostream& out, const Tensor& t, Precision precision = Precision::kFloat32);
// `context` names the source in error messages.
Tensor read_tensor(std::istream& in, const std::string& context);

void save_tensor(const std::filesystem::path& path, const Tensor& t,
                 Precision precision = Precision::kFloat32);
Tensor load_tensor(const std::filesystem::path& path);

struct TensorBundle {
  std::map<std::string, std::string> attrs;
  std::vector<std::pair<std::string, Tensor>> sections;

  void add(std::string name, Tensor t) { sections.emplace_back(std::move(name), std::move(t)); }
  // Throws IoError naming the missing section.
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::string& attr(const std::string& key) const;
};

inline constexpr unsigned kBundleVersion = 1;

void save_bundle(const std::filesystem::path& path, const TensorBundle& bundle,
                 Precision precision = Precision::kFloat64);
TensorBundle load_bundle(const std::filesystem::path& path);

}  // namespace memseg::io

#endif  // MEMSEG_TENSOR_IO_HPP_
