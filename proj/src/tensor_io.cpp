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
#include "memseg/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "memseg/error.hpp"

namespace memseg::io {
namespace {

constexpr std::uint32_t kMaxRank = 8;
constexpr std::uint32_t kMaxString = 1u << 24;

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff),
                              static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffu));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t get_u32(std::istream& in, const std::string& context) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw IoError(context + ": truncated tensor data");
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& in, const std::string& context) {
  const std::uint64_t lo = get_u32(in, context);
  const std::uint64_t hi = get_u32(in, context);
  return lo | (hi << 32);
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::string& context) {
  const std::uint32_t n = get_u32(in, context);
  if (n > kMaxString) throw IoError(context + ": implausible string length");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw IoError(context + ": truncated string");
  return s;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t, Precision precision) {
  out.write(precision == Precision::kFloat32 ? "MSTF" : "MSTD", 4);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.data()) {
    if (precision == Precision::kFloat32) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  }
}

Tensor read_tensor(std::istream& in, const std::string& context) {
  char magic[4];
  if (!in.read(magic, 4)) throw IoError(context + ": truncated tensor header");
  Precision precision;
  if (std::memcmp(magic, "MSTF", 4) == 0) {
    precision = Precision::kFloat32;
  } else if (std::memcmp(magic, "MSTD", 4) == 0) {
    precision = Precision::kFloat64;
  } else {
    throw IoError(context + ": bad tensor magic");
  }
  const std::uint32_t rank = get_u32(in, context);
  if (rank > kMaxRank) throw IoError(context + ": implausible tensor rank " + std::to_string(rank));
  Shape shape;
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = get_u32(in, context);
    if (d > (1u << 28)) throw IoError(context + ": implausible tensor dimension");
    shape.push_back(static_cast<int>(d));
    n *= d;
  }
  if (n > (std::size_t{1} << 30)) throw IoError(context + ": tensor too large");
  std::vector<double> data(rank ? n : 0);
  for (double& v : data) {
    v = precision == Precision::kFloat32
            ? static_cast<double>(std::bit_cast<float>(get_u32(in, context)))
            : std::bit_cast<double>(get_u64(in, context));
  }
  if (rank == 0) return Tensor();
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t, Precision precision) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  write_tensor(out, t, precision);
  if (!out) throw IoError(path.string() + ": write failed");
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open");
  return read_tensor(in, path.string());
}

const Tensor& TensorBundle::at(const std::string& name) const {
  for (const auto& [key, t] : sections)
    if (key == name) return t;
  throw IoError("bundle has no section '" + name + "'");
}

bool TensorBundle::contains(const std::string& name) const {
  for (const auto& entry : sections)
    if (entry.first == name) return true;
  return false;
}

const std::string& TensorBundle::attr(const std::string& key) const {
  auto it = attrs.find(key);
  if (it == attrs.end()) throw IoError("bundle has no attribute '" + key + "'");
  return it->second;
}

void save_bundle(const std::filesystem::path& path, const TensorBundle& bundle,
                 Precision precision) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out.write("MSTB", 4);
  put_u32(out, kBundleVersion);
  put_u32(out, static_cast<std::uint32_t>(bundle.attrs.size()));
  for (const auto& [k, v] : bundle.attrs) {
    put_string(out, k);
    put_string(out, v);
  }
  put_u32(out, static_cast<std::uint32_t>(bundle.sections.size()));
  for (const auto& [name, t] : bundle.sections) {
    put_string(out, name);
    write_tensor(out, t, precision);
  }
  if (!out) throw IoError(path.string() + ": write failed");
}

TensorBundle load_bundle(const std::filesystem::path& path) {
  const std::string context = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(context + ": cannot open");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "MSTB", 4) != 0) {
    throw IoError(context + ": not a tensor bundle");
  }
  const std::uint32_t version = get_u32(in, context);
  if (version != kBundleVersion) {
    throw IoError(context + ": unsupported bundle version " + std::to_string(version));
  }
  TensorBundle bundle;
  const std::uint32_t n_attrs = get_u32(in, context);
  for (std::uint32_t i = 0; i < n_attrs; ++i) {
    std::string k = get_string(in, context);
    bundle.attrs[k] = get_string(in, context);
  }
  const std::uint32_t n_sections = get_u32(in, context);
  for (std::uint32_t i = 0; i < n_sections; ++i) {
    std::string name = get_string(in, context);
    bundle.add(std::move(name), read_tensor(in, context));
  }
  return bundle;
}

}  // namespace memseg::io
