// Copyright 2026 The SaviorRec Authors
// SPDX-License-Identifier: Apache-2.0
//
// SAVIOR-TENSORS v1: header line, then per-tensor records of
// (u32 name length, name bytes, u32 rank, u32 dims..., float64 LE payload).
// Round-trips must be bit-exact, so payloads are moved as raw IEEE-754 bits.

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "savior/error.hpp"
#include "savior/tensor.hpp"

namespace savior {

inline constexpr const char* kTensorsMagic = "SAVIOR-TENSORS v1";

namespace detail {

inline void put_u32_le(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64_le(std::string& buf, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline double get_f64_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace detail

inline std::string encode_tensors(const std::vector<std::pair<std::string, Tensor>>& named) {
  std::string buf;
  buf += kTensorsMagic;
  buf += '\n';
  for (const auto& [name, t] : named) {
    detail::put_u32_le(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    detail::put_u32_le(buf, static_cast<std::uint32_t>(t.shape().size()));
    for (int d : t.shape()) detail::put_u32_le(buf, static_cast<std::uint32_t>(d));
    for (double v : t.values()) detail::put_f64_le(buf, v);
  }
  return buf;
}

inline std::vector<std::pair<std::string, Tensor>> decode_tensors(const std::string& buf) {
  const std::string magic = std::string(kTensorsMagic) + "\n";
  if (buf.size() < magic.size() || buf.compare(0, magic.size(), magic) != 0)
    throw ContractError("tensor file: missing SAVIOR-TENSORS v1 header");
  const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data());
  std::size_t off = magic.size();
  const std::size_t end = buf.size();
  auto need = [&](std::size_t n) {
    if (off + n > end) throw ContractError("tensor file: truncated record");
  };
  std::vector<std::pair<std::string, Tensor>> out;
  while (off < end) {
    need(4);
    const std::uint32_t name_len = detail::get_u32_le(p + off);
    off += 4;
    need(name_len);
    std::string name(buf, off, name_len);
    off += name_len;
    need(4);
    const std::uint32_t rank = detail::get_u32_le(p + off);
    off += 4;
    need(4ull * rank);
    std::vector<int> shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<int>(detail::get_u32_le(p + off));
      off += 4;
      if (shape[i] <= 0) throw ContractError("tensor file: non-positive dim in '" + name + "'");
      numel *= static_cast<std::size_t>(shape[i]);
    }
    need(8 * numel);
    std::vector<double> data(numel);
    for (std::size_t i = 0; i < numel; ++i) {
      data[i] = detail::get_f64_le(p + off);
      off += 8;
    }
    out.emplace_back(std::move(name), Tensor::from_vector(std::move(shape), std::move(data)));
  }
  return out;
}

// Atomic write: temp file in the same directory, then rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw PipelineError("cannot open for writing: " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw PipelineError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw PipelineError("cannot open: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return buf;
}

inline void save_tensors(const std::filesystem::path& path,
                         const std::vector<std::pair<std::string, Tensor>>& named) {
  write_file_atomic(path, encode_tensors(named));
}

inline std::vector<std::pair<std::string, Tensor>> load_tensors(const std::filesystem::path& path) {
  return decode_tensors(read_file(path));
}

// Copies loaded values into an existing parameter set, matching by name and
// shape. Every destination parameter must be present in the file.
inline void restore_tensors(const std::vector<std::pair<std::string, Tensor>>& loaded,
                            std::vector<std::pair<std::string, Tensor>>& params) {
  for (auto& [name, t] : params) {
    bool found = false;
    for (const auto& [lname, lt] : loaded) {
      if (lname != name) continue;
      if (lt.shape() != t.shape())
        throw ContractError("restore: shape mismatch for '" + name + "'");
      t.mutable_values() = lt.values();
      found = true;
      break;
    }
    if (!found) throw ContractError("restore: tensor '" + name + "' missing from checkpoint");
  }
}

}  // namespace savior
