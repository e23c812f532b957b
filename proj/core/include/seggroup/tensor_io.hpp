// SPDX-License-Identifier: Apache-2.0
//
// Tensor container: a little-endian binary file made of
//   u64 header_length | JSON header (header_length bytes) | raw tensor data
// The header maps tensor name -> {dtype, shape, byte_offset}, offsets being
// relative to the first byte after the header. The reserved key
// "__metadata__" holds a free-form JSON object.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seggroup/types.hpp"

namespace seggroup {

enum class DType { f64, f32, i32, i64, u8 };

std::string dtype_name(DType dtype);
DType dtype_from_name(const std::string& name);
std::size_t dtype_size(DType dtype);

struct TensorEntry {
  DType dtype = DType::f64;
  std::vector<std::int64_t> shape;
  std::vector<std::byte> bytes;

  std::int64_t element_count() const;
};

class TensorFile {
 public:
  nlohmann::json metadata = nlohmann::json::object();

  void put_f64(const std::string& name, std::vector<std::int64_t> shape, std::span<const double> values);
  void put_i32(const std::string& name, std::vector<std::int64_t> shape, std::span<const std::int32_t> values);
  void put_matrix(const std::string& name, const Matrix& m);

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const TensorEntry& entry(const std::string& name) const;
  const std::map<std::string, TensorEntry>& entries() const { return tensors_; }

  /// Reads a floating tensor (f64 or f32) as doubles. Throws FormatError on dtype mismatch.
  std::vector<double> get_f64(const std::string& name) const;
  std::vector<std::int32_t> get_i32(const std::string& name) const;
  /// Reads a rank-2 floating tensor.
  Matrix get_matrix(const std::string& name) const;

  std::vector<std::byte> serialize() const;
  static TensorFile deserialize(std::span<const std::byte> data);

  void save(const std::filesystem::path& path) const;
  static TensorFile load(const std::filesystem::path& path);

 private:
  std::map<std::string, TensorEntry> tensors_;
};

/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> data);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);

}  // namespace seggroup
