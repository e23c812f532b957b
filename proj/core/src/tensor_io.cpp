// SPDX-License-Identifier: Apache-2.0
#include "seggroup/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace seggroup {

static_assert(std::endian::native == std::endian::little,
              "tensor container I/O assumes a little-endian host");

namespace {

constexpr const char* kMetadataKey = "__metadata__";

template <typename T>
std::vector<std::byte> to_bytes(std::span<const T> values) {
  std::vector<std::byte> out(values.size_bytes());
  if (!values.empty()) std::memcpy(out.data(), values.data(), out.size());
  return out;
}

std::int64_t product(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw FormatError("negative tensor dimension");
    n *= d;
  }
  return n;
}

}  // namespace

std::string dtype_name(DType dtype) {
  switch (dtype) {
    case DType::f64: return "F64";
    case DType::f32: return "F32";
    case DType::i32: return "I32";
    case DType::i64: return "I64";
    case DType::u8: return "U8";
  }
  return "?";
}

DType dtype_from_name(const std::string& name) {
  if (name == "F64") return DType::f64;
  if (name == "F32") return DType::f32;
  if (name == "I32") return DType::i32;
  if (name == "I64") return DType::i64;
  if (name == "U8") return DType::u8;
  throw FormatError("unknown dtype '" + name + "'");
}

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::f64: return 8;
    case DType::f32: return 4;
    case DType::i32: return 4;
    case DType::i64: return 8;
    case DType::u8: return 1;
  }
  return 0;
}

std::int64_t TensorEntry::element_count() const { return product(shape); }

void TensorFile::put_f64(const std::string& name, std::vector<std::int64_t> shape,
                         std::span<const double> values) {
  if (name == kMetadataKey) throw PreconditionError("reserved tensor name");
  if (product(shape) != static_cast<std::int64_t>(values.size()))
    throw PreconditionError("tensor '" + name + "': shape does not match value count");
  tensors_[name] = TensorEntry{DType::f64, std::move(shape), to_bytes(values)};
}

void TensorFile::put_i32(const std::string& name, std::vector<std::int64_t> shape,
                         std::span<const std::int32_t> values) {
  if (name == kMetadataKey) throw PreconditionError("reserved tensor name");
  if (product(shape) != static_cast<std::int64_t>(values.size()))
    throw PreconditionError("tensor '" + name + "': shape does not match value count");
  tensors_[name] = TensorEntry{DType::i32, std::move(shape), to_bytes(values)};
}

void TensorFile::put_matrix(const std::string& name, const Matrix& m) {
  put_f64(name, {m.rows(), m.cols()}, std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
}

const TensorEntry& TensorFile::entry(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw FormatError("missing tensor '" + name + "'");
  return it->second;
}

std::vector<double> TensorFile::get_f64(const std::string& name) const {
  const auto& e = entry(name);
  const auto n = static_cast<std::size_t>(e.element_count());
  std::vector<double> out(n);
  if (e.dtype == DType::f64) {
    if (n) std::memcpy(out.data(), e.bytes.data(), n * sizeof(double));
  } else if (e.dtype == DType::f32) {
    std::vector<float> tmp(n);
    if (n) std::memcpy(tmp.data(), e.bytes.data(), n * sizeof(float));
    for (std::size_t i = 0; i < n; ++i) out[i] = tmp[i];
  } else {
    throw FormatError("tensor '" + name + "' has dtype " + dtype_name(e.dtype) + ", expected F64 or F32");
  }
  return out;
}

std::vector<std::int32_t> TensorFile::get_i32(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::i32)
    throw FormatError("tensor '" + name + "' has dtype " + dtype_name(e.dtype) + ", expected I32");
  std::vector<std::int32_t> out(static_cast<std::size_t>(e.element_count()));
  if (!out.empty()) std::memcpy(out.data(), e.bytes.data(), out.size() * sizeof(std::int32_t));
  return out;
}

Matrix TensorFile::get_matrix(const std::string& name) const {
  const auto& e = entry(name);
  if (e.shape.size() != 2)
    throw FormatError("tensor '" + name + "' has rank " + std::to_string(e.shape.size()) + ", expected 2");
  auto values = get_f64(name);
  Matrix m(e.shape[0], e.shape[1]);
  if (!values.empty()) std::memcpy(m.data(), values.data(), values.size() * sizeof(double));
  return m;
}

std::vector<std::byte> TensorFile::serialize() const {
  nlohmann::json header = nlohmann::json::object();
  if (!metadata.empty()) header[kMetadataKey] = metadata;
  std::uint64_t offset = 0;
  for (const auto& [name, e] : tensors_) {
    header[name] = {{"dtype", dtype_name(e.dtype)}, {"shape", e.shape}, {"byte_offset", offset}};
    offset += e.bytes.size();
  }
  const std::string text = header.dump();
  const std::uint64_t header_len = text.size();

  std::vector<std::byte> out(sizeof(header_len) + text.size() + offset);
  std::memcpy(out.data(), &header_len, sizeof(header_len));
  std::memcpy(out.data() + sizeof(header_len), text.data(), text.size());
  std::size_t pos = sizeof(header_len) + text.size();
  for (const auto& [name, e] : tensors_) {
    if (!e.bytes.empty()) std::memcpy(out.data() + pos, e.bytes.data(), e.bytes.size());
    pos += e.bytes.size();
  }
  return out;
}

TensorFile TensorFile::deserialize(std::span<const std::byte> data) {
  std::uint64_t header_len = 0;
  if (data.size() < sizeof(header_len)) throw FormatError("tensor file truncated: no header length");
  std::memcpy(&header_len, data.data(), sizeof(header_len));
  if (header_len > data.size() - sizeof(header_len)) throw FormatError("tensor file truncated: header");

  const auto* text_begin = reinterpret_cast<const char*>(data.data() + sizeof(header_len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text_begin, text_begin + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("tensor file header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) throw FormatError("tensor file header is not a JSON object");

  const auto payload = data.subspan(sizeof(header_len) + header_len);
  TensorFile file;
  for (const auto& [name, spec] : header.items()) {
    if (name == kMetadataKey) {
      file.metadata = spec;
      continue;
    }
    try {
      TensorEntry e;
      e.dtype = dtype_from_name(spec.at("dtype").get<std::string>());
      e.shape = spec.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = spec.at("byte_offset").get<std::uint64_t>();
      const auto nbytes = static_cast<std::uint64_t>(product(e.shape)) * dtype_size(e.dtype);
      if (offset > payload.size() || nbytes > payload.size() - offset)
        throw FormatError("tensor '" + name + "' extends past end of file (truncated?)");
      const auto slice = payload.subspan(offset, nbytes);
      e.bytes.assign(slice.begin(), slice.end());
      file.tensors_[name] = std::move(e);
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError("tensor '" + name + "': bad header entry: " + ex.what());
    }
  }
  return file;
}

void TensorFile::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  write_file_atomic(path, bytes);
}

TensorFile TensorFile::load(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return deserialize(bytes);
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw DataError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::as_bytes(std::span<const char>(text.data(), text.size())));
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(raw.size());
  if (!raw.empty()) std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

}  // namespace seggroup
