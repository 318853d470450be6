#pragma once

// Little-endian binary primitives and a named-tensor archive used by both
// checkpoint kinds. Layouts are documented in docs/FORMATS.md.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ppodiff/autodiff.hpp"

namespace ppodiff::io {

class BinaryWriter {
 public:
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void string(const std::string& s);
  void bytes(const void* data, std::size_t n);
  /// rows, cols, then values in row-major order.
  void tensor(const Tensor& t);
  void row(const RowVector& v);

  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::uint8_t> buf_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::vector<std::uint8_t> data) : buf_(std::move(data)) {}
  static BinaryReader open(const std::filesystem::path& path);

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string string();
  void bytes(void* out, std::size_t n);
  Tensor tensor();
  RowVector row();
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const;

  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

/// Ordered named tensors plus string metadata.
struct TensorArchive {
  std::string kind;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& at(const std::string& name) const;
  const std::string& meta_at(const std::string& key) const;

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);
  std::vector<std::uint8_t> serialize() const;
};

/// FNV-1a over bytes; used for config hashes and dataset fingerprints.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed = 1469598103934665603ULL);
std::uint64_t fnv1a(const std::string& s);

/// Hex SHA-256 of a byte buffer or a file.
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string hex64(std::uint64_t v);

}  // namespace ppodiff::io
