#include "ppodiff/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

#include "ppodiff/errors.hpp"

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian");

namespace ppodiff::io {

namespace {

constexpr char kArchiveMagic[8] = {'P', 'D', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kArchiveVersion = 1;

}  // namespace

void BinaryWriter::bytes(const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  buf_.insert(buf_.end(), p, p + n);
}

void BinaryWriter::u8(std::uint8_t v) { buf_.push_back(v); }
void BinaryWriter::u32(std::uint32_t v) { bytes(&v, sizeof v); }
void BinaryWriter::u64(std::uint64_t v) { bytes(&v, sizeof v); }
void BinaryWriter::f64(double v) { bytes(&v, sizeof v); }

void BinaryWriter::string(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

void BinaryWriter::tensor(const Tensor& t) {
  u64(static_cast<std::uint64_t>(t.rows()));
  u64(static_cast<std::uint64_t>(t.cols()));
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    for (Eigen::Index j = 0; j < t.cols(); ++j) f64(t(i, j));
  }
}

void BinaryWriter::row(const RowVector& v) { tensor(Tensor(v)); }

void BinaryWriter::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IOError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
  if (!out) throw IOError("failed writing '" + path.string() + "'");
}

BinaryReader BinaryReader::open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return BinaryReader(std::move(data));
}

void BinaryReader::need(std::size_t n) const {
  if (pos_ + n > buf_.size()) throw IOError("truncated binary file");
}

void BinaryReader::bytes(void* out, std::size_t n) {
  need(n);
  std::memcpy(out, buf_.data() + pos_, n);
  pos_ += n;
}

std::uint8_t BinaryReader::u8() {
  std::uint8_t v;
  bytes(&v, 1);
  return v;
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  bytes(&v, sizeof v);
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  bytes(&v, sizeof v);
  return v;
}

double BinaryReader::f64() {
  double v;
  bytes(&v, sizeof v);
  return v;
}

std::string BinaryReader::string() {
  const std::uint32_t n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
  pos_ += n;
  return s;
}

Tensor BinaryReader::tensor() {
  const auto rows = static_cast<Eigen::Index>(u64());
  const auto cols = static_cast<Eigen::Index>(u64());
  need(static_cast<std::size_t>(rows * cols) * sizeof(double));
  Tensor t(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) t(i, j) = f64();
  }
  return t;
}

RowVector BinaryReader::row() {
  Tensor t = tensor();
  if (t.rows() != 1) throw IOError("expected a row vector");
  return t.row(0);
}

const Tensor& TensorArchive::at(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw IOError("archive has no tensor '" + name + "'");
}

const std::string& TensorArchive::meta_at(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw IOError("archive has no metadata key '" + key + "'");
  return it->second;
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
  BinaryWriter w;
  w.bytes(kArchiveMagic, sizeof kArchiveMagic);
  w.u32(kArchiveVersion);
  w.string(kind);
  w.u32(static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    w.string(k);
    w.string(v);
  }
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.string(name);
    w.tensor(t);
  }
  return w.buffer();
}

void TensorArchive::save(const std::filesystem::path& path) const {
  BinaryWriter w;
  const auto bytes = serialize();
  w.bytes(bytes.data(), bytes.size());
  w.save(path);
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  BinaryReader r = BinaryReader::open(path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kArchiveMagic, sizeof magic) != 0) {
    throw IOError("'" + path.string() + "' is not a checkpoint archive");
  }
  if (r.u32() != kArchiveVersion) throw IOError("unsupported checkpoint version");
  TensorArchive a;
  a.kind = r.string();
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.string();
    a.meta[k] = r.string();
  }
  const std::uint32_t n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = r.string();
    a.tensors.emplace_back(std::move(name), r.tensor());
  }
  if (!r.at_end()) throw IOError("trailing bytes in checkpoint");
  return a;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return os.str();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(data);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace ppodiff::io
