// SPDX-License-Identifier: Apache-2.0
#include "hyperadapt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "hyperadapt/errors.hpp"

namespace hyperadapt {

namespace {

constexpr char kMagic[4] = {'H', 'A', 'K', 'V'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) os.put(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T read_le(std::istream& is) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = is.get();
    if (c == EOF) throw std::runtime_error("checkpoint truncated");
    value |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return value;
}

}  // namespace

void KvCheckpoint::put(const std::string& key, const Tensor& t) {
  Entry e;
  e.shape = t.shape();
  e.f64 = t.to_vector();
  entries_[key] = std::move(e);
}

void KvCheckpoint::put_mask(const std::string& key, const std::vector<bool>& mask) {
  Entry e;
  e.shape = {mask.size()};
  e.is_bytes = true;
  e.bytes.reserve(mask.size());
  for (bool b : mask) e.bytes.push_back(b ? 1 : 0);
  entries_[key] = std::move(e);
}

const KvCheckpoint::Entry& KvCheckpoint::entry(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw std::out_of_range("checkpoint has no key '" + key + "'");
  return it->second;
}

Tensor KvCheckpoint::tensor(const std::string& key) const {
  const auto& e = entry(key);
  if (e.is_bytes) throw ContractError("checkpoint key '" + key + "' holds bytes, not float64");
  return Tensor::from(e.shape, e.f64);
}

std::vector<bool> KvCheckpoint::mask(const std::string& key) const {
  const auto& e = entry(key);
  if (!e.is_bytes) throw ContractError("checkpoint key '" + key + "' holds float64, not a mask");
  std::vector<bool> out;
  out.reserve(e.bytes.size());
  for (auto b : e.bytes) out.push_back(b != 0);
  return out;
}

void KvCheckpoint::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(os, kVersion);
  const std::string header = header_.dump();
  write_le<std::uint64_t>(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_le<std::uint64_t>(os, entries_.size());
  for (const auto& [key, e] : entries_) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(key.size()));
    os.write(key.data(), static_cast<std::streamsize>(key.size()));
    os.put(static_cast<char>(e.is_bytes ? 1 : 0));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) write_le<std::uint64_t>(os, d);
    if (e.is_bytes) {
      os.write(reinterpret_cast<const char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
    } else {
      for (double v : e.f64) write_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
    }
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

KvCheckpoint KvCheckpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path.string() + " is not a key-value checkpoint");
  }
  if (read_le<std::uint32_t>(is) != kVersion) throw std::runtime_error("unsupported checkpoint version");

  KvCheckpoint ckpt;
  const auto header_len = read_le<std::uint64_t>(is);
  std::string header(header_len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(header_len));
  ckpt.header_ = nlohmann::json::parse(header);

  const auto count = read_le<std::uint64_t>(is);
  for (std::uint64_t n = 0; n < count; ++n) {
    const auto key_len = read_le<std::uint32_t>(is);
    std::string key(key_len, '\0');
    is.read(key.data(), key_len);
    Entry e;
    const int dtype = is.get();
    if (dtype != 0 && dtype != 1) throw std::runtime_error("unknown dtype in checkpoint entry " + key);
    e.is_bytes = dtype == 1;
    const auto ndim = read_le<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < ndim; ++i) e.shape.push_back(read_le<std::uint64_t>(is));
    const auto numel = shape_numel(e.shape);
    if (e.is_bytes) {
      e.bytes.resize(numel);
      is.read(reinterpret_cast<char*>(e.bytes.data()), static_cast<std::streamsize>(numel));
    } else {
      e.f64.resize(numel);
      for (auto& v : e.f64) v = std::bit_cast<double>(read_le<std::uint64_t>(is));
    }
    if (!is) throw std::runtime_error("checkpoint truncated at entry " + key);
    ckpt.entries_[key] = std::move(e);
  }
  return ckpt;
}

}  // namespace hyperadapt
