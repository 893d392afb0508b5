// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyperadapt/tensor.hpp"

namespace hyperadapt {

/// Flat key-value checkpoint.
///
/// Layout (all integers little-endian):
///   "HAKV"  u32 version=1
///   u64 header_len, header_len bytes of UTF-8 JSON
///   u64 entry_count, then per entry:
///     u32 key_len, key bytes
///     u8  dtype (0 = float64, 1 = uint8)
///     u32 ndim, ndim x u64 dims
///     payload: numel x float64 LE, or numel bytes
///
/// Adapter keys are "<adapter_id>/{P|lambda|Q|mask}" (or "/{A|B}" for LoRA);
/// hypernetwork keys are "hyper/<role>/<param_name>".
class KvCheckpoint {
 public:
  struct Entry {
    Shape shape;
    std::vector<double> f64;
    std::vector<std::uint8_t> bytes;
    bool is_bytes = false;
  };

  nlohmann::json& header() { return header_; }
  const nlohmann::json& header() const { return header_; }

  void put(const std::string& key, const Tensor& t);
  void put_mask(const std::string& key, const std::vector<bool>& mask);

  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  Tensor tensor(const std::string& key) const;
  std::vector<bool> mask(const std::string& key) const;
  const std::map<std::string, Entry>& entries() const { return entries_; }

  void save(const std::filesystem::path& path) const;
  static KvCheckpoint load(const std::filesystem::path& path);

 private:
  const Entry& entry(const std::string& key) const;

  nlohmann::json header_ = nlohmann::json::object();
  std::map<std::string, Entry> entries_;
};

}  // namespace hyperadapt
