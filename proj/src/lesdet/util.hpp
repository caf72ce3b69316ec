#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>

#include "lesdet/tensor.hpp"

namespace lesdet {

using Rng = std::mt19937_64;

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream for (seed, stream index), e.g. one per sample.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng(mix64(mix64(seed) ^ mix64(stream + 0x5851f42d4c957f2dULL)));
}

/// Incremental SHA-256 (OpenSSL) with hex output.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(const void* data, std::size_t len);
  Sha256& update(std::string_view s) { return update(s.data(), s.size()); }
  template <typename T>
  Sha256& update(std::span<const T> s) {
    return update(s.data(), s.size_bytes());
  }
  Sha256& update(const Tensor& t);

  std::string hex();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(std::string_view data);

// First 16 hex digits, used for ids embedded in file names and reports.
inline std::string short_hash(const std::string& full) { return full.substr(0, 16); }

}  // namespace lesdet
