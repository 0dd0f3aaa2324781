#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sftx {

// Base of every error the toolkit throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

std::string trim(std::string_view s);

// Whitespace tokenization used by the toy model and every text metric.
std::vector<std::string> split_ws(std::string_view s);

std::string join(std::span<const std::string> parts, std::string_view sep = " ");

// Byte offsets of each UTF-8 code point start, plus a final entry equal to s.size().
std::vector<std::size_t> utf8_boundaries(std::string_view s);

std::string sha256_hex(std::string_view data);

// Platform-stable uniform draw in [0, 1) with 53 bits of resolution.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// SplitMix64 finalizer; derives independent stream seeds from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Replaces every occurrence of `key` in `tmpl` with `value`.
std::string substitute(std::string tmpl, std::string_view key, std::string_view value);

}  // namespace sftx
