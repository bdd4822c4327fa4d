// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared error types, deterministic RNG, and byte-level checksums.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace desklm {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/op shape mismatch; message names the op and the offending dims.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autodiff graph (backward before forward, non-scalar loss, ...).
class GraphError : public Error {
 public:
  using Error::Error;
};

// Invalid input data or configuration (drives CLI exit code 1).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// File or serialization failure (drives CLI exit code 2).
class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite gradient or loss; the trainer routes this to spike management.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Deterministic RNG with a single u64 state word (splitmix64 core).
// Serialization of the full generator state is one integer, which keeps
// checkpoint round-trips bit-exact and independent of the standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  // Standard normal via Box-Muller (no cached spare, so state is just the word).
  double gaussian() {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  std::uint64_t state_;
};

// Stateless hash for addressable streams: value k of stream `seed`.
inline std::uint64_t hash_u64(std::uint64_t seed, std::uint64_t k) {
  Rng r(seed ^ (k * 0x9E3779B97F4A7C15ull + 0x2545F4914F6CDD1Dull));
  return r.next_u64();
}

// FNV-1a over raw bytes; used for freeze contracts and fixture checksums.
inline std::uint64_t fnv1a(const void* data, std::size_t nbytes,
                           std::uint64_t h = 0xCBF29CE484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < nbytes; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

template <typename S>
std::uint64_t checksum(const std::vector<S>& v, std::uint64_t h = 0xCBF29CE484222325ull) {
  return fnv1a(v.data(), v.size() * sizeof(S), h);
}

}  // namespace desklm
