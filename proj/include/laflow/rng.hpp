#pragma once
// Named PRNG streams: each consumer (init, data, sampling, ...) draws from its
// own generator, seeded from (base seed, stream name), so adding a consumer
// never shifts the draws seen by another.

#include <cstdint>
#include <random>
#include <string_view>

#include "laflow/tape.hpp"

namespace laflow {

constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

using Rng = std::mt19937_64;

inline Rng make_stream(std::uint64_t seed, std::string_view name) {
  return Rng(splitmix64(seed ^ fnv1a64(name)));
}

inline Rng make_stream(std::uint64_t seed, std::string_view name, std::uint64_t index) {
  return Rng(splitmix64(splitmix64(seed ^ fnv1a64(name)) + index));
}

template <typename Scalar = double>
MatrixX<Scalar> standard_normal(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<Scalar> nd(Scalar(0), Scalar(1));
  MatrixX<Scalar> m(rows, cols);
  // Fill row by row so the draw order matches a row-major layout.
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = nd(rng);
  return m;
}

template <typename Scalar = double>
MatrixX<Scalar> uniform(Index rows, Index cols, Scalar lo, Scalar hi, Rng& rng) {
  std::uniform_real_distribution<Scalar> ud(lo, hi);
  MatrixX<Scalar> m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = ud(rng);
  return m;
}

}  // namespace laflow
