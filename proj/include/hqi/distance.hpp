#pragma once

#include <cstddef>
#include <cstdint>

namespace hqi {

enum class Metric : std::uint8_t { L2 = 0, InnerProduct = 1 };

// Length of a candidate block in batched posting-list scans. Scans walk
// candidates in blocks of this size against the whole query group so the
// block stays cache-resident across queries.
inline constexpr std::size_t kScanBlock = 256;

namespace detail {

// Eight independent accumulator chains: keeps the float summation order fixed
// (so every execution path that scores the same pair gets the bit-identical
// result) while still letting the compiler vectorize without -ffast-math.
inline float l2_sq(const float* a, const float* b, std::size_t d) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= d; i += 8)
    for (std::size_t j = 0; j < 8; ++j) {
      const float t = a[i + j] - b[i + j];
      acc[j] += t * t;
    }
  for (; i < d; ++i) {
    const float t = a[i] - b[i];
    acc[i % 8] += t * t;
  }
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
         ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

inline float dot(const float* a, const float* b, std::size_t d) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= d; i += 8)
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  for (; i < d; ++i) acc[i % 8] += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
         ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

}  // namespace detail

// Single score convention: smaller is better for both metrics. L2 keeps the
// squared distance; inner product is negated so one ordering rule serves both.
inline float score(const float* a, const float* b, std::size_t d, Metric m) {
  return m == Metric::L2 ? detail::l2_sq(a, b, d) : -detail::dot(a, b, d);
}

}  // namespace hqi
