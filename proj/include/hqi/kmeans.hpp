#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "hqi/core.hpp"
#include "hqi/distance.hpp"
#include "hqi/heap.hpp"
#include "hqi/rng.hpp"

namespace hqi {

struct CentroidSet {
  std::uint32_t k = 0;
  std::uint32_t dim = 0;
  std::vector<float> data;  // k x dim, row-major

  const float* row(std::uint32_t i) const { return data.data() + std::size_t(i) * dim; }
  float* row(std::uint32_t i) { return data.data() + std::size_t(i) * dim; }
  bool empty() const { return k == 0; }
};

namespace detail {

// k-means++ seeding with deterministic D^2 sampling.
inline CentroidSet kmeans_seed(std::span<const float> vectors, std::size_t n,
                               std::uint32_t dim, std::uint32_t k,
                               std::mt19937_64& rng) {
  CentroidSet c{k, dim, std::vector<float>(std::size_t(k) * dim)};
  const auto vec = [&](std::size_t i) { return vectors.data() + i * dim; };

  std::size_t first = uniform_index(rng, n);
  std::copy_n(vec(first), dim, c.row(0));

  std::vector<double> dist2(n);
  for (std::size_t i = 0; i < n; ++i)
    dist2[i] = detail::l2_sq(vec(i), c.row(0), dim);

  for (std::uint32_t j = 1; j < k; ++j) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) total += dist2[i];
    std::size_t pick = 0;
    if (total > 0) {
      const double r = uniform_double(rng) * total;
      double acc = 0;
      pick = n - 1;  // guard against rounding past the end
      for (std::size_t i = 0; i < n; ++i) {
        acc += dist2[i];
        if (acc > r) {
          pick = i;
          break;
        }
      }
    } else {
      // All remaining mass is zero (duplicate-heavy input): walk positions.
      pick = j % n;
    }
    std::copy_n(vec(pick), dim, c.row(j));
    for (std::size_t i = 0; i < n; ++i) {
      const double d = detail::l2_sq(vec(i), c.row(j), dim);
      if (d < dist2[i]) dist2[i] = d;
    }
  }
  return c;
}

}  // namespace detail

// Lloyd's k-means over raw vectors (L2 training regardless of search metric,
// as is conventional for coarse quantizers). Deterministic for a fixed seed:
// k-means++ seeding, ties assign to the smaller centroid id, and an empty
// cluster is re-seeded from the largest cluster's farthest member (ties by
// smaller position). Stops early once assignments are stable.
inline CentroidSet kmeans(std::span<const float> vectors, std::size_t n,
                          std::uint32_t dim, std::uint32_t k, std::uint64_t seed,
                          std::uint32_t max_iters = 25) {
  if (k == 0 || k > n) throw ConfigError("kmeans requires 1 <= k <= n");
  const auto vec = [&](std::size_t i) { return vectors.data() + i * dim; };

  std::mt19937_64 rng(seed);
  CentroidSet c = detail::kmeans_seed(vectors, n, dim, k, rng);

  std::vector<std::uint32_t> assign(n, 0);
  std::vector<float> best(n);
  std::vector<std::size_t> counts(k);
  std::vector<double> sums(std::size_t(k) * dim);

  for (std::uint32_t iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t arg = 0;
      float bd = detail::l2_sq(vec(i), c.row(0), dim);
      for (std::uint32_t j = 1; j < k; ++j) {
        const float d = detail::l2_sq(vec(i), c.row(j), dim);
        if (d < bd) {  // strict: ties keep the smaller id
          bd = d;
          arg = j;
        }
      }
      best[i] = bd;
      if (assign[i] != arg) {
        assign[i] = arg;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;

    std::fill(counts.begin(), counts.end(), 0);
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      counts[assign[i]]++;
      double* s = sums.data() + std::size_t(assign[i]) * dim;
      const float* v = vec(i);
      for (std::uint32_t t = 0; t < dim; ++t) s[t] += v[t];
    }

    for (std::uint32_t j = 0; j < k; ++j) {
      if (counts[j] > 0) {
        const double* s = sums.data() + std::size_t(j) * dim;
        for (std::uint32_t t = 0; t < dim; ++t)
          c.row(j)[t] = static_cast<float>(s[t] / static_cast<double>(counts[j]));
        continue;
      }
      // Re-seed from the largest cluster's farthest member.
      std::uint32_t largest = 0;
      for (std::uint32_t l = 1; l < k; ++l)
        if (counts[l] > counts[largest]) largest = l;
      std::size_t far = n;
      float far_d = -1;
      for (std::size_t i = 0; i < n; ++i)
        if (assign[i] == largest && best[i] > far_d) {
          far_d = best[i];
          far = i;
        }
      if (far < n) std::copy_n(vec(far), dim, c.row(j));
    }
  }
  return c;
}

// For each input vector, its m nearest centroid ids in ascending score order
// (the index metric decides "nearest"; ties prefer the smaller id). Output is
// n x m, flattened row-major.
inline std::vector<std::uint32_t> assign_nearest(std::span<const float> vectors,
                                                 std::size_t n, const CentroidSet& c,
                                                 std::uint32_t m, Metric metric) {
  if (c.k == 0) throw ConfigError("assign_nearest requires a non-empty centroid set");
  if (m == 0 || m > c.k) throw ConfigError("assign_nearest requires 1 <= m <= k");
  std::vector<std::uint32_t> out(n * std::size_t(m));
  for (std::size_t i = 0; i < n; ++i) {
    TopKHeap heap(m);
    const float* v = vectors.data() + i * c.dim;
    for (std::uint32_t j = 0; j < c.k; ++j)
      heap.push({score(v, c.row(j), c.dim, metric), static_cast<std::int64_t>(j)});
    auto top = heap.take_sorted();
    for (std::uint32_t r = 0; r < m; ++r)
      out[i * m + r] = static_cast<std::uint32_t>(top[r].id);
  }
  return out;
}

}  // namespace hqi
