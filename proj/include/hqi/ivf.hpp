#pragma once

#include <cstdint>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hqi/bitmap.hpp"
#include "hqi/core.hpp"
#include "hqi/distance.hpp"
#include "hqi/heap.hpp"
#include "hqi/kmeans.hpp"

namespace hqi {

// Scan accounting. tuples_scanned counts posting-list entries examined while
// scanning probed lists; with bitmap pushdown an entry is still scanned even
// when its distance computation is skipped.
// Batched execution shares one scan per (constraint group, posting list), so
// duplicate work it avoids is genuinely not counted. distances_computed counts
// actual scoring work: one per (query, surviving candidate).
struct SearchStats {
  std::uint64_t tuples_scanned = 0;
  std::uint64_t posting_lists_scanned = 0;
  std::uint64_t distances_computed = 0;

  SearchStats& operator+=(const SearchStats& o) {
    tuples_scanned += o.tuples_scanned;
    posting_lists_scanned += o.posting_lists_scanned;
    distances_computed += o.distances_computed;
    return *this;
  }
};

// Inverted file over one tuple scope: a coarse centroid per list and, per
// list, the scope-local positions plus a contiguous copy of the vectors.
struct IvfIndex {
  CentroidSet centroids;
  std::vector<std::vector<std::uint32_t>> list_positions;
  std::vector<std::vector<float>> list_vectors;  // list_positions[l].size() x dim each
  std::vector<std::int64_t> ids;                 // scope position -> tuple id
  Metric metric = Metric::L2;
  std::uint32_t dim = 0;

  std::uint32_t nlist() const { return centroids.k; }
  std::size_t scope_size() const { return ids.size(); }
  std::size_t list_size(std::uint32_t l) const { return list_positions[l].size(); }
};

inline std::uint32_t default_nlist(std::size_t n) {
  const auto r = static_cast<std::uint32_t>(std::llround(std::sqrt(static_cast<double>(n))));
  return r < 1 ? 1 : r;
}

namespace detail {

inline IvfIndex build_ivf_impl(std::span<const float> flat, std::vector<std::int64_t> ids,
                               Metric metric, std::uint32_t dim, std::size_t nlist,
                               std::uint64_t seed) {
  const std::size_t n = ids.size();
  if (n == 0) throw ConfigError("cannot build an IVF index over an empty scope");
  if (nlist == 0) nlist = default_nlist(n);
  if (nlist > n) nlist = n;

  IvfIndex index;
  index.metric = metric;
  index.dim = dim;
  index.ids = std::move(ids);
  index.centroids = kmeans(flat, n, dim, static_cast<std::uint32_t>(nlist), seed);
  index.list_positions.resize(nlist);
  index.list_vectors.resize(nlist);

  const auto assign = assign_nearest(flat, n, index.centroids, 1, metric);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t l = assign[i];
    index.list_positions[l].push_back(static_cast<std::uint32_t>(i));
    const float* v = flat.data() + i * dim;
    index.list_vectors[l].insert(index.list_vectors[l].end(), v, v + dim);
  }
  return index;
}

}  // namespace detail

// Builds an IVF index over a tuple scope: k-means centroids (nlist == 0 picks
// round(sqrt(n))), then every tuple goes to its nearest centroid's posting
// list, so the lists partition the scope.
inline IvfIndex build_ivf(std::span<const Tuple> scope, Metric metric, std::uint32_t dim,
                          std::size_t nlist = 0, std::uint64_t seed = 42) {
  std::vector<float> flat(scope.size() * std::size_t(dim));
  std::vector<std::int64_t> ids(scope.size());
  for (std::size_t i = 0; i < scope.size(); ++i) {
    std::copy_n(scope[i].vec.data(), dim, flat.data() + i * dim);
    ids[i] = scope[i].id;
  }
  return detail::build_ivf_impl(flat, std::move(ids), metric, dim, nlist, seed);
}

// Scope given as a position subset of a database (partition scopes).
inline IvfIndex build_ivf(const VectorDatabase& db, std::span<const std::uint32_t> positions,
                          std::size_t nlist = 0, std::uint64_t seed = 42) {
  std::vector<float> flat(positions.size() * std::size_t(db.dim));
  std::vector<std::int64_t> ids(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const Tuple& t = db.tuples[positions[i]];
    std::copy_n(t.vec.data(), db.dim, flat.data() + i * db.dim);
    ids[i] = t.id;
  }
  return detail::build_ivf_impl(flat, std::move(ids), db.metric, db.dim, nlist, seed);
}

namespace detail {

inline std::vector<std::uint32_t> probe_lists(const IvfIndex& index, const float* q,
                                              std::size_t nprobe) {
  const std::uint32_t np =
      static_cast<std::uint32_t>(nprobe < index.nlist() ? nprobe : index.nlist());
  return assign_nearest(std::span<const float>(q, index.dim), 1, index.centroids, np,
                        index.metric);
}

}  // namespace detail

// Single-query probe of nprobe posting lists. With a filter, distances are
// computed only for entries whose bit is set; an all-zero filter short
// circuits before any list is probed. Results are best-first, ties to the
// smaller tuple id.
inline std::vector<Neighbor> search(const IvfIndex& index, const float* q, std::size_t k,
                                    std::size_t nprobe, const Bitmap* filter = nullptr,
                                    SearchStats* stats = nullptr) {
  if (nprobe == 0) throw ConfigError("search requires nprobe >= 1");
  if (filter && filter->size() != index.scope_size())
    throw ConfigError("filter bitmap does not match the index scope");
  if (filter && !filter->any()) return {};

  TopKHeap heap(k);
  SearchStats local;
  for (const std::uint32_t l : detail::probe_lists(index, q, nprobe)) {
    const auto& positions = index.list_positions[l];
    const float* vecs = index.list_vectors[l].data();
    local.posting_lists_scanned += 1;
    local.tuples_scanned += positions.size();
    for (std::size_t e = 0; e < positions.size(); ++e) {
      if (filter && !filter->test(positions[e])) continue;
      local.distances_computed += 1;
      heap.push({score(q, vecs + e * index.dim, index.dim, index.metric),
                 index.ids[positions[e]]});
    }
  }
  if (stats) *stats += local;
  return heap.take_sorted();
}

// Algorithm 3 inner loop for one constraint group against one index: the
// filter is intersected with each probed posting list once for the whole
// group, and candidate blocks are scored against every query that probes the
// list before moving on. heap_slots maps group members to their entries in
// the per-query result heaps.
inline void scan_group(const IvfIndex& index, std::span<const float* const> queries,
                       std::span<const std::uint32_t> heap_slots, ResultsHeap& heaps,
                       std::size_t nprobe, const Bitmap* filter, SearchStats& stats) {
  if (nprobe == 0) throw ConfigError("scan_group requires nprobe >= 1");
  if (filter && filter->size() != index.scope_size())
    throw ConfigError("filter bitmap does not match the index scope");
  if (queries.empty()) return;
  if (filter && !filter->any()) return;

  // Which queries probe which list.
  std::vector<std::vector<std::uint32_t>> queries_by_list(index.nlist());
  for (std::size_t qi = 0; qi < queries.size(); ++qi)
    for (const std::uint32_t l : detail::probe_lists(index, queries[qi], nprobe))
      queries_by_list[l].push_back(static_cast<std::uint32_t>(qi));

  std::vector<std::uint32_t> cand_entries;
  for (std::uint32_t l = 0; l < index.nlist(); ++l) {
    const auto& group = queries_by_list[l];
    if (group.empty()) continue;
    const auto& positions = index.list_positions[l];
    stats.posting_lists_scanned += 1;
    stats.tuples_scanned += positions.size();

    cand_entries.clear();
    for (std::uint32_t e = 0; e < positions.size(); ++e)
      if (!filter || filter->test(positions[e])) cand_entries.push_back(e);
    if (cand_entries.empty()) continue;

    const float* vecs = index.list_vectors[l].data();
    for (std::size_t base = 0; base < cand_entries.size(); base += kScanBlock) {
      const std::size_t end = std::min(base + kScanBlock, cand_entries.size());
      for (const std::uint32_t qi : group) {
        const float* q = queries[qi];
        TopKHeap& heap = heaps[heap_slots[qi]];
        for (std::size_t ci = base; ci < end; ++ci) {
          const std::uint32_t e = cand_entries[ci];
          const float s = score(q, vecs + std::size_t(e) * index.dim, index.dim,
                                index.metric);
          heap.push({s, index.ids[positions[e]]});
        }
      }
      stats.distances_computed += (end - base) * group.size();
    }
  }
}

struct BatchSearchResult {
  std::vector<std::vector<Neighbor>> results;  // aligned with the input workload
  SearchStats stats;
};

// Provides the selection mask for a constraint (nullptr means unfiltered).
// The mask must cover the index scope.
using FilterProvider =
    std::function<const Bitmap*(const AttributeConstraint&, const std::string& key)>;

// Caches one bitmap per distinct constraint over a fixed scope.
class ScopeFilterCache {
 public:
  explicit ScopeFilterCache(std::span<const Tuple> scope) : scope_(scope) {}

  const Bitmap* get(const AttributeConstraint& f, const std::string& key) {
    auto it = cache_.find(key);
    if (it == cache_.end())
      it = cache_.emplace(key, build_attribute_bitmap(f, scope_)).first;
    return &it->second;
  }
  FilterProvider provider() {
    return [this](const AttributeConstraint& f, const std::string& key) {
      return get(f, key);
    };
  }

 private:
  std::span<const Tuple> scope_;
  std::map<std::string, Bitmap> cache_;
};

// Multi-query batch execution over one index (Algorithm 3): queries are
// grouped by canonical constraint, each group shares its filter and its
// posting-list scans, and per-query bounded heaps collect the k best. Result
// ids match per-query search() exactly; the scan order never affects the
// retained set because the neighbor order is total.
inline BatchSearchResult batch_search(const IvfIndex& index, const Workload& queries,
                                      std::size_t k, std::size_t nprobe,
                                      const FilterProvider& filters = {}) {
  BatchSearchResult out;
  ResultsHeap heaps(queries.size(), k);

  std::map<std::string, std::vector<std::uint32_t>> groups;
  for (std::size_t qi = 0; qi < queries.size(); ++qi)
    groups[canonical_key(queries[qi].constraint)].push_back(
        static_cast<std::uint32_t>(qi));

  for (const auto& [key, members] : groups) {
    const Bitmap* filter =
        filters ? filters(queries[members.front()].constraint, key) : nullptr;
    std::vector<const float*> vecs(members.size());
    for (std::size_t i = 0; i < members.size(); ++i)
      vecs[i] = queries[members[i]].vec.data();
    scan_group(index, vecs, members, heaps, nprobe, filter, out.stats);
  }
  out.results = heaps.take_all_sorted();
  return out;
}

// Exact nearest neighbors by full scan, the ground-truth path.
inline std::vector<Neighbor> exact_knn(const float* q, std::span<const Tuple> scope,
                                       std::size_t k, Metric metric,
                                       SearchStats* stats = nullptr) {
  TopKHeap heap(k);
  for (const Tuple& t : scope)
    heap.push({score(q, t.vec.data(), t.vec.size(), metric), t.id});
  if (stats) {
    stats->tuples_scanned += scope.size();
    stats->distances_computed += scope.size();
  }
  return heap.take_sorted();
}

// Exact filtered scan over the bitmap-selected subset of a database.
inline std::vector<Neighbor> exact_knn(const float* q, const VectorDatabase& db,
                                       const Bitmap& filter, std::size_t k,
                                       SearchStats* stats = nullptr) {
  TopKHeap heap(k);
  std::uint64_t scanned = 0;
  for (std::size_t w = 0; w < filter.words().size(); ++w) {
    std::uint64_t bits = filter.words()[w];
    while (bits) {
      const std::size_t i = w * 64 + static_cast<std::size_t>(std::countr_zero(bits));
      bits &= bits - 1;
      const Tuple& t = db.tuples[i];
      heap.push({score(q, t.vec.data(), db.dim, db.metric), t.id});
      ++scanned;
    }
  }
  if (stats) {
    stats->tuples_scanned += scanned;
    stats->distances_computed += scanned;
  }
  return heap.take_sorted();
}

}  // namespace hqi
