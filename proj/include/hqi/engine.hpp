#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hqi/bitmap.hpp"
#include "hqi/core.hpp"
#include "hqi/heap.hpp"
#include "hqi/ivf.hpp"
#include "hqi/kmeans.hpp"
#include "hqi/qdtree.hpp"
#include "hqi/rng.hpp"

namespace hqi {

// ---------------------------------------------------------------------------
// Strategies.
//  - ExhaustiveA: exact filtered scan; defines ground truth.
//  - PreFilterB:  global constraint bitmap pushed into one IVF over the DB.
//  - RangeC:      equal-width range partitions on one numeric attribute,
//                 an IVF per partition, routing by interval overlap.
//  - PostFilterD: unfiltered IVF search with overfetch, constraint applied
//                 to the candidates afterwards; may return fewer than k.
//  - HQI:         workload-aware tree partitions, an IVF per leaf, routing
//                 by semantic-description subsumption.
enum class Strategy : std::uint8_t {
  ExhaustiveA = 0,
  PreFilterB = 1,
  RangeC = 2,
  PostFilterD = 3,
  HQI = 4,
};

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::ExhaustiveA: return "exhaustive";
    case Strategy::PreFilterB: return "prefilter";
    case Strategy::RangeC: return "range";
    case Strategy::PostFilterD: return "postfilter";
    case Strategy::HQI: return "hqi";
  }
  return "unknown";
}

inline std::optional<Strategy> parse_strategy(std::string_view name) {
  for (const Strategy s : {Strategy::ExhaustiveA, Strategy::PreFilterB, Strategy::RangeC,
                           Strategy::PostFilterD, Strategy::HQI})
    if (name == strategy_name(s)) return s;
  return std::nullopt;
}

struct StrategyConfig {
  Strategy strategy = Strategy::HQI;
  std::size_t k = 10;
  std::size_t nprobe = 0;  // 0 probes every posting list
  // HQI
  std::size_t min_size = 0;       // 0 picks max(256, n / 1024)
  std::uint32_t num_centroids = 0;  // 0 picks round(sqrt(n))
  std::uint32_t m = 0;              // query-side centroids; 0 disables augmentation
  // RangeC
  std::string partition_attr = "A";
  std::uint32_t partition_count = 16;
  // PostFilterD
  double overfetch_factor = 10.0;
  std::uint64_t seed = 42;
};

// Per-constraint probe counts; constraints without an entry use the default.
// A value of 0 means exhaustive (every posting list).
struct NprobeSpec {
  std::size_t default_nprobe = 0;
  std::map<std::string, std::size_t> per_constraint;  // canonical constraint key

  static NprobeSpec fixed(std::size_t np) { return {np, {}}; }

  std::size_t for_key(const std::string& key) const {
    const auto it = per_constraint.find(key);
    const std::size_t np = it == per_constraint.end() ? default_nprobe : it->second;
    return np == 0 ? std::numeric_limits<std::size_t>::max() : np;
  }
};

// Built layout for any strategy. The database itself is not stored; callers
// pass the same database to build and execute.
struct EngineIndex {
  StrategyConfig config;  // with resolved defaults filled in
  Metric metric = Metric::L2;
  std::uint32_t dim = 0;
  std::size_t n = 0;

  PartitionSet partitions;    // empty for ExhaustiveA
  std::vector<IvfIndex> ivfs; // aligned with partitions; empty-scope -> unused
  QdTree tree;                // HQI only
  std::optional<Augmentation> aug;  // HQI with m > 0

  double range_lo = 0.0, range_hi = 0.0;  // RangeC attribute span

  double build_seconds = 0.0;
};

struct BatchResult {
  std::vector<std::vector<Neighbor>> results;  // aligned with the input workload
  SearchStats stats;
  double seconds = 0.0;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::map<std::string, std::vector<std::uint32_t>> group_by_constraint(
    const Workload& queries) {
  std::map<std::string, std::vector<std::uint32_t>> groups;
  for (std::size_t qi = 0; qi < queries.size(); ++qi)
    groups[canonical_key(queries[qi].constraint)].push_back(
        static_cast<std::uint32_t>(qi));
  return groups;
}

// Intersection of the numeric restrictions the constraint places on `attr`,
// widened where exactness is impossible (In becomes its enclosing interval).
struct RangeInterval {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
};

inline RangeInterval range_restriction(const AttributeConstraint& f,
                                       const std::string& attr) {
  RangeInterval r;
  for (const auto& p : f.predicates) {
    if (const auto* c = std::get_if<ComparePredicate>(&p)) {
      if (c->attr != attr || !is_numeric(c->literal)) continue;
      const double v = as_double(c->literal);
      switch (c->op) {
        case CompareOp::Lt:
        case CompareOp::Le: r.hi = std::min(r.hi, v); break;
        case CompareOp::Gt:
        case CompareOp::Ge: r.lo = std::max(r.lo, v); break;
        case CompareOp::Eq:
          r.lo = std::max(r.lo, v);
          r.hi = std::min(r.hi, v);
          break;
      }
    } else if (const auto* in = std::get_if<InPredicate>(&p)) {
      if (in->attr != attr || in->literals.empty()) continue;
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      bool numeric = true;
      for (const auto& lit : in->literals) {
        if (!is_numeric(lit)) {
          numeric = false;
          break;
        }
        lo = std::min(lo, as_double(lit));
        hi = std::max(hi, as_double(lit));
      }
      if (numeric) {
        r.lo = std::max(r.lo, lo);
        r.hi = std::min(r.hi, hi);
      }
    }
  }
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Build.

inline EngineIndex build_index(const VectorDatabase& db, const Workload& training,
                               StrategyConfig config) {
  if (db.size() == 0) throw ConfigError("cannot build an index over an empty database");
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = db.size();

  EngineIndex ix;
  ix.metric = db.metric;
  ix.dim = db.dim;
  ix.n = n;

  switch (config.strategy) {
    case Strategy::ExhaustiveA:
      break;  // no layout: execution scans the database

    case Strategy::PreFilterB:
    case Strategy::PostFilterD: {
      Partition all;
      all.tuple_positions.resize(n);
      for (std::size_t i = 0; i < n; ++i)
        all.tuple_positions[i] = static_cast<std::uint32_t>(i);
      ix.partitions.partitions.push_back(std::move(all));
      ix.ivfs.push_back(
          build_ivf(db, ix.partitions.partitions[0].tuple_positions, 0, config.seed));
      break;
    }

    case Strategy::RangeC: {
      if (config.partition_count < 1)
        throw ConfigError("range strategy requires partition_count >= 1");
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (const Tuple& t : db.tuples) {
        const AttributeValue* v = find_attr(t.attrs, config.partition_attr);
        if (!v || !is_numeric(*v))
          throw ConfigError("range strategy requires numeric attribute '" +
                            config.partition_attr + "' on every tuple");
        lo = std::min(lo, as_double(*v));
        hi = std::max(hi, as_double(*v));
      }
      ix.range_lo = lo;
      ix.range_hi = hi;
      const std::uint32_t count = config.partition_count;
      const double width = (hi - lo) / count;
      ix.partitions.partitions.resize(count);
      for (std::size_t i = 0; i < n; ++i) {
        const double v = as_double(*find_attr(db.tuples[i].attrs, config.partition_attr));
        std::uint32_t cell =
            width > 0 ? static_cast<std::uint32_t>((v - lo) / width) : 0;
        if (cell >= count) cell = count - 1;
        ix.partitions.partitions[cell].tuple_positions.push_back(
            static_cast<std::uint32_t>(i));
      }
      ix.ivfs.resize(count);
      for (std::uint32_t p = 0; p < count; ++p)
        if (!ix.partitions.partitions[p].tuple_positions.empty())
          ix.ivfs[p] = build_ivf(db, ix.partitions.partitions[p].tuple_positions, 0,
                                 mix_seed(config.seed, p));
      break;
    }

    case Strategy::HQI: {
      if (config.num_centroids == 0)
        config.num_centroids = std::max<std::uint32_t>(
            1, static_cast<std::uint32_t>(std::llround(std::sqrt(double(n)))));
      config.min_size = resolve_min_size(config.min_size, n);

      Workload train = training;
      std::span<const std::uint32_t> centroid_of;
      if (config.m > 0) {
        ix.aug = augment(db, training, config.num_centroids, config.m, config.seed);
        train = augmented_workload(training, *ix.aug);
        centroid_of = ix.aug->tuple_centroid;
      }
      ix.tree = construct_balanced_qdtree(db, train, QdTreeConfig{config.min_size},
                                          centroid_of);
      ix.partitions = collect_partitions(ix.tree);
      ix.ivfs.reserve(ix.partitions.size());
      for (std::uint32_t p = 0; p < ix.partitions.size(); ++p)
        ix.ivfs.push_back(build_ivf(db, ix.partitions.partitions[p].tuple_positions, 0,
                                    mix_seed(config.seed, p)));
      break;
    }
  }

  ix.config = std::move(config);
  ix.build_seconds = detail::seconds_since(t0);
  return ix;
}

// ---------------------------------------------------------------------------
// Execution.

namespace detail {

// Partitions a RangeC query group may touch: those whose value interval
// overlaps every numeric restriction on the partitioning attribute. No
// restriction on that attribute routes everywhere.
inline std::vector<std::uint32_t> route_range_group(const EngineIndex& ix,
                                                    const AttributeConstraint& f) {
  const RangeInterval r = range_restriction(f, ix.config.partition_attr);
  const std::uint32_t count = static_cast<std::uint32_t>(ix.partitions.size());
  const double width = (ix.range_hi - ix.range_lo) / count;
  std::vector<std::uint32_t> out;
  for (std::uint32_t p = 0; p < count; ++p) {
    const double cell_lo = ix.range_lo + width * p;
    const double cell_hi = p + 1 == count ? ix.range_hi : ix.range_lo + width * (p + 1);
    if (cell_lo <= r.hi && cell_hi >= r.lo) out.push_back(p);
  }
  return out;
}

inline std::vector<std::uint32_t> sorted_query_centroids(const EngineIndex& ix,
                                                         const HybridQuery& q) {
  if (!ix.aug || ix.aug->m == 0) return {};
  auto ids =
      assign_nearest(q.vec, 1, ix.aug->centroids, ix.aug->m, ix.metric);
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Runs one constraint group against one partition for the given members.
inline void run_partition_group(const VectorDatabase& db, const EngineIndex& ix,
                                const Workload& queries,
                                std::span<const std::uint32_t> members,
                                std::uint32_t part, std::size_t np, ResultsHeap& heaps,
                                SearchStats& stats) {
  const auto& positions = ix.partitions.partitions[part].tuple_positions;
  if (positions.empty() || members.empty()) return;
  const Bitmap filter = build_attribute_bitmap(queries[members.front()].constraint, db,
                                               positions);
  std::vector<const float*> vecs(members.size());
  for (std::size_t i = 0; i < members.size(); ++i)
    vecs[i] = queries[members[i]].vec.data();
  scan_group(ix.ivfs[part], vecs, members, heaps, np, &filter, stats);
}

}  // namespace detail

// Ground truth: exact filtered scan (the ExhaustiveA plan), grouped by
// constraint so each selection bitmap is built once.
inline BatchResult exact_truth(const VectorDatabase& db, const Workload& queries,
                               std::size_t k) {
  const auto t0 = std::chrono::steady_clock::now();
  BatchResult out;
  out.results.resize(queries.size());
  for (const auto& [key, members] : detail::group_by_constraint(queries)) {
    const Bitmap bm = build_attribute_bitmap(queries[members.front()].constraint,
                                             db.tuples);
    for (const std::uint32_t qi : members)
      out.results[qi] = exact_knn(queries[qi].vec.data(), db, bm, k, &out.stats);
  }
  out.seconds = detail::seconds_since(t0);
  return out;
}

// Batched execution of a workload against a built index. Queries sharing a
// constraint share bitmap construction and posting-list scans; per-query
// bounded heaps make the output independent of partition visit order.
inline BatchResult execute_batch(const VectorDatabase& db, const EngineIndex& ix,
                                 const Workload& queries,
                                 const NprobeSpec& nprobe = {}) {
  for (const auto& q : queries)
    if (q.vec.size() != ix.dim)
      throw ConfigError("query dimension does not match the index");

  if (ix.config.strategy == Strategy::ExhaustiveA) return exact_truth(db, queries, ix.config.k);

  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t k = ix.config.k;
  BatchResult out;
  const auto groups = detail::group_by_constraint(queries);

  switch (ix.config.strategy) {
    case Strategy::ExhaustiveA:
      break;  // handled above

    case Strategy::PreFilterB: {
      ResultsHeap heaps(queries.size(), k);
      for (const auto& [key, members] : groups)
        detail::run_partition_group(db, ix, queries, members, 0, nprobe.for_key(key),
                                    heaps, out.stats);
      out.results = heaps.take_all_sorted();
      break;
    }

    case Strategy::RangeC: {
      ResultsHeap heaps(queries.size(), k);
      for (const auto& [key, members] : groups) {
        const std::size_t np = nprobe.for_key(key);
        for (const std::uint32_t part :
             detail::route_range_group(ix, queries[members.front()].constraint))
          detail::run_partition_group(db, ix, queries, members, part, np, heaps,
                                      out.stats);
      }
      out.results = heaps.take_all_sorted();
      break;
    }

    case Strategy::PostFilterD: {
      const std::size_t fetch = std::max<std::size_t>(
          k, static_cast<std::size_t>(std::llround(ix.config.overfetch_factor * double(k))));
      ResultsHeap heaps(queries.size(), fetch);
      for (const auto& [key, members] : groups) {
        const std::size_t np = nprobe.for_key(key);
        std::vector<const float*> vecs(members.size());
        for (std::size_t i = 0; i < members.size(); ++i)
          vecs[i] = queries[members[i]].vec.data();
        scan_group(ix.ivfs[0], vecs, members, heaps, np, nullptr, out.stats);
      }
      auto candidates = heaps.take_all_sorted();

      std::unordered_map<std::int64_t, std::uint32_t> pos_of;
      pos_of.reserve(db.size());
      for (std::size_t i = 0; i < db.size(); ++i)
        pos_of.emplace(db.tuples[i].id, static_cast<std::uint32_t>(i));

      out.results.resize(queries.size());
      for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        auto& kept = out.results[qi];
        for (const Neighbor& nb : candidates[qi]) {
          if (kept.size() == k) break;
          const auto& attrs = db.tuples[pos_of.at(nb.id)].attrs;
          if (eval_constraint(queries[qi].constraint, attrs)) kept.push_back(nb);
        }
      }
      break;
    }

    case Strategy::HQI: {
      ResultsHeap heaps(queries.size(), k);
      std::vector<std::vector<std::uint32_t>> members_by_part(ix.partitions.size());
      for (const auto& [key, members] : groups) {
        const std::size_t np = nprobe.for_key(key);
        for (auto& v : members_by_part) v.clear();
        for (const std::uint32_t qi : members) {
          const auto qc = detail::sorted_query_centroids(ix, queries[qi]);
          const RoutingQuery rq = compile_routing_query(ix.tree.cuts, queries[qi], qc);
          for (const std::uint32_t part : route_query(ix.partitions, rq))
            members_by_part[part].push_back(qi);
        }
        for (std::uint32_t part = 0; part < ix.partitions.size(); ++part)
          detail::run_partition_group(db, ix, queries, members_by_part[part], part, np,
                                      heaps, out.stats);
      }
      out.results = heaps.take_all_sorted();
      break;
    }
  }

  out.seconds = detail::seconds_since(t0);
  return out;
}

// The same plan executed one query at a time: no shared bitmaps, no shared
// posting-list scans. Produces identical ids to execute_batch; exists as the
// batching baseline for throughput comparisons.
inline BatchResult execute_sequential(const VectorDatabase& db, const EngineIndex& ix,
                                      const Workload& queries,
                                      const NprobeSpec& nprobe = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  BatchResult out;
  out.results.reserve(queries.size());
  Workload one(1);
  for (const auto& q : queries) {
    one[0] = q;
    BatchResult r = execute_batch(db, ix, one, nprobe);
    out.results.push_back(std::move(r.results[0]));
    out.stats += r.stats;
  }
  out.seconds = detail::seconds_since(t0);
  return out;
}

// ---------------------------------------------------------------------------
// Recall and probe tuning.

// Mean over queries of |result ∩ truth| / min(k, |truth|); queries whose
// truth is empty carry no signal and are excluded (all-empty means 1.0).
inline double recall_at_k(const BatchResult& result, const BatchResult& truth,
                          std::size_t k) {
  if (result.results.size() != truth.results.size())
    throw ConfigError("recall requires results and truth over the same workload");
  double sum = 0.0;
  std::size_t counted = 0;
  std::vector<std::int64_t> truth_ids;
  for (std::size_t qi = 0; qi < result.results.size(); ++qi) {
    const auto& t = truth.results[qi];
    if (t.empty()) continue;
    truth_ids.clear();
    for (const Neighbor& nb : t) truth_ids.push_back(nb.id);
    std::sort(truth_ids.begin(), truth_ids.end());
    std::size_t hits = 0;
    for (const Neighbor& nb : result.results[qi])
      if (std::binary_search(truth_ids.begin(), truth_ids.end(), nb.id)) ++hits;
    sum += double(hits) / double(std::min(k, t.size()));
    counted += 1;
  }
  return counted == 0 ? 1.0 : sum / double(counted);
}

struct TuneResult {
  NprobeSpec spec;
  std::map<std::string, double> achieved;  // recall at the chosen nprobe
  bool all_reached = true;
};

// Smallest per-constraint nprobe reaching the recall target on the sample:
// doubling to bracket, then binary search. Monotonicity holds because a
// larger nprobe scans a superset of candidates. Constraints that miss the
// target even probing every list are reported at the maximum with their
// achieved recall and flip all_reached.
inline TuneResult tune_nprobe(const VectorDatabase& db, const EngineIndex& ix,
                              const Workload& sample, std::size_t k,
                              double target_recall = 0.8) {
  TuneResult out;
  const BatchResult truth = exact_truth(db, sample, k);

  std::size_t cap = 1;
  for (const IvfIndex& ivf : ix.ivfs) cap = std::max<std::size_t>(cap, ivf.nlist());

  for (const auto& [key, members] : detail::group_by_constraint(sample)) {
    Workload sub;
    BatchResult sub_truth;
    for (const std::uint32_t qi : members) {
      sub.push_back(sample[qi]);
      sub_truth.results.push_back(truth.results[qi]);
    }

    std::map<std::size_t, double> memo;
    const auto eval = [&](std::size_t np) {
      auto it = memo.find(np);
      if (it != memo.end()) return it->second;
      const BatchResult r = execute_batch(db, ix, sub, NprobeSpec::fixed(np));
      const double rec = recall_at_k(r, sub_truth, k);
      memo.emplace(np, rec);
      return rec;
    };

    std::size_t last_fail = 0, pass = 0;
    for (std::size_t np = 1;; np = std::min(np * 2, cap)) {
      if (eval(np) >= target_recall) {
        pass = np;
        break;
      }
      last_fail = np;
      if (np >= cap) break;
    }
    if (pass == 0) {
      out.spec.per_constraint[key] = cap;
      out.achieved[key] = eval(cap);
      out.all_reached = false;
      continue;
    }
    std::size_t lo = last_fail;
    std::size_t hi = pass;
    while (hi - lo > 1) {
      const std::size_t mid = lo + (hi - lo) / 2;
      if (eval(mid) >= target_recall)
        hi = mid;
      else
        lo = mid;
    }
    out.spec.per_constraint[key] = hi;
    out.achieved[key] = eval(hi);
  }
  return out;
}

}  // namespace hqi
