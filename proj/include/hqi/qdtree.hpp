#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hqi/bitmap.hpp"
#include "hqi/core.hpp"
#include "hqi/kmeans.hpp"

namespace hqi {

// ---------------------------------------------------------------------------
// Cut predicates and semantic descriptions.

enum class TriState : std::uint8_t { AllFalse = 0, AllTrue = 1, Mixed = 2 };

// The workload's cut predicates in canonical key order, with key lookup.
struct CutPredicateSet {
  std::vector<Predicate> predicates;
  std::vector<std::string> keys;
  std::map<std::string, std::uint32_t> index_of;

  std::size_t size() const { return predicates.size(); }

  std::optional<std::uint32_t> find(const std::string& key) const {
    auto it = index_of.find(key);
    if (it == index_of.end()) return std::nullopt;
    return it->second;
  }
};

inline CutPredicateSet make_cut_predicate_set(const Workload& queries) {
  CutPredicateSet s;
  s.predicates = extract_cut_predicates(queries);
  s.keys.reserve(s.predicates.size());
  for (std::uint32_t i = 0; i < s.predicates.size(); ++i) {
    s.keys.push_back(canonical_key(s.predicates[i]));
    s.index_of.emplace(s.keys.back(), i);
  }
  return s;
}

// Per-cut-predicate tri-state over a partition's tuples. An empty partition
// is Mixed everywhere (nothing can be asserted, so nothing may be pruned).
struct SemanticDescription {
  std::vector<TriState> states;

  bool operator==(const SemanticDescription&) const = default;
};

inline TriState tri_state(std::uint64_t true_count, std::uint64_t total) {
  if (total == 0) return TriState::Mixed;
  if (true_count == 0) return TriState::AllFalse;
  if (true_count == total) return TriState::AllTrue;
  return TriState::Mixed;
}

// ---------------------------------------------------------------------------
// Query routing form: the cut predicates a query's conjunction requires.
// `required` holds cut indices that must not be AllFalse. Each group in
// `alternative_groups` comes from one CentroidIn predicate and fails only
// when every member is AllFalse. CentroidIn predicates mentioning a centroid
// with no cut predicate are dropped (their all-false case is unprovable), as
// are non-cut predicates — both conservative: routing may widen, never prune
// a partition that could hold a match.
struct RoutingQuery {
  std::vector<std::uint32_t> required;
  std::vector<std::vector<std::uint32_t>> alternative_groups;
};

inline RoutingQuery compile_routing_query(const CutPredicateSet& cuts,
                                          const HybridQuery& q,
                                          std::span<const std::uint32_t> query_centroids = {}) {
  RoutingQuery rq;
  auto add_centroid_group = [&](std::span<const std::uint32_t> ids) {
    if (ids.empty()) return;
    std::vector<std::uint32_t> group;
    group.reserve(ids.size());
    for (const std::uint32_t c : ids) {
      const auto idx = cuts.find(canonical_key(Predicate{CentroidInPredicate{{c}}}));
      if (!idx) return;  // unknown centroid: the group can never prove AllFalse
      group.push_back(*idx);
    }
    rq.alternative_groups.push_back(std::move(group));
  };

  for (const auto& p : q.constraint.predicates) {
    if (const auto* ci = std::get_if<CentroidInPredicate>(&p)) {
      add_centroid_group(ci->centroids);
    } else if (const auto idx = cuts.find(canonical_key(p))) {
      rq.required.push_back(*idx);
    }
  }
  add_centroid_group(query_centroids);
  std::sort(rq.required.begin(), rq.required.end());
  rq.required.erase(std::unique(rq.required.begin(), rq.required.end()),
                    rq.required.end());
  return rq;
}

namespace detail {

inline bool subsumes_states(std::span<const TriState> states, const RoutingQuery& rq) {
  for (const std::uint32_t idx : rq.required)
    if (states[idx] == TriState::AllFalse) return false;
  for (const auto& group : rq.alternative_groups) {
    bool all_false = true;
    for (const std::uint32_t idx : group)
      if (states[idx] != TriState::AllFalse) {
        all_false = false;
        break;
      }
    if (all_false) return false;
  }
  return true;
}

}  // namespace detail

// True unless the description proves no tuple can satisfy the query: some
// required cut predicate is AllFalse, or every alternative of a CentroidIn
// group is. Never a false dismissal.
inline bool subsumes(const SemanticDescription& B, const RoutingQuery& rq) {
  return detail::subsumes_states(B.states, rq);
}

inline bool subsumes(const SemanticDescription& B, const HybridQuery& q,
                     const CutPredicateSet& cuts) {
  return subsumes(B, compile_routing_query(cuts, q));
}

// ---------------------------------------------------------------------------
// Partitions.

struct Partition {
  std::vector<std::uint32_t> tuple_positions;
  SemanticDescription description;
};

struct PartitionSet {
  std::vector<Partition> partitions;  // leaves in left-to-right tree order

  std::size_t size() const { return partitions.size(); }
};

// Leaves the query may need, in partition order.
inline std::vector<std::uint32_t> route_query(const PartitionSet& parts,
                                              const RoutingQuery& rq) {
  std::vector<std::uint32_t> out;
  for (std::uint32_t i = 0; i < parts.partitions.size(); ++i)
    if (subsumes(parts.partitions[i].description, rq)) out.push_back(i);
  return out;
}

inline std::vector<std::uint32_t> route_query(const PartitionSet& parts,
                                              const HybridQuery& q,
                                              const CutPredicateSet& cuts,
                                              std::span<const std::uint32_t> query_centroids = {}) {
  return route_query(parts, compile_routing_query(cuts, q, query_centroids));
}

// Workload cost of a layout: each partition contributes its size once per
// query it subsumes, i.e. the total tuples touched if every query scanned
// all of its routed partitions.
inline std::uint64_t cost(const PartitionSet& parts, const CutPredicateSet& cuts,
                          const Workload& queries) {
  std::uint64_t total = 0;
  for (const auto& q : queries) {
    const RoutingQuery rq = compile_routing_query(cuts, q);
    for (const auto& part : parts.partitions)
      if (subsumes(part.description, rq)) total += part.tuple_positions.size();
  }
  return total;
}

// ---------------------------------------------------------------------------
// Centroid augmentation: cluster the database, tag every tuple with its
// nearest centroid and every query with its m nearest, so vector locality can
// participate in tree cuts as CentroidIn predicates. m = 0 leaves queries
// untagged and no CentroidIn predicate reaches the cut set.
struct Augmentation {
  CentroidSet centroids;
  std::vector<std::uint32_t> tuple_centroid;                // aligned with db.tuples
  std::vector<std::vector<std::uint32_t>> query_centroids;  // aligned with workload; sorted
  std::uint32_t m = 0;
};

inline Augmentation augment(const VectorDatabase& db, const Workload& queries,
                            std::uint32_t num_centroids, std::uint32_t m,
                            std::uint64_t seed) {
  if (num_centroids < 1) throw ConfigError("augment requires num_centroids >= 1");
  const std::size_t n = db.size();
  std::vector<float> flat(n * std::size_t(db.dim));
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(db.tuples[i].vec.data(), db.dim, flat.data() + i * db.dim);

  Augmentation aug;
  aug.m = m;
  aug.centroids = kmeans(flat, n, db.dim, num_centroids, seed);
  aug.tuple_centroid = assign_nearest(flat, n, aug.centroids, 1, db.metric);
  if (m > 0) {
    aug.query_centroids.resize(queries.size());
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      auto nearest = assign_nearest(queries[qi].vec, 1, aug.centroids, m, db.metric);
      std::sort(nearest.begin(), nearest.end());
      aug.query_centroids[qi] = std::move(nearest);
    }
  }
  return aug;
}

// Copy of the workload with each query's conjunction extended by
// CentroidIn(q's m nearest centroids). Identity when m = 0.
inline Workload augmented_workload(const Workload& queries, const Augmentation& aug) {
  Workload out = queries;
  if (aug.m == 0) return out;
  for (std::size_t qi = 0; qi < out.size(); ++qi)
    out[qi].constraint.predicates.push_back(
        CentroidInPredicate{aug.query_centroids[qi]});
  return out;
}

// ---------------------------------------------------------------------------
// Qd-tree.

struct QdTreeNode {
  std::vector<std::uint32_t> split_predicates;  // cut indices; empty at leaves
  std::unique_ptr<QdTreeNode> left, right;      // left: disjunction satisfied
  SemanticDescription description;
  std::vector<std::uint32_t> tuple_positions;   // leaves only

  bool is_leaf() const { return left == nullptr; }
};

struct QdTreeConfig {
  std::size_t min_size = 0;  // 0 picks max(256, |V| / 1024)
};

inline std::size_t resolve_min_size(std::size_t requested, std::size_t n) {
  if (requested > 0) return requested;
  return std::max<std::size_t>(256, n / 1024);
}

struct QdTree {
  CutPredicateSet cuts;
  std::unique_ptr<QdTreeNode> root;
  std::size_t min_size = 0;
};

// One selection bitmap per cut predicate over the whole database; the
// construction works on these instead of re-evaluating predicates.
inline std::vector<Bitmap> cut_predicate_bitmaps(const CutPredicateSet& cuts,
                                                 const VectorDatabase& db,
                                                 std::span<const std::uint32_t> centroid_of = {}) {
  std::vector<Bitmap> out;
  out.reserve(cuts.size());
  for (const auto& p : cuts.predicates) {
    Bitmap b(db.size());
    for (std::size_t i = 0; i < db.size(); ++i) {
      const auto centroid = centroid_of.empty()
                                ? std::optional<std::uint32_t>{}
                                : std::optional<std::uint32_t>{centroid_of[i]};
      if (eval_predicate(p, db.tuples[i].attrs, centroid)) b.set(i);
    }
    out.push_back(std::move(b));
  }
  return out;
}

namespace detail {

constexpr std::uint32_t kNoPredicate = std::numeric_limits<std::uint32_t>::max();

// Greedy cut choice: each candidate alone tentatively splits the node's
// tuples, the node's queries are split by the resulting child descriptions
// (a query subsumed by both children counts twice), and the candidate with
// the cheapest query split wins. Equal-cost candidates prefer one whose left
// side already holds a strict majority without emptying the right side — its
// estimated cost is exact, since choosing it ends the accumulation — then
// canonical (ascending index) order. The all-candidates-cost-2|Q| case falls
// back to canonical order. Returns kNoPredicate only when `remaining` is
// empty.
struct TreeBuilder {
  const CutPredicateSet& cuts;
  const std::vector<Bitmap>& cut_bitmaps;
  std::span<const RoutingQuery> routing;                         // per workload query
  std::span<const std::vector<std::uint32_t>> query_cut_indices; // per workload query
  std::size_t min_size;
  std::size_t n;

  // Scratch reused across nodes; indexed by global cut id, only entries for
  // the current node's cut indices are filled before use.
  std::vector<TriState> left_states, right_states;
  std::vector<std::uint64_t> node_true_count;

  std::uint32_t pick_min_cost(const Bitmap& node_mask, std::size_t node_count,
                              std::span<const std::uint32_t> node_queries,
                              std::span<const std::uint32_t> node_cuts,
                              std::span<const std::uint32_t> remaining) {
    if (remaining.empty()) return kNoPredicate;
    std::uint64_t min_cost = 2 * node_queries.size();
    std::uint32_t best = kNoPredicate;
    bool best_completes = false;
    Bitmap left_mask(n);
    for (const std::uint32_t cand : remaining) {
      left_mask = cut_bitmaps[cand];
      left_mask &= node_mask;
      const std::uint64_t left_count = left_mask.count();
      const std::uint64_t right_count = node_count - left_count;
      for (const std::uint32_t j : node_cuts) {
        const std::uint64_t left_true = cut_bitmaps[j].and_count(left_mask);
        left_states[j] = tri_state(left_true, left_count);
        right_states[j] = tri_state(node_true_count[j] - left_true, right_count);
      }
      std::uint64_t cand_cost = 0;
      for (const std::uint32_t qi : node_queries) {
        cand_cost += subsumes_states(left_states, routing[qi]) ? 1 : 0;
        cand_cost += subsumes_states(right_states, routing[qi]) ? 1 : 0;
      }
      const bool completes = 2 * left_count > node_count && left_count < node_count;
      if (cand_cost < min_cost ||
          (cand_cost == min_cost && best != kNoPredicate && completes && !best_completes)) {
        min_cost = cand_cost;
        best = cand;
        best_completes = completes;
      }
    }
    return best == kNoPredicate ? remaining.front() : best;
  }

  SemanticDescription describe(const Bitmap& node_mask, std::size_t node_count) {
    SemanticDescription d;
    d.states.resize(cuts.size());
    for (std::uint32_t j = 0; j < cuts.size(); ++j)
      d.states[j] = tri_state(cut_bitmaps[j].and_count(node_mask), node_count);
    return d;
  }

  std::unique_ptr<QdTreeNode> build(const Bitmap& node_mask, std::size_t node_count,
                                    std::vector<std::uint32_t> node_queries) {
    auto node = std::make_unique<QdTreeNode>();
    node->description = describe(node_mask, node_count);
    if (node_count <= min_size) return finish_leaf(std::move(node), node_mask);

    // This node's cut set: predicates its own queries mention.
    std::vector<std::uint32_t> node_cuts;
    for (const std::uint32_t qi : node_queries)
      node_cuts.insert(node_cuts.end(), query_cut_indices[qi].begin(),
                       query_cut_indices[qi].end());
    std::sort(node_cuts.begin(), node_cuts.end());
    node_cuts.erase(std::unique(node_cuts.begin(), node_cuts.end()), node_cuts.end());
    if (node_cuts.empty()) return finish_leaf(std::move(node), node_mask);

    for (const std::uint32_t j : node_cuts)
      node_true_count[j] = cut_bitmaps[j].and_count(node_mask);

    // Accumulate predicates until the disjunction captures a strict majority.
    std::vector<std::uint32_t> remaining = node_cuts;
    std::vector<std::uint32_t> chosen;
    Bitmap left_union(n);
    std::size_t left_count = 0;
    while (2 * left_count <= node_count) {
      const std::uint32_t pick = pick_min_cost(node_mask, node_count, node_queries,
                                               node_cuts, remaining);
      if (pick == kNoPredicate) break;  // cut set exhausted: unsplittable
      remaining.erase(std::find(remaining.begin(), remaining.end(), pick));
      chosen.push_back(pick);
      left_union |= cut_bitmaps[pick];
      left_count = left_union.and_count(node_mask);
    }
    if (2 * left_count <= node_count || left_count == node_count)
      return finish_leaf(std::move(node), node_mask);  // no usable split

    Bitmap left_mask = left_union;
    left_mask &= node_mask;
    Bitmap right_mask = left_mask;
    right_mask.flip();
    right_mask &= node_mask;
    const std::size_t right_count = node_count - left_count;

    // Split queries by the actual child descriptions; a query no child
    // subsumes can match nothing below this node and is dropped.
    for (const std::uint32_t j : node_cuts) {
      const std::uint64_t left_true = cut_bitmaps[j].and_count(left_mask);
      left_states[j] = tri_state(left_true, left_count);
      right_states[j] = tri_state(node_true_count[j] - left_true, right_count);
    }
    std::vector<std::uint32_t> left_queries, right_queries;
    for (const std::uint32_t qi : node_queries) {
      if (subsumes_states(left_states, routing[qi])) left_queries.push_back(qi);
      if (subsumes_states(right_states, routing[qi])) right_queries.push_back(qi);
    }

    node->split_predicates = std::move(chosen);
    node->left = build(left_mask, left_count, std::move(left_queries));
    node->right = build(right_mask, right_count, std::move(right_queries));
    return node;
  }

  std::unique_ptr<QdTreeNode> finish_leaf(std::unique_ptr<QdTreeNode> node,
                                          const Bitmap& node_mask) {
    node->tuple_positions = node_mask.to_positions();
    return node;
  }
};

}  // namespace detail

// Builds the workload-aware tree over the database. `queries` must already
// carry any CentroidIn predicates (see augmented_workload), and `centroid_of`
// must then give every tuple's centroid.
inline QdTree construct_balanced_qdtree(const VectorDatabase& db, const Workload& queries,
                                        const QdTreeConfig& config = {},
                                        std::span<const std::uint32_t> centroid_of = {}) {
  if (db.size() == 0) throw ConfigError("cannot build a qd-tree over an empty database");
  QdTree tree;
  tree.cuts = make_cut_predicate_set(queries);
  tree.min_size = resolve_min_size(config.min_size, db.size());

  const std::vector<Bitmap> cut_bitmaps = cut_predicate_bitmaps(tree.cuts, db, centroid_of);

  std::vector<RoutingQuery> routing(queries.size());
  std::vector<std::vector<std::uint32_t>> query_cut_indices(queries.size());
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    routing[qi] = compile_routing_query(tree.cuts, queries[qi]);
    auto& idxs = query_cut_indices[qi];
    idxs = routing[qi].required;
    for (const auto& group : routing[qi].alternative_groups)
      idxs.insert(idxs.end(), group.begin(), group.end());
    std::sort(idxs.begin(), idxs.end());
    idxs.erase(std::unique(idxs.begin(), idxs.end()), idxs.end());
  }

  detail::TreeBuilder builder{tree.cuts, cut_bitmaps, routing, query_cut_indices,
                              tree.min_size, db.size(), {}, {}, {}};
  builder.left_states.resize(tree.cuts.size());
  builder.right_states.resize(tree.cuts.size());
  builder.node_true_count.resize(tree.cuts.size());

  Bitmap all(db.size(), true);
  std::vector<std::uint32_t> all_queries(queries.size());
  for (std::uint32_t qi = 0; qi < queries.size(); ++qi) all_queries[qi] = qi;
  tree.root = builder.build(all, db.size(), std::move(all_queries));
  return tree;
}

// Standalone form of the greedy cut choice for a single node, for callers
// that want to inspect one decision: candidates are evaluated in isolation
// against the node's full tuple set.
inline const Predicate& get_min_cost_predicate(const QdTree& tree, const VectorDatabase& db,
                                               const Workload& node_queries,
                                               std::span<const std::uint32_t> node_positions,
                                               std::span<const std::uint32_t> remaining,
                                               std::span<const std::uint32_t> centroid_of = {}) {
  if (remaining.empty())
    throw ConfigError("get_min_cost_predicate requires a non-empty candidate set");
  const std::vector<Bitmap> cut_bitmaps = cut_predicate_bitmaps(tree.cuts, db, centroid_of);
  std::vector<RoutingQuery> routing(node_queries.size());
  std::vector<std::uint32_t> all_cuts(tree.cuts.size());
  for (std::uint32_t j = 0; j < tree.cuts.size(); ++j) all_cuts[j] = j;
  for (std::size_t qi = 0; qi < node_queries.size(); ++qi)
    routing[qi] = compile_routing_query(tree.cuts, node_queries[qi]);
  std::vector<std::uint32_t> query_ids(node_queries.size());
  for (std::uint32_t qi = 0; qi < node_queries.size(); ++qi) query_ids[qi] = qi;

  detail::TreeBuilder builder{tree.cuts, cut_bitmaps, routing, {}, 0, db.size(),
                              {}, {}, {}};
  builder.left_states.resize(tree.cuts.size());
  builder.right_states.resize(tree.cuts.size());
  builder.node_true_count.resize(tree.cuts.size());

  Bitmap node_mask(db.size());
  for (const std::uint32_t pos : node_positions) node_mask.set(pos);
  for (const std::uint32_t j : all_cuts)
    builder.node_true_count[j] = cut_bitmaps[j].and_count(node_mask);
  const std::uint32_t pick = builder.pick_min_cost(node_mask, node_positions.size(),
                                                   query_ids, all_cuts, remaining);
  return tree.cuts.predicates[pick];
}

// ---------------------------------------------------------------------------
// Tree traversal.

// Walks the tuple to its leaf: left iff any split predicate holds.
inline const QdTreeNode* route_tuple(const QdTree& tree, const Tuple& t,
                                     std::optional<std::uint32_t> centroid = std::nullopt) {
  const QdTreeNode* node = tree.root.get();
  while (!node->is_leaf()) {
    bool goes_left = false;
    for (const std::uint32_t idx : node->split_predicates)
      if (eval_predicate(tree.cuts.predicates[idx], t.attrs, centroid)) {
        goes_left = true;
        break;
      }
    node = goes_left ? node->left.get() : node->right.get();
  }
  return node;
}

inline void collect_leaves(const QdTreeNode* node, std::vector<const QdTreeNode*>& out) {
  if (node->is_leaf()) {
    out.push_back(node);
    return;
  }
  collect_leaves(node->left.get(), out);
  collect_leaves(node->right.get(), out);
}

inline PartitionSet collect_partitions(const QdTree& tree) {
  std::vector<const QdTreeNode*> leaves;
  collect_leaves(tree.root.get(), leaves);
  PartitionSet parts;
  parts.partitions.reserve(leaves.size());
  for (const QdTreeNode* leaf : leaves)
    parts.partitions.push_back({leaf->tuple_positions, leaf->description});
  return parts;
}

}  // namespace hqi
