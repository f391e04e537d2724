#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "hqi/engine.hpp"
#include "hqi/workloadgen.hpp"
#include "util.hpp"

using namespace hqi;

namespace {

struct Fixture {
  VectorDatabase db;
  Workload queries;
};

Fixture make_fixture(std::size_t n, std::uint32_t d, std::size_t n_q,
                     std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n = n;
  spec.d = d;
  spec.n_q = n_q;
  spec.seed = seed;
  return {gen_dataset(spec), gen_synthetic_workload(spec)};
}

std::map<std::int64_t, const Tuple*> tuple_by_id(const VectorDatabase& db) {
  std::map<std::int64_t, const Tuple*> out;
  for (const Tuple& t : db.tuples) out[t.id] = &t;
  return out;
}

std::vector<std::vector<std::int64_t>> all_ids(const BatchResult& r) {
  std::vector<std::vector<std::int64_t>> out;
  out.reserve(r.results.size());
  for (const auto& v : r.results) out.push_back(test::ids_of(v));
  return out;
}

HybridQuery filtered_query(std::int64_t id, std::vector<float> vec, Predicate p) {
  HybridQuery q;
  q.id = id;
  q.vec = std::move(vec);
  q.constraint.predicates.push_back(std::move(p));
  return q;
}

}  // namespace

TEST_CASE("strategy names round-trip") {
  for (const Strategy s : {Strategy::ExhaustiveA, Strategy::PreFilterB, Strategy::RangeC,
                           Strategy::PostFilterD, Strategy::HQI}) {
    const auto back = parse_strategy(strategy_name(s));
    REQUIRE(back.has_value());
    CHECK(*back == s);
  }
  CHECK_FALSE(parse_strategy("nonsense").has_value());
  CHECK_FALSE(parse_strategy("").has_value());
}

TEST_CASE("exhaustive execution matches the naive oracle") {
  const Fixture fx = make_fixture(2000, 8, 5, 7);
  StrategyConfig cfg;
  cfg.strategy = Strategy::ExhaustiveA;
  cfg.k = 10;
  const EngineIndex ix = build_index(fx.db, fx.queries, cfg);
  CHECK(ix.partitions.size() == 0);
  CHECK(ix.ivfs.empty());

  const BatchResult got = execute_batch(fx.db, ix, fx.queries);
  REQUIRE(got.results.size() == fx.queries.size());
  for (std::size_t qi = 0; qi < fx.queries.size(); qi += 7) {
    const auto& q = fx.queries[qi];
    const auto want = test::naive_topk(q.vec, fx.db.tuples, 10, fx.db.metric,
                                       &q.constraint);
    CHECK(test::ids_of(got.results[qi]) == test::ids_of(want));
  }

  const BatchResult truth = exact_truth(fx.db, fx.queries, 10);
  CHECK(all_ids(got) == all_ids(truth));
}

TEST_CASE("every strategy returns sound, ordered, deduplicated results") {
  const Fixture fx = make_fixture(3000, 8, 5, 11);
  const auto by_id = tuple_by_id(fx.db);
  const BatchResult truth = exact_truth(fx.db, fx.queries, 10);

  const auto check_strategy = [&](Strategy s) {
    StrategyConfig cfg;
    cfg.strategy = s;
    cfg.k = 10;
    cfg.partition_count = 8;
    const EngineIndex ix = build_index(fx.db, fx.queries, cfg);
    CHECK(ix.build_seconds >= 0.0);
    const BatchResult r = execute_batch(fx.db, ix, fx.queries);
    REQUIRE(r.results.size() == fx.queries.size());

    for (std::size_t qi = 0; qi < fx.queries.size(); ++qi) {
      const auto& res = r.results[qi];
      CHECK(res.size() <= 10);
      std::set<std::int64_t> seen;
      for (std::size_t i = 0; i < res.size(); ++i) {
        CHECK(seen.insert(res[i].id).second);
        if (i > 0) CHECK(better(res[i - 1], res[i]));
        CHECK(eval_constraint(fx.queries[qi].constraint, by_id.at(res[i].id)->attrs));
      }
    }

    // Default nprobe probes every list, so the filter-respecting strategies
    // are exact; the post-filtering baseline may legitimately under-fill.
    if (s != Strategy::PostFilterD) {
      CHECK(all_ids(r) == all_ids(truth));
    } else {
      bool underfilled = false;
      for (std::size_t qi = 0; qi < fx.queries.size(); ++qi) {
        REQUIRE(r.results[qi].size() <= truth.results[qi].size());
        underfilled = underfilled || r.results[qi].size() < truth.results[qi].size();
      }
      CHECK(underfilled);  // the most selective filters starve an overfetch of 10x
    }
  };

  SECTION("exhaustive") { check_strategy(Strategy::ExhaustiveA); }
  SECTION("global prefilter") { check_strategy(Strategy::PreFilterB); }
  SECTION("equal-width ranges") { check_strategy(Strategy::RangeC); }
  SECTION("postfilter") { check_strategy(Strategy::PostFilterD); }
  SECTION("workload-aware partitions") { check_strategy(Strategy::HQI); }
}

TEST_CASE("a single-partition layout degenerates to the global prefilter") {
  const Fixture fx = make_fixture(4000, 8, 3, 13);
  const BatchResult truth = exact_truth(fx.db, fx.queries, 10);

  StrategyConfig hqi_cfg;
  hqi_cfg.strategy = Strategy::HQI;
  hqi_cfg.k = 10;
  hqi_cfg.min_size = 4000;
  const EngineIndex hqi_ix = build_index(fx.db, fx.queries, hqi_cfg);
  CHECK(hqi_ix.tree.root->is_leaf());
  REQUIRE(hqi_ix.partitions.size() == 1);
  CHECK(hqi_ix.partitions.partitions[0].tuple_positions.size() == 4000);
  REQUIRE(hqi_ix.ivfs.size() == 1);
  CHECK(hqi_ix.ivfs[0].scope_size() == 4000);

  StrategyConfig pre_cfg;
  pre_cfg.strategy = Strategy::PreFilterB;
  pre_cfg.k = 10;
  const EngineIndex pre_ix = build_index(fx.db, fx.queries, pre_cfg);

  CHECK(all_ids(execute_batch(fx.db, hqi_ix, fx.queries)) == all_ids(truth));
  CHECK(all_ids(execute_batch(fx.db, pre_ix, fx.queries)) == all_ids(truth));
}

TEST_CASE("batched and sequential execution return identical answers") {
  const Fixture fx = make_fixture(3000, 8, 5, 17);
  StrategyConfig cfg;
  cfg.strategy = Strategy::HQI;
  cfg.k = 10;
  cfg.num_centroids = 16;
  cfg.m = 2;
  const EngineIndex ix = build_index(fx.db, fx.queries, cfg);

  const NprobeSpec np = NprobeSpec::fixed(4);
  const BatchResult batch = execute_batch(fx.db, ix, fx.queries, np);
  const BatchResult seq = execute_sequential(fx.db, ix, fx.queries, np);
  REQUIRE(batch.results.size() == seq.results.size());
  for (std::size_t qi = 0; qi < batch.results.size(); ++qi)
    CHECK(batch.results[qi] == seq.results[qi]);
  CHECK(batch.stats.tuples_scanned <= seq.stats.tuples_scanned);

  SECTION("shared constraints share the posting-list scans") {
    Workload clones;
    for (std::size_t i = 0; i < 20; ++i) {
      HybridQuery q = fx.queries[42];
      q.id = static_cast<std::int64_t>(i);
      clones.push_back(std::move(q));
    }
    const BatchResult b = execute_batch(fx.db, ix, clones, np);
    const BatchResult s = execute_sequential(fx.db, ix, clones, np);
    for (std::size_t qi = 1; qi < 20; ++qi) CHECK(b.results[qi] == b.results[0]);
    CHECK(b.stats.tuples_scanned * 20 == s.stats.tuples_scanned);
    CHECK(b.stats.distances_computed == s.stats.distances_computed);
  }
}

TEST_CASE("recall computation") {
  const auto mk = [](std::vector<std::vector<std::int64_t>> ids) {
    BatchResult r;
    for (const auto& q : ids) {
      std::vector<Neighbor> v;
      for (const auto id : q) v.push_back({0.0f, id});
      r.results.push_back(std::move(v));
    }
    return r;
  };

  CHECK(recall_at_k(mk({{1, 2, 9}, {4, 9}}), mk({{1, 2, 3}, {4, 5}}), 3) ==
        Catch::Approx((2.0 / 3.0 + 1.0 / 2.0) / 2.0));
  CHECK(recall_at_k(mk({{1, 2, 3}}), mk({{1, 2, 3}}), 3) == 1.0);
  CHECK(recall_at_k(mk({{}}), mk({{1}}), 3) == 0.0);
  // Queries with empty truth carry no signal.
  CHECK(recall_at_k(mk({{}, {1}}), mk({{}, {1}}), 3) == 1.0);
  CHECK(recall_at_k(mk({{}}), mk({{}}), 3) == 1.0);
  // Truth shorter than k normalizes by its own size.
  CHECK(recall_at_k(mk({{1, 7, 8}}), mk({{1, 2}}), 3) == 0.5);
  CHECK_THROWS_AS(recall_at_k(mk({{1}}), mk({{1}, {2}}), 3), ConfigError);
}

TEST_CASE("probe tuning finds the smallest passing nprobe per constraint") {
  const Fixture fx = make_fixture(4000, 8, 1, 19);
  StrategyConfig cfg;
  cfg.strategy = Strategy::PreFilterB;
  cfg.k = 10;
  const EngineIndex ix = build_index(fx.db, fx.queries, cfg);
  const std::size_t cap = ix.ivfs[0].nlist();

  const auto vecs = gen_query_vectors([] {
    SyntheticSpec s;
    s.n_q = 40;
    s.d = 8;
    s.seed = 23;
    return s;
  }());
  Workload sample;
  for (std::size_t i = 0; i < 40; ++i)
    sample.push_back(filtered_query(
        static_cast<std::int64_t>(i), vecs[i],
        ComparePredicate{"A", CompareOp::Lt, i < 20 ? 0.25 : 1.0}));

  const TuneResult tuned = tune_nprobe(fx.db, ix, sample, 10, 0.8);
  CHECK(tuned.all_reached);
  REQUIRE(tuned.achieved.size() == 2);

  const BatchResult truth = exact_truth(fx.db, sample, 10);
  for (const auto& [key, np] : tuned.spec.per_constraint) {
    REQUIRE(np >= 1);
    REQUIRE(np <= cap);
    Workload sub;
    BatchResult sub_truth;
    for (std::size_t qi = 0; qi < sample.size(); ++qi) {
      if (canonical_key(sample[qi].constraint) != key) continue;
      sub.push_back(sample[qi]);
      sub_truth.results.push_back(truth.results[qi]);
    }
    const auto rec = [&](std::size_t n) {
      return recall_at_k(execute_batch(fx.db, ix, sub, NprobeSpec::fixed(n)),
                         sub_truth, 10);
    };
    CHECK(rec(np) >= 0.8);
    CHECK(rec(np) == Catch::Approx(tuned.achieved.at(key)));
    if (np > 1) CHECK(rec(np - 1) < 0.8);
  }

  SECTION("per-constraint values override the default") {
    NprobeSpec spec = tuned.spec;
    spec.default_nprobe = 999;
    for (const auto& [key, np] : tuned.spec.per_constraint)
      CHECK(spec.for_key(key) == np);
    CHECK(spec.for_key("unseen") == 999);
  }
}

TEST_CASE("probe tuning reports unreachable targets honestly") {
  const Fixture fx = make_fixture(4000, 8, 1, 29);
  StrategyConfig cfg;
  cfg.strategy = Strategy::PostFilterD;
  cfg.k = 10;
  cfg.overfetch_factor = 1.0;  // fetch exactly k unfiltered candidates
  const EngineIndex ix = build_index(fx.db, fx.queries, cfg);

  const auto vecs = gen_query_vectors([] {
    SyntheticSpec s;
    s.n_q = 30;
    s.d = 8;
    s.seed = 31;
    return s;
  }());
  Workload sample;
  for (std::size_t i = 0; i < 30; ++i)
    sample.push_back(filtered_query(static_cast<std::int64_t>(i), vecs[i],
                                    ComparePredicate{"A", CompareOp::Lt,
                                                     std::ldexp(1.0, -8)}));

  const TuneResult tuned = tune_nprobe(fx.db, ix, sample, 10, 0.8);
  CHECK_FALSE(tuned.all_reached);
  const std::string key = canonical_key(sample[0].constraint);
  REQUIRE(tuned.spec.per_constraint.count(key) == 1);
  CHECK(tuned.spec.per_constraint.at(key) == ix.ivfs[0].nlist());
  CHECK(tuned.achieved.at(key) < 0.8);
}

TEST_CASE("range partitioning requires a numeric attribute everywhere") {
  const Fixture fx = make_fixture(500, 4, 2, 37);
  StrategyConfig cfg;
  cfg.strategy = Strategy::RangeC;
  cfg.k = 5;

  SECTION("string attributes are rejected") {
    cfg.partition_attr = "type";
    CHECK_THROWS_AS(build_index(fx.db, fx.queries, cfg), ConfigError);
  }
  SECTION("missing attributes are rejected") {
    cfg.partition_attr = "no_such_column";
    CHECK_THROWS_AS(build_index(fx.db, fx.queries, cfg), ConfigError);
  }
  SECTION("zero cells are rejected") {
    cfg.partition_count = 0;
    CHECK_THROWS_AS(build_index(fx.db, fx.queries, cfg), ConfigError);
  }
  SECTION("cells partition the database") {
    cfg.partition_count = 8;
    const EngineIndex ix = build_index(fx.db, fx.queries, cfg);
    REQUIRE(ix.partitions.size() == 8);
    std::size_t total = 0;
    for (const auto& p : ix.partitions.partitions) total += p.tuple_positions.size();
    CHECK(total == 500);
    CHECK(ix.range_lo < ix.range_hi);
    for (const auto& p : ix.partitions.partitions)
      for (const auto pos : p.tuple_positions) {
        const double v = as_double(*find_attr(fx.db.tuples[pos].attrs, "A"));
        CHECK(v >= ix.range_lo);
        CHECK(v <= ix.range_hi);
      }
  }
}

TEST_CASE("constraints matching nothing scan nothing") {
  const Fixture fx = make_fixture(2000, 8, 2, 41);
  Workload none;
  for (std::size_t i = 0; i < 10; ++i)
    none.push_back(filtered_query(static_cast<std::int64_t>(i),
                                  fx.queries[i].vec,
                                  ComparePredicate{"A", CompareOp::Lt, -1.0}));

  for (const Strategy s : {Strategy::PreFilterB, Strategy::HQI}) {
    StrategyConfig cfg;
    cfg.strategy = s;
    cfg.k = 10;
    const EngineIndex ix = build_index(fx.db, fx.queries, cfg);
    const BatchResult r = execute_batch(fx.db, ix, none);
    for (const auto& res : r.results) CHECK(res.empty());
    CHECK(r.stats.tuples_scanned == 0);
    CHECK(r.stats.distances_computed == 0);
  }

  StrategyConfig cfg;
  cfg.strategy = Strategy::PostFilterD;
  cfg.k = 10;
  const EngineIndex ix = build_index(fx.db, fx.queries, cfg);
  const BatchResult r = execute_batch(fx.db, ix, none);
  for (const auto& res : r.results) CHECK(res.empty());
  CHECK(r.stats.tuples_scanned > 0);  // post-filtering pays for the blind scan
}

TEST_CASE("query-side centroid augmentation keeps routing sound") {
  const Fixture fx = make_fixture(4000, 8, 5, 43);
  StrategyConfig cfg;
  cfg.strategy = Strategy::HQI;
  cfg.k = 10;
  cfg.m = 2;
  const EngineIndex ix = build_index(fx.db, fx.queries, cfg);

  CHECK(ix.config.min_size == 256);
  CHECK(ix.config.num_centroids == 63);  // round(sqrt(4000))
  REQUIRE(ix.aug.has_value());
  CHECK(ix.aug->m == 2);
  CHECK(ix.ivfs.size() == ix.partitions.size());

  // Centroid routing may prune a partition holding a true neighbor whose
  // centroid is outside the query's m nearest, so exactness is not promised;
  // results must still respect the filter and recall must stay high.
  const auto by_id = tuple_by_id(fx.db);
  const BatchResult truth = exact_truth(fx.db, fx.queries, 10);
  const BatchResult got = execute_batch(fx.db, ix, fx.queries);
  for (std::size_t qi = 0; qi < fx.queries.size(); ++qi)
    for (const Neighbor& nb : got.results[qi])
      CHECK(eval_constraint(fx.queries[qi].constraint, by_id.at(nb.id)->attrs));
  CHECK(recall_at_k(got, truth, 10) >= 0.9);
}

TEST_CASE("index construction rejects bad inputs") {
  const Fixture fx = make_fixture(100, 4, 1, 47);
  CHECK_THROWS_AS(build_index(VectorDatabase{}, fx.queries, StrategyConfig{}),
                  ConfigError);

  StrategyConfig cfg;
  const EngineIndex ix = build_index(fx.db, fx.queries, cfg);
  Workload bad;
  bad.push_back(filtered_query(0, {0.f, 0.f}, ComparePredicate{"A", CompareOp::Lt, 1.0}));
  CHECK_THROWS_AS(execute_batch(fx.db, ix, bad), ConfigError);
}
