#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "hqi/ivf.hpp"
#include "hqi/kmeans.hpp"
#include "hqi/rng.hpp"
#include "util.hpp"

using namespace hqi;

namespace {

std::vector<float> random_flat(std::size_t n, std::uint32_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<float> out(n * std::size_t(d));
  for (auto& x : out) x = uniform_float(rng);
  return out;
}

std::vector<Tuple> random_tuples(std::size_t n, std::uint32_t d, std::uint64_t seed) {
  const auto flat = random_flat(n, d, seed);
  std::vector<Tuple> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].id = static_cast<std::int64_t>(i);
    out[i].vec.assign(flat.begin() + i * d, flat.begin() + (i + 1) * d);
  }
  return out;
}

double recall_against(const std::vector<Neighbor>& got,
                      const std::vector<Neighbor>& truth) {
  if (truth.empty()) return 1.0;
  std::set<std::int64_t> t;
  for (const auto& nb : truth) t.insert(nb.id);
  std::size_t hit = 0;
  for (const auto& nb : got) hit += t.count(nb.id);
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

}  // namespace

TEST_CASE("kmeans basics") {
  SECTION("duplicate points with k=1 give their common value") {
    const std::vector<float> v{0.25f, -1.5f, 3.0f, 0.25f, -1.5f, 3.0f};
    const CentroidSet c = kmeans(v, 2, 3, 1, 42);
    REQUIRE(c.k == 1);
    CHECK(c.data == std::vector<float>{0.25f, -1.5f, 3.0f});
  }

  SECTION("four square corners with k=4 recover the corners") {
    const std::vector<float> v{0, 0, 0, 1, 1, 0, 1, 1};
    const CentroidSet c = kmeans(v, 4, 2, 4, 123);
    std::vector<std::pair<float, float>> got;
    for (std::uint32_t j = 0; j < 4; ++j) got.emplace_back(c.row(j)[0], c.row(j)[1]);
    std::sort(got.begin(), got.end());
    const std::vector<std::pair<float, float>> want{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    CHECK(got == want);
  }

  SECTION("well separated gaussians are recovered within 0.1") {
    const std::uint32_t d = 8;
    std::vector<std::vector<float>> means(4, std::vector<float>(d));
    for (std::uint32_t comp = 0; comp < 4; ++comp)
      for (std::uint32_t j = 0; j < d; ++j)
        means[comp][j] = ((comp >> (j % 2)) & 1) ? 1.0f : 0.0f;
    std::mt19937_64 rng(9);
    std::vector<float> pts;
    for (std::size_t i = 0; i < 1000; ++i) {
      const auto& mu = means[i % 4];
      for (std::uint32_t j = 0; j < d; ++j)
        pts.push_back(mu[j] + 0.05f * static_cast<float>(gaussian_double(rng)));
    }
    const CentroidSet c = kmeans(pts, 1000, d, 4, 77);
    for (const auto& mu : means) {
      double best = 1e30;
      for (std::uint32_t j = 0; j < 4; ++j) {
        double s = 0;
        for (std::uint32_t t = 0; t < d; ++t) {
          const double diff = c.row(j)[t] - mu[t];
          s += diff * diff;
        }
        best = std::min(best, std::sqrt(s));
      }
      CHECK(best < 0.1);
    }
  }

  SECTION("determinism and misconfiguration") {
    const auto v = random_flat(200, 4, 5);
    const CentroidSet a = kmeans(v, 200, 4, 13, 1000);
    const CentroidSet b = kmeans(v, 200, 4, 13, 1000);
    CHECK(a.data == b.data);
    CHECK_THROWS_AS(kmeans(v, 200, 4, 201, 1000), ConfigError);
    CHECK_THROWS_AS(kmeans(v, 200, 4, 0, 1000), ConfigError);
  }
}

TEST_CASE("assign_nearest matches brute force") {
  const std::uint32_t d = 6;
  const auto cdata = random_flat(16, d, 21);
  const CentroidSet c{16, d, cdata};

  SECTION("a vector equal to a centroid maps to it") {
    std::vector<float> v(cdata.begin() + 3 * d, cdata.begin() + 4 * d);
    const auto got = assign_nearest(v, 1, c, 1, Metric::L2);
    CHECK(got == std::vector<std::uint32_t>{3});
  }

  SECTION("m == k returns a permutation of all ids") {
    const auto v = random_flat(1, d, 22);
    auto got = assign_nearest(v, 1, c, 16, Metric::L2);
    std::sort(got.begin(), got.end());
    for (std::uint32_t j = 0; j < 16; ++j) CHECK(got[j] == j);
  }

  SECTION("m-nearest equals an exhaustive distance sort") {
    const auto v = random_flat(40, d, 23);
    const auto got = assign_nearest(v, 40, c, 4, Metric::L2);
    for (std::size_t i = 0; i < 40; ++i) {
      std::vector<std::pair<double, std::uint32_t>> ds;
      for (std::uint32_t j = 0; j < 16; ++j) {
        double s = 0;
        for (std::uint32_t t = 0; t < d; ++t) {
          const double diff = v[i * d + t] - cdata[j * d + t];
          s += diff * diff;
        }
        ds.emplace_back(s, j);
      }
      std::sort(ds.begin(), ds.end());
      for (std::uint32_t r = 0; r < 4; ++r) CHECK(got[i * 4 + r] == ds[r].second);
    }
  }

  SECTION("m out of range is rejected") {
    const auto v = random_flat(1, d, 24);
    CHECK_THROWS_AS(assign_nearest(v, 1, c, 0, Metric::L2), ConfigError);
    CHECK_THROWS_AS(assign_nearest(v, 1, c, 17, Metric::L2), ConfigError);
  }
}

TEST_CASE("build_ivf posting lists partition the scope") {
  SECTION("nlist defaults to round(sqrt(n))") {
    const auto tuples = random_tuples(100, 4, 31);
    const IvfIndex ix = build_ivf(tuples, Metric::L2, 4);
    CHECK(ix.nlist() == 10);
  }

  SECTION("single tuple") {
    const auto tuples = random_tuples(1, 4, 32);
    const IvfIndex ix = build_ivf(tuples, Metric::L2, 4);
    CHECK(ix.nlist() == 1);
    REQUIRE(ix.list_size(0) == 1);
    CHECK(ix.ids[0] == 0);
  }

  SECTION("10K tuples: disjoint, complete, vectors in the nearest list") {
    const auto tuples = random_tuples(10000, 8, 33);
    const IvfIndex ix = build_ivf(tuples, Metric::L2, 8);
    CHECK(ix.nlist() == 100);

    std::vector<std::uint32_t> seen(10000, 0);
    std::size_t total = 0;
    for (std::uint32_t l = 0; l < ix.nlist(); ++l) {
      total += ix.list_size(l);
      for (std::size_t e = 0; e < ix.list_size(l); ++e) {
        const std::uint32_t pos = ix.list_positions[l][e];
        seen[pos]++;
        double best = 1e30;
        std::uint32_t arg = 0;
        for (std::uint32_t j = 0; j < ix.nlist(); ++j) {
          double s = 0;
          for (std::uint32_t t = 0; t < 8; ++t) {
            const double diff = tuples[pos].vec[t] - ix.centroids.row(j)[t];
            s += diff * diff;
          }
          if (s < best) {
            best = s;
            arg = j;
          }
        }
        if (e < 5) CHECK(arg == l);  // spot-check the nearest-centroid rule
      }
    }
    CHECK(total == 10000);
    CHECK(std::all_of(seen.begin(), seen.end(), [](std::uint32_t c) { return c == 1; }));
  }
}

TEST_CASE("exact_knn is the ground truth") {
  const auto tuples = random_tuples(1000, 8, 41);
  const auto qs = random_flat(10, 8, 42);

  SECTION("self query ranks first with score zero") {
    auto r = exact_knn(tuples[17].vec.data(), tuples, 3, Metric::L2);
    REQUIRE_FALSE(r.empty());
    CHECK(r[0].id == 17);
    CHECK(r[0].score == 0.0f);
  }

  SECTION("k beyond scope returns everything sorted") {
    std::vector<Tuple> few(tuples.begin(), tuples.begin() + 5);
    auto r = exact_knn(qs.data(), few, 50, Metric::L2);
    CHECK(r.size() == 5);
    for (std::size_t i = 1; i < r.size(); ++i)
      CHECK(!better(r[i], r[i - 1]));
  }

  SECTION("agrees with an independent full sort, both metrics") {
    for (const Metric metric : {Metric::L2, Metric::InnerProduct}) {
      for (std::size_t qi = 0; qi < 10; ++qi) {
        std::vector<float> q(qs.begin() + qi * 8, qs.begin() + (qi + 1) * 8);
        const auto got = exact_knn(q.data(), tuples, 10, metric);
        const auto want = test::naive_topk(q, tuples, 10, metric);
        CHECK(test::ids_of(got) == test::ids_of(want));
      }
    }
  }

  SECTION("equal scores break toward the smaller id") {
    std::vector<Tuple> dup(5);
    const std::vector<std::int64_t> ids{7, 3, 11, 1, 9};
    for (std::size_t i = 0; i < 5; ++i) {
      dup[i].id = ids[i];
      dup[i].vec = {1.0f, 2.0f};
    }
    const std::vector<float> q{1.0f, 2.0f};
    const auto r = exact_knn(q.data(), dup, 3, Metric::L2);
    CHECK(test::ids_of(r) == std::vector<std::int64_t>{1, 3, 7});
  }
}

TEST_CASE("filtered search agrees with the exact oracle") {
  const auto tuples = random_tuples(1000, 8, 51);
  const IvfIndex ix = build_ivf(tuples, Metric::L2, 8);
  const auto qs = random_flat(50, 8, 52);

  SECTION("probing every list without a filter is exact") {
    for (std::size_t qi = 0; qi < 50; ++qi) {
      const float* q = qs.data() + qi * 8;
      const auto got = search(ix, q, 10, ix.nlist());
      const auto want = exact_knn(q, tuples, 10, Metric::L2);
      CHECK(test::ids_of(got) == test::ids_of(want));
    }
  }

  SECTION("all-zero filter short-circuits") {
    SearchStats stats;
    const Bitmap none(1000);
    const auto got = search(ix, qs.data(), 10, ix.nlist(), &none, &stats);
    CHECK(got.empty());
    CHECK(stats.tuples_scanned == 0);
    CHECK(stats.distances_computed == 0);
  }

  SECTION("results always satisfy the filter") {
    std::mt19937_64 rng(53);
    Bitmap half(1000);
    for (std::size_t i = 0; i < 1000; ++i)
      if (uniform_double(rng) < 0.5) half.set(i);
    for (std::size_t qi = 0; qi < 20; ++qi) {
      const auto got = search(ix, qs.data() + qi * 8, 10, 4, &half);
      for (const auto& nb : got) CHECK(half.test(static_cast<std::size_t>(nb.id)));
    }
  }

  SECTION("filtered exhaustive probe equals filtered exact scan") {
    Bitmap some(1000);
    for (std::size_t i = 0; i < 1000; i += 3) some.set(i);
    for (std::size_t qi = 0; qi < 20; ++qi) {
      const float* q = qs.data() + qi * 8;
      const auto got = search(ix, q, 10, ix.nlist(), &some);
      const auto want = exact_knn(q, VectorDatabase{8, Metric::L2, tuples, {}}, some, 10);
      CHECK(test::ids_of(got) == test::ids_of(want));
    }
  }
}

TEST_CASE("search stats count posting-list entries examined") {
  const auto tuples = random_tuples(2000, 8, 61);
  const IvfIndex ix = build_ivf(tuples, Metric::L2, 8);
  const auto q = random_flat(1, 8, 62);

  std::uint64_t probed_len = 0;
  {
    SearchStats stats;
    search(ix, q.data(), 10, 7, nullptr, &stats);
    CHECK(stats.posting_lists_scanned == 7);
    probed_len = stats.tuples_scanned;
    CHECK(stats.distances_computed == probed_len);
    CHECK(probed_len > 0);
  }

  SECTION("an all-ones filter scans exactly the probed list lengths") {
    SearchStats stats;
    const Bitmap ones(2000, true);
    search(ix, q.data(), 10, 7, &ones, &stats);
    CHECK(stats.tuples_scanned == probed_len);
    CHECK(stats.distances_computed == probed_len);
  }

  SECTION("a sparse filter keeps the scan count but cuts distance work") {
    Bitmap sparse(2000);
    for (std::size_t i = 0; i < 2000; i += 100) sparse.set(i);
    SearchStats stats;
    search(ix, q.data(), 10, 7, &sparse, &stats);
    CHECK(stats.tuples_scanned == probed_len);
    CHECK(stats.distances_computed < probed_len);
  }
}

TEST_CASE("recall grows with nprobe") {
  const auto tuples = random_tuples(10000, 8, 71);
  const IvfIndex ix = build_ivf(tuples, Metric::L2, 8);
  REQUIRE(ix.nlist() == 100);
  const auto qs = random_flat(30, 8, 72);

  double prev = -1.0;
  for (std::size_t nprobe : {1u, 2u, 4u, 8u, 10u, 16u, 32u, 64u, 100u}) {
    double sum = 0;
    for (std::size_t qi = 0; qi < 30; ++qi) {
      const float* q = qs.data() + qi * 8;
      sum += recall_against(search(ix, q, 10, nprobe),
                            exact_knn(q, tuples, 10, Metric::L2));
    }
    const double recall = sum / 30.0;
    CHECK(recall >= prev - 1e-12);
    prev = recall;
    if (nprobe == 10) CHECK(recall >= 0.5);
    if (nprobe == 100) CHECK(recall == 1.0);
  }
  CHECK(prev == 1.0);
}

TEST_CASE("batch search matches sequential search exactly") {
  const auto tuples = random_tuples(3000, 8, 81);
  std::vector<Tuple> attributed = tuples;
  std::mt19937_64 rng(82);
  for (auto& t : attributed) t.attrs["a"] = uniform_double(rng);

  const IvfIndex ix = build_ivf(attributed, Metric::L2, 8);
  const std::vector<AttributeConstraint> filters{
      AttributeConstraint{},
      AttributeConstraint{{ComparePredicate{"a", CompareOp::Lt, 0.5}}},
      AttributeConstraint{{ComparePredicate{"a", CompareOp::Lt, 0.1}}},
      AttributeConstraint{{ComparePredicate{"a", CompareOp::Ge, 0.9}}},
      AttributeConstraint{{ComparePredicate{"a", CompareOp::Lt, 0.01}}}};

  Workload batch;
  const auto qs = random_flat(1000, 8, 83);
  for (std::size_t i = 0; i < 1000; ++i) {
    HybridQuery q;
    q.id = static_cast<std::int64_t>(i);
    q.vec.assign(qs.begin() + i * 8, qs.begin() + (i + 1) * 8);
    q.constraint = filters[i % filters.size()];
    batch.push_back(std::move(q));
  }

  ScopeFilterCache cache(attributed);
  const std::size_t nprobe = 6;
  const auto got = batch_search(ix, batch, 10, nprobe, cache.provider());
  REQUIRE(got.results.size() == batch.size());

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Bitmap* filter = batch[i].constraint.predicates.empty()
                               ? nullptr
                               : cache.get(batch[i].constraint,
                                           canonical_key(batch[i].constraint));
    const auto want = search(ix, batch[i].vec.data(), 10, nprobe, filter);
    CHECK(test::ids_of(got.results[i]) == test::ids_of(want));
    REQUIRE(got.results[i].size() == want.size());
    for (std::size_t r = 0; r < want.size(); ++r) {
      const double rel = std::abs(got.results[i][r].score - want[r].score) /
                         std::max(1e-30f, std::abs(want[r].score));
      CHECK(rel <= 1e-4);
    }
  }

  SECTION("a batch of one query degenerates to search") {
    Workload one{batch[0]};
    const auto single = batch_search(ix, one, 10, nprobe, cache.provider());
    CHECK(single.results[0] == search(ix, batch[0].vec.data(), 10, nprobe, nullptr));
  }

  SECTION("identical queries share the scan") {
    Workload copies(100, batch[1]);
    SearchStats one_stats;
    search(ix, batch[1].vec.data(), 10, nprobe,
           cache.get(batch[1].constraint, canonical_key(batch[1].constraint)),
           &one_stats);
    const auto many = batch_search(ix, copies, 10, nprobe, cache.provider());
    CHECK(many.stats.posting_lists_scanned == one_stats.posting_lists_scanned);
    CHECK(many.stats.tuples_scanned == one_stats.tuples_scanned);
    for (const auto& r : many.results) CHECK(test::ids_of(r) == test::ids_of(many.results[0]));
  }
}
