#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "hqi/core.hpp"
#include "hqi/distance.hpp"
#include "hqi/heap.hpp"

namespace hqi::test {

// Independent brute-force top-k: full distance sort, ties by smaller id.
// Deliberately does not share the library's heap or blocked kernels.
inline std::vector<Neighbor> naive_topk(const std::vector<float>& q,
                                        std::span<const Tuple> tuples, std::size_t k,
                                        Metric metric,
                                        const AttributeConstraint* filter = nullptr) {
  std::vector<Neighbor> all;
  for (const auto& t : tuples) {
    if (filter && !eval_constraint(*filter, t.attrs)) continue;
    double s = 0.0;
    if (metric == Metric::L2) {
      for (std::size_t j = 0; j < q.size(); ++j) {
        const double d = static_cast<double>(q[j]) - static_cast<double>(t.vec[j]);
        s += d * d;
      }
    } else {
      for (std::size_t j = 0; j < q.size(); ++j)
        s -= static_cast<double>(q[j]) * static_cast<double>(t.vec[j]);
    }
    all.push_back({static_cast<float>(s), t.id});
  }
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.id < b.id;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

inline std::vector<std::int64_t> ids_of(const std::vector<Neighbor>& r) {
  std::vector<std::int64_t> out(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = r[i].id;
  return out;
}

inline bool same_id_set(const std::vector<Neighbor>& a, const std::vector<Neighbor>& b) {
  auto ia = ids_of(a), ib = ids_of(b);
  std::sort(ia.begin(), ia.end());
  std::sort(ib.begin(), ib.end());
  return ia == ib;
}

// Temporary directory scoped to one test; removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag = "t") {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() /
           ("hqi_test_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace hqi::test
