#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hqi/core.hpp"
#include "hqi/rng.hpp"

namespace hqi {

// Synthetic data plan: vectors uniform in [0,1)^d (or a Gaussian mixture on
// hypercube corners in clustered mode), two uniform float attributes A and B,
// and per-column threshold filters with selectivity 2^-i.
struct SyntheticSpec {
  std::size_t n = 10000;
  std::uint32_t d = 32;
  Metric metric = Metric::L2;
  std::uint64_t seed = 42;
  std::size_t n_q = 100;  // query vectors
  bool mixture = false;
  std::uint32_t mixture_components = 4;
  double mixture_sigma = 0.05;
};

namespace detail {

// Seed streams so each generated artifact is independently reproducible.
enum : std::uint64_t {
  kStreamVectors = 0,
  kStreamAttrs = 1,
  kStreamQueries = 2,
  kStreamKg = 3,
};

// Component means sit on distinct corners of [0.2, 0.8]^d.
inline void corner_mean(std::uint32_t component, std::uint32_t d, float* out) {
  for (std::uint32_t j = 0; j < d; ++j)
    out[j] = ((component >> (j & 31u)) & 1u) ? 0.8f : 0.2f;
}

inline std::vector<float> gen_vectors(const SyntheticSpec& spec, std::size_t count,
                                      std::uint64_t stream) {
  std::mt19937_64 rng(mix_seed(spec.seed, stream));
  std::vector<float> flat(count * std::size_t(spec.d));
  if (!spec.mixture) {
    for (auto& x : flat) x = uniform_float(rng);
    return flat;
  }
  std::vector<float> mean(spec.d);
  for (std::size_t i = 0; i < count; ++i) {
    const auto c = static_cast<std::uint32_t>(uniform_index(rng, spec.mixture_components));
    corner_mean(c, spec.d, mean.data());
    float* v = flat.data() + i * spec.d;
    for (std::uint32_t j = 0; j < spec.d; ++j)
      v[j] = mean[j] + static_cast<float>(spec.mixture_sigma * gaussian_double(rng));
  }
  return flat;
}

}  // namespace detail

inline VectorDatabase gen_dataset(const SyntheticSpec& spec) {
  if (spec.n == 0 || spec.d == 0) throw ConfigError("dataset requires n > 0 and d > 0");
  VectorDatabase db;
  db.dim = spec.d;
  db.metric = spec.metric;
  db.schema = {{"A", ValueKind::Float}, {"B", ValueKind::Float}};

  const std::vector<float> flat = detail::gen_vectors(spec, spec.n, detail::kStreamVectors);
  std::mt19937_64 arng(mix_seed(spec.seed, detail::kStreamAttrs));
  db.tuples.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    Tuple& t = db.tuples[i];
    t.id = static_cast<std::int64_t>(i);
    t.vec.assign(flat.data() + i * spec.d, flat.data() + (i + 1) * spec.d);
    t.attrs["A"] = uniform_double(arng);
    t.attrs["B"] = uniform_double(arng);
  }
  return db;
}

inline std::vector<std::vector<float>> gen_query_vectors(const SyntheticSpec& spec) {
  if (spec.n_q == 0 || spec.d == 0) throw ConfigError("queries require n_q > 0 and d > 0");
  const std::vector<float> flat =
      detail::gen_vectors(spec, spec.n_q, detail::kStreamQueries);
  std::vector<std::vector<float>> out(spec.n_q);
  for (std::size_t i = 0; i < spec.n_q; ++i)
    out[i].assign(flat.data() + i * spec.d, flat.data() + (i + 1) * spec.d);
  return out;
}

// Ten nested thresholds per column: filter i keeps the 2^-i fraction of a
// uniform [0,1) column. i = 0 keeps everything.
inline std::vector<Predicate> gen_filters() {
  std::vector<Predicate> out;
  out.reserve(20);
  for (const char* col : {"A", "B"})
    for (int i = 0; i <= 9; ++i)
      out.push_back(ComparePredicate{col, CompareOp::Lt, std::ldexp(1.0, -i)});
  return out;
}

// Known selectivity of the generated filters, by position in gen_filters().
inline double filter_selectivity(std::size_t filter_index) {
  return std::ldexp(1.0, -static_cast<int>(filter_index % 10));
}

// Every (filter, query vector) pair exactly once, filter-major, so queries
// [f*n_q, (f+1)*n_q) share filter f.
inline Workload gen_workload(std::span<const Predicate> filters,
                             const std::vector<std::vector<float>>& query_vectors) {
  Workload w;
  w.reserve(filters.size() * query_vectors.size());
  std::int64_t id = 0;
  for (const Predicate& f : filters)
    for (const auto& v : query_vectors)
      w.push_back(HybridQuery{id++, v, AttributeConstraint{{f}}});
  return w;
}

inline Workload gen_synthetic_workload(const SyntheticSpec& spec) {
  const auto filters = gen_filters();
  return gen_workload(filters, gen_query_vectors(spec));
}

// ---------------------------------------------------------------------------
// Knowledge-graph-style stand-in: entity types with skewed frequencies,
// vectors clustered by type, and a small template set with skewed weights
// whose top four cover 80% of queries.

struct KgTemplate {
  AttributeConstraint constraint;
  double weight = 1.0;
};

inline std::vector<KgTemplate> default_kg_templates() {
  const auto in_type = [](std::vector<std::string> types) {
    InPredicate p{"type", {}};
    for (auto& t : types) p.literals.push_back(std::move(t));
    return p;
  };
  std::vector<KgTemplate> out;
  out.push_back({AttributeConstraint{{in_type({"type0"})}}, 0.35});
  out.push_back({AttributeConstraint{{in_type({"type1", "type2"})}}, 0.20});
  out.push_back({AttributeConstraint{{NotNullPredicate{"alias"}}}, 0.15});
  out.push_back({AttributeConstraint{{in_type({"type3"})}}, 0.10});
  out.push_back({AttributeConstraint{{in_type({"type4"})}}, 0.08});
  out.push_back({AttributeConstraint{{ComparePredicate{"type", CompareOp::Eq,
                                                       std::string("type5")}}}, 0.05});
  // Matches nothing: no tuple carries this type.
  out.push_back({AttributeConstraint{{in_type({"type_missing"})}}, 0.04});
  out.push_back({AttributeConstraint{{NotNullPredicate{"name"}}}, 0.03});
  return out;
}

struct KgData {
  VectorDatabase db;
  Workload queries;
};

inline KgData gen_kg_style_workload(std::size_t n, std::uint32_t d, std::size_t n_q,
                                    std::span<const KgTemplate> templates,
                                    std::uint64_t seed) {
  if (n == 0 || d == 0 || n_q == 0)
    throw ConfigError("kg-style generation requires n, d, n_q > 0");
  if (templates.empty()) throw ConfigError("kg-style generation requires templates");

  constexpr std::uint32_t kTypes = 8;
  // Harmonic skew over types: type t with probability ∝ 1/(t+1).
  std::vector<double> type_cdf(kTypes);
  double total = 0;
  for (std::uint32_t t = 0; t < kTypes; ++t) total += 1.0 / double(t + 1);
  double acc = 0;
  for (std::uint32_t t = 0; t < kTypes; ++t) {
    acc += 1.0 / double(t + 1) / total;
    type_cdf[t] = acc;
  }
  const auto draw_type = [&](std::mt19937_64& rng) {
    const double u = uniform_double(rng);
    for (std::uint32_t t = 0; t < kTypes; ++t)
      if (u < type_cdf[t]) return t;
    return kTypes - 1;
  };

  std::mt19937_64 rng(mix_seed(seed, detail::kStreamKg));
  KgData out;
  out.db.dim = d;
  out.db.metric = Metric::L2;
  out.db.schema = {{"type", ValueKind::String},
                   {"name", ValueKind::String},
                   {"alias", ValueKind::String}};
  out.db.tuples.resize(n);
  std::vector<float> mean(d);
  constexpr double kSigma = 0.05;
  for (std::size_t i = 0; i < n; ++i) {
    Tuple& t = out.db.tuples[i];
    t.id = static_cast<std::int64_t>(i);
    const std::uint32_t type = draw_type(rng);
    detail::corner_mean(type, d, mean.data());
    t.vec.resize(d);
    for (std::uint32_t j = 0; j < d; ++j)
      t.vec[j] = mean[j] + static_cast<float>(kSigma * gaussian_double(rng));
    t.attrs["type"] = "type" + std::to_string(type);
    t.attrs["name"] = "e" + std::to_string(i);
    if (uniform_double(rng) < 0.5) t.attrs["alias"] = "a" + std::to_string(i);
  }

  double tweight = 0;
  for (const auto& t : templates) tweight += t.weight;
  if (tweight <= 0) throw ConfigError("template weights must sum to a positive value");

  out.queries.reserve(n_q);
  for (std::size_t qi = 0; qi < n_q; ++qi) {
    const double u = uniform_double(rng) * tweight;
    double wacc = 0;
    std::size_t pick = templates.size() - 1;
    for (std::size_t ti = 0; ti < templates.size(); ++ti) {
      wacc += templates[ti].weight;
      if (u < wacc) {
        pick = ti;
        break;
      }
    }
    HybridQuery q;
    q.id = static_cast<std::int64_t>(qi);
    q.constraint = templates[pick].constraint;
    const std::uint32_t type = draw_type(rng);
    detail::corner_mean(type, d, mean.data());
    q.vec.resize(d);
    for (std::uint32_t j = 0; j < d; ++j)
      q.vec[j] = mean[j] + static_cast<float>(kSigma * gaussian_double(rng));
    out.queries.push_back(std::move(q));
  }
  return out;
}

}  // namespace hqi
