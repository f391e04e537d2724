#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "hqi/bitmap.hpp"
#include "hqi/distance.hpp"

namespace hqi {

// Predicate/attribute kind mismatch (e.g. comparing a string literal against
// a numeric attribute). Distinct from a null/absent attribute, which simply
// fails the predicate.
class SchemaError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid build or search parameters.
class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or corrupted input data (files, checksums, inconsistent rows).
class DataError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Kept sorted and deduplicated so equality is order-insensitive.
using StringSet = std::vector<std::string>;

inline StringSet make_string_set(std::vector<std::string> values) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  return values;
}

// Null is monostate; absence of a key in an AttrMap means the same thing.
using AttributeValue =
    std::variant<std::monostate, std::int64_t, double, std::string, StringSet>;

enum class ValueKind : std::uint8_t { Null, Int, Float, String, StringSet };

inline ValueKind kind_of(const AttributeValue& v) {
  return static_cast<ValueKind>(v.index());
}
inline bool is_null(const AttributeValue& v) {
  return std::holds_alternative<std::monostate>(v);
}
inline bool is_numeric(const AttributeValue& v) {
  return kind_of(v) == ValueKind::Int || kind_of(v) == ValueKind::Float;
}
inline double as_double(const AttributeValue& v) {
  return kind_of(v) == ValueKind::Int ? static_cast<double>(std::get<std::int64_t>(v))
                                      : std::get<double>(v);
}

using AttrMap = std::map<std::string, AttributeValue>;

struct Tuple {
  std::int64_t id = 0;
  std::vector<float> vec;
  AttrMap attrs;
};

struct VectorDatabase {
  std::uint32_t dim = 0;
  Metric metric = Metric::L2;
  std::vector<Tuple> tuples;
  std::map<std::string, ValueKind> schema;  // declared attributes and their kinds

  std::size_t size() const { return tuples.size(); }
};

enum class CompareOp : std::uint8_t { Lt, Le, Gt, Ge, Eq };

struct ComparePredicate {
  std::string attr;
  CompareOp op;
  AttributeValue literal;  // numeric or string
};

struct InPredicate {
  std::string attr;
  std::vector<AttributeValue> literals;  // one kind; sorted in canonical form
};

struct NotNullPredicate {
  std::string attr;
};

// Produced only by workload augmentation; never appears in user queries.
// Satisfied when the tuple's assigned centroid is one of `centroids`.
struct CentroidInPredicate {
  std::vector<std::uint32_t> centroids;
};

using Predicate = std::variant<ComparePredicate, InPredicate, NotNullPredicate,
                               CentroidInPredicate>;

// Conjunction of predicates; empty matches everything.
struct AttributeConstraint {
  std::vector<Predicate> predicates;
};

struct HybridQuery {
  std::int64_t id = 0;
  std::vector<float> vec;
  AttributeConstraint constraint;
};

using Workload = std::vector<HybridQuery>;

// ---------------------------------------------------------------------------
// Canonical serialization. The canonical key is the identity of a predicate:
// it defines deduplication, grouping, and the deterministic predicate order
// used by tree construction tie-breaks.

namespace detail {

inline void append_number(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

inline void append_value_key(std::string& out, const AttributeValue& v) {
  switch (kind_of(v)) {
    case ValueKind::Null:
      out += '~';
      break;
    case ValueKind::Int:
    case ValueKind::Float:
      out += '#';
      append_number(out, as_double(v));
      break;
    case ValueKind::String:
      out += '$';
      out += std::get<std::string>(v);
      break;
    case ValueKind::StringSet: {
      out += '{';
      const auto& s = std::get<StringSet>(v);
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ',';
        out += s[i];
      }
      out += '}';
      break;
    }
  }
}

inline const char* op_name(CompareOp op) {
  switch (op) {
    case CompareOp::Lt: return "lt";
    case CompareOp::Le: return "le";
    case CompareOp::Gt: return "gt";
    case CompareOp::Ge: return "ge";
    case CompareOp::Eq: return "eq";
  }
  return "?";
}

}  // namespace detail

inline std::string canonical_key(const Predicate& p) {
  std::string out;
  if (const auto* c = std::get_if<ComparePredicate>(&p)) {
    out += "cmp|";
    out += c->attr;
    out += '|';
    out += detail::op_name(c->op);
    out += '|';
    detail::append_value_key(out, c->literal);
  } else if (const auto* in = std::get_if<InPredicate>(&p)) {
    out += "in|";
    out += in->attr;
    out += '|';
    std::vector<std::string> keys;
    keys.reserve(in->literals.size());
    for (const auto& v : in->literals) {
      std::string k;
      detail::append_value_key(k, v);
      keys.push_back(std::move(k));
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    for (std::size_t i = 0; i < keys.size(); ++i) {
      if (i) out += ',';
      out += keys[i];
    }
  } else if (const auto* nn = std::get_if<NotNullPredicate>(&p)) {
    out += "notnull|";
    out += nn->attr;
  } else {
    const auto& ci = std::get<CentroidInPredicate>(p);
    out += "centroid|";
    std::vector<std::uint32_t> ids = ci.centroids;
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ',';
      detail::append_number(out, static_cast<double>(ids[i]));
    }
  }
  return out;
}

// Order-insensitive identity of a conjunction: sorted unique predicate keys.
inline std::string canonical_key(const AttributeConstraint& f) {
  std::vector<std::string> keys;
  keys.reserve(f.predicates.size());
  for (const auto& p : f.predicates) keys.push_back(canonical_key(p));
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  std::string out;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (i) out += '&';
    out += keys[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation. Predicates over a null or absent attribute are false, never an
// error; kind mismatches between a literal and a present value throw
// SchemaError. Int and float interoperate through promotion to double.

namespace detail {

inline bool compare_doubles(CompareOp op, double a, double b) {
  switch (op) {
    case CompareOp::Lt: return a < b;
    case CompareOp::Le: return a <= b;
    case CompareOp::Gt: return a > b;
    case CompareOp::Ge: return a >= b;
    case CompareOp::Eq: return a == b;
  }
  return false;
}

inline bool compare_strings(CompareOp op, const std::string& a, const std::string& b) {
  switch (op) {
    case CompareOp::Lt: return a < b;
    case CompareOp::Le: return a <= b;
    case CompareOp::Gt: return a > b;
    case CompareOp::Ge: return a >= b;
    case CompareOp::Eq: return a == b;
  }
  return false;
}

[[noreturn]] inline void kind_mismatch(const std::string& attr) {
  throw SchemaError("predicate literal kind does not match attribute '" + attr + "'");
}

}  // namespace detail

inline const AttributeValue* find_attr(const AttrMap& attrs, const std::string& name) {
  auto it = attrs.find(name);
  if (it == attrs.end() || is_null(it->second)) return nullptr;
  return &it->second;
}

inline bool eval_predicate(const Predicate& p, const AttrMap& attrs,
                           std::optional<std::uint32_t> centroid = std::nullopt) {
  if (const auto* c = std::get_if<ComparePredicate>(&p)) {
    const AttributeValue* v = find_attr(attrs, c->attr);
    if (!v) return false;
    if (is_numeric(*v) && is_numeric(c->literal))
      return detail::compare_doubles(c->op, as_double(*v), as_double(c->literal));
    if (kind_of(*v) == ValueKind::String && kind_of(c->literal) == ValueKind::String)
      return detail::compare_strings(c->op, std::get<std::string>(*v),
                                     std::get<std::string>(c->literal));
    detail::kind_mismatch(c->attr);
  }
  if (const auto* in = std::get_if<InPredicate>(&p)) {
    const AttributeValue* v = find_attr(attrs, in->attr);
    if (!v) return false;
    if (kind_of(*v) == ValueKind::StringSet) {
      // Set-valued attribute: satisfied when the intersection is non-empty.
      const auto& set = std::get<StringSet>(*v);
      for (const auto& lit : in->literals) {
        if (kind_of(lit) != ValueKind::String) detail::kind_mismatch(in->attr);
        if (std::binary_search(set.begin(), set.end(), std::get<std::string>(lit)))
          return true;
      }
      return false;
    }
    for (const auto& lit : in->literals) {
      if (is_numeric(*v) && is_numeric(lit)) {
        if (as_double(*v) == as_double(lit)) return true;
      } else if (kind_of(*v) == ValueKind::String && kind_of(lit) == ValueKind::String) {
        if (std::get<std::string>(*v) == std::get<std::string>(lit)) return true;
      } else {
        detail::kind_mismatch(in->attr);
      }
    }
    return false;
  }
  if (const auto* nn = std::get_if<NotNullPredicate>(&p))
    return find_attr(attrs, nn->attr) != nullptr;

  const auto& ci = std::get<CentroidInPredicate>(p);
  if (!centroid)
    throw ConfigError("centroid predicate evaluated without a centroid assignment");
  return std::find(ci.centroids.begin(), ci.centroids.end(), *centroid) !=
         ci.centroids.end();
}

inline bool eval_constraint(const AttributeConstraint& f, const AttrMap& attrs,
                            std::optional<std::uint32_t> centroid = std::nullopt) {
  for (const auto& p : f.predicates)
    if (!eval_predicate(p, attrs, centroid)) return false;
  return true;
}

// Selection mask over a tuple scope: bit i set iff scope[i] satisfies f.
inline Bitmap build_attribute_bitmap(const AttributeConstraint& f,
                                     std::span<const Tuple> scope,
                                     std::span<const std::uint32_t> centroid_of = {}) {
  Bitmap out(scope.size());
  for (std::size_t i = 0; i < scope.size(); ++i) {
    const auto centroid = centroid_of.empty()
                              ? std::optional<std::uint32_t>{}
                              : std::optional<std::uint32_t>{centroid_of[i]};
    if (eval_constraint(f, scope[i].attrs, centroid)) out.set(i);
  }
  return out;
}

// Same mask restricted to a position subset of a database (partition scopes).
inline Bitmap build_attribute_bitmap(const AttributeConstraint& f,
                                     const VectorDatabase& db,
                                     std::span<const std::uint32_t> positions,
                                     std::span<const std::uint32_t> centroid_of = {}) {
  Bitmap out(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const std::uint32_t pos = positions[i];
    const auto centroid = centroid_of.empty()
                              ? std::optional<std::uint32_t>{}
                              : std::optional<std::uint32_t>{centroid_of[pos]};
    if (eval_constraint(f, db.tuples[pos].attrs, centroid)) out.set(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cut predicate extraction: the deduplicated union of all predicates in the
// workload, in canonical key order. A CentroidIn predicate over several
// centroids contributes one singleton CentroidIn per centroid, since the tree
// splits on individual centroid membership.

inline std::vector<Predicate> extract_cut_predicates(const Workload& workload) {
  std::map<std::string, Predicate> by_key;
  for (const auto& q : workload) {
    for (const auto& p : q.constraint.predicates) {
      if (const auto* ci = std::get_if<CentroidInPredicate>(&p)) {
        for (std::uint32_t c : ci->centroids) {
          Predicate single = CentroidInPredicate{{c}};
          by_key.emplace(canonical_key(single), std::move(single));
        }
      } else {
        by_key.emplace(canonical_key(p), p);
      }
    }
  }
  std::vector<Predicate> out;
  out.reserve(by_key.size());
  for (auto& [key, pred] : by_key) out.push_back(std::move(pred));
  return out;
}

}  // namespace hqi
