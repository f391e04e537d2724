#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "json.hpp"

#include "hqi/core.hpp"
#include "hqi/engine.hpp"

namespace hqi {

using json = nlohmann::json;

inline constexpr std::uint32_t kVectorFileVersion = 1;
inline constexpr std::uint32_t kManifestVersion = 1;
inline constexpr std::uint32_t kReportSchemaVersion = 1;
inline constexpr char kVectorMagic[4] = {'H', 'Q', 'I', 'V'};

// ---------------------------------------------------------------------------
// Bytes, files, checksums. All binary formats are little-endian.

namespace detail {

inline void put_u8(std::string& out, std::uint8_t v) {
  out.push_back(static_cast<char>(v));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string name)
      : p_(reinterpret_cast<const unsigned char*>(bytes.data())),
        remaining_(bytes.size()),
        name_(std::move(name)) {}

  std::uint8_t u8() {
    need(1);
    return take(1)[0];
  }
  std::uint32_t u32() {
    need(4);
    const unsigned char* b = take(4);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void bytes(char* out, std::size_t count) {
    need(count);
    std::memcpy(out, take(count), count);
  }
  std::size_t remaining() const { return remaining_; }

 private:
  void need(std::size_t count) const {
    if (remaining_ < count) throw DataError("truncated file: " + name_);
  }
  const unsigned char* take(std::size_t count) {
    const unsigned char* at = p_;
    p_ += count;
    remaining_ -= count;
    return at;
  }

  const unsigned char* p_;
  std::size_t remaining_;
  std::string name_;
};

}  // namespace detail

inline std::uint32_t crc32_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()),
              static_cast<uInt>(bytes.size())));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (in.bad()) throw DataError("cannot read " + path.string());
  return bytes;
}

// Write-temp-then-rename so a crash never leaves a partial file behind.
inline void atomic_write_file(const std::filesystem::path& path, std::string_view bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot create " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Vector file: magic "HQIV", u32 version, u32 n, u32 d, u8 metric,
// n*d float32 row-major.

inline std::string encode_vector_file(std::span<const float> data, std::uint32_t n,
                                      std::uint32_t d, Metric metric) {
  if (data.size() != std::size_t(n) * d)
    throw ConfigError("vector payload does not match n*d");
  std::string out;
  out.reserve(13 + data.size() * 4);
  out.append(kVectorMagic, 4);
  detail::put_u32(out, kVectorFileVersion);
  detail::put_u32(out, n);
  detail::put_u32(out, d);
  detail::put_u8(out, static_cast<std::uint8_t>(metric));
  for (const float v : data) detail::put_f32(out, v);
  return out;
}

struct VectorFile {
  std::uint32_t n = 0, d = 0;
  Metric metric = Metric::L2;
  std::vector<float> data;  // n*d row-major
};

inline VectorFile decode_vector_file(std::string_view bytes, const std::string& name) {
  detail::ByteReader r(bytes, name);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kVectorMagic, 4) != 0)
    throw DataError("not a vector file: " + name);
  const std::uint32_t version = r.u32();
  if (version != kVectorFileVersion)
    throw DataError("unsupported vector file version in " + name);
  VectorFile f;
  f.n = r.u32();
  f.d = r.u32();
  const std::uint8_t metric = r.u8();
  if (metric > 1) throw DataError("unknown metric in " + name);
  f.metric = static_cast<Metric>(metric);
  if (r.remaining() != std::size_t(f.n) * f.d * 4)
    throw DataError("vector payload size mismatch in " + name);
  f.data.resize(std::size_t(f.n) * f.d);
  for (float& v : f.data) v = r.f32();
  return f;
}

inline void write_vector_file(const std::filesystem::path& path,
                              std::span<const float> data, std::uint32_t n,
                              std::uint32_t d, Metric metric) {
  atomic_write_file(path, encode_vector_file(data, n, d, metric));
}

inline VectorFile read_vector_file(const std::filesystem::path& path) {
  return decode_vector_file(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// JSON codecs for attribute values, predicates, constraints.

inline json attribute_value_to_json(const AttributeValue& v) {
  switch (kind_of(v)) {
    case ValueKind::Null: return nullptr;
    case ValueKind::Int: return std::get<std::int64_t>(v);
    case ValueKind::Float: return std::get<double>(v);
    case ValueKind::String: return std::get<std::string>(v);
    case ValueKind::StringSet: return std::get<StringSet>(v);
  }
  return nullptr;
}

inline AttributeValue attribute_value_from_json(const json& j) {
  if (j.is_null()) return std::monostate{};
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number_float()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  if (j.is_array()) {
    std::vector<std::string> values;
    for (const auto& e : j) {
      if (!e.is_string()) throw DataError("set-valued attributes must hold strings");
      values.push_back(e.get<std::string>());
    }
    return make_string_set(std::move(values));
  }
  throw DataError("unsupported attribute value: " + j.dump());
}

inline json predicate_to_json(const Predicate& p) {
  if (const auto* c = std::get_if<ComparePredicate>(&p))
    return {{"attr", c->attr},
            {"op", detail::op_name(c->op)},
            {"value", attribute_value_to_json(c->literal)}};
  if (const auto* in = std::get_if<InPredicate>(&p)) {
    json values = json::array();
    for (const auto& lit : in->literals) values.push_back(attribute_value_to_json(lit));
    return {{"attr", in->attr}, {"op", "in"}, {"value", values}};
  }
  if (const auto* nn = std::get_if<NotNullPredicate>(&p))
    return {{"attr", nn->attr}, {"op", "notnull"}};
  const auto& ci = std::get<CentroidInPredicate>(p);
  return {{"op", "centroid_in"}, {"value", ci.centroids}};
}

inline Predicate predicate_from_json(const json& j) {
  if (!j.is_object() || !j.contains("op") || !j["op"].is_string())
    throw DataError("malformed predicate: " + j.dump());
  const std::string op = j["op"].get<std::string>();
  if (op == "centroid_in") {
    CentroidInPredicate p;
    for (const auto& e : j.at("value")) p.centroids.push_back(e.get<std::uint32_t>());
    return p;
  }
  if (!j.contains("attr") || !j["attr"].is_string())
    throw DataError("predicate missing attr: " + j.dump());
  const std::string attr = j["attr"].get<std::string>();
  if (op == "notnull") return NotNullPredicate{attr};
  if (op == "in") {
    InPredicate p{attr, {}};
    if (!j.contains("value") || !j["value"].is_array())
      throw DataError("'in' predicate requires an array value: " + j.dump());
    for (const auto& e : j["value"]) p.literals.push_back(attribute_value_from_json(e));
    return p;
  }
  for (const CompareOp cmp : {CompareOp::Lt, CompareOp::Le, CompareOp::Gt, CompareOp::Ge,
                              CompareOp::Eq})
    if (op == detail::op_name(cmp)) {
      if (!j.contains("value"))
        throw DataError("comparison predicate requires a value: " + j.dump());
      return ComparePredicate{attr, cmp, attribute_value_from_json(j["value"])};
    }
  throw DataError("unknown predicate op: " + op);
}

inline json constraint_to_json(const AttributeConstraint& f) {
  json out = json::array();
  for (const auto& p : f.predicates) out.push_back(predicate_to_json(p));
  return out;
}

inline AttributeConstraint constraint_from_json(const json& j) {
  if (!j.is_array()) throw DataError("filter must be an array of predicates");
  AttributeConstraint f;
  for (const auto& e : j) f.predicates.push_back(predicate_from_json(e));
  return f;
}

// ---------------------------------------------------------------------------
// Dataset files: vectors in the binary format, attributes as one JSON record
// per line, row order aligned with the vector file.

inline void write_attributes_file(const std::filesystem::path& path,
                                  const VectorDatabase& db) {
  std::string out;
  for (const Tuple& t : db.tuples) {
    json attrs = json::object();
    for (const auto& [name, value] : t.attrs)
      attrs[name] = attribute_value_to_json(value);
    const json row = {{"id", t.id}, {"attrs", attrs}};
    out += row.dump();
    out += '\n';
  }
  atomic_write_file(path, out);
}

inline void save_dataset(const std::filesystem::path& vectors_path,
                         const std::filesystem::path& attrs_path,
                         const VectorDatabase& db) {
  std::vector<float> flat(db.size() * std::size_t(db.dim));
  for (std::size_t i = 0; i < db.size(); ++i)
    std::copy_n(db.tuples[i].vec.data(), db.dim, flat.data() + i * db.dim);
  write_vector_file(vectors_path, flat, static_cast<std::uint32_t>(db.size()), db.dim,
                    db.metric);
  write_attributes_file(attrs_path, db);
}

inline json parse_json_line(const std::string& line, const std::string& where) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded()) throw DataError("malformed JSON in " + where + ": " + line);
  return j;
}

inline VectorDatabase load_dataset(const std::filesystem::path& vectors_path,
                                   const std::filesystem::path& attrs_path) {
  const VectorFile vf = read_vector_file(vectors_path);
  VectorDatabase db;
  db.dim = vf.d;
  db.metric = vf.metric;
  db.tuples.resize(vf.n);

  std::ifstream in(attrs_path);
  if (!in) throw DataError("cannot open " + attrs_path.string());
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (row >= vf.n)
      throw DataError("more attribute rows than vectors in " + attrs_path.string());
    const json j = parse_json_line(line, attrs_path.string());
    Tuple& t = db.tuples[row];
    t.id = j.at("id").get<std::int64_t>();
    t.vec.assign(vf.data.data() + row * vf.d, vf.data.data() + (row + 1) * vf.d);
    for (const auto& [name, value] : j.at("attrs").items()) {
      AttributeValue v = attribute_value_from_json(value);
      if (!is_null(v)) {
        auto it = db.schema.find(name);
        if (it == db.schema.end()) db.schema.emplace(name, kind_of(v));
        t.attrs.emplace(name, std::move(v));
      }
    }
    ++row;
  }
  if (row != vf.n)
    throw DataError("fewer attribute rows than vectors in " + attrs_path.string());
  return db;
}

// ---------------------------------------------------------------------------
// Workload files: one JSON record per query; repeated query vectors are
// deduplicated into a companion vector file and referenced by row.

inline void save_workload(const std::filesystem::path& ndjson_path,
                          const std::filesystem::path& vectors_path, const Workload& w,
                          std::uint32_t d, Metric metric) {
  std::vector<float> unique;
  std::map<std::string, std::uint32_t> ref_of;  // vector bytes -> row
  std::string out;
  for (const HybridQuery& q : w) {
    if (q.vec.size() != d) throw ConfigError("query dimension mismatch in workload");
    std::string key(reinterpret_cast<const char*>(q.vec.data()), q.vec.size() * 4);
    auto [it, inserted] =
        ref_of.emplace(std::move(key), static_cast<std::uint32_t>(ref_of.size()));
    if (inserted) unique.insert(unique.end(), q.vec.begin(), q.vec.end());
    const json row = {{"id", q.id},
                      {"vector_ref", it->second},
                      {"filter", constraint_to_json(q.constraint)}};
    out += row.dump();
    out += '\n';
  }
  write_vector_file(vectors_path, unique,
                    static_cast<std::uint32_t>(ref_of.size()), d, metric);
  atomic_write_file(ndjson_path, out);
}

inline Workload load_workload(const std::filesystem::path& ndjson_path,
                              const std::optional<std::filesystem::path>& vectors_path =
                                  std::nullopt) {
  std::optional<VectorFile> vf;
  if (vectors_path) vf = read_vector_file(*vectors_path);

  std::ifstream in(ndjson_path);
  if (!in) throw DataError("cannot open " + ndjson_path.string());
  Workload w;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = parse_json_line(line, ndjson_path.string());
    HybridQuery q;
    q.id = j.at("id").get<std::int64_t>();
    if (j.contains("vector")) {
      q.vec = j["vector"].get<std::vector<float>>();
    } else if (j.contains("vector_ref")) {
      if (!vf)
        throw DataError("workload uses vector_ref but no vector file was supplied");
      const std::uint32_t ref = j["vector_ref"].get<std::uint32_t>();
      if (ref >= vf->n)
        throw DataError("vector_ref out of range in " + ndjson_path.string());
      q.vec.assign(vf->data.data() + std::size_t(ref) * vf->d,
                   vf->data.data() + std::size_t(ref + 1) * vf->d);
    } else {
      throw DataError("workload row needs 'vector' or 'vector_ref': " + line);
    }
    q.constraint = constraint_from_json(j.at("filter"));
    w.push_back(std::move(q));
  }
  return w;
}

// ---------------------------------------------------------------------------
// Index persistence: manifest.json plus one binary blob per partition. Blob
// layout: u32 nlist, u32 dim, nlist*dim f32 centroids, then per posting list
// u32 count followed by count entries of (u32 scope position, dim f32).

inline std::string encode_ivf_blob(const IvfIndex& ivf) {
  std::string out;
  detail::put_u32(out, ivf.nlist());
  detail::put_u32(out, ivf.dim);
  for (const float v : ivf.centroids.data) detail::put_f32(out, v);
  for (std::uint32_t l = 0; l < ivf.nlist(); ++l) {
    const auto& positions = ivf.list_positions[l];
    detail::put_u32(out, static_cast<std::uint32_t>(positions.size()));
    for (std::size_t e = 0; e < positions.size(); ++e) {
      detail::put_u32(out, positions[e]);
      for (std::uint32_t jd = 0; jd < ivf.dim; ++jd)
        detail::put_f32(out, ivf.list_vectors[l][e * ivf.dim + jd]);
    }
  }
  return out;
}

inline IvfIndex decode_ivf_blob(std::string_view bytes, const std::string& name,
                                const VectorDatabase& db,
                                std::span<const std::uint32_t> scope_positions) {
  detail::ByteReader r(bytes, name);
  IvfIndex ivf;
  const std::uint32_t nlist = r.u32();
  if (nlist == 0) {
    if (!scope_positions.empty())
      throw DataError("empty index blob for a non-empty partition: " + name);
    return ivf;
  }
  ivf.dim = r.u32();
  if (ivf.dim != db.dim) throw DataError("blob dimension mismatch: " + name);
  ivf.metric = db.metric;
  ivf.centroids.k = nlist;
  ivf.centroids.dim = ivf.dim;
  ivf.centroids.data.resize(std::size_t(nlist) * ivf.dim);
  for (float& v : ivf.centroids.data) v = r.f32();

  ivf.ids.resize(scope_positions.size());
  for (std::size_t i = 0; i < scope_positions.size(); ++i) {
    if (scope_positions[i] >= db.size())
      throw DataError("partition position out of range: " + name);
    ivf.ids[i] = db.tuples[scope_positions[i]].id;
  }
  ivf.list_positions.resize(nlist);
  ivf.list_vectors.resize(nlist);
  std::size_t total = 0;
  for (std::uint32_t l = 0; l < nlist; ++l) {
    const std::uint32_t count = r.u32();
    ivf.list_positions[l].resize(count);
    ivf.list_vectors[l].resize(std::size_t(count) * ivf.dim);
    for (std::uint32_t e = 0; e < count; ++e) {
      const std::uint32_t pos = r.u32();
      if (pos >= scope_positions.size())
        throw DataError("posting entry out of range: " + name);
      ivf.list_positions[l][e] = pos;
      for (std::uint32_t jd = 0; jd < ivf.dim; ++jd)
        ivf.list_vectors[l][e * ivf.dim + jd] = r.f32();
    }
    total += count;
  }
  if (total != scope_positions.size())
    throw DataError("posting lists do not cover the partition: " + name);
  if (r.remaining() != 0) throw DataError("trailing bytes in " + name);
  return ivf;
}

namespace detail {

inline json tree_to_json(const QdTree& tree) {
  // Nodes in preorder; children referenced by index; leaves reference their
  // partition by left-to-right leaf order.
  json nodes = json::array();
  std::uint32_t next_partition = 0;
  const auto walk = [&](auto&& self, const QdTreeNode* node) -> std::uint32_t {
    const auto my = static_cast<std::uint32_t>(nodes.size());
    json entry = {{"split", node->split_predicates},
                  {"left", -1},
                  {"right", -1},
                  {"partition", -1},
                  {"states", json::array()}};
    for (const TriState s : node->description.states)
      entry["states"].push_back(static_cast<int>(s));
    nodes.push_back(std::move(entry));
    if (node->is_leaf()) {
      nodes[my]["partition"] = next_partition++;
    } else {
      nodes[my]["left"] = self(self, node->left.get());
      nodes[my]["right"] = self(self, node->right.get());
    }
    return my;
  };
  walk(walk, tree.root.get());
  return nodes;
}

inline SemanticDescription states_from_json(const json& j) {
  SemanticDescription d;
  for (const auto& e : j) {
    const int v = e.get<int>();
    if (v < 0 || v > 2) throw DataError("invalid tri-state in manifest");
    d.states.push_back(static_cast<TriState>(v));
  }
  return d;
}

inline std::unique_ptr<QdTreeNode> tree_from_json(const json& nodes, std::uint32_t at,
                                                  const PartitionSet& parts) {
  if (at >= nodes.size()) throw DataError("tree node index out of range in manifest");
  const json& entry = nodes[at];
  auto node = std::make_unique<QdTreeNode>();
  node->split_predicates = entry.at("split").get<std::vector<std::uint32_t>>();
  node->description = states_from_json(entry.at("states"));
  const int partition = entry.at("partition").get<int>();
  if (partition >= 0) {
    if (static_cast<std::size_t>(partition) >= parts.size())
      throw DataError("leaf partition index out of range in manifest");
    node->tuple_positions = parts.partitions[partition].tuple_positions;
  } else {
    node->left = tree_from_json(nodes, entry.at("left").get<std::uint32_t>(), parts);
    node->right = tree_from_json(nodes, entry.at("right").get<std::uint32_t>(), parts);
  }
  return node;
}

}  // namespace detail

inline json strategy_config_to_json(const StrategyConfig& c) {
  return {{"strategy", strategy_name(c.strategy)},
          {"k", c.k},
          {"nprobe", c.nprobe},
          {"min_size", c.min_size},
          {"num_centroids", c.num_centroids},
          {"m", c.m},
          {"partition_attr", c.partition_attr},
          {"partition_count", c.partition_count},
          {"overfetch_factor", c.overfetch_factor},
          {"seed", c.seed}};
}

inline StrategyConfig strategy_config_from_json(const json& j) {
  StrategyConfig c;
  const auto s = parse_strategy(j.at("strategy").get<std::string>());
  if (!s) throw DataError("unknown strategy in manifest");
  c.strategy = *s;
  c.k = j.at("k").get<std::size_t>();
  c.nprobe = j.at("nprobe").get<std::size_t>();
  c.min_size = j.at("min_size").get<std::size_t>();
  c.num_centroids = j.at("num_centroids").get<std::uint32_t>();
  c.m = j.at("m").get<std::uint32_t>();
  c.partition_attr = j.at("partition_attr").get<std::string>();
  c.partition_count = j.at("partition_count").get<std::uint32_t>();
  c.overfetch_factor = j.at("overfetch_factor").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline void save_index(const std::filesystem::path& dir, const EngineIndex& ix) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  json manifest = {{"format_version", kManifestVersion},
                   {"metric", ix.metric == Metric::L2 ? "l2" : "ip"},
                   {"dim", ix.dim},
                   {"n", ix.n},
                   {"config", strategy_config_to_json(ix.config)},
                   {"build_seconds", ix.build_seconds}};

  json partitions = json::array();
  for (std::size_t p = 0; p < ix.partitions.size(); ++p) {
    const Partition& part = ix.partitions.partitions[p];
    const std::string blob_name = "part" + std::to_string(p) + ".bin";
    const std::string blob =
        encode_ivf_blob(p < ix.ivfs.size() ? ix.ivfs[p] : IvfIndex{});
    atomic_write_file(dir / blob_name, blob);
    json states = json::array();
    for (const TriState s : part.description.states)
      states.push_back(static_cast<int>(s));
    partitions.push_back({{"positions", part.tuple_positions},
                          {"states", states},
                          {"blob", blob_name},
                          {"crc32", crc32_of(blob)},
                          {"bytes", blob.size()}});
  }
  manifest["partitions"] = partitions;

  if (ix.config.strategy == Strategy::RangeC)
    manifest["range"] = {{"lo", ix.range_lo}, {"hi", ix.range_hi}};

  if (ix.config.strategy == Strategy::HQI) {
    json cuts = json::array();
    for (const Predicate& p : ix.tree.cuts.predicates)
      cuts.push_back(predicate_to_json(p));
    manifest["cut_predicates"] = cuts;
    manifest["tree"] = detail::tree_to_json(ix.tree);
  }

  if (ix.aug) {
    const std::string centroid_blob =
        encode_vector_file(ix.aug->centroids.data, ix.aug->centroids.k,
                           ix.aug->centroids.dim, ix.metric);
    atomic_write_file(dir / "centroids.bin", centroid_blob);
    std::string assign_blob;
    detail::put_u32(assign_blob, static_cast<std::uint32_t>(ix.aug->tuple_centroid.size()));
    for (const std::uint32_t c : ix.aug->tuple_centroid)
      detail::put_u32(assign_blob, c);
    atomic_write_file(dir / "assignments.bin", assign_blob);
    manifest["augmentation"] = {{"m", ix.aug->m},
                                {"centroids_blob", "centroids.bin"},
                                {"centroids_crc32", crc32_of(centroid_blob)},
                                {"assignments_blob", "assignments.bin"},
                                {"assignments_crc32", crc32_of(assign_blob)}};
  }

  atomic_write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline EngineIndex load_index(const std::filesystem::path& dir,
                              const VectorDatabase& db) {
  namespace fs = std::filesystem;
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw DataError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  try {
    if (manifest.at("format_version").get<std::uint32_t>() != kManifestVersion)
      throw DataError("unsupported manifest version in " + dir.string());

    EngineIndex ix;
    ix.config = strategy_config_from_json(manifest.at("config"));
    ix.dim = manifest.at("dim").get<std::uint32_t>();
    ix.n = manifest.at("n").get<std::size_t>();
    ix.metric = manifest.at("metric").get<std::string>() == "ip" ? Metric::InnerProduct
                                                                  : Metric::L2;
    ix.build_seconds = manifest.at("build_seconds").get<double>();
    if (ix.dim != db.dim || ix.n != db.size() || ix.metric != db.metric)
      throw DataError("index was built for a different dataset");

    for (const auto& pj : manifest.at("partitions")) {
      Partition part;
      part.tuple_positions = pj.at("positions").get<std::vector<std::uint32_t>>();
      part.description = detail::states_from_json(pj.at("states"));
      const std::string blob_name = pj.at("blob").get<std::string>();
      const std::string blob = read_file(dir / blob_name);
      if (crc32_of(blob) != pj.at("crc32").get<std::uint32_t>())
        throw DataError("checksum mismatch for " + blob_name);
      ix.ivfs.push_back(decode_ivf_blob(blob, blob_name, db, part.tuple_positions));
      ix.partitions.partitions.push_back(std::move(part));
    }

    if (ix.config.strategy == Strategy::RangeC) {
      ix.range_lo = manifest.at("range").at("lo").get<double>();
      ix.range_hi = manifest.at("range").at("hi").get<double>();
    }

    if (ix.config.strategy == Strategy::HQI) {
      Workload cuts_carrier;  // rebuild the cut set through its constructor
      HybridQuery q;
      for (const auto& cj : manifest.at("cut_predicates"))
        q.constraint.predicates.push_back(predicate_from_json(cj));
      cuts_carrier.push_back(std::move(q));
      ix.tree.cuts = make_cut_predicate_set(cuts_carrier);
      if (ix.tree.cuts.size() != manifest.at("cut_predicates").size())
        throw DataError("cut predicates in manifest are not canonical");
      ix.tree.min_size = ix.config.min_size;
      ix.tree.root = detail::tree_from_json(manifest.at("tree"), 0, ix.partitions);
    }

    if (manifest.contains("augmentation") && !manifest["augmentation"].is_null()) {
      const json& aj = manifest["augmentation"];
      Augmentation aug;
      aug.m = aj.at("m").get<std::uint32_t>();
      const std::string cb = read_file(dir / aj.at("centroids_blob").get<std::string>());
      if (crc32_of(cb) != aj.at("centroids_crc32").get<std::uint32_t>())
        throw DataError("checksum mismatch for centroid blob");
      const VectorFile cf = decode_vector_file(cb, "centroids.bin");
      aug.centroids.k = cf.n;
      aug.centroids.dim = cf.d;
      aug.centroids.data = cf.data;
      const std::string ab = read_file(dir / aj.at("assignments_blob").get<std::string>());
      if (crc32_of(ab) != aj.at("assignments_crc32").get<std::uint32_t>())
        throw DataError("checksum mismatch for assignment blob");
      detail::ByteReader r(ab, "assignments.bin");
      const std::uint32_t count = r.u32();
      if (count != db.size())
        throw DataError("assignment blob does not match the dataset");
      aug.tuple_centroid.resize(count);
      for (std::uint32_t i = 0; i < count; ++i) aug.tuple_centroid[i] = r.u32();
      ix.aug = std::move(aug);
    }
    return ix;
  } catch (const json::exception& e) {
    throw DataError("malformed manifest in " + dir.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Run records.

inline json nprobe_spec_to_json(const NprobeSpec& spec) {
  json per = json::object();
  for (const auto& [key, np] : spec.per_constraint) per[key] = np;
  return {{"default", spec.default_nprobe}, {"per_constraint", per}};
}

inline json metrics_record(const std::string& strategy, std::size_t k,
                           const NprobeSpec& nprobe, const BatchResult& r,
                           std::optional<double> recall, double build_seconds) {
  json out = {{"schema_version", kReportSchemaVersion},
              {"strategy", strategy},
              {"k", k},
              {"nprobe", nprobe_spec_to_json(nprobe)},
              {"queries", r.results.size()},
              {"tuples_scanned", r.stats.tuples_scanned},
              {"posting_lists_scanned", r.stats.posting_lists_scanned},
              {"distances_computed", r.stats.distances_computed},
              {"wall_seconds", r.seconds},
              {"build_seconds", build_seconds},
              {"recall", nullptr}};
  if (recall) out["recall"] = *recall;
  return out;
}

inline void write_results_file(const std::filesystem::path& path, const Workload& queries,
                               const BatchResult& r) {
  std::string out;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    json hits = json::array();
    for (const Neighbor& nb : r.results[qi])
      hits.push_back({{"id", nb.id}, {"score", nb.score}});
    const json row = {{"id", queries[qi].id}, {"results", hits}};
    out += row.dump();
    out += '\n';
  }
  atomic_write_file(path, out);
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  atomic_write_file(path, j.dump(2) + "\n");
}

}  // namespace hqi
