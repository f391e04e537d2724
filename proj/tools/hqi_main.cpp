#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hqi/engine.hpp"
#include "hqi/io.hpp"
#include "hqi/workloadgen.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRecallUnreachable = 3;

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("HQI_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (end == s || *end != '\0')
    throw hqi::ConfigError("HQI_SEED must be an unsigned integer");
  return v;
}

template <typename F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const hqi::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}

hqi::Metric parse_metric(const std::string& name) {
  if (name == "l2") return hqi::Metric::L2;
  if (name == "ip") return hqi::Metric::InnerProduct;
  throw hqi::DataError("unknown metric '" + name + "' (expected l2 or ip)");
}

// Conventional file names inside a data directory.
fs::path vectors_path(const fs::path& data) { return data / "dataset.vec"; }
fs::path attrs_path(const fs::path& data) { return data / "attrs.ndjson"; }
fs::path workload_path(const fs::path& data) { return data / "workload.ndjson"; }

std::optional<fs::path> workload_vectors_for(const fs::path& ndjson) {
  fs::path p = ndjson;
  p.replace_extension(".vec");
  if (fs::exists(p)) return p;
  return std::nullopt;
}

hqi::VectorDatabase load_data_dir(const fs::path& data) {
  return hqi::load_dataset(vectors_path(data), attrs_path(data));
}

hqi::Workload load_workload_at(const fs::path& ndjson) {
  return hqi::load_workload(ndjson, workload_vectors_for(ndjson));
}

hqi::BatchResult load_results_file(const fs::path& path, std::size_t expected) {
  hqi::BatchResult out;
  std::ifstream in(path);
  if (!in) throw hqi::DataError("cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const hqi::json j = hqi::parse_json_line(line, path.string());
    std::vector<hqi::Neighbor> hits;
    for (const auto& h : j.at("results"))
      hits.push_back({h.at("score").get<float>(), h.at("id").get<std::int64_t>()});
    out.results.push_back(std::move(hits));
  }
  if (out.results.size() != expected)
    throw hqi::DataError("truth file has " + std::to_string(out.results.size()) +
                         " rows, workload has " + std::to_string(expected));
  return out;
}

// ---------------------------------------------------------------------------
// gen

struct GenOpts {
  std::string spec_path;
  std::string out;
};

int run_gen(const GenOpts& o) {
  hqi::json spec;
  try {
    spec = hqi::json::parse(hqi::read_file(o.spec_path));
  } catch (const hqi::json::parse_error& e) {
    throw hqi::DataError("malformed spec " + o.spec_path + ": " + e.what());
  }
  const fs::path out(o.out);
  fs::create_directories(out);
  const std::string kind = spec.value("kind", std::string("synthetic"));

  hqi::VectorDatabase db;
  hqi::Workload w;
  if (kind == "synthetic") {
    hqi::SyntheticSpec s;
    s.n = spec.value("n", s.n);
    s.d = spec.value("d", s.d);
    s.n_q = spec.value("n_q", s.n_q);
    s.seed = spec.value("seed", s.seed);
    s.metric = parse_metric(spec.value("metric", std::string("l2")));
    s.mixture = spec.value("mixture", s.mixture);
    s.mixture_components = spec.value("mixture_components", s.mixture_components);
    if (const auto seed = env_seed()) s.seed = *seed;
    db = hqi::gen_dataset(s);
    w = hqi::gen_synthetic_workload(s);
  } else if (kind == "kg") {
    const std::size_t n = spec.value("n", std::size_t(10000));
    const std::uint32_t d = spec.value("d", std::uint32_t(16));
    const std::size_t n_q = spec.value("n_q", std::size_t(1000));
    std::uint64_t seed = spec.value("seed", std::uint64_t(42));
    if (const auto es = env_seed()) seed = *es;
    auto kg = hqi::gen_kg_style_workload(n, d, n_q, hqi::default_kg_templates(), seed);
    db = std::move(kg.db);
    w = std::move(kg.queries);
  } else {
    throw hqi::DataError("unknown spec kind '" + kind + "' (expected synthetic or kg)");
  }

  hqi::save_dataset(vectors_path(out), attrs_path(out), db);
  hqi::save_workload(workload_path(out), out / "workload.vec", w, db.dim, db.metric);
  const hqi::json summary = {{"n", db.size()}, {"d", db.dim}, {"queries", w.size()},
                             {"out", out.string()}};
  std::cout << summary.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// build

struct BuildOpts {
  std::string data;
  std::string workload;  // empty: <data>/workload.ndjson
  std::string out;
  std::string strategy = "hqi";
  hqi::StrategyConfig cfg;
};

int run_build(BuildOpts& o) {
  const auto strategy = hqi::parse_strategy(o.strategy);
  if (!strategy) throw hqi::ConfigError("unknown strategy '" + o.strategy + "'");
  o.cfg.strategy = *strategy;
  if (const auto seed = env_seed()) o.cfg.seed = *seed;

  const hqi::VectorDatabase db = load_data_dir(o.data);
  const fs::path wpath = o.workload.empty() ? workload_path(o.data) : fs::path(o.workload);
  const hqi::Workload w = load_workload_at(wpath);

  const hqi::EngineIndex ix = hqi::build_index(db, w, o.cfg);
  hqi::save_index(o.out, ix);
  const hqi::json summary = {{"strategy", hqi::strategy_name(ix.config.strategy)},
                             {"partitions", ix.partitions.size()},
                             {"build_seconds", ix.build_seconds},
                             {"out", o.out}};
  std::cout << summary.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// query

struct QueryOpts {
  std::string data;
  std::string index;
  std::string workload;
  std::string nprobe;  // integer, "auto", or empty (use the index's default)
  std::string truth;   // empty, "exact", or a results file
  std::size_t k = 0;   // 0: use the index's k
  double target_recall = 0.8;
  std::string out = "results.ndjson";
  std::string metrics = "metrics.json";
};

int run_query(const QueryOpts& o) {
  const hqi::VectorDatabase db = load_data_dir(o.data);
  hqi::EngineIndex ix = hqi::load_index(o.index, db);
  if (o.k > 0) ix.config.k = o.k;
  const fs::path wpath = o.workload.empty() ? workload_path(o.data) : fs::path(o.workload);
  const hqi::Workload w = load_workload_at(wpath);

  hqi::NprobeSpec spec = hqi::NprobeSpec::fixed(ix.config.nprobe);
  std::optional<hqi::TuneResult> tuned;
  if (o.nprobe == "auto") {
    tuned = hqi::tune_nprobe(db, ix, w, ix.config.k, o.target_recall);
    spec = tuned->spec;
  } else if (!o.nprobe.empty()) {
    char* end = nullptr;
    const unsigned long long np = std::strtoull(o.nprobe.c_str(), &end, 10);
    if (end == o.nprobe.c_str() || *end != '\0')
      throw hqi::ConfigError("--nprobe must be an integer or 'auto'");
    spec = hqi::NprobeSpec::fixed(np);
  }

  const hqi::BatchResult result = hqi::execute_batch(db, ix, w, spec);

  std::optional<double> recall;
  if (o.truth == "exact") {
    const hqi::BatchResult truth = hqi::exact_truth(db, w, ix.config.k);
    recall = hqi::recall_at_k(result, truth, ix.config.k);
  } else if (!o.truth.empty()) {
    const hqi::BatchResult truth = load_results_file(o.truth, w.size());
    recall = hqi::recall_at_k(result, truth, ix.config.k);
  }

  hqi::write_results_file(o.out, w, result);
  hqi::json metrics = hqi::metrics_record(hqi::strategy_name(ix.config.strategy),
                                          ix.config.k, spec, result, recall,
                                          ix.build_seconds);
  if (tuned) {
    metrics["tuned"] = true;
    metrics["target_recall"] = o.target_recall;
    metrics["target_reached"] = tuned->all_reached;
  }
  hqi::write_json_file(o.metrics, metrics);
  std::cout << metrics.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOpts {
  std::string data;
  std::string workload;
  std::string strategies = "exhaustive,prefilter,postfilter,hqi";
  std::string out = "report.json";
  double target_recall = 0.8;
  bool batch_sweep = false;
  hqi::StrategyConfig cfg;  // k and the per-strategy knobs
};

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::size_t at = 0;
  while (at <= csv.size()) {
    const std::size_t comma = csv.find(',', at);
    const std::string item = csv.substr(at, comma - at);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    at = comma + 1;
  }
  return out;
}

int run_bench(BenchOpts& o) {
  if (const auto seed = env_seed()) o.cfg.seed = *seed;
  const hqi::VectorDatabase db = load_data_dir(o.data);
  const fs::path wpath = o.workload.empty() ? workload_path(o.data) : fs::path(o.workload);
  const hqi::Workload w = load_workload_at(wpath);
  const std::size_t k = o.cfg.k;

  const hqi::BatchResult truth = hqi::exact_truth(db, w, k);

  // Per-constraint selectivity, shared by every strategy's breakdown.
  std::map<std::string, double> selectivity;
  std::map<std::string, std::vector<std::uint32_t>> groups;
  for (std::size_t qi = 0; qi < w.size(); ++qi)
    groups[hqi::canonical_key(w[qi].constraint)].push_back(
        static_cast<std::uint32_t>(qi));
  for (const auto& [key, members] : groups) {
    const hqi::Bitmap bm =
        hqi::build_attribute_bitmap(w[members.front()].constraint, db.tuples);
    selectivity[key] = db.size() ? double(bm.count()) / double(db.size()) : 0.0;
  }

  hqi::json rows = hqi::json::array();
  std::map<std::string, double> wall_by_strategy;
  bool unreached = false;
  std::optional<hqi::EngineIndex> hqi_index;
  hqi::NprobeSpec hqi_spec;

  for (const std::string& name : split_csv(o.strategies)) {
    const auto strategy = hqi::parse_strategy(name);
    if (!strategy) throw hqi::ConfigError("unknown strategy '" + name + "'");
    hqi::StrategyConfig cfg = o.cfg;
    cfg.strategy = *strategy;

    hqi::EngineIndex ix;
    try {
      ix = hqi::build_index(db, w, cfg);
    } catch (const hqi::ConfigError& e) {
      if (*strategy == hqi::Strategy::RangeC) {
        rows.push_back({{"strategy", name}, {"skipped", e.what()}});
        continue;
      }
      throw;
    }

    hqi::TuneResult tune;
    if (*strategy != hqi::Strategy::ExhaustiveA)
      tune = hqi::tune_nprobe(db, ix, w, k, o.target_recall);
    if (!tune.all_reached) unreached = true;

    const hqi::BatchResult full = hqi::execute_batch(db, ix, w, tune.spec);
    const double recall = hqi::recall_at_k(full, truth, k);
    wall_by_strategy[name] = full.seconds;

    hqi::json per_filter = hqi::json::array();
    for (const auto& [key, members] : groups) {
      hqi::Workload sub;
      hqi::BatchResult sub_truth;
      for (const std::uint32_t qi : members) {
        sub.push_back(w[qi]);
        sub_truth.results.push_back(truth.results[qi]);
      }
      const hqi::BatchResult r = hqi::execute_batch(db, ix, sub, tune.spec);
      per_filter.push_back(
          {{"filter", key},
           {"selectivity", selectivity[key]},
           {"queries", sub.size()},
           {"nprobe", tune.spec.per_constraint.count(key)
                          ? hqi::json(tune.spec.per_constraint[key])
                          : hqi::json(nullptr)},
           {"recall", hqi::recall_at_k(r, sub_truth, k)},
           {"tuples_scanned", r.stats.tuples_scanned},
           {"wall_seconds", r.seconds}});
    }

    hqi::json row = hqi::metrics_record(name, k, tune.spec, full, recall,
                                        ix.build_seconds);
    row["target_recall"] = o.target_recall;
    row["target_reached"] = tune.all_reached;
    row["per_filter"] = per_filter;
    if (!tune.achieved.empty()) {
      hqi::json achieved = hqi::json::object();
      for (const auto& [key, rec] : tune.achieved) achieved[key] = rec;
      row["tuned_recall"] = achieved;
    }
    rows.push_back(std::move(row));

    if (*strategy == hqi::Strategy::HQI) {
      hqi_index = std::move(ix);
      hqi_spec = tune.spec;
    }
  }

  // Slowdowns are relative to the HQI row when present, else the first row.
  double denom = 0;
  if (wall_by_strategy.count("hqi"))
    denom = wall_by_strategy["hqi"];
  else if (!rows.empty())
    for (const auto& row : rows)
      if (row.contains("wall_seconds")) {
        denom = row["wall_seconds"].get<double>();
        break;
      }
  for (auto& row : rows)
    if (denom > 0 && row.contains("wall_seconds"))
      row["slowdown_vs_hqi"] = row["wall_seconds"].get<double>() / denom;

  hqi::json report = {{"schema_version", hqi::kReportSchemaVersion},
                      {"k", k},
                      {"target_recall", o.target_recall},
                      {"n", db.size()},
                      {"queries", w.size()},
                      {"rows", rows}};

  if (o.batch_sweep && hqi_index) {
    hqi::json sweep = hqi::json::array();
    for (const std::size_t size : {std::size_t(1), std::size_t(10), std::size_t(100),
                                   std::size_t(1000)}) {
      const std::size_t take = std::min(size, w.size());
      if (take == 0) break;
      const hqi::Workload sub(w.begin(), w.begin() + take);
      const hqi::BatchResult r = hqi::execute_batch(db, *hqi_index, sub, hqi_spec);
      sweep.push_back({{"batch_size", take},
                       {"wall_seconds", r.seconds},
                       {"queries_per_second", r.seconds > 0 ? take / r.seconds : 0.0}});
      if (take < size) break;
    }
    report["batch_sweep"] = sweep;
  }

  hqi::write_json_file(o.out, report);
  for (const auto& row : rows) {
    hqi::json line = {{"strategy", row.at("strategy")}};
    if (row.contains("skipped")) {
      line["skipped"] = row["skipped"];
    } else {
      line["recall"] = row["recall"];
      line["tuples_scanned"] = row["tuples_scanned"];
      line["wall_seconds"] = row["wall_seconds"];
      if (row.contains("slowdown_vs_hqi")) line["slowdown_vs_hqi"] = row["slowdown_vs_hqi"];
    }
    std::cout << line.dump() << "\n";
  }
  return unreached ? kExitRecallUnreachable : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hybrid vector similarity search over filtered workloads"};
  app.require_subcommand(1);

  GenOpts gen;
  CLI::App* cmd_gen = app.add_subcommand("gen", "generate a dataset and workload");
  cmd_gen->add_option("--spec", gen.spec_path, "JSON generation spec")->required();
  cmd_gen->add_option("--out", gen.out, "output directory")->required();

  BuildOpts build;
  CLI::App* cmd_build = app.add_subcommand("build", "build an index");
  cmd_build->add_option("--data", build.data, "data directory from gen")->required();
  cmd_build->add_option("--workload", build.workload, "training workload file");
  cmd_build->add_option("--out", build.out, "index output directory")->required();
  cmd_build->add_option("--strategy", build.strategy,
                        "exhaustive|prefilter|range|postfilter|hqi");
  cmd_build->add_option("--k", build.cfg.k, "results per query");
  cmd_build->add_option("--nprobe", build.cfg.nprobe, "default probe count (0: all)");
  cmd_build->add_option("--min_size", build.cfg.min_size, "partition size floor");
  cmd_build->add_option("--num_centroids", build.cfg.num_centroids,
                        "augmentation centroids (0: sqrt(n))");
  cmd_build->add_option("--m", build.cfg.m, "query-side centroids (0: off)");
  cmd_build->add_option("--partition_attr", build.cfg.partition_attr,
                        "range partitioning attribute");
  cmd_build->add_option("--partition_count", build.cfg.partition_count,
                        "range partition count");
  cmd_build->add_option("--overfetch_factor", build.cfg.overfetch_factor,
                        "postfilter candidate multiplier");
  cmd_build->add_option("--seed", build.cfg.seed, "build seed");

  QueryOpts query;
  CLI::App* cmd_query = app.add_subcommand("query", "run a workload against an index");
  cmd_query->add_option("--data", query.data, "data directory")->required();
  cmd_query->add_option("--index", query.index, "index directory")->required();
  cmd_query->add_option("--workload", query.workload, "workload file");
  cmd_query->add_option("--k", query.k, "results per query (0: index default)");
  cmd_query->add_option("--nprobe", query.nprobe, "probe count, or 'auto' to tune");
  cmd_query->add_option("--target_recall", query.target_recall, "tuning target");
  cmd_query->add_option("--truth", query.truth,
                        "'exact' or a results file; enables recall");
  cmd_query->add_option("--out", query.out, "results file");
  cmd_query->add_option("--metrics", query.metrics, "metrics file");

  BenchOpts bench;
  CLI::App* cmd_bench = app.add_subcommand("bench", "compare strategies");
  cmd_bench->add_option("--data", bench.data, "data directory")->required();
  cmd_bench->add_option("--workload", bench.workload, "workload file");
  cmd_bench->add_option("--strategies", bench.strategies, "comma-separated list");
  cmd_bench->add_option("--k", bench.cfg.k, "results per query");
  cmd_bench->add_option("--target_recall", bench.target_recall, "recall target");
  cmd_bench->add_option("--out", bench.out, "report file");
  cmd_bench->add_flag("--batch_sweep", bench.batch_sweep, "measure batch-size scaling");
  cmd_bench->add_option("--min_size", bench.cfg.min_size, "partition size floor");
  cmd_bench->add_option("--num_centroids", bench.cfg.num_centroids,
                        "augmentation centroids (0: sqrt(n))");
  cmd_bench->add_option("--m", bench.cfg.m, "query-side centroids (0: off)");
  cmd_bench->add_option("--partition_attr", bench.cfg.partition_attr,
                        "range partitioning attribute");
  cmd_bench->add_option("--partition_count", bench.cfg.partition_count,
                        "range partition count");
  cmd_bench->add_option("--overfetch_factor", bench.cfg.overfetch_factor,
                        "postfilter candidate multiplier");
  cmd_bench->add_option("--seed", bench.cfg.seed, "build seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (cmd_gen->parsed()) return guarded([&] { return run_gen(gen); });
  if (cmd_build->parsed()) return guarded([&] { return run_build(build); });
  if (cmd_query->parsed()) return guarded([&] { return run_query(query); });
  if (cmd_bench->parsed()) return guarded([&] { return run_bench(bench); });
  return kExitUsage;
}
