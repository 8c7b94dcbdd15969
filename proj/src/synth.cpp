#include "digen/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace digen {

using ordered_json = nlohmann::ordered_json;

DiGraph gen_er(int n_min, int n_max, double p, bool dag, Rng& rng) {
  if (n_min < 1 || n_min > n_max) throw InvalidParam("gen_er: bad node range");
  if (p < 0.0 || p > 1.0) throw InvalidParam("gen_er: p outside [0,1]");
  int n = rng.uniform_range(n_min, n_max);
  DiGraph g(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      if (dag && i <= j) continue;  // lower-triangular: arcs from higher to lower index
      if (rng.bernoulli(p)) g.set_edge(i, j, 1);
    }
  return g;
}

DiGraph gen_price(int n, int m, Rng& rng) {
  if (m == 0) m = std::max(1, static_cast<int>(std::llround(std::log2(static_cast<double>(n)))));
  if (n < m || m < 1) throw InvalidParam("gen_price: need n >= m >= 1");
  DiGraph g(n);
  std::vector<int> bag;
  bag.reserve(static_cast<size_t>(2) * n * m);
  for (int k = 0; k < m; ++k) {
    if (k > 0) g.set_edge(k, k - 1, 1);
    bag.push_back(k);
  }
  std::set<int> targets;
  for (int i = m; i < n; ++i) {
    targets.clear();
    for (int d = 0; d < m; ++d) targets.insert(bag[rng.uniform_int(static_cast<int>(bag.size()))]);
    for (int j : targets) {
      g.set_edge(i, j, 1);
      bag.push_back(j);
    }
    bag.push_back(i);
  }
  return g;
}

DiGraph gen_sbm(int k_min, int k_max, int size_min, int size_max, double p_intra,
                double p_inter, Rng& rng) {
  if (k_min < 2 || k_min > k_max) throw InvalidParam("gen_sbm: bad block-count range");
  if (size_min < 1 || size_min > size_max) throw InvalidParam("gen_sbm: bad block-size range");
  if (p_intra < 0 || p_intra > 1 || p_inter < 0 || p_inter > 1)
    throw InvalidParam("gen_sbm: probabilities outside [0,1]");
  int k = rng.uniform_range(k_min, k_max);
  std::vector<int> z;
  for (int b = 0; b < k; ++b) {
    int size = rng.uniform_range(size_min, size_max);
    for (int v = 0; v < size; ++v) z.push_back(b);
  }
  int n = static_cast<int>(z.size());
  DiGraph g(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      double p = (z[i] == z[j]) ? p_intra : p_inter;
      if (rng.bernoulli(p)) g.set_edge(i, j, 1);
    }
  return g;
}

DatasetSpec read_dataset_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_dataset_spec: cannot open " + path);
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("read_dataset_spec: ") + ex.what(), 0);
  }
  DatasetSpec s;
  s.name = j.value("name", s.name);
  s.family = j.value("family", s.family);
  s.seed = j.value("seed", s.seed);
  if (j.contains("counts")) {
    s.n_train = j["counts"].value("train", s.n_train);
    s.n_val = j["counts"].value("val", s.n_val);
    s.n_test = j["counts"].value("test", s.n_test);
  }
  const auto& p = j.contains("params") ? j["params"] : ordered_json::object();
  s.n_min = p.value("n_min", s.n_min);
  s.n_max = p.value("n_max", s.n_max);
  s.p = p.value("p", s.p);
  s.price_n = p.value("n", s.price_n);
  s.price_m = p.value("m", s.price_m);
  s.k_min = p.value("k_min", s.k_min);
  s.k_max = p.value("k_max", s.k_max);
  s.size_min = p.value("size_min", s.size_min);
  s.size_max = p.value("size_max", s.size_max);
  s.p_intra = p.value("p_intra", s.p_intra);
  s.p_inter = p.value("p_inter", s.p_inter);
  if (s.family != "er" && s.family != "er_dag" && s.family != "price" && s.family != "sbm")
    throw InvalidParam("read_dataset_spec: unknown family " + s.family);
  if (s.n_train < 1 || s.n_val < 1 || s.n_test < 1)
    throw InvalidParam("read_dataset_spec: split counts must be positive");
  return s;
}

DiGraph gen_from_spec(const DatasetSpec& spec, const std::string& split, int index) {
  Rng rng(derive_seed(spec.seed, split, static_cast<std::uint64_t>(index)));
  if (spec.family == "er") return gen_er(spec.n_min, spec.n_max, spec.p, false, rng);
  if (spec.family == "er_dag") return gen_er(spec.n_min, spec.n_max, spec.p, true, rng);
  if (spec.family == "price") return gen_price(spec.price_n, spec.price_m, rng);
  if (spec.family == "sbm")
    return gen_sbm(spec.k_min, spec.k_max, spec.size_min, spec.size_max, spec.p_intra,
                   spec.p_inter, rng);
  throw InvalidParam("gen_from_spec: unknown family " + spec.family);
}

DatasetManifest make_dataset(const DatasetSpec& spec, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  // Absolute split paths here mean write_manifest stores them relative to
  // the manifest, so the dataset directory stays relocatable as a unit.
  auto dir = std::filesystem::absolute(std::filesystem::path(out_dir));
  DatasetManifest m;
  m.name = spec.name;
  m.X = 1;
  m.E = 2;
  const std::pair<const char*, int> splits[] = {
      {"train", spec.n_train}, {"val", spec.n_val}, {"test", spec.n_test}};
  for (const auto& [split, count] : splits) {
    std::vector<DiGraph> graphs;
    graphs.reserve(count);
    for (int i = 0; i < count; ++i) graphs.push_back(gen_from_spec(spec, split, i));
    auto path = (dir / (std::string(split) + ".jsonl")).string();
    write_graphs(graphs, path);
    if (std::string(split) == "train") m.train_path = path;
    else if (std::string(split) == "val") m.val_path = path;
    else m.test_path = path;
  }
  ordered_json meta;
  meta["family"] = spec.family;
  meta["seed"] = spec.seed;
  if (spec.family == "er" || spec.family == "er_dag") {
    meta["n_min"] = spec.n_min;
    meta["n_max"] = spec.n_max;
    meta["p"] = spec.p;
  } else if (spec.family == "price") {
    meta["n"] = spec.price_n;
    int m_eff = spec.price_m > 0 ? spec.price_m
                                 : std::max(1, static_cast<int>(std::llround(
                                                   std::log2(static_cast<double>(spec.price_n)))));
    meta["m"] = m_eff;
  } else {
    meta["k_min"] = spec.k_min;
    meta["k_max"] = spec.k_max;
    meta["size_min"] = spec.size_min;
    meta["size_max"] = spec.size_max;
    meta["p_intra"] = spec.p_intra;
    meta["p_inter"] = spec.p_inter;
  }
  m.meta_json = meta.dump();
  write_manifest(m, (dir / "manifest.json").string());
  return m;
}

EmpiricalStats empirical_stats(const std::vector<DiGraph>& graphs, int X, int E) {
  if (graphs.empty()) throw EmptyDataset("empirical_stats: no graphs");
  EmpiricalStats s;
  s.m_x.assign(X, 0.0);
  s.m_e.assign(E, 0.0);
  double nodes = 0, pairs = 0;
  for (const DiGraph& g : graphs) {
    g.validate(X, E);
    s.node_counts[g.n] += 1.0;
    for (int v = 0; v < g.n; ++v) s.m_x[g.x[v] - 1] += 1.0;
    nodes += g.n;
    for (int i = 0; i < g.n; ++i)
      for (int j = 0; j < g.n; ++j) {
        if (i == j) continue;
        s.m_e[g.edge(i, j)] += 1.0;
        pairs += 1.0;
      }
  }
  for (double& v : s.m_x) v /= nodes;
  if (pairs > 0)
    for (double& v : s.m_e) v /= pairs;
  else
    s.m_e[0] = 1.0;  // single-node corpus: no ordered pairs, absent-edge mass
  double total = 0;
  for (auto& [_, c] : s.node_counts) total += c;
  for (auto& [_, c] : s.node_counts) c /= total;
  return s;
}

}  // namespace digen
