#pragma once

#include <map>
#include <string>
#include <vector>

#include "digen/graph.hpp"
#include "digen/rng.hpp"

namespace digen {

DiGraph gen_er(int n_min, int n_max, double p, bool dag, Rng& rng);

// Preferential attachment. Seed is a chain of m nodes (arc k -> k-1); each
// later node draws m targets from a bag holding one entry per prior
// attachment participant, so draw probability tracks degree. Duplicated
// draws collapse, hence out-degree <= m.
DiGraph gen_price(int n, int m, Rng& rng);

DiGraph gen_sbm(int k_min, int k_max, int size_min, int size_max, double p_intra,
                double p_inter, Rng& rng);

struct DatasetSpec {
  std::string name = "dataset";
  std::string family = "er";  // er | er_dag | price | sbm
  std::uint64_t seed = 1;
  int n_train = 128, n_val = 32, n_test = 40;
  // er / er_dag
  int n_min = 20, n_max = 80;
  double p = 0.6;
  // price
  int price_n = 64;
  int price_m = 0;  // 0 = default round(log2(n))
  // sbm
  int k_min = 2, k_max = 5;
  int size_min = 20, size_max = 40;
  double p_intra = 0.3, p_inter = 0.05;
};

DatasetSpec read_dataset_spec(const std::string& path);

// Generate one graph of the spec's family from an explicit stream, so any
// single graph can be regenerated in isolation.
DiGraph gen_from_spec(const DatasetSpec& spec, const std::string& split, int index);

// Writes train/val/test JSON-lines files plus manifest.json into out_dir
// and returns the manifest. Deterministic given spec.seed.
DatasetManifest make_dataset(const DatasetSpec& spec, const std::string& out_dir);

struct EmpiricalStats {
  std::vector<double> m_x;            // simplex over node classes 1..X (index c-1)
  std::vector<double> m_e;            // simplex over edge classes 0..E-1
  std::map<int, double> node_counts;  // normalized histogram over N
};

EmpiricalStats empirical_stats(const std::vector<DiGraph>& graphs, int X, int E);

}  // namespace digen
