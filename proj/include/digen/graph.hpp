#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "digen/error.hpp"
#include "digen/rng.hpp"

namespace digen {

// Directed graph over categorical states. Node classes are 1-based
// (values in {1..X}); edge classes are 0-based with class 0 meaning
// "no edge". Every ordered pair of distinct nodes is a variable, so
// edge storage is a dense row-major N x N matrix. No self-loops.
struct DiGraph {
  int n = 0;
  std::vector<int> x;  // size n
  std::vector<int> e;  // size n*n, row-major, e[i*n+j] is the class of arc i->j

  DiGraph() = default;
  explicit DiGraph(int num_nodes)
      : n(num_nodes), x(static_cast<size_t>(num_nodes), 1),
        e(static_cast<size_t>(num_nodes) * num_nodes, 0) {}

  int edge(int i, int j) const { return e[static_cast<size_t>(i) * n + j]; }
  void set_edge(int i, int j, int c) { e[static_cast<size_t>(i) * n + j] = c; }

  int num_edges() const {
    int m = 0;
    for (int v : e) m += (v != 0);
    return m;
  }

  bool operator==(const DiGraph& o) const { return n == o.n && x == o.x && e == o.e; }

  // Throws InvalidParam if shapes or class ranges are broken. X or E of 0
  // skips the corresponding cardinality check.
  void validate(int X = 0, int E = 0) const;
};

enum class IsoResult { Yes, No, Timeout };

bool is_acyclic(const DiGraph& g);

// Order such that every arc points from an earlier to a later position.
// Throws CyclicGraph.
std::vector<int> topological_order(const DiGraph& g);

// perm[i] is the new index of old node i.
DiGraph permute(const DiGraph& g, const std::vector<int>& perm);

std::vector<int> random_permutation(int n, Rng& rng);

// Exact label-aware directed isomorphism with degree/label pruning.
// A zero budget reports Timeout immediately; callers treat Timeout as
// "not isomorphic".
IsoResult are_isomorphic(const DiGraph& g1, const DiGraph& g2, double timeout_seconds);

// Color-refinement digest; permutation invariant, equal digests for
// isomorphic graphs. Used as a prefilter before are_isomorphic.
std::uint64_t wl_hash(const DiGraph& g, int rounds = 3);

// JSON-lines on disk: one graph per line,
//   {"n": <int>, "x": [<int>...], "e": [[i, j, c], ...]}
// where e lists only arcs with class >= 1.
std::vector<DiGraph> read_graphs(const std::string& path, int X = 0, int E = 0);
void write_graphs(const std::vector<DiGraph>& graphs, const std::string& path);

struct DatasetManifest {
  std::string name;
  int X = 1;
  int E = 2;
  std::string train_path;  // resolved relative to the manifest's directory
  std::string val_path;
  std::string test_path;
  std::string meta_json;   // free-form metadata, serialized JSON object
};

DatasetManifest read_manifest(const std::string& path);
void write_manifest(const DatasetManifest& m, const std::string& path);

// Padded batch with node masks. Masked slots hold class 0 and must never
// influence computation on valid slots.
struct GraphBatch {
  int b = 0;
  int n_max = 0;
  std::vector<int> x;          // b * n_max
  std::vector<int> e;          // b * n_max * n_max
  std::vector<std::uint8_t> mask;  // b * n_max

  static GraphBatch from_graphs(const std::vector<DiGraph>& graphs);
  std::vector<DiGraph> to_graphs() const;
};

// One-hot encodings used as denoiser input. Node class c maps to slot c-1.
struct OneHotGraph {
  int n = 0;
  int X = 1;
  int E = 2;
  std::vector<double> x;  // n * X
  std::vector<double> e;  // n * n * E

  static OneHotGraph encode(const DiGraph& g, int X, int E);
  DiGraph decode() const;
};

}  // namespace digen
