#include "digen/graph.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace digen {

using ordered_json = nlohmann::ordered_json;

void DiGraph::validate(int X, int E) const {
  if (n < 1) throw InvalidParam("DiGraph: need at least one node");
  if (static_cast<int>(x.size()) != n) throw InvalidParam("DiGraph: node vector size mismatch");
  if (e.size() != static_cast<size_t>(n) * n) throw InvalidParam("DiGraph: edge matrix size mismatch");
  for (int i = 0; i < n; ++i) {
    if (edge(i, i) != 0) throw InvalidParam("DiGraph: self-loop at node " + std::to_string(i));
    if (x[i] < 1 || (X > 0 && x[i] > X))
      throw InvalidParam("DiGraph: node class out of range at node " + std::to_string(i));
  }
  if (E > 0) {
    for (int c : e)
      if (c < 0 || c >= E) throw InvalidParam("DiGraph: edge class out of range");
  } else {
    for (int c : e)
      if (c < 0) throw InvalidParam("DiGraph: negative edge class");
  }
}

bool is_acyclic(const DiGraph& g) {
  // Kahn peeling.
  std::vector<int> indeg(g.n, 0);
  for (int i = 0; i < g.n; ++i)
    for (int j = 0; j < g.n; ++j)
      if (g.edge(i, j) != 0) indeg[j]++;
  std::vector<int> stack;
  for (int v = 0; v < g.n; ++v)
    if (indeg[v] == 0) stack.push_back(v);
  int seen = 0;
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    seen++;
    for (int j = 0; j < g.n; ++j) {
      if (g.edge(v, j) != 0 && --indeg[j] == 0) stack.push_back(j);
    }
  }
  return seen == g.n;
}

std::vector<int> topological_order(const DiGraph& g) {
  std::vector<int> indeg(g.n, 0);
  for (int i = 0; i < g.n; ++i)
    for (int j = 0; j < g.n; ++j)
      if (g.edge(i, j) != 0) indeg[j]++;
  // Min-index-first peeling keeps the order deterministic.
  std::vector<int> order;
  order.reserve(g.n);
  std::vector<int> ready;
  for (int v = g.n - 1; v >= 0; --v)
    if (indeg[v] == 0) ready.push_back(v);
  while (!ready.empty()) {
    std::sort(ready.begin(), ready.end(), std::greater<int>());
    int v = ready.back();
    ready.pop_back();
    order.push_back(v);
    for (int j = 0; j < g.n; ++j)
      if (g.edge(v, j) != 0 && --indeg[j] == 0) ready.push_back(j);
  }
  if (static_cast<int>(order.size()) != g.n)
    throw CyclicGraph("topological_order: graph has a directed cycle");
  return order;
}

DiGraph permute(const DiGraph& g, const std::vector<int>& perm) {
  if (static_cast<int>(perm.size()) != g.n)
    throw InvalidPermutation("permute: size mismatch");
  std::vector<char> hit(g.n, 0);
  for (int p : perm) {
    if (p < 0 || p >= g.n || hit[p]) throw InvalidPermutation("permute: not a bijection");
    hit[p] = 1;
  }
  DiGraph out(g.n);
  for (int i = 0; i < g.n; ++i) out.x[perm[i]] = g.x[i];
  for (int i = 0; i < g.n; ++i)
    for (int j = 0; j < g.n; ++j)
      out.set_edge(perm[i], perm[j], g.edge(i, j));
  return out;
}

std::vector<int> random_permutation(int n, Rng& rng) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (int i = n - 1; i > 0; --i) std::swap(p[i], p[rng.uniform_int(i + 1)]);
  return p;
}

namespace {

struct NodeSig {
  int cls, outdeg, indeg, recip;
  bool operator==(const NodeSig& o) const {
    return cls == o.cls && outdeg == o.outdeg && indeg == o.indeg && recip == o.recip;
  }
  bool operator<(const NodeSig& o) const {
    return std::tie(cls, outdeg, indeg, recip) < std::tie(o.cls, o.outdeg, o.indeg, o.recip);
  }
};

std::vector<NodeSig> node_signatures(const DiGraph& g) {
  std::vector<NodeSig> sig(g.n);
  for (int v = 0; v < g.n; ++v) {
    NodeSig s{g.x[v], 0, 0, 0};
    for (int u = 0; u < g.n; ++u) {
      bool out = g.edge(v, u) != 0, in = g.edge(u, v) != 0;
      s.outdeg += out;
      s.indeg += in;
      s.recip += (out && in);
    }
    sig[v] = s;
  }
  return sig;
}

struct IsoSearch {
  const DiGraph& g1;
  const DiGraph& g2;
  std::chrono::steady_clock::time_point deadline;
  std::vector<std::vector<int>> candidates;  // per g1 node, indexed by search order
  std::vector<int> order;                    // g1 nodes, most constrained first
  std::vector<int> map12;                    // g1 -> g2, -1 unmapped
  std::vector<char> used2;
  bool timed_out = false;

  bool consistent(int u, int v, int depth) const {
    for (int d = 0; d < depth; ++d) {
      int w = order[d];
      int wv = map12[w];
      if (g1.edge(u, w) != g2.edge(v, wv)) return false;
      if (g1.edge(w, u) != g2.edge(wv, v)) return false;
    }
    return true;
  }

  bool search(int depth) {
    if (std::chrono::steady_clock::now() >= deadline) {
      timed_out = true;
      return false;
    }
    if (depth == g1.n) return true;
    int u = order[depth];
    for (int v : candidates[depth]) {
      if (used2[v]) continue;
      if (!consistent(u, v, depth)) continue;
      map12[u] = v;
      used2[v] = 1;
      if (search(depth + 1)) return true;
      if (timed_out) return false;
      map12[u] = -1;
      used2[v] = 0;
    }
    return false;
  }
};

}  // namespace

IsoResult are_isomorphic(const DiGraph& g1, const DiGraph& g2, double timeout_seconds) {
  auto deadline = std::chrono::steady_clock::now() +
                  std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                      std::chrono::duration<double>(timeout_seconds));
  if (timeout_seconds <= 0.0) return IsoResult::Timeout;
  if (g1.n != g2.n) return IsoResult::No;
  if (g1.n == 0) return IsoResult::Yes;

  auto sig1 = node_signatures(g1), sig2 = node_signatures(g2);
  {
    auto s1 = sig1, s2 = sig2;
    std::sort(s1.begin(), s1.end());
    std::sort(s2.begin(), s2.end());
    if (!(s1 == s2)) return IsoResult::No;
  }

  IsoSearch s{g1, g2, deadline, {}, {}, std::vector<int>(g1.n, -1),
              std::vector<char>(g2.n, 0), false};
  std::vector<std::vector<int>> cand(g1.n);
  for (int u = 0; u < g1.n; ++u)
    for (int v = 0; v < g2.n; ++v)
      if (sig1[u] == sig2[v]) cand[u].push_back(v);

  s.order.resize(g1.n);
  std::iota(s.order.begin(), s.order.end(), 0);
  std::stable_sort(s.order.begin(), s.order.end(), [&](int a, int b) {
    if (cand[a].size() != cand[b].size()) return cand[a].size() < cand[b].size();
    int da = sig1[a].outdeg + sig1[a].indeg, db = sig1[b].outdeg + sig1[b].indeg;
    return da > db;
  });
  s.candidates.resize(g1.n);
  for (int d = 0; d < g1.n; ++d) s.candidates[d] = cand[s.order[d]];

  bool found = s.search(0);
  if (s.timed_out) return IsoResult::Timeout;
  return found ? IsoResult::Yes : IsoResult::No;
}

std::uint64_t wl_hash(const DiGraph& g, int rounds) {
  if (rounds < 1) throw InvalidParam("wl_hash: rounds must be >= 1");
  std::vector<std::uint64_t> color(g.n), next(g.n);
  for (int v = 0; v < g.n; ++v)
    color[v] = mix64(0x243F6A8885A308D3ull ^ static_cast<std::uint64_t>(g.x[v]));
  std::vector<std::uint64_t> in_sig, out_sig;
  for (int r = 0; r < rounds; ++r) {
    for (int v = 0; v < g.n; ++v) {
      in_sig.clear();
      out_sig.clear();
      for (int u = 0; u < g.n; ++u) {
        int cin = g.edge(u, v);
        if (cin != 0) in_sig.push_back(hash_combine(color[u], 0x1000ull + cin));
        int cout = g.edge(v, u);
        if (cout != 0) out_sig.push_back(hash_combine(color[u], 0x2000ull + cout));
      }
      std::sort(in_sig.begin(), in_sig.end());
      std::sort(out_sig.begin(), out_sig.end());
      std::uint64_t h = hash_combine(color[v], 0xA11CEull);
      for (std::uint64_t sv : in_sig) h = hash_combine(h, sv);
      h = hash_combine(h, 0xB0B0ull);
      for (std::uint64_t sv : out_sig) h = hash_combine(h, sv);
      next[v] = h;
    }
    color.swap(next);
  }
  std::sort(color.begin(), color.end());
  std::uint64_t digest = mix64(0xD16E57ull ^ static_cast<std::uint64_t>(g.n));
  for (std::uint64_t c : color) digest = hash_combine(digest, c);
  return digest;
}

std::vector<DiGraph> read_graphs(const std::string& path, int X, int E) {
  std::ifstream in(path);
  if (!in) throw IoError("read_graphs: cannot open " + path);
  std::vector<DiGraph> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(std::string("read_graphs: ") + ex.what(), line_no);
    }
    if (!j.is_object() || !j.contains("n") || !j.contains("x") || !j.contains("e"))
      throw ParseError("read_graphs: record must have fields n, x, e", line_no);
    if (!j["n"].is_number_integer() || j["n"].get<int>() < 1)
      throw ParseError("read_graphs: n must be a positive integer", line_no);
    DiGraph g(j["n"].get<int>());
    if (!j["x"].is_array() || static_cast<int>(j["x"].size()) != g.n)
      throw ParseError("read_graphs: x must be an array of length n", line_no);
    for (int v = 0; v < g.n; ++v) {
      if (!j["x"][v].is_number_integer())
        throw ParseError("read_graphs: node class must be an integer", line_no);
      g.x[v] = j["x"][v].get<int>();
    }
    if (!j["e"].is_array()) throw ParseError("read_graphs: e must be an array", line_no);
    for (const auto& arc : j["e"]) {
      if (!arc.is_array() || arc.size() != 3)
        throw ParseError("read_graphs: each arc must be [i, j, c]", line_no);
      int i = arc[0].get<int>(), jj = arc[1].get<int>(), c = arc[2].get<int>();
      if (i < 0 || i >= g.n || jj < 0 || jj >= g.n || i == jj || c < 1)
        throw ParseError("read_graphs: arc indices/class out of range", line_no);
      g.set_edge(i, jj, c);
    }
    try {
      g.validate(X, E);
    } catch (const InvalidParam& ex) {
      throw ParseError(std::string("read_graphs: ") + ex.what(), line_no);
    }
    out.push_back(std::move(g));
  }
  return out;
}

void write_graphs(const std::vector<DiGraph>& graphs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_graphs: cannot open " + path + " for writing");
  for (const DiGraph& g : graphs) {
    ordered_json j;
    j["n"] = g.n;
    j["x"] = g.x;
    ordered_json arcs = ordered_json::array();
    for (int i = 0; i < g.n; ++i)
      for (int jj = 0; jj < g.n; ++jj)
        if (g.edge(i, jj) != 0) arcs.push_back({i, jj, g.edge(i, jj)});
    j["e"] = std::move(arcs);
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("write_graphs: write failed for " + path);
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_manifest: cannot open " + path);
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("read_manifest: ") + ex.what(), 0);
  }
  DatasetManifest m;
  m.name = j.value("name", "");
  m.X = j.value("X", 1);
  m.E = j.value("E", 2);
  if (!j.contains("splits")) throw ParseError("read_manifest: missing splits", 0);
  auto base = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };
  m.train_path = resolve(j["splits"].value("train", ""));
  m.val_path = resolve(j["splits"].value("val", ""));
  m.test_path = resolve(j["splits"].value("test", ""));
  m.meta_json = j.contains("meta") ? j["meta"].dump() : "{}";
  return m;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
  ordered_json j;
  j["name"] = m.name;
  j["X"] = m.X;
  j["E"] = m.E;
  auto base = std::filesystem::path(path).parent_path();
  auto rel = [&](const std::string& p) {
    std::filesystem::path fp(p);
    if (fp.is_absolute()) {
      auto r = std::filesystem::relative(fp, base);
      if (!r.empty()) return r.string();
    }
    return fp.string();
  };
  j["splits"] = {{"train", rel(m.train_path)}, {"val", rel(m.val_path)}, {"test", rel(m.test_path)}};
  j["meta"] = m.meta_json.empty() ? ordered_json::object() : ordered_json::parse(m.meta_json);
  std::ofstream out(path);
  if (!out) throw IoError("write_manifest: cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write_manifest: write failed for " + path);
}

GraphBatch GraphBatch::from_graphs(const std::vector<DiGraph>& graphs) {
  GraphBatch b;
  b.b = static_cast<int>(graphs.size());
  for (const auto& g : graphs) b.n_max = std::max(b.n_max, g.n);
  b.x.assign(static_cast<size_t>(b.b) * b.n_max, 0);
  b.e.assign(static_cast<size_t>(b.b) * b.n_max * b.n_max, 0);
  b.mask.assign(static_cast<size_t>(b.b) * b.n_max, 0);
  for (int k = 0; k < b.b; ++k) {
    const DiGraph& g = graphs[k];
    for (int v = 0; v < g.n; ++v) {
      b.x[static_cast<size_t>(k) * b.n_max + v] = g.x[v];
      b.mask[static_cast<size_t>(k) * b.n_max + v] = 1;
    }
    for (int i = 0; i < g.n; ++i)
      for (int j = 0; j < g.n; ++j)
        b.e[(static_cast<size_t>(k) * b.n_max + i) * b.n_max + j] = g.edge(i, j);
  }
  return b;
}

std::vector<DiGraph> GraphBatch::to_graphs() const {
  std::vector<DiGraph> out;
  out.reserve(b);
  for (int k = 0; k < b; ++k) {
    int n = 0;
    while (n < n_max && mask[static_cast<size_t>(k) * n_max + n]) n++;
    DiGraph g(std::max(n, 1));
    g.n = n;
    g.x.resize(n);
    g.e.assign(static_cast<size_t>(n) * n, 0);
    for (int v = 0; v < n; ++v) g.x[v] = x[static_cast<size_t>(k) * n_max + v];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        g.set_edge(i, j, e[(static_cast<size_t>(k) * n_max + i) * n_max + j]);
    out.push_back(std::move(g));
  }
  return out;
}

OneHotGraph OneHotGraph::encode(const DiGraph& g, int X, int E) {
  g.validate(X, E);
  OneHotGraph o;
  o.n = g.n;
  o.X = X;
  o.E = E;
  o.x.assign(static_cast<size_t>(g.n) * X, 0.0);
  o.e.assign(static_cast<size_t>(g.n) * g.n * E, 0.0);
  for (int v = 0; v < g.n; ++v) o.x[static_cast<size_t>(v) * X + (g.x[v] - 1)] = 1.0;
  for (int i = 0; i < g.n; ++i)
    for (int j = 0; j < g.n; ++j)
      o.e[(static_cast<size_t>(i) * g.n + j) * E + g.edge(i, j)] = 1.0;
  return o;
}

DiGraph OneHotGraph::decode() const {
  DiGraph g(n);
  for (int v = 0; v < n; ++v) {
    int best = 0;
    for (int c = 1; c < X; ++c)
      if (x[static_cast<size_t>(v) * X + c] > x[static_cast<size_t>(v) * X + best]) best = c;
    g.x[v] = best + 1;
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      size_t base = (static_cast<size_t>(i) * n + j) * E;
      int best = 0;
      for (int c = 1; c < E; ++c)
        if (e[base + c] > e[base + best]) best = c;
      g.set_edge(i, j, best);
    }
  return g;
}

}  // namespace digen
