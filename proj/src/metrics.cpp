#include "digen/metrics.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <set>
#include <sstream>
#include <thread>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "digen/posenc.hpp"
#include "digen/synth.hpp"

namespace digen {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Descriptors
// ---------------------------------------------------------------------------

std::vector<Descriptor> all_descriptors() {
  return {Descriptor::OUT_DEGREE, Descriptor::IN_DEGREE, Descriptor::CLUSTERING,
          Descriptor::SPECTRE, Descriptor::WAVELET};
}

std::string descriptor_to_string(Descriptor kind) {
  switch (kind) {
    case Descriptor::OUT_DEGREE: return "out_degree";
    case Descriptor::IN_DEGREE: return "in_degree";
    case Descriptor::CLUSTERING: return "clustering";
    case Descriptor::SPECTRE: return "spectre";
    case Descriptor::WAVELET: return "wavelet";
  }
  throw InvalidParam("descriptor_to_string: unknown kind");
}

Descriptor descriptor_from_string(const std::string& name) {
  for (Descriptor kind : all_descriptors())
    if (descriptor_to_string(kind) == name) return kind;
  throw InvalidParam("descriptor_from_string: unknown descriptor '" + name + "'");
}

std::vector<double> directed_clustering(const DiGraph& g) {
  int n = g.n;
  if (n < 1) throw InvalidParam("directed_clustering: graph has no nodes");
  // S = A + A^T with 0/1 arcs, so reciprocated pairs carry weight 2.
  MatrixXd s = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && g.edge(i, j) != 0) {
        s(i, j) += 1.0;
        s(j, i) += 1.0;
      }
  MatrixXd s3 = s * s * s;
  std::vector<double> c(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    int d_tot = 0, d_bi = 0;
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      bool out = g.edge(i, j) != 0;
      bool in = g.edge(j, i) != 0;
      d_tot += static_cast<int>(out) + static_cast<int>(in);
      d_bi += static_cast<int>(out && in);
    }
    double denom = static_cast<double>(d_tot) * (d_tot - 1) - 2.0 * d_bi;
    if (denom > 0.0) c[static_cast<size_t>(i)] = s3(i, i) / 2.0 / denom;
  }
  return c;
}

namespace {

// Eigendecomposition of the random-walk directed Laplacian used by the two
// spectral descriptors (pagerank walk, teleport 0.05, same as the encoder).
void spectral_parts(const DiGraph& g, VectorXd& eigenvalues, MatrixXd& eigenvectors) {
  MatrixXd l = directed_laplacian(g, WalkKind::PAGERANK, 0.05);
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(l);
  if (solver.info() != Eigen::Success)
    throw EigenFailure("descriptor: spectral decomposition failed");
  eigenvalues = solver.eigenvalues();
  eigenvectors = solver.eigenvectors();
}

int clamp_bin(double value, double range, int bins) {
  int idx = static_cast<int>(value / range * bins);
  return std::min(std::max(idx, 0), bins - 1);
}

}  // namespace

std::vector<double> descriptor(const DiGraph& g, Descriptor kind) {
  int n = g.n;
  if (n < 1) throw InvalidParam("descriptor: graph has no nodes");
  switch (kind) {
    case Descriptor::OUT_DEGREE:
    case Descriptor::IN_DEGREE: {
      std::vector<double> hist(static_cast<size_t>(n), 0.0);
      for (int i = 0; i < n; ++i) {
        int deg = 0;
        for (int j = 0; j < n; ++j)
          if (i != j) deg += (kind == Descriptor::OUT_DEGREE ? g.edge(i, j) : g.edge(j, i)) != 0;
        hist[static_cast<size_t>(deg)] += 1.0 / n;
      }
      return hist;
    }
    case Descriptor::CLUSTERING: {
      std::vector<double> hist(100, 0.0);
      for (double c : directed_clustering(g))
        hist[static_cast<size_t>(clamp_bin(c, 1.0, 100))] += 1.0 / n;
      return hist;
    }
    case Descriptor::SPECTRE: {
      VectorXd vals;
      MatrixXd vecs;
      spectral_parts(g, vals, vecs);
      std::vector<double> hist(64, 0.0);
      for (int i = 0; i < n; ++i)
        hist[static_cast<size_t>(clamp_bin(vals(i), 2.0, 64))] += 1.0 / n;
      return hist;
    }
    case Descriptor::WAVELET: {
      VectorXd vals;
      MatrixXd vecs;
      spectral_parts(g, vals, vecs);
      const std::array<double, 5> scales = {0.5, 1.0, 2.0, 5.0, 10.0};
      // One 10-bin histogram of node heat-kernel signatures per scale.
      std::vector<double> hist(scales.size() * 10, 0.0);
      for (size_t si = 0; si < scales.size(); ++si)
        for (int v = 0; v < n; ++v) {
          double hks = 0.0;
          for (int i = 0; i < n; ++i)
            hks += std::exp(-scales[si] * vals(i)) * vecs(v, i) * vecs(v, i);
          hist[si * 10 + static_cast<size_t>(clamp_bin(hks, 1.0, 10))] +=
              1.0 / (static_cast<double>(scales.size()) * n);
        }
      return hist;
    }
  }
  throw InvalidParam("descriptor: unknown kind");
}

// ---------------------------------------------------------------------------
// MMD and ratio summary
// ---------------------------------------------------------------------------

double tv_distance(const std::vector<double>& a, const std::vector<double>& b) {
  size_t len = std::max(a.size(), b.size());
  double sum = 0.0;
  for (size_t i = 0; i < len; ++i) {
    double av = i < a.size() ? a[i] : 0.0;
    double bv = i < b.size() ? b[i] : 0.0;
    sum += std::abs(av - bv);
  }
  return sum / 2.0;
}

namespace {

// Unbiased MMD^2 estimate, clamped at zero; singleton sets degenerate to
// the biased within-set term, which is the kernel self-similarity.
double unbiased_mmd(size_t na, size_t nb, double self_a, double self_b,
                    const std::function<double(size_t, size_t)>& k_aa,
                    const std::function<double(size_t, size_t)>& k_bb,
                    const std::function<double(size_t, size_t)>& k_ab) {
  double xx = self_a;
  if (na > 1) {
    xx = 0.0;
    for (size_t i = 0; i < na; ++i)
      for (size_t j = 0; j < na; ++j)
        if (i != j) xx += k_aa(i, j);
    xx /= static_cast<double>(na) * (na - 1);
  }
  double yy = self_b;
  if (nb > 1) {
    yy = 0.0;
    for (size_t i = 0; i < nb; ++i)
      for (size_t j = 0; j < nb; ++j)
        if (i != j) yy += k_bb(i, j);
    yy /= static_cast<double>(nb) * (nb - 1);
  }
  double xy = 0.0;
  for (size_t i = 0; i < na; ++i)
    for (size_t j = 0; j < nb; ++j) xy += k_ab(i, j);
  xy /= static_cast<double>(na) * nb;
  return std::max(xx + yy - 2.0 * xy, 0.0);
}

}  // namespace

double mmd(const std::vector<std::vector<double>>& a,
           const std::vector<std::vector<double>>& b, double sigma) {
  if (a.empty() || b.empty()) throw EmptyDataset("mmd: both sample sets must be nonempty");
  if (sigma <= 0.0) throw InvalidParam("mmd: sigma must be positive");
  auto kern = [&](const std::vector<double>& x, const std::vector<double>& y) {
    double tv = tv_distance(x, y);
    return std::exp(-tv * tv / (2.0 * sigma * sigma));
  };
  return unbiased_mmd(
      a.size(), b.size(), 1.0, 1.0, [&](size_t i, size_t j) { return kern(a[i], a[j]); },
      [&](size_t i, size_t j) { return kern(b[i], b[j]); },
      [&](size_t i, size_t j) { return kern(a[i], b[j]); });
}

namespace {

// Descriptor extraction for a whole set, fanned out over worker threads
// with results stored by graph index.
std::vector<std::vector<double>> extract_all(const std::vector<DiGraph>& graphs,
                                             Descriptor kind, int threads) {
  int count = static_cast<int>(graphs.size());
  std::vector<std::vector<double>> out(static_cast<size_t>(count));
  auto work = [&](int i) { out[static_cast<size_t>(i)] = descriptor(graphs[static_cast<size_t>(i)], kind); };
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    int workers = std::min(threads, count);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&]() {
        for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) work(i);
      });
    for (std::thread& th : pool) th.join();
  }
  return out;
}

}  // namespace

RatioReport ratio_summary(const std::vector<DiGraph>& gen, const std::vector<DiGraph>& test,
                          const std::vector<DiGraph>& train,
                          const std::vector<Descriptor>& kinds, int threads) {
  if (gen.empty() || test.empty() || train.empty())
    throw EmptyDataset("ratio_summary: all three sets must be nonempty");
  if (kinds.empty()) throw InvalidParam("ratio_summary: no descriptors selected");

  RatioReport report;
  for (Descriptor kind : kinds) {
    std::string name = descriptor_to_string(kind);
    std::vector<std::vector<double>> d_gen = extract_all(gen, kind, threads);
    std::vector<std::vector<double>> d_test = extract_all(test, kind, threads);
    std::vector<std::vector<double>> d_train = extract_all(train, kind, threads);
    double num = mmd(d_gen, d_test);
    double den = mmd(d_train, d_test);
    report.gen_test[name] = num;
    report.train_test[name] = den;
    double ratio;
    if (den < 1e-12) {
      report.floored.push_back(name);
      // When both discrepancies underflow the floor the generated set matches
      // the test set as indistinguishably as the training set does; that is a
      // ratio of 1 by definition, not numerator over floor.
      ratio = num < 1e-12 ? 1.0 : num / 1e-12;
    } else {
      ratio = num / den;
    }
    report.ratio[name] = ratio;
    report.mean_ratio += ratio / static_cast<double>(kinds.size());
  }
  return report;
}

// ---------------------------------------------------------------------------
// Statistical validity
// ---------------------------------------------------------------------------

double chi2_sf1(double w) {
  if (w < 0.0) throw InvalidParam("chi2_sf1: statistic must be nonnegative");
  return std::erfc(std::sqrt(w / 2.0));
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw InvalidParam("ks_statistic: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    double va = a[i], vb = b[j];
    // Step past ties in whichever sample holds the smaller value; with a
    // shared value both empirical CDFs jump together.
    if (va <= vb)
      while (i < a.size() && a[i] == va) ++i;
    if (vb <= va)
      while (j < b.size() && b[j] == vb) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() -
                             static_cast<double>(j) / b.size()));
  }
  return d;
}

double ks_p_value(double d, std::size_t n1, std::size_t n2) {
  if (n1 == 0 || n2 == 0) throw InvalidParam("ks_p_value: empty sample");
  if (d < 0.0 || d > 1.0) throw InvalidParam("ks_p_value: statistic outside [0,1]");
  double ne = static_cast<double>(n1) * n2 / (static_cast<double>(n1) + n2);
  double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  // Below this the 100-term series has not converged; the true tail
  // probability is 1 to far better than the truncation error.
  if (lambda < 0.02) return 1.0;
  double sum = 0.0;
  for (int term = 1; term <= 100; ++term) {
    double sign = (term % 2 == 1) ? 1.0 : -1.0;
    sum += sign * std::exp(-2.0 * term * term * lambda * lambda);
  }
  return std::min(std::max(2.0 * sum, 0.0), 1.0);
}

ValidityResult validity_er(const DiGraph& g, double p, bool expect_dag, double alpha) {
  if (p <= 0.0 || p >= 1.0) throw InvalidParam("validity_er: p must be inside (0,1)");
  if (alpha <= 0.0 || alpha >= 1.0) throw InvalidParam("validity_er: alpha must be inside (0,1)");
  if (g.n < 2) return {0.0, false};
  if (expect_dag && !is_acyclic(g)) return {0.0, false};
  double m_max = expect_dag ? g.n * (g.n - 1) / 2.0 : g.n * (g.n - 1.0);
  double p_hat = g.num_edges() / m_max;
  double w = (p_hat - p) * (p_hat - p) / (p_hat * (1.0 - p_hat) + 1e-6);
  double p_value = chi2_sf1(w);
  return {p_value, p_value > alpha};
}

// ---------------------------------------------------------------------------
// SBM block recovery
// ---------------------------------------------------------------------------

namespace {

// Directed blockmodel log-likelihood under plug-in rates, computed from the
// block sizes and the directed inter-block arc counts.
double block_ll(const std::vector<int>& sizes, const std::vector<std::vector<int>>& arcs) {
  int B = static_cast<int>(sizes.size());
  double ll = 0.0;
  for (int a = 0; a < B; ++a)
    for (int b = 0; b < B; ++b) {
      double pairs = a == b ? static_cast<double>(sizes[static_cast<size_t>(a)]) *
                                  (sizes[static_cast<size_t>(a)] - 1)
                            : static_cast<double>(sizes[static_cast<size_t>(a)]) *
                                  sizes[static_cast<size_t>(b)];
      if (pairs <= 0.0) continue;
      double e = arcs[static_cast<size_t>(a)][static_cast<size_t>(b)];
      double q = std::min(std::max(e / pairs, 1e-9), 1.0 - 1e-9);
      ll += e * std::log(q) + (pairs - e) * std::log(1.0 - q);
    }
  return ll;
}

// K-means on the rows of `points` with a distance-weighted seeding and a
// fixed iteration budget; returns one cluster id per row.
std::vector<int> kmeans_rows(const MatrixXd& points, int K, Rng& rng) {
  int n = static_cast<int>(points.rows());
  std::vector<int> centers;
  centers.push_back(rng.uniform_int(n));
  std::vector<double> dist2(static_cast<size_t>(n), 0.0);
  while (static_cast<int>(centers.size()) < K) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      for (int c : centers) best = std::min(best, (points.row(i) - points.row(c)).squaredNorm());
      dist2[static_cast<size_t>(i)] = best;
      total += best;
    }
    // All points already covered: fall back to a uniform draw.
    centers.push_back(total > 0.0 ? rng.categorical(dist2) : rng.uniform_int(n));
  }

  MatrixXd mu(K, points.cols());
  for (int k = 0; k < K; ++k) mu.row(k) = points.row(centers[static_cast<size_t>(k)]);
  std::vector<int> label(static_cast<size_t>(n), 0);
  for (int iter = 0; iter < 25; ++iter) {
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (points.row(i) - mu.row(0)).squaredNorm();
      for (int k = 1; k < K; ++k) {
        double d = (points.row(i) - mu.row(k)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      label[static_cast<size_t>(i)] = best;
    }
    for (int k = 0; k < K; ++k) {
      VectorXd sum = VectorXd::Zero(points.cols());
      int count = 0;
      for (int i = 0; i < n; ++i)
        if (label[static_cast<size_t>(i)] == k) {
          sum += points.row(i).transpose();
          ++count;
        }
      if (count > 0) mu.row(k) = sum.transpose() / count;
    }
  }
  return label;
}

}  // namespace

std::vector<int> sbm_blocks(const DiGraph& g) {
  int n = g.n;
  if (n < 1) throw InferenceFailure("sbm_blocks: graph has no nodes");
  if (n < 3) return std::vector<int>(static_cast<size_t>(n), 0);

  // Symmetrized normalized Laplacian; isolated nodes keep zero rows.
  MatrixXd s = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && (g.edge(i, j) != 0 || g.edge(j, i) != 0)) s(i, j) = 1.0;
  VectorXd deg = s.rowwise().sum();
  VectorXd inv_sqrt(n);
  for (int i = 0; i < n; ++i) inv_sqrt(i) = deg(i) > 0.0 ? 1.0 / std::sqrt(deg(i)) : 0.0;
  MatrixXd l = MatrixXd::Identity(n, n) -
               inv_sqrt.asDiagonal() * s * inv_sqrt.asDiagonal();
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(l);
  if (solver.info() != Eigen::Success)
    throw EigenFailure("sbm_blocks: spectral decomposition failed");
  VectorXd vals = solver.eigenvalues();

  // Pick the block count at the widest eigengap.
  int k_hi = std::min(6, n - 1);
  int K = 2;
  double best_gap = -1.0;
  for (int k = 2; k <= k_hi; ++k) {
    double gap = vals(k) - vals(k - 1);
    if (gap > best_gap) {
      best_gap = gap;
      K = k;
    }
  }

  MatrixXd embed = solver.eigenvectors().leftCols(K);
  for (int i = 0; i < n; ++i) {
    double norm = embed.row(i).norm();
    if (norm > 0.0) embed.row(i) /= norm;
  }
  Rng rng(derive_seed(0x5b0c5ed5u, "sbm-kmeans", static_cast<std::uint64_t>(n)));
  std::vector<int> label = kmeans_rows(embed, K, rng);

  // Greedy refinement: accept single-node moves that raise the directed
  // blockmodel log-likelihood, sweeping until a full pass changes nothing.
  std::vector<int> sizes(static_cast<size_t>(K), 0);
  std::vector<std::vector<int>> arcs(static_cast<size_t>(K),
                                     std::vector<int>(static_cast<size_t>(K), 0));
  for (int i = 0; i < n; ++i) ++sizes[static_cast<size_t>(label[static_cast<size_t>(i)])];
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && g.edge(i, j) != 0)
        ++arcs[static_cast<size_t>(label[static_cast<size_t>(i)])]
              [static_cast<size_t>(label[static_cast<size_t>(j)])];

  auto move_node = [&](int v, int to) {
    int from = label[static_cast<size_t>(v)];
    for (int u = 0; u < n; ++u) {
      if (u == v) continue;
      int lu = label[static_cast<size_t>(u)];
      if (g.edge(v, u) != 0) {
        --arcs[static_cast<size_t>(from)][static_cast<size_t>(lu)];
        ++arcs[static_cast<size_t>(to)][static_cast<size_t>(lu)];
      }
      if (g.edge(u, v) != 0) {
        --arcs[static_cast<size_t>(lu)][static_cast<size_t>(from)];
        ++arcs[static_cast<size_t>(lu)][static_cast<size_t>(to)];
      }
    }
    --sizes[static_cast<size_t>(from)];
    ++sizes[static_cast<size_t>(to)];
    label[static_cast<size_t>(v)] = to;
  };

  double current = block_ll(sizes, arcs);
  for (int sweep = 0; sweep < 50; ++sweep) {
    bool moved = false;
    for (int v = 0; v < n; ++v) {
      int home = label[static_cast<size_t>(v)];
      for (int to = 0; to < K; ++to) {
        if (to == home) continue;
        move_node(v, to);
        double candidate = block_ll(sizes, arcs);
        if (candidate > current + 1e-12) {
          current = candidate;
          home = to;
          moved = true;
        } else {
          move_node(v, home);
        }
      }
    }
    if (!moved) break;
  }

  // Compact away blocks the refinement emptied.
  std::vector<int> remap(static_cast<size_t>(K), -1);
  int next_id = 0;
  for (int i = 0; i < n; ++i) {
    int& slot = remap[static_cast<size_t>(label[static_cast<size_t>(i)])];
    if (slot < 0) slot = next_id++;
    label[static_cast<size_t>(i)] = slot;
  }
  return label;
}

ValidityResult validity_sbm(const DiGraph& g, double p_intra, double p_inter, double alpha) {
  if (p_intra <= 0.0 || p_intra >= 1.0 || p_inter <= 0.0 || p_inter >= 1.0)
    throw InvalidParam("validity_sbm: rates must be inside (0,1)");
  if (alpha <= 0.0 || alpha >= 1.0) throw InvalidParam("validity_sbm: alpha must be inside (0,1)");
  std::vector<int> label = sbm_blocks(g);
  int B = 0;
  for (int l : label) B = std::max(B, l + 1);
  if (B < 1) throw InferenceFailure("validity_sbm: block recovery found no blocks");

  std::vector<double> sizes(static_cast<size_t>(B), 0.0);
  std::vector<std::vector<double>> arcs(static_cast<size_t>(B),
                                        std::vector<double>(static_cast<size_t>(B), 0.0));
  for (int l : label) sizes[static_cast<size_t>(l)] += 1.0;
  for (int i = 0; i < g.n; ++i)
    for (int j = 0; j < g.n; ++j)
      if (i != j && g.edge(i, j) != 0)
        arcs[static_cast<size_t>(label[static_cast<size_t>(i)])]
            [static_cast<size_t>(label[static_cast<size_t>(j)])] += 1.0;

  double p_sum = 0.0;
  for (int a = 0; a < B; ++a)
    for (int b = 0; b < B; ++b) {
      double pairs = a == b ? sizes[static_cast<size_t>(a)] * (sizes[static_cast<size_t>(a)] - 1)
                            : sizes[static_cast<size_t>(a)] * sizes[static_cast<size_t>(b)];
      double p_hat = arcs[static_cast<size_t>(a)][static_cast<size_t>(b)] / (pairs + 1e-6);
      double expected = a == b ? p_intra : p_inter;
      double w = (p_hat - expected) * (p_hat - expected) / (p_hat * (1.0 - p_hat) + 1e-6);
      p_sum += chi2_sf1(w);
    }
  double p_value = p_sum / (static_cast<double>(B) * B);
  return {p_value, p_value > alpha};
}

ValidityResult validity_price(const DiGraph& g, int m, Rng& rng, double alpha) {
  if (m < 1) throw InvalidParam("validity_price: m must be >= 1");
  if (alpha <= 0.0 || alpha >= 1.0)
    throw InvalidParam("validity_price: alpha must be inside (0,1)");

  auto filtered_degrees = [](const DiGraph& graph) {
    std::vector<double> out;
    for (int i = 0; i < graph.n; ++i) {
      int deg = 0;
      for (int j = 0; j < graph.n; ++j)
        if (i != j) deg += (graph.edge(i, j) != 0) + (graph.edge(j, i) != 0);
      if (deg > 1) out.push_back(static_cast<double>(deg));
    }
    return out;
  };

  std::vector<double> observed = filtered_degrees(g);
  if (observed.empty())
    throw DegenerateSequence("validity_price: no observed degrees above 1 to compare");
  DiGraph reference = gen_price(g.n, m, rng);
  std::vector<double> expected = filtered_degrees(reference);
  if (expected.empty())
    throw DegenerateSequence("validity_price: reference has no degrees above 1");
  double d = ks_statistic(observed, expected);
  double p_value = ks_p_value(d, observed.size(), expected.size());
  return {p_value, p_value > alpha};
}

bool validity_typed(const DiGraph& g, const TypedConstraintRules& rules) {
  auto role = [&](int node) {
    int cls = g.x[static_cast<size_t>(node)];
    auto it = rules.role_of_class.find(cls);
    if (it == rules.role_of_class.end())
      throw UnmappedClass("validity_typed: node class " + std::to_string(cls) + " has no role");
    return it->second;
  };
  for (int i = 0; i < g.n; ++i)
    for (int j = 0; j < g.n; ++j) {
      if (i == j || g.edge(i, j) == 0) continue;
      std::pair<int, int> pair{role(i), role(j)};
      if (std::find(rules.allowed.begin(), rules.allowed.end(), pair) == rules.allowed.end())
        return false;
    }
  return true;
}

// ---------------------------------------------------------------------------
// Valid / unique / novel
// ---------------------------------------------------------------------------

VunReport vun(const std::vector<DiGraph>& gen, const std::vector<DiGraph>& train,
              const ValidityFn& is_valid, double iso_timeout_seconds, int threads) {
  if (gen.empty() || train.empty()) throw EmptyDataset("vun: both sets must be nonempty");
  if (!is_valid) throw InvalidParam("vun: validity function is empty");

  int count = static_cast<int>(gen.size());
  std::vector<char> valid(static_cast<size_t>(count), 0);
  for (int i = 0; i < count; ++i)
    valid[static_cast<size_t>(i)] = is_valid(gen[static_cast<size_t>(i)]) ? 1 : 0;

  std::vector<std::uint64_t> gen_hash(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) gen_hash[static_cast<size_t>(i)] = wl_hash(gen[static_cast<size_t>(i)]);
  std::vector<std::uint64_t> train_hash(train.size());
  for (size_t i = 0; i < train.size(); ++i) train_hash[i] = wl_hash(train[i]);

  std::vector<char> unique(static_cast<size_t>(count), 1);
  std::vector<char> novel(static_cast<size_t>(count), 1);
  std::atomic<int> timeouts{0};

  // The hash is isomorphism-invariant, so unequal hashes prove the pair
  // apart and only equal hashes fall through to the exact check.
  auto check_graph = [&](int i) {
    const DiGraph& gi = gen[static_cast<size_t>(i)];
    for (int j = 0; j < i; ++j) {
      if (gen_hash[static_cast<size_t>(j)] != gen_hash[static_cast<size_t>(i)] ||
          gen[static_cast<size_t>(j)].n != gi.n)
        continue;
      IsoResult r = are_isomorphic(gi, gen[static_cast<size_t>(j)], iso_timeout_seconds);
      if (r == IsoResult::Timeout) ++timeouts;
      if (r == IsoResult::Yes) {
        unique[static_cast<size_t>(i)] = 0;
        break;
      }
    }
    for (size_t j = 0; j < train.size(); ++j) {
      if (train_hash[j] != gen_hash[static_cast<size_t>(i)] || train[j].n != gi.n) continue;
      IsoResult r = are_isomorphic(gi, train[j], iso_timeout_seconds);
      if (r == IsoResult::Timeout) ++timeouts;
      if (r == IsoResult::Yes) {
        novel[static_cast<size_t>(i)] = 0;
        break;
      }
    }
  };

  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) check_graph(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    int workers = std::min(threads, count);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&]() {
        for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) check_graph(i);
      });
    for (std::thread& th : pool) th.join();
  }

  VunReport report;
  report.iso_timeouts = timeouts.load();
  int all_three = 0;
  for (int i = 0; i < count; ++i) {
    report.validity += valid[static_cast<size_t>(i)];
    report.uniqueness += unique[static_cast<size_t>(i)];
    report.novelty += novel[static_cast<size_t>(i)];
    all_three += valid[static_cast<size_t>(i)] && unique[static_cast<size_t>(i)] &&
                 novel[static_cast<size_t>(i)];
  }
  report.validity /= count;
  report.uniqueness /= count;
  report.novelty /= count;
  report.vun = static_cast<double>(all_three) / count;
  return report;
}

// ---------------------------------------------------------------------------
// Joint node-edge metrics
// ---------------------------------------------------------------------------

namespace {

// Orthogonal matrix from seeded standard-normal draws: QR with the R
// diagonal forced nonnegative so the factorization is unique.
MatrixXd seeded_orthogonal(int dim, Rng& rng) {
  MatrixXd m(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) m(i, j) = rng.normal();
  Eigen::HouseholderQR<MatrixXd> qr(m);
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(dim, dim);
  MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < dim; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

constexpr int kEmbedDim = 64;
constexpr int kEmbedRounds = 3;

}  // namespace

std::vector<double> gnn_embed(const DiGraph& g, int X, int E, std::uint64_t seed) {
  if (X < 1 || E < 2) throw InvalidParam("gnn_embed: class counts too small");
  g.validate(X, E);

  // Weight draw order is part of the embedding contract: input projection,
  // self mixing, then forward/backward mixing per nonzero edge class.
  Rng rng(seed);
  MatrixXd w_in = seeded_orthogonal(kEmbedDim, rng).leftCols(X);
  MatrixXd w_self = seeded_orthogonal(kEmbedDim, rng);
  std::vector<MatrixXd> w_fwd, w_bwd;
  for (int c = 1; c < E; ++c) {
    w_fwd.push_back(seeded_orthogonal(kEmbedDim, rng));
    w_bwd.push_back(seeded_orthogonal(kEmbedDim, rng));
  }

  int n = g.n;
  MatrixXd h(n, kEmbedDim);
  for (int v = 0; v < n; ++v) h.row(v) = w_in.col(g.x[static_cast<size_t>(v)] - 1).transpose();

  for (int round = 0; round < kEmbedRounds; ++round) {
    MatrixXd msg = h * w_self.transpose();
    for (int c = 1; c < E; ++c) {
      MatrixXd fwd_sum = MatrixXd::Zero(n, kEmbedDim);
      MatrixXd bwd_sum = MatrixXd::Zero(n, kEmbedDim);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          if (i != j && g.edge(i, j) == c) {
            fwd_sum.row(i) += h.row(j);
            bwd_sum.row(j) += h.row(i);
          }
      msg += fwd_sum * w_fwd[static_cast<size_t>(c - 1)].transpose() +
             bwd_sum * w_bwd[static_cast<size_t>(c - 1)].transpose();
    }
    h = msg.array().tanh();
  }

  VectorXd pooled = h.colwise().sum().transpose();
  return std::vector<double>(pooled.data(), pooled.data() + kEmbedDim);
}

namespace {

void moments(const std::vector<std::vector<double>>& set, VectorXd& mu, MatrixXd& cov) {
  int n = static_cast<int>(set.size());
  int d = static_cast<int>(set[0].size());
  mu = VectorXd::Zero(d);
  for (const std::vector<double>& row : set) {
    if (static_cast<int>(row.size()) != d)
      throw ShapeMismatch("frechet_distance: embedding widths disagree");
    mu += Eigen::Map<const VectorXd>(row.data(), d);
  }
  mu /= n;
  cov = MatrixXd::Zero(d, d);
  if (n > 1) {
    for (const std::vector<double>& row : set) {
      VectorXd c = Eigen::Map<const VectorXd>(row.data(), d) - mu;
      cov += c * c.transpose();
    }
    cov /= n - 1.0;
  }
  cov += 1e-6 * MatrixXd::Identity(d, d);
}

// Symmetric PSD square root via eigendecomposition, negatives clamped.
MatrixXd psd_sqrt(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(m);
  if (solver.info() != Eigen::Success)
    throw EigenFailure("frechet_distance: square root decomposition failed");
  VectorXd vals = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return solver.eigenvectors() * vals.asDiagonal() * solver.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const std::vector<std::vector<double>>& a,
                        const std::vector<std::vector<double>>& b) {
  if (a.empty() || b.empty())
    throw EmptyDataset("frechet_distance: both sets must be nonempty");
  if (a[0].size() != b[0].size())
    throw ShapeMismatch("frechet_distance: embedding widths disagree");
  VectorXd mu1, mu2;
  MatrixXd s1, s2;
  moments(a, mu1, s1);
  moments(b, mu2, s2);
  MatrixXd root1 = psd_sqrt(s1);
  MatrixXd inner = root1 * s2 * root1;
  // tr((S1 S2)^1/2) equals tr((S1^1/2 S2 S1^1/2)^1/2), and the inner form
  // stays symmetric PSD.
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(0.5 * (inner + inner.transpose()));
  if (solver.info() != Eigen::Success)
    throw EigenFailure("frechet_distance: trace decomposition failed");
  double tr_sqrt = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  double dist = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
  return std::max(dist, 0.0);
}

namespace {

double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  double sum = 0.0;
  for (size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sum);
}

double rbf_mmd(const std::vector<std::vector<double>>& a,
               const std::vector<std::vector<double>>& b) {
  // Bandwidth: median pairwise distance over the pooled embeddings.
  std::vector<const std::vector<double>*> all;
  for (const auto& v : a) all.push_back(&v);
  for (const auto& v : b) all.push_back(&v);
  std::vector<double> dists;
  for (size_t i = 0; i < all.size(); ++i)
    for (size_t j = i + 1; j < all.size(); ++j) dists.push_back(euclidean(*all[i], *all[j]));
  double sigma = 1.0;
  if (!dists.empty()) {
    std::sort(dists.begin(), dists.end());
    size_t mid = dists.size() / 2;
    double median =
        dists.size() % 2 == 1 ? dists[mid] : 0.5 * (dists[mid - 1] + dists[mid]);
    if (median > 0.0) sigma = median;
  }
  auto kern = [&](const std::vector<double>& x, const std::vector<double>& y) {
    double d = euclidean(x, y);
    return std::exp(-d * d / (2.0 * sigma * sigma));
  };
  return unbiased_mmd(
      a.size(), b.size(), 1.0, 1.0, [&](size_t i, size_t j) { return kern(a[i], a[j]); },
      [&](size_t i, size_t j) { return kern(b[i], b[j]); },
      [&](size_t i, size_t j) { return kern(a[i], b[j]); });
}

std::set<std::array<int, 3>> triplet_set(const std::vector<DiGraph>& graphs) {
  std::set<std::array<int, 3>> out;
  for (const DiGraph& g : graphs)
    for (int i = 0; i < g.n; ++i)
      for (int j = 0; j < g.n; ++j)
        if (i != j && g.edge(i, j) != 0)
          out.insert({g.x[static_cast<size_t>(i)], g.edge(i, j), g.x[static_cast<size_t>(j)]});
  return out;
}

std::vector<double> label_histogram(const DiGraph& g, int X) {
  std::vector<double> hist(static_cast<size_t>(X), 0.0);
  for (int v : g.x) hist[static_cast<size_t>(v - 1)] += 1.0 / g.n;
  return hist;
}

}  // namespace

JointReport joint_metrics(const std::vector<DiGraph>& gen, const std::vector<DiGraph>& test,
                          int X, int E, std::uint64_t seed) {
  if (X <= 1 && E <= 2)
    throw UnlabeledData("joint_metrics: dataset carries no node or edge labels");
  if (gen.empty() || test.empty())
    throw EmptyDataset("joint_metrics: both sets must be nonempty");

  JointReport report;

  std::vector<std::vector<double>> gen_hist, test_hist;
  for (const DiGraph& g : gen) gen_hist.push_back(label_histogram(g, X));
  for (const DiGraph& g : test) test_hist.push_back(label_histogram(g, X));
  report.node_type_mmd = mmd(gen_hist, test_hist);

  std::set<std::array<int, 3>> gen_t = triplet_set(gen);
  std::set<std::array<int, 3>> test_t = triplet_set(test);
  std::size_t hit = 0;
  for (const std::array<int, 3>& t : gen_t) hit += test_t.count(t);
  if (gen_t.empty() && test_t.empty()) {
    report.precision = 1.0;
    report.recall = 1.0;
  } else {
    report.precision = gen_t.empty() ? 0.0 : static_cast<double>(hit) / gen_t.size();
    report.recall = test_t.empty() ? 0.0 : static_cast<double>(hit) / test_t.size();
  }

  std::vector<std::vector<double>> gen_emb, test_emb;
  for (const DiGraph& g : gen) gen_emb.push_back(gnn_embed(g, X, E, seed));
  for (const DiGraph& g : test) test_emb.push_back(gnn_embed(g, X, E, seed));
  report.fid = frechet_distance(gen_emb, test_emb);
  report.rbf_mmd = rbf_mmd(gen_emb, test_emb);
  return report;
}

// ---------------------------------------------------------------------------
// Combined report
// ---------------------------------------------------------------------------

std::string EvalReport::to_json() const {
  ordered_json j = ordered_json::object();
  if (has_ratios) {
    for (const auto& [name, value] : ratios.ratio) {
      j["mmd"][name]["gen_test"] = ratios.gen_test.at(name);
      j["mmd"][name]["train_test"] = ratios.train_test.at(name);
      j["mmd"][name]["ratio"] = value;
    }
    j["ratio"] = ratios.mean_ratio;
    j["floored"] = ratios.floored;
  }
  if (has_vun) {
    j["validity"] = vun.validity;
    j["uniqueness"] = vun.uniqueness;
    j["novelty"] = vun.novelty;
    j["vun"] = vun.vun;
    j["iso_timeouts"] = vun.iso_timeouts;
  }
  if (has_joint) {
    j["joint"]["node_type_mmd"] = joint.node_type_mmd;
    j["joint"]["precision"] = joint.precision;
    j["joint"]["recall"] = joint.recall;
    j["joint"]["fid"] = joint.fid;
    j["joint"]["rbf_mmd"] = joint.rbf_mmd;
  }
  return j.dump(2);
}

std::string EvalReport::to_csv() const {
  std::ostringstream head, row;
  bool first = true;
  auto emit = [&](const std::string& name, double value) {
    if (!first) {
      head << ',';
      row << ',';
    }
    head << name;
    row << value;
    first = false;
  };
  if (has_ratios) emit("ratio", ratios.mean_ratio);
  if (has_vun) {
    emit("validity", vun.validity);
    emit("uniqueness", vun.uniqueness);
    emit("novelty", vun.novelty);
    emit("vun", vun.vun);
  }
  if (has_ratios)
    for (const auto& [name, value] : ratios.ratio) emit("ratio_" + name, value);
  if (has_joint) {
    emit("node_type_mmd", joint.node_type_mmd);
    emit("precision", joint.precision);
    emit("recall", joint.recall);
    emit("fid", joint.fid);
    emit("rbf_mmd", joint.rbf_mmd);
  }
  return head.str() + "\n" + row.str() + "\n";
}

}  // namespace digen
