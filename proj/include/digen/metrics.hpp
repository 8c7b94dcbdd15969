#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "digen/graph.hpp"
#include "digen/rng.hpp"

namespace digen {

// ---------------------------------------------------------------------------
// Structural descriptors
// ---------------------------------------------------------------------------

enum class Descriptor { OUT_DEGREE, IN_DEGREE, CLUSTERING, SPECTRE, WAVELET };

std::vector<Descriptor> all_descriptors();
std::string descriptor_to_string(Descriptor kind);
Descriptor descriptor_from_string(const std::string& name);

// Fagiolo local clustering coefficient per node: with S = A + A^T,
// c_i = (S^3)_ii / 2 / (d_tot(d_tot - 1) - 2 d_bi), zero when the
// denominator vanishes. Matches the digraph clustering convention used by
// common graph libraries.
std::vector<double> directed_clustering(const DiGraph& g);

// Per-graph descriptor as a normalized histogram:
//   OUT_DEGREE / IN_DEGREE  n bins over degrees 0..n-1
//   CLUSTERING              100 bins over [0,1]
//   SPECTRE                 64 bins over [0,2] of random-walk Laplacian
//                           eigenvalues (pagerank walk, teleport 0.05)
//   WAVELET                 per scale in {0.5,1,2,5,10}, 10 bins over [0,1]
//                           of node heat-kernel signatures, concatenated
std::vector<double> descriptor(const DiGraph& g, Descriptor kind);

// Total variation between histograms; the shorter one is zero-padded.
double tv_distance(const std::vector<double>& a, const std::vector<double>& b);

// Unbiased MMD^2 estimate under the Gaussian-TV kernel
// k(x,y) = exp(-tv(x,y)^2 / (2 sigma^2)), clamped at zero. Singleton sets
// fall back to the biased within-set term (the kernel self-similarity 1).
double mmd(const std::vector<std::vector<double>>& a,
           const std::vector<std::vector<double>>& b, double sigma = 1.0);

struct RatioReport {
  std::map<std::string, double> gen_test;    // MMD(gen, test) per descriptor
  std::map<std::string, double> train_test;  // MMD(train, test) per descriptor
  std::map<std::string, double> ratio;       // their quotient
  std::vector<std::string> floored;          // descriptors whose denominator hit the floor
  double mean_ratio = 0.0;
};

// Mean over descriptors of MMD(gen,test) / MMD(train,test); denominators
// below 1e-12 are floored and flagged. Descriptor extraction fans out over
// `threads` workers with results reduced in graph order.
RatioReport ratio_summary(const std::vector<DiGraph>& gen, const std::vector<DiGraph>& test,
                          const std::vector<DiGraph>& train,
                          const std::vector<Descriptor>& kinds, int threads = 1);

// ---------------------------------------------------------------------------
// Statistical validity tests
// ---------------------------------------------------------------------------

// Upper tail of the chi-squared distribution with one degree of freedom.
double chi2_sf1(double w);

// Two-sample Kolmogorov-Smirnov statistic (ties allowed) and its
// asymptotic p-value with the Stephens small-sample correction.
double ks_statistic(std::vector<double> a, std::vector<double> b);
double ks_p_value(double d, std::size_t n1, std::size_t n2);

struct ValidityResult {
  double p_value = 0.0;
  bool pass = false;
};

// Wald test of the empirical edge density against p. The possible-edge
// count is n(n-1)/2 when a DAG is expected and n(n-1) otherwise; expecting
// a DAG also makes acyclicity a hard requirement. Single-node graphs fail.
ValidityResult validity_er(const DiGraph& g, double p, bool expect_dag, double alpha = 0.05);

// Block recovery used by validity_sbm: spectral clustering on the
// OR-symmetrized adjacency with the block count picked by the largest
// eigengap in 2..6, refined by greedy label sweeps maximizing a directed
// blockmodel log-likelihood. Returns one block id per node.
std::vector<int> sbm_blocks(const DiGraph& g);

// Mean of per-block-pair Wald p-values against the expected intra/inter
// edge probabilities.
ValidityResult validity_sbm(const DiGraph& g, double p_intra, double p_inter,
                            double alpha = 0.05);

// Two-sample KS test of the degree sequence (total degree, entries > 1
// only) against a fresh preferential-attachment reference with the same
// node count and out-degree m drawn from `rng`.
ValidityResult validity_price(const DiGraph& g, int m, Rng& rng, double alpha = 0.05);

// Role constraints for labeled datasets: every node class maps to a role
// and every arc's (source role, target role) pair must be allowed.
struct TypedConstraintRules {
  std::map<int, int> role_of_class;            // node class -> role id
  std::vector<std::pair<int, int>> allowed;    // permitted (source, target) role pairs
};

bool validity_typed(const DiGraph& g, const TypedConstraintRules& rules);

// ---------------------------------------------------------------------------
// Valid / unique / novel
// ---------------------------------------------------------------------------

using ValidityFn = std::function<bool(const DiGraph&)>;

struct VunReport {
  double validity = 0.0;
  double uniqueness = 0.0;
  double novelty = 0.0;
  double vun = 0.0;
  int iso_timeouts = 0;
};

// validity: fraction of gen accepted by is_valid (evaluated serially, in
// order, so stateful checkers stay deterministic). uniqueness: fraction not
// isomorphic to any earlier generated graph. novelty: fraction not
// isomorphic to any training graph. Isomorphism uses a hash prefilter, then
// the exact check; a timeout counts as non-isomorphic. vun: fraction
// passing all three at once. Pair checks fan out over `threads`.
VunReport vun(const std::vector<DiGraph>& gen, const std::vector<DiGraph>& train,
              const ValidityFn& is_valid, double iso_timeout_seconds = 5.0, int threads = 1);

// ---------------------------------------------------------------------------
// Joint node-edge metrics
// ---------------------------------------------------------------------------

struct JointReport {
  double node_type_mmd = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double fid = 0.0;
  double rbf_mmd = 0.0;
};

// Graph embedding for FID / RBF-MMD: three rounds of message passing with
// width 64 and tanh nonlinearity,
//   h_v <- tanh(W_self h_v + sum_c W_fwd[c] (sum of h_u over arcs v->u of
//          class c) + sum_c W_bwd[c] (sum over arcs u->v of class c)),
// starting from h_v = W_in onehot(class_v) and ending with sum pooling.
// All matrices come from `seed`: standard-normal draws in a fixed order,
// QR-orthogonalized with the R diagonal forced nonnegative.
std::vector<double> gnn_embed(const DiGraph& g, int X, int E, std::uint64_t seed);

// Frechet distance between Gaussian fits (sample covariance with Bessel
// correction, 1e-6 diagonal loading) of two embedding sets.
double frechet_distance(const std::vector<std::vector<double>>& a,
                        const std::vector<std::vector<double>>& b);

// node_type_mmd: Gaussian-TV MMD over per-graph node-label histograms.
// precision / recall: distinct (source class, edge class, target class)
// triplets of gen matched against test. fid / rbf_mmd: Frechet distance and
// RBF-kernel MMD (bandwidth = median pairwise distance of the pooled
// embeddings) over the seeded embeddings. Throws UnlabeledData when the
// dataset carries no labels (X <= 1 and E <= 2).
JointReport joint_metrics(const std::vector<DiGraph>& gen, const std::vector<DiGraph>& test,
                          int X, int E, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Combined report
// ---------------------------------------------------------------------------

struct EvalReport {
  bool has_ratios = false;
  RatioReport ratios;
  bool has_vun = false;
  VunReport vun;
  bool has_joint = false;
  JointReport joint;

  // Sections whose flag is false are omitted entirely.
  std::string to_json() const;
  // Two lines: a header row and a value row.
  std::string to_csv() const;
};

}  // namespace digen
