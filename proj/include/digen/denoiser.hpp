#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "digen/graph.hpp"
#include "digen/nn.hpp"
#include "digen/posenc.hpp"

namespace digen {

// Shapes of the dual-attention graph transformer. Positional-encoding
// input widths are copied from pe_dims() of the chosen PEConfig so that a
// checkpoint pins down the full input contract.
struct ModelConfig {
  int layers = 5;
  int d_x = 64;
  int d_e = 32;
  int d_y = 32;
  int n_heads = 8;
  int ff_x = 128;
  int ff_e = 64;
  int ff_y = 64;
  bool layer_norm = true;
  int X = 1;  // node class count
  int E = 2;  // edge class count, class 0 = absent
  int pe_node = 0;
  int pe_edge = 0;
  int pe_graph = 0;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// Flat parameter registry. Tensor order is the declaration order of
// build_params and is the normative checkpoint layout; names exist for
// diagnostics and tests.
struct DenoiserParams {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  Tensor& by_name(const std::string& name);
  std::int64_t total_size() const;
};

DenoiserParams build_params(const ModelConfig& cfg, Rng& rng);

// Per-position probability simplexes over classes.
struct DenoiserOutput {
  int n = 0;
  int X = 1;
  int E = 2;
  std::vector<double> x_prob;  // n * X
  std::vector<double> e_prob;  // n * n * E

  double xp(int i, int c) const { return x_prob[static_cast<size_t>(i) * X + c]; }
  double ep(int i, int j, int c) const {
    return e_prob[(static_cast<size_t>(i) * n + j) * E + c];
  }
};

// Network inputs for one (possibly padded) graph: one-hot features with
// positional encodings appended, the time scalar in the global stream,
// and the masks that keep padded slots inert.
struct EncodedInput {
  int n = 0;
  Tensor x_in;   // (n, X + pe_node)
  Tensor e_in;   // (n*n, E + pe_edge)
  Tensor y_in;   // (1, 1 + pe_graph)
  std::vector<char> node_mask;  // n
  std::vector<char> pair_mask;  // n*n, off-diagonal pairs of unmasked nodes
};

EncodedInput encode_input(const ModelConfig& cfg, const DiGraph& z_t, const PEFeatures& pe,
                          double t, const std::vector<char>* node_mask = nullptr);

struct ForwardRefs {
  Tape::Ref x_logits;  // (n, X)
  Tape::Ref e_logits;  // (n*n, E)
};

// Core forward pass; records onto the given tape. Callers own the tape so
// training can attach a loss and call backward.
ForwardRefs denoiser_forward(Tape& tape, const ModelConfig& cfg, const DenoiserParams& params,
                             const EncodedInput& in);

// Inference helper: forward without tracing, softmax over every position.
DenoiserOutput predict(const ModelConfig& cfg, const DenoiserParams& params, const DiGraph& z_t,
                       const PEFeatures& pe, double t);

// Cross-entropy against the clean graph: node term plus lambda_edge times
// the off-diagonal edge term. When grads_out is non-null it is filled with
// one gradient tensor per parameter (declaration order). Returns the loss;
// clamp_events (if given) accumulates log-probability clamps.
double loss_and_grad(const ModelConfig& cfg, const DenoiserParams& params, const DiGraph& z_t,
                     const PEFeatures& pe, double t, const DiGraph& clean, double lambda_edge,
                     std::vector<Tensor>* grads_out, std::int64_t* clamp_events = nullptr);

// A denoiser as the samplers see it: map a noisy graph and a time to
// per-position distributions over clean classes.
using DenoiserFn = std::function<DenoiserOutput(const DiGraph& z_t, double t)>;

// Trained-network predictor. Recomputes positional encodings on each noisy
// input graph, as at training time.
struct NeuralDenoiser {
  ModelConfig cfg;
  PEConfig pe_cfg;
  DenoiserParams params;
  // Recompute structural features every pe_every calls; in between, the
  // cached features are reused even though the noisy graph changed shape
  // only in its labels. A different node count always forces a recompute.
  // The cache makes a shared instance unsafe to call from multiple threads;
  // give each sampling thread its own copy.
  int pe_every = 1;

  DenoiserOutput operator()(const DiGraph& z_t, double t) const;

 private:
  mutable PEFeatures pe_cache_;
  mutable int calls_since_pe_ = 0;
  mutable bool has_cache_ = false;
};

// Exact posterior for a product target distribution: every node class i.i.d.
// from x_prior and every ordered pair's edge class i.i.d. from e_prior. The
// corruption keeps a position with probability kappa_of_time(t) and
// otherwise resamples it from `noise`. Closed form, no parameters; used to
// test the samplers without training.
struct OracleDenoiser {
  std::vector<double> x_prior;              // X entries
  std::vector<double> e_prior;              // E entries
  std::vector<double> x_noise;              // X entries
  std::vector<double> e_noise;              // E entries
  std::function<double(double)> kappa_of_time;  // t -> keep probability

  DenoiserOutput operator()(const DiGraph& z_t, double t) const;
};

// Closed-form single-position posterior used by OracleDenoiser:
// w(j) = prior(j) * (kappa * [j == observed] + (1 - kappa) * noise(j)),
// normalized.
std::vector<double> oracle_posterior(const std::vector<double>& prior,
                                     const std::vector<double>& noise, double kappa,
                                     int observed);

// Count-based baseline: node count, node class, and conditional edge class
// distributions, with a pooled edge fallback for unseen class pairs.
struct MleModel {
  int X = 1;
  int E = 2;
  std::vector<int> n_values;        // observed node counts
  std::vector<double> n_probs;      // same length
  std::vector<double> x_probs;      // X
  std::vector<double> e_cond;       // X * X * E, rows may be all-zero
  std::vector<double> e_pooled;     // E
};

MleModel mle_fit(const std::vector<DiGraph>& graphs, int X, int E);
DiGraph mle_sample(const MleModel& model, Rng& rng);

// Checkpoint container: JSON header (configs, seed, step) plus float32
// little-endian payload in parameter declaration order, optionally followed
// by AdamW moments for exact training resumption.
struct Checkpoint {
  ModelConfig model;
  PEConfig pe;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  DenoiserParams params;
  bool has_opt = false;
  AdamW opt;
  std::string meta_json = "{}";  // free-form run metadata
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace digen
