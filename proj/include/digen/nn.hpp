#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "digen/error.hpp"
#include "digen/rng.hpp"

namespace digen {

// Dense row-major tensor of doubles. Doubles everywhere: the gradient
// checks compare against central finite differences at h = 1e-4, which
// single precision cannot resolve.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  Tensor(std::vector<int> s, double fill = 0.0);

  int size() const { return static_cast<int>(v.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols() + c]; }

  void check_finite(const std::string& what) const;
};

// Fan-in-scaled uniform init on [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor init_uniform(int rows, int cols, Rng& rng);

// Reverse-accumulation tape. Values are computed eagerly as ops are
// recorded; backward() replays the closures in reverse order. With
// trace=false nothing is recorded and the tape is a plain evaluator
// (used by samplers, which never need gradients).
class Tape {
 public:
  using Ref = int;
  static constexpr Ref kNone = -1;

  explicit Tape(bool trace) : trace_(trace) {}

  // Leaf over external storage (not owned, must outlive the tape).
  Ref param(const Tensor* t);
  // Leaf with an owned value and no gradient.
  Ref constant(Tensor t);

  const Tensor& val(Ref r) const { return nodes_[static_cast<size_t>(r)].external
                                              ? *nodes_[static_cast<size_t>(r)].external
                                              : nodes_[static_cast<size_t>(r)].value; }
  // Gradient of a node after backward(); zero tensor if never touched.
  const Tensor& grad(Ref r) const;

  // y = x @ w + b over the last axis; x: (R, A), w: (A, B), b: (B) or kNone.
  Ref linear(Ref x, Ref w, Ref b);
  Ref relu(Ref x);
  Ref sigmoid(Ref x);
  Ref add(Ref a, Ref b);
  // a + alpha * b, shapes equal.
  Ref add_scaled(Ref a, Ref b, double alpha);
  Ref mul(Ref a, Ref b);
  // out = a + (m + 1) .* h, all shapes equal (FiLM with the +1 convention).
  Ref film(Ref a, Ref m, Ref h);
  // Row-broadcast FiLM: a_row and m_row are (1, C), h is (R, C).
  Ref film_rows(Ref a_row, Ref m_row, Ref h);
  // Per-row normalization with learned scale and shift; population variance.
  Ref layer_norm(Ref x, Ref gamma, Ref beta, double eps = 1e-5);
  Ref concat_cols(Ref a, Ref b);
  // Pair-table transpose: rows indexed i*n+j map to j*n+i. x: (n*n, C).
  Ref transpose_pairs(Ref x, int n);
  // Per-channel scores: out[(i*n + j), c] = q(i, c) * k(j, c) / sqrt(d_q)
  // where channels c group as heads x d_q. q, k: (n, H*d_q).
  Ref qk_scores(Ref q, Ref k, int n_heads);
  // Joint dual-direction attention. y_st, y_ts: (n*n, C); v_first, v_second:
  // (n, C). Per query i and channel c, softmax over the 2n concatenated keys
  // [y_st(i,:), y_ts(i,:)] with masked keys at -inf; the first n attention
  // columns weight v_first, the last n weight v_second. Masked queries
  // output zero. Returns (n, C).
  Ref dual_attend(Ref y_st, Ref y_ts, Ref v_first, Ref v_second,
                  const std::vector<char>& node_mask);
  // Mask-aware pooling over rows: (R, C) -> (1, 4C) laid out as
  // [max | min | mean | std], population std; std = 0 contributes zero
  // gradient. Throws AllMasked when no row survives.
  Ref pna_pool(Ref x, const std::vector<char>& row_mask);
  // Sum of -log softmax(logits_r)[target_r] over rows with mask 1.
  // Probabilities are clamped at 1e-30 before the log; each clamp bumps
  // clamp_count(). Returns a scalar (1, 1) tensor.
  Ref ce_loss(Ref logits, const std::vector<int>& targets, const std::vector<char>& row_mask);
  // Row-wise softmax, numerically stabilized. Used for decode output.
  Ref softmax_rows(Ref logits);

  void backward(Ref scalar_loss);

  // After backward(): for every parameter leaf whose storage address matches
  // an entry of `storage`, add its gradient into the same slot of `grads`.
  // Slots must already have the parameter shapes (zero-filled).
  void export_param_grads(const std::vector<Tensor>& storage,
                          std::vector<Tensor>& grads) const;

  std::int64_t clamp_count() const { return clamp_count_; }
  bool tracing() const { return trace_; }

 private:
  struct Node {
    Tensor value;                    // owned unless external is set
    const Tensor* external = nullptr;
    Tensor grad;                     // lazily sized by ensure_grad
    bool needs_grad = false;
    std::function<void(Tape&)> back;  // empty for leaves/constants
  };

  Ref push(Tensor value, bool needs_grad, std::function<void(Tape&)> back);
  Tensor& ensure_grad(Ref r);
  bool wants(Ref r) const { return r != kNone && nodes_[static_cast<size_t>(r)].needs_grad; }

  // deque: node references stay valid as ops are appended, so callers
  // may hold val() references across op calls
  std::deque<Node> nodes_;
  bool trace_;
  std::int64_t clamp_count_ = 0;
  Tensor zero_;
};

// Decoupled-weight-decay Adam. update() mutates params in place.
struct AdamW {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-12;
  std::int64_t step = 0;
  std::vector<Tensor> m;  // first moments, one per parameter tensor
  std::vector<Tensor> u;  // second moments

  void init(const std::vector<Tensor>& params);
  void update(std::vector<Tensor>& params, const std::vector<Tensor>& grads);
};

// Max relative error between analytic gradients and central finite
// differences of `loss_fn` at h = 1e-4, probing `probes` random entries of
// every tensor in `params` (all entries when probes <= 0).
double gradcheck(std::vector<Tensor>& params, const std::function<double()>& loss_fn,
                 const std::vector<Tensor>& analytic, int probes, Rng& rng);

}  // namespace digen
