#include "digen/nn.hpp"

#include <algorithm>
#include <cmath>

namespace digen {

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
  size_t total = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeMismatch("Tensor: negative dimension");
    total *= static_cast<size_t>(d);
  }
  v.assign(total, fill);
}

void Tensor::check_finite(const std::string& what) const {
  for (double x : v)
    if (!std::isfinite(x)) throw NonFinite(what + ": non-finite tensor entry");
}

Tensor init_uniform(int rows, int cols, Rng& rng) {
  Tensor t({rows, cols});
  double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, rows)));
  for (double& x : t.v) x = (2.0 * rng.uniform() - 1.0) * bound;
  return t;
}

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw ShapeMismatch(msg);
}

}  // namespace

Tape::Ref Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&)> back) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = trace_ && needs_grad;
  if (node.needs_grad) node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return static_cast<Ref>(nodes_.size()) - 1;
}

Tape::Ref Tape::param(const Tensor* t) {
  Node node;
  node.external = t;
  node.needs_grad = trace_;
  nodes_.push_back(std::move(node));
  return static_cast<Ref>(nodes_.size()) - 1;
}

Tape::Ref Tape::constant(Tensor t) {
  Node node;
  node.value = std::move(t);
  node.needs_grad = false;
  nodes_.push_back(std::move(node));
  return static_cast<Ref>(nodes_.size()) - 1;
}

const Tensor& Tape::grad(Ref r) const {
  const Node& node = nodes_[static_cast<size_t>(r)];
  return node.grad.v.empty() ? zero_ : node.grad;
}

Tensor& Tape::ensure_grad(Ref r) {
  Node& node = nodes_[static_cast<size_t>(r)];
  if (node.grad.v.empty()) node.grad = Tensor(val(r).shape);
  return node.grad;
}

void Tape::backward(Ref scalar_loss) {
  if (!trace_) throw InvalidParam("Tape::backward on a non-tracing tape");
  require(val(scalar_loss).size() == 1, "backward: loss must be a scalar");
  ensure_grad(scalar_loss).v[0] = 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& node = nodes_[static_cast<size_t>(i)];
    if (node.back && !node.grad.v.empty()) node.back(*this);
  }
}

void Tape::export_param_grads(const std::vector<Tensor>& storage,
                              std::vector<Tensor>& grads) const {
  if (grads.size() != storage.size())
    throw ShapeMismatch("export_param_grads: slot count disagrees with storage");
  for (const Node& node : nodes_) {
    if (!node.external) continue;
    for (size_t k = 0; k < storage.size(); ++k) {
      if (node.external != &storage[k]) continue;
      if (!node.grad.v.empty()) {
        require(grads[k].shape == storage[k].shape, "export_param_grads: slot shape");
        for (size_t i = 0; i < node.grad.v.size(); ++i) grads[k].v[i] += node.grad.v[i];
      }
      break;
    }
  }
}

Tape::Ref Tape::linear(Ref x, Ref w, Ref b) {
  const Tensor& xv = val(x);
  const Tensor& wv = val(w);
  require(xv.shape.size() == 2 && wv.shape.size() == 2, "linear: rank-2 inputs required");
  int R = xv.dim(0), A = xv.dim(1), B = wv.dim(1);
  require(wv.dim(0) == A, "linear: inner dimensions disagree");
  Tensor out({R, B});
  for (int r = 0; r < R; ++r)
    for (int a = 0; a < A; ++a) {
      double xa = xv.at(r, a);
      if (xa == 0.0) continue;
      for (int c = 0; c < B; ++c) out.at(r, c) += xa * wv.at(a, c);
    }
  if (b != kNone) {
    const Tensor& bv = val(b);
    require(bv.shape.size() == 2 && bv.dim(0) == 1 && bv.dim(1) == B, "linear: bias shape");
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < B; ++c) out.at(r, c) += bv.at(0, c);
  }
  bool ng = wants(x) || wants(w) || (b != kNone && wants(b));
  Ref out_ref = push(std::move(out), ng, nullptr);
  if (trace_ && ng)
    nodes_.back().back = [x, w, b, out_ref, R, A, B](Tape& t) {
      const Tensor& g = t.grad(out_ref);
      const Tensor& xv2 = t.val(x);
      const Tensor& wv2 = t.val(w);
      if (t.wants(x)) {
        Tensor& gx = t.ensure_grad(x);
        for (int r = 0; r < R; ++r)
          for (int a = 0; a < A; ++a) {
            double acc = 0.0;
            for (int c = 0; c < B; ++c) acc += g.at(r, c) * wv2.at(a, c);
            gx.at(r, a) += acc;
          }
      }
      if (t.wants(w)) {
        Tensor& gw = t.ensure_grad(w);
        for (int r = 0; r < R; ++r)
          for (int a = 0; a < A; ++a) {
            double xa = xv2.at(r, a);
            if (xa == 0.0) continue;
            for (int c = 0; c < B; ++c) gw.at(a, c) += xa * g.at(r, c);
          }
      }
      if (b != kNone && t.wants(b)) {
        Tensor& gb = t.ensure_grad(b);
        for (int r = 0; r < R; ++r)
          for (int c = 0; c < B; ++c) gb.at(0, c) += g.at(r, c);
      }
    };
  return out_ref;
}

Tape::Ref Tape::relu(Ref x) {
  Tensor out = val(x);
  for (double& e : out.v) e = e > 0.0 ? e : 0.0;
  bool ng = wants(x);
  Ref out_ref = push(std::move(out), ng, nullptr);
  if (trace_ && ng)
    nodes_.back().back = [x, out_ref](Tape& t) {
      const Tensor& g = t.grad(out_ref);
      const Tensor& xv = t.val(x);
      Tensor& gx = t.ensure_grad(x);
      for (size_t i = 0; i < g.v.size(); ++i)
        if (xv.v[i] > 0.0) gx.v[i] += g.v[i];
    };
  return out_ref;
}

Tape::Ref Tape::sigmoid(Ref x) {
  Tensor out = val(x);
  for (double& e : out.v) {
    if (e >= 0.0) {
      e = 1.0 / (1.0 + std::exp(-e));
    } else {
      double z = std::exp(e);
      e = z / (1.0 + z);
    }
  }
  bool ng = wants(x);
  Ref out_ref = push(std::move(out), ng, nullptr);
  if (trace_ && ng)
    nodes_.back().back = [x, out_ref](Tape& t) {
      const Tensor& g = t.grad(out_ref);
      const Tensor& s = t.val(out_ref);
      Tensor& gx = t.ensure_grad(x);
      for (size_t i = 0; i < g.v.size(); ++i) gx.v[i] += g.v[i] * s.v[i] * (1.0 - s.v[i]);
    };
  return out_ref;
}

Tape::Ref Tape::add(Ref a, Ref b) { return add_scaled(a, b, 1.0); }

Tape::Ref Tape::add_scaled(Ref a, Ref b, double alpha) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  require(av.shape == bv.shape, "add: shapes disagree");
  Tensor out = av;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += alpha * bv.v[i];
  bool ng = wants(a) || wants(b);
  Ref out_ref = push(std::move(out), ng, nullptr);
  if (trace_ && ng)
    nodes_.back().back = [a, b, alpha, out_ref](Tape& t) {
      const Tensor& g = t.grad(out_ref);
      if (t.wants(a)) {
        Tensor& ga = t.ensure_grad(a);
        for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
      }
      if (t.wants(b)) {
        Tensor& gb = t.ensure_grad(b);
        for (size_t i = 0; i < g.v.size(); ++i) gb.v[i] += alpha * g.v[i];
      }
    };
  return out_ref;
}

Tape::Ref Tape::mul(Ref a, Ref b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  require(av.shape == bv.shape, "mul: shapes disagree");
  Tensor out = av;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= bv.v[i];
  bool ng = wants(a) || wants(b);
  Ref out_ref = push(std::move(out), ng, nullptr);
  if (trace_ && ng)
    nodes_.back().back = [a, b, out_ref](Tape& t) {
      const Tensor& g = t.grad(out_ref);
      const Tensor& av2 = t.val(a);
      const Tensor& bv2 = t.val(b);
      if (t.wants(a)) {
        Tensor& ga = t.ensure_grad(a);
        for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * bv2.v[i];
      }
      if (t.wants(b)) {
        Tensor& gb = t.ensure_grad(b);
        for (size_t i = 0; i < g.v.size(); ++i) gb.v[i] += g.v[i] * av2.v[i];
      }
    };
  return out_ref;
}

Tape::Ref Tape::film(Ref a, Ref m, Ref h) {
  const Tensor& av = val(a);
  const Tensor& mv = val(m);
  const Tensor& hv = val(h);
  require(av.shape == mv.shape && av.shape == hv.shape, "film: shapes disagree");
  Tensor out = av;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += (mv.v[i] + 1.0) * hv.v[i];
  bool ng = wants(a) || wants(m) || wants(h);
  Ref out_ref = push(std::move(out), ng, nullptr);
  if (trace_ && ng)
    nodes_.back().back = [a, m, h, out_ref](Tape& t) {
      const Tensor& g = t.grad(out_ref);
      const Tensor& mv2 = t.val(m);
      const Tensor& hv2 = t.val(h);
      if (t.wants(a)) {
        Tensor& ga = t.ensure_grad(a);
        for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
      }
      if (t.wants(m)) {
        Tensor& gm = t.ensure_grad(m);
        for (size_t i = 0; i < g.v.size(); ++i) gm.v[i] += g.v[i] * hv2.v[i];
      }
      if (t.wants(h)) {
        Tensor& gh = t.ensure_grad(h);
        for (size_t i = 0; i < g.v.size(); ++i) gh.v[i] += g.v[i] * (mv2.v[i] + 1.0);
      }
    };
  return out_ref;
}

Tape::Ref Tape::film_rows(Ref a_row, Ref m_row, Ref h) {
  const Tensor& av = val(a_row);
  const Tensor& mv = val(m_row);
  const Tensor& hv = val(h);
  require(hv.shape.size() == 2, "film_rows: h must be rank 2");
  int R = hv.dim(0), C = hv.dim(1);
  require(av.shape.size() == 2 && av.dim(0) == 1 && av.dim(1) == C, "film_rows: a_row shape");
  require(mv.shape.size() == 2 && mv.dim(0) == 1 && mv.dim(1) == C, "film_rows: m_row shape");
  Tensor out({R, C});
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) out.at(r, c) = av.at(0, c) + (mv.at(0, c) + 1.0) * hv.at(r, c);
  bool ng = wants(a_row) || wants(m_row) || wants(h);
  Ref out_ref = push(std::move(out), ng, nullptr);
  if (trace_ && ng)
    nodes_.back().back = [a_row, m_row, h, out_ref, R, C](Tape& t) {
      const Tensor& g = t.grad(out_ref);
      const Tensor& mv2 = t.val(m_row);
      const Tensor& hv2 = t.val(h);
      if (t.wants(a_row)) {
        Tensor& ga = t.ensure_grad(a_row);
        for (int r = 0; r < R; ++r)
          for (int c = 0; c < C; ++c) ga.at(0, c) += g.at(r, c);
      }
      if (t.wants(m_row)) {
        Tensor& gm = t.ensure_grad(m_row);
        for (int r = 0; r < R; ++r)
          for (int c = 0; c < C; ++c) gm.at(0, c) += g.at(r, c) * hv2.at(r, c);
      }
      if (t.wants(h)) {
        Tensor& gh = t.ensure_grad(h);
        for (int r = 0; r < R; ++r)
          for (int c = 0; c < C; ++c) gh.at(r, c) += g.at(r, c) * (mv2.at(0, c) + 1.0);
      }
    };
  return out_ref;
}

Tape::Ref Tape::layer_norm(Ref x, Ref gamma, Ref beta, double eps) {
  const Tensor& xv = val(x);
  const Tensor& gv = val(gamma);
  const Tensor& bv = val(beta);
  require(xv.shape.size() == 2, "layer_norm: rank-2 input required");
  int R = xv.dim(0), C = xv.dim(1);
  require(gv.dim(0) == 1 && gv.dim(1) == C && bv.dim(0) == 1 && bv.dim(1) == C,
          "layer_norm: scale/shift shape");
  Tensor out({R, C});
  for (int r = 0; r < R; ++r) {
    double mean = 0.0;
    for (int c = 0; c < C; ++c) mean += xv.at(r, c);
    mean /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) {
      double d = xv.at(r, c) - mean;
      var += d * d;
    }
    var /= C;
    double inv = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < C; ++c)
      out.at(r, c) = gv.at(0, c) * (xv.at(r, c) - mean) * inv + bv.at(0, c);
  }
  bool ng = wants(x) || wants(gamma) || wants(beta);
  Ref out_ref = push(std::move(out), ng, nullptr);
  if (trace_ && ng)
    nodes_.back().back = [x, gamma, beta, eps, out_ref, R, C](Tape& t) {
      const Tensor& g = t.grad(out_ref);
      const Tensor& xv2 = t.val(x);
      const Tensor& gv2 = t.val(gamma);
      for (int r = 0; r < R; ++r) {
        double mean = 0.0;
        for (int c = 0; c < C; ++c) mean += xv2.at(r, c);
        mean /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) {
          double d = xv2.at(r, c) - mean;
          var += d * d;
        }
        var /= C;
        double inv = 1.0 / std::sqrt(var + eps);
        if (t.wants(beta)) {
          Tensor& gb = t.ensure_grad(beta);
          for (int c = 0; c < C; ++c) gb.at(0, c) += g.at(r, c);
        }
        if (t.wants(gamma)) {
          Tensor& gg = t.ensure_grad(gamma);
          for (int c = 0; c < C; ++c)
            gg.at(0, c) += g.at(r, c) * (xv2.at(r, c) - mean) * inv;
        }
        if (t.wants(x)) {
          Tensor& gx = t.ensure_grad(x);
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (int c = 0; c < C; ++c) {
            double xhat = (xv2.at(r, c) - mean) * inv;
            double dxhat = g.at(r, c) * gv2.at(0, c);
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
          }
          for (int c = 0; c < C; ++c) {
            double xhat = (xv2.at(r, c) - mean) * inv;
            double dxhat = g.at(r, c) * gv2.at(0, c);
            gx.at(r, c) += inv / C * (C * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
          }
        }
      }
    };
  return out_ref;
}

Tape::Ref Tape::concat_cols(Ref a, Ref b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  require(av.shape.size() == 2 && bv.shape.size() == 2 && av.dim(0) == bv.dim(0),
          "concat_cols: row counts disagree");
  int R = av.dim(0), A = av.dim(1), B = bv.dim(1);
  Tensor out({R, A + B});
  for (int r = 0; r < R; ++r) {
    for (int c = 0; c < A; ++c) out.at(r, c) = av.at(r, c);
    for (int c = 0; c < B; ++c) out.at(r, A + c) = bv.at(r, c);
  }
  bool ng = wants(a) || wants(b);
  Ref out_ref = push(std::move(out), ng, nullptr);
  if (trace_ && ng)
    nodes_.back().back = [a, b, out_ref, R, A, B](Tape& t) {
      const Tensor& g = t.grad(out_ref);
      if (t.wants(a)) {
        Tensor& ga = t.ensure_grad(a);
        for (int r = 0; r < R; ++r)
          for (int c = 0; c < A; ++c) ga.at(r, c) += g.at(r, c);
      }
      if (t.wants(b)) {
        Tensor& gb = t.ensure_grad(b);
        for (int r = 0; r < R; ++r)
          for (int c = 0; c < B; ++c) gb.at(r, c) += g.at(r, A + c);
      }
    };
  return out_ref;
}

Tape::Ref Tape::transpose_pairs(Ref x, int n) {
  const Tensor& xv = val(x);
  require(xv.shape.size() == 2 && xv.dim(0) == n * n, "transpose_pairs: rows must be n*n");
  int C = xv.dim(1);
  Tensor out({n * n, C});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int c = 0; c < C; ++c) out.at(i * n + j, c) = xv.at(j * n + i, c);
  bool ng = wants(x);
  Ref out_ref = push(std::move(out), ng, nullptr);
  if (trace_ && ng)
    nodes_.back().back = [x, n, C, out_ref](Tape& t) {
      const Tensor& g = t.grad(out_ref);
      Tensor& gx = t.ensure_grad(x);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          for (int c = 0; c < C; ++c) gx.at(j * n + i, c) += g.at(i * n + j, c);
    };
  return out_ref;
}

Tape::Ref Tape::qk_scores(Ref q, Ref k, int n_heads) {
  const Tensor& qv = val(q);
  const Tensor& kv = val(k);
  require(qv.shape == kv.shape && qv.shape.size() == 2, "qk_scores: shapes disagree");
  int n = qv.dim(0), C = qv.dim(1);
  require(n_heads >= 1 && C % n_heads == 0, "qk_scores: channels not divisible by heads");
  double invsq = 1.0 / std::sqrt(static_cast<double>(C / n_heads));
  Tensor out({n * n, C});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int c = 0; c < C; ++c) out.at(i * n + j, c) = qv.at(i, c) * kv.at(j, c) * invsq;
  bool ng = wants(q) || wants(k);
  Ref out_ref = push(std::move(out), ng, nullptr);
  if (trace_ && ng)
    nodes_.back().back = [q, k, n, C, invsq, out_ref](Tape& t) {
      const Tensor& g = t.grad(out_ref);
      const Tensor& qv2 = t.val(q);
      const Tensor& kv2 = t.val(k);
      if (t.wants(q)) {
        Tensor& gq = t.ensure_grad(q);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            for (int c = 0; c < C; ++c)
              gq.at(i, c) += g.at(i * n + j, c) * kv2.at(j, c) * invsq;
      }
      if (t.wants(k)) {
        Tensor& gk = t.ensure_grad(k);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            for (int c = 0; c < C; ++c)
              gk.at(j, c) += g.at(i * n + j, c) * qv2.at(i, c) * invsq;
      }
    };
  return out_ref;
}

Tape::Ref Tape::dual_attend(Ref y_st, Ref y_ts, Ref v_first, Ref v_second,
                            const std::vector<char>& node_mask) {
  const Tensor& st = val(y_st);
  const Tensor& ts = val(y_ts);
  const Tensor& vf = val(v_first);
  const Tensor& vs = val(v_second);
  int n = vf.dim(0), C = vf.dim(1);
  require(static_cast<int>(node_mask.size()) == n, "dual_attend: mask size");
  require(st.dim(0) == n * n && st.dim(1) == C, "dual_attend: y_st shape");
  require(ts.dim(0) == n * n && ts.dim(1) == C, "dual_attend: y_ts shape");
  require(vs.dim(0) == n && vs.dim(1) == C, "dual_attend: v_second shape");

  bool ng = wants(y_st) || wants(y_ts) || wants(v_first) || wants(v_second);
  Tensor out({n, C});
  // attention weights, laid out (i, key, c) with key < 2n; kept for backward
  std::vector<double> attn;
  if (trace_ && ng) attn.assign(static_cast<size_t>(n) * 2 * n * C, 0.0);

  for (int i = 0; i < n; ++i) {
    if (!node_mask[static_cast<size_t>(i)]) continue;  // masked query rows emit zero
    for (int c = 0; c < C; ++c) {
      double m = -HUGE_VAL;
      for (int j = 0; j < n; ++j) {
        if (!node_mask[static_cast<size_t>(j)]) continue;
        m = std::max(m, st.at(i * n + j, c));
        m = std::max(m, ts.at(i * n + j, c));
      }
      double z = 0.0;
      for (int j = 0; j < n; ++j) {
        if (!node_mask[static_cast<size_t>(j)]) continue;
        z += std::exp(st.at(i * n + j, c) - m);
        z += std::exp(ts.at(i * n + j, c) - m);
      }
      double acc = 0.0;
      for (int j = 0; j < n; ++j) {
        if (!node_mask[static_cast<size_t>(j)]) continue;
        double a_st = std::exp(st.at(i * n + j, c) - m) / z;
        double a_ts = std::exp(ts.at(i * n + j, c) - m) / z;
        acc += a_st * vf.at(j, c) + a_ts * vs.at(j, c);
        if (!attn.empty()) {
          attn[(static_cast<size_t>(i) * 2 * n + j) * C + c] = a_st;
          attn[(static_cast<size_t>(i) * 2 * n + n + j) * C + c] = a_ts;
        }
      }
      out.at(i, c) = acc;
    }
  }

  Ref out_ref = push(std::move(out), ng, nullptr);
  if (trace_ && ng) {
    std::vector<char> mask = node_mask;
    nodes_.back().back = [y_st, y_ts, v_first, v_second, out_ref, n, C,
                          attn = std::move(attn), mask = std::move(mask)](Tape& t) {
      const Tensor& g = t.grad(out_ref);
      const Tensor& ov = t.val(out_ref);
      const Tensor& vf2 = t.val(v_first);
      const Tensor& vs2 = t.val(v_second);
      for (int i = 0; i < n; ++i) {
        if (!mask[static_cast<size_t>(i)]) continue;
        for (int c = 0; c < C; ++c) {
          double gc = g.at(i, c);
          if (gc == 0.0) continue;
          double oc = ov.at(i, c);
          for (int j = 0; j < n; ++j) {
            if (!mask[static_cast<size_t>(j)]) continue;
            double a_st = attn[(static_cast<size_t>(i) * 2 * n + j) * C + c];
            double a_ts = attn[(static_cast<size_t>(i) * 2 * n + n + j) * C + c];
            if (t.wants(v_first)) t.ensure_grad(v_first).at(j, c) += gc * a_st;
            if (t.wants(v_second)) t.ensure_grad(v_second).at(j, c) += gc * a_ts;
            if (t.wants(y_st))
              t.ensure_grad(y_st).at(i * n + j, c) += gc * a_st * (vf2.at(j, c) - oc);
            if (t.wants(y_ts))
              t.ensure_grad(y_ts).at(i * n + j, c) += gc * a_ts * (vs2.at(j, c) - oc);
          }
        }
      }
    };
  }
  return out_ref;
}

Tape::Ref Tape::pna_pool(Ref x, const std::vector<char>& row_mask) {
  const Tensor& xv = val(x);
  require(xv.shape.size() == 2, "pna_pool: rank-2 input required");
  int R = xv.dim(0), C = xv.dim(1);
  require(static_cast<int>(row_mask.size()) == R, "pna_pool: mask size");
  int live = 0;
  for (char m : row_mask) live += (m != 0);
  if (live == 0) throw AllMasked("pna_pool: every row is masked");

  Tensor out({1, 4 * C});
  std::vector<int> arg_max(static_cast<size_t>(C)), arg_min(static_cast<size_t>(C));
  for (int c = 0; c < C; ++c) {
    double best_max = 0.0, best_min = 0.0, sum = 0.0, sum_sq = 0.0;
    int imax = -1, imin = -1;
    for (int r = 0; r < R; ++r) {
      if (!row_mask[static_cast<size_t>(r)]) continue;
      double e = xv.at(r, c);
      if (imax < 0 || e > best_max) {
        best_max = e;
        imax = r;
      }
      if (imin < 0 || e < best_min) {
        best_min = e;
        imin = r;
      }
      sum += e;
      sum_sq += e * e;
    }
    double mean = sum / live;
    double var = std::max(0.0, sum_sq / live - mean * mean);
    out.at(0, c) = best_max;
    out.at(0, C + c) = best_min;
    out.at(0, 2 * C + c) = mean;
    out.at(0, 3 * C + c) = std::sqrt(var);
    arg_max[static_cast<size_t>(c)] = imax;
    arg_min[static_cast<size_t>(c)] = imin;
  }

  bool ng = wants(x);
  Ref out_ref = push(std::move(out), ng, nullptr);
  if (trace_ && ng) {
    std::vector<char> mask = row_mask;
    nodes_.back().back = [x, out_ref, R, C, live, arg_max = std::move(arg_max),
                          arg_min = std::move(arg_min), mask = std::move(mask)](Tape& t) {
      const Tensor& g = t.grad(out_ref);
      const Tensor& ov = t.val(out_ref);
      const Tensor& xv2 = t.val(x);
      Tensor& gx = t.ensure_grad(x);
      for (int c = 0; c < C; ++c) {
        gx.at(arg_max[static_cast<size_t>(c)], c) += g.at(0, c);
        gx.at(arg_min[static_cast<size_t>(c)], c) += g.at(0, C + c);
        double g_mean = g.at(0, 2 * C + c);
        double g_std = g.at(0, 3 * C + c);
        double mean = ov.at(0, 2 * C + c);
        double sd = ov.at(0, 3 * C + c);
        for (int r = 0; r < R; ++r) {
          if (!mask[static_cast<size_t>(r)]) continue;
          gx.at(r, c) += g_mean / live;
          // std has no defined direction at a constant column; skip it
          if (sd > 1e-12) gx.at(r, c) += g_std * (xv2.at(r, c) - mean) / (live * sd);
        }
      }
    };
  }
  return out_ref;
}

Tape::Ref Tape::ce_loss(Ref logits, const std::vector<int>& targets,
                        const std::vector<char>& row_mask) {
  const Tensor& lv = val(logits);
  require(lv.shape.size() == 2, "ce_loss: rank-2 logits required");
  int R = lv.dim(0), C = lv.dim(1);
  require(static_cast<int>(targets.size()) == R, "ce_loss: target count");
  require(static_cast<int>(row_mask.size()) == R, "ce_loss: mask size");
  const double log_floor = std::log(1e-30);
  double total = 0.0;
  for (int r = 0; r < R; ++r) {
    if (!row_mask[static_cast<size_t>(r)]) continue;
    int tgt = targets[static_cast<size_t>(r)];
    if (tgt < 0 || tgt >= C) throw InvalidParam("ce_loss: target class out of range");
    double m = lv.at(r, 0);
    for (int c = 1; c < C; ++c) m = std::max(m, lv.at(r, c));
    double z = 0.0;
    for (int c = 0; c < C; ++c) z += std::exp(lv.at(r, c) - m);
    double logp = lv.at(r, tgt) - m - std::log(z);
    if (logp < log_floor) {
      logp = log_floor;
      ++clamp_count_;
    }
    total -= logp;
  }
  bool ng = wants(logits);
  Ref out_ref = push(Tensor({1, 1}, total), ng, nullptr);
  if (trace_ && ng) {
    std::vector<int> tg = targets;
    std::vector<char> mask = row_mask;
    nodes_.back().back = [logits, out_ref, R, C, tg = std::move(tg),
                          mask = std::move(mask)](Tape& t) {
      double gs = t.grad(out_ref).v[0];
      if (gs == 0.0) return;
      const Tensor& lv2 = t.val(logits);
      Tensor& gl = t.ensure_grad(logits);
      for (int r = 0; r < R; ++r) {
        if (!mask[static_cast<size_t>(r)]) continue;
        double m = lv2.at(r, 0);
        for (int c = 1; c < C; ++c) m = std::max(m, lv2.at(r, c));
        double z = 0.0;
        for (int c = 0; c < C; ++c) z += std::exp(lv2.at(r, c) - m);
        for (int c = 0; c < C; ++c) {
          double p = std::exp(lv2.at(r, c) - m) / z;
          gl.at(r, c) += gs * (p - (c == tg[static_cast<size_t>(r)] ? 1.0 : 0.0));
        }
      }
    };
  }
  return out_ref;
}

Tape::Ref Tape::softmax_rows(Ref logits) {
  const Tensor& lv = val(logits);
  require(lv.shape.size() == 2, "softmax_rows: rank-2 logits required");
  int R = lv.dim(0), C = lv.dim(1);
  Tensor out({R, C});
  for (int r = 0; r < R; ++r) {
    double m = lv.at(r, 0);
    for (int c = 1; c < C; ++c) m = std::max(m, lv.at(r, c));
    double z = 0.0;
    for (int c = 0; c < C; ++c) z += std::exp(lv.at(r, c) - m);
    for (int c = 0; c < C; ++c) out.at(r, c) = std::exp(lv.at(r, c) - m) / z;
  }
  bool ng = wants(logits);
  Ref out_ref = push(std::move(out), ng, nullptr);
  if (trace_ && ng)
    nodes_.back().back = [logits, out_ref, R, C](Tape& t) {
      const Tensor& g = t.grad(out_ref);
      const Tensor& s = t.val(out_ref);
      Tensor& gl = t.ensure_grad(logits);
      for (int r = 0; r < R; ++r) {
        double dot = 0.0;
        for (int c = 0; c < C; ++c) dot += g.at(r, c) * s.at(r, c);
        for (int c = 0; c < C; ++c) gl.at(r, c) += (g.at(r, c) - dot) * s.at(r, c);
      }
    };
  return out_ref;
}

void AdamW::init(const std::vector<Tensor>& params) {
  step = 0;
  m.clear();
  u.clear();
  m.reserve(params.size());
  u.reserve(params.size());
  for (const Tensor& p : params) {
    m.emplace_back(p.shape);
    u.emplace_back(p.shape);
  }
}

void AdamW::update(std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
  if (m.size() != params.size()) throw InvalidParam("AdamW: call init() first");
  if (grads.size() != params.size()) throw ShapeMismatch("AdamW: gradient count mismatch");
  ++step;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    const Tensor& g = grads[k];
    if (g.v.size() != p.v.size()) throw ShapeMismatch("AdamW: gradient shape mismatch");
    for (size_t i = 0; i < p.v.size(); ++i) {
      double gi = g.v[i];
      m[k].v[i] = beta1 * m[k].v[i] + (1.0 - beta1) * gi;
      u[k].v[i] = beta2 * u[k].v[i] + (1.0 - beta2) * gi * gi;
      double mhat = m[k].v[i] / bc1;
      double uhat = u[k].v[i] / bc2;
      p.v[i] -= lr * (mhat / (std::sqrt(uhat) + eps) + weight_decay * p.v[i]);
    }
  }
}

double gradcheck(std::vector<Tensor>& params, const std::function<double()>& loss_fn,
                 const std::vector<Tensor>& analytic, int probes, Rng& rng) {
  if (analytic.size() != params.size()) throw ShapeMismatch("gradcheck: gradient count");
  const double h = 1e-4;
  double worst = 0.0;
  for (size_t k = 0; k < params.size(); ++k) {
    int n = params[k].size();
    std::vector<int> idx;
    if (probes <= 0 || probes >= n) {
      idx.resize(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    } else {
      for (int i = 0; i < probes; ++i) idx.push_back(rng.uniform_int(n));
    }
    for (int i : idx) {
      double saved = params[k].v[static_cast<size_t>(i)];
      params[k].v[static_cast<size_t>(i)] = saved + h;
      double f_plus = loss_fn();
      params[k].v[static_cast<size_t>(i)] = saved - h;
      double f_minus = loss_fn();
      params[k].v[static_cast<size_t>(i)] = saved;
      double fd = (f_plus - f_minus) / (2.0 * h);
      double an = analytic[k].v[static_cast<size_t>(i)];
      // The 1e-2 floor keeps O(h^2) truncation noise on near-zero
      // gradients from masquerading as relative error; a real formula
      // bug moves gradients by orders of magnitude more than that.
      double denom = std::max({1e-2, std::abs(fd), std::abs(an)});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

}  // namespace digen
