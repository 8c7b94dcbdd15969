#include "digen/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace digen {

using ordered_json = nlohmann::ordered_json;

void ModelConfig::validate() const {
  if (layers < 1) throw InvalidParam("ModelConfig: layers must be >= 1");
  if (d_x < 1 || d_e < 1 || d_y < 1 || ff_x < 1 || ff_e < 1 || ff_y < 1)
    throw InvalidParam("ModelConfig: widths must be >= 1");
  if (n_heads < 1 || d_x % n_heads != 0)
    throw InvalidParam("ModelConfig: d_x must divide evenly into heads");
  if (X < 1) throw InvalidParam("ModelConfig: X must be >= 1");
  if (E < 2) throw InvalidParam("ModelConfig: E must be >= 2");
  if (pe_node < 0 || pe_edge < 0 || pe_graph < 0)
    throw InvalidParam("ModelConfig: negative PE width");
}

std::string ModelConfig::to_json() const {
  ordered_json j;
  j["layers"] = layers;
  j["d_x"] = d_x;
  j["d_e"] = d_e;
  j["d_y"] = d_y;
  j["n_heads"] = n_heads;
  j["ff_x"] = ff_x;
  j["ff_e"] = ff_e;
  j["ff_y"] = ff_y;
  j["layer_norm"] = layer_norm;
  j["X"] = X;
  j["E"] = E;
  j["pe_node"] = pe_node;
  j["pe_edge"] = pe_edge;
  j["pe_graph"] = pe_graph;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("ModelConfig: ") + ex.what(), 0);
  }
  ModelConfig c;
  c.layers = j.value("layers", c.layers);
  c.d_x = j.value("d_x", c.d_x);
  c.d_e = j.value("d_e", c.d_e);
  c.d_y = j.value("d_y", c.d_y);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.ff_x = j.value("ff_x", c.ff_x);
  c.ff_e = j.value("ff_e", c.ff_e);
  c.ff_y = j.value("ff_y", c.ff_y);
  c.layer_norm = j.value("layer_norm", c.layer_norm);
  c.X = j.value("X", c.X);
  c.E = j.value("E", c.E);
  c.pe_node = j.value("pe_node", c.pe_node);
  c.pe_edge = j.value("pe_edge", c.pe_edge);
  c.pe_graph = j.value("pe_graph", c.pe_graph);
  c.validate();
  return c;
}

Tensor& DenoiserParams::by_name(const std::string& name) {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return tensors[i];
  throw InvalidParam("DenoiserParams: no tensor named " + name);
}

std::int64_t DenoiserParams::total_size() const {
  std::int64_t total = 0;
  for (const Tensor& t : tensors) total += t.size();
  return total;
}

namespace {

struct ParamBuilder {
  DenoiserParams out;
  Rng& rng;

  void weight(const std::string& name, int rows, int cols) {
    out.names.push_back(name);
    out.tensors.push_back(init_uniform(rows, cols, rng));
  }
  void zeros(const std::string& name, int cols) {
    out.names.push_back(name);
    out.tensors.emplace_back(std::vector<int>{1, cols});
  }
  void ones(const std::string& name, int cols) {
    out.names.push_back(name);
    out.tensors.emplace_back(std::vector<int>{1, cols}, 1.0);
  }
  void ln(const std::string& prefix, int cols) {
    ones(prefix + "_g", cols);
    zeros(prefix + "_b", cols);
  }
  void mlp(const std::string& prefix, int in, int hidden, int outw) {
    weight(prefix + "_w1", in, hidden);
    zeros(prefix + "_b1", hidden);
    weight(prefix + "_w2", hidden, outw);
    zeros(prefix + "_b2", outw);
  }
};

}  // namespace

DenoiserParams build_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamBuilder b{DenoiserParams{}, rng};

  b.mlp("embed_x", cfg.X + cfg.pe_node, cfg.d_x, cfg.d_x);
  b.mlp("embed_e", cfg.E + cfg.pe_edge, cfg.d_e, cfg.d_e);
  b.mlp("embed_y", 1 + cfg.pe_graph, cfg.d_y, cfg.d_y);

  for (int l = 0; l < cfg.layers; ++l) {
    std::string p = "l" + std::to_string(l) + "_";
    b.ln(p + "ln_x", cfg.d_x);
    b.ln(p + "ln_e", cfg.d_e);
    b.ln(p + "ln_y", cfg.d_y);
    for (const char* role : {"q_s", "k_s", "v_s", "q_t", "k_t", "v_t"})
      b.weight(p + "w" + role, cfg.d_x, cfg.d_x);
    b.weight(p + "w_emul_s", cfg.d_e, cfg.d_x);
    b.weight(p + "w_eadd_s", cfg.d_e, cfg.d_x);
    b.weight(p + "w_emul_t", cfg.d_e, cfg.d_x);
    b.weight(p + "w_eadd_t", cfg.d_e, cfg.d_x);
    b.weight(p + "w_ymul_e", cfg.d_y, cfg.d_x);
    b.weight(p + "w_yadd_e", cfg.d_y, cfg.d_x);
    b.weight(p + "w_out_e", cfg.d_x, cfg.d_e);
    b.zeros(p + "b_out_e", cfg.d_e);
    b.weight(p + "w_ymul_x", cfg.d_y, cfg.d_x);
    b.weight(p + "w_yadd_x", cfg.d_y, cfg.d_x);
    b.weight(p + "w_gate", 2 * cfg.d_x, cfg.d_x);
    b.zeros(p + "b_gate", cfg.d_x);
    b.weight(p + "w_out_x", cfg.d_x, cfg.d_x);
    b.zeros(p + "b_out_x", cfg.d_x);
    b.weight(p + "w_y", cfg.d_y, cfg.d_y);
    b.zeros(p + "b_y", cfg.d_y);
    b.weight(p + "w_pna_x", 4 * cfg.d_x, cfg.d_y);
    b.weight(p + "w_pna_e", 4 * cfg.d_e, cfg.d_y);
    b.weight(p + "w_out_y", cfg.d_y, cfg.d_y);
    b.zeros(p + "b_out_y", cfg.d_y);
    b.ln(p + "ln_fx", cfg.d_x);
    b.mlp(p + "ff_x", cfg.d_x, cfg.ff_x, cfg.d_x);
    b.ln(p + "ln_fe", cfg.d_e);
    b.mlp(p + "ff_e", cfg.d_e, cfg.ff_e, cfg.d_e);
    b.ln(p + "ln_fy", cfg.d_y);
    b.mlp(p + "ff_y", cfg.d_y, cfg.ff_y, cfg.d_y);
  }

  b.ln("ln_out_x", cfg.d_x);
  b.ln("ln_out_e", cfg.d_e);
  b.mlp("dec_x", cfg.d_x, cfg.d_x, cfg.X);
  b.mlp("dec_e", cfg.d_e, cfg.d_e, cfg.E);
  return std::move(b.out);
}

EncodedInput encode_input(const ModelConfig& cfg, const DiGraph& z_t, const PEFeatures& pe,
                          double t, const std::vector<char>* node_mask) {
  if (t < 0.0 || t > 1.0) throw InvalidParam("encode_input: t must lie in [0,1]");
  int n = z_t.n;
  if (pe.n != n) throw ShapeMismatch("encode_input: PE computed for a different node count");
  if (pe.d_node != cfg.pe_node || pe.d_edge != cfg.pe_edge || pe.d_graph != cfg.pe_graph)
    throw ShapeMismatch("encode_input: PE widths disagree with the model config");

  EncodedInput in;
  in.n = n;
  in.node_mask.assign(static_cast<size_t>(n), 1);
  if (node_mask) {
    if (static_cast<int>(node_mask->size()) != n)
      throw ShapeMismatch("encode_input: mask size disagrees with n");
    in.node_mask = *node_mask;
  }
  in.pair_mask.assign(static_cast<size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && in.node_mask[static_cast<size_t>(i)] && in.node_mask[static_cast<size_t>(j)])
        in.pair_mask[static_cast<size_t>(i) * n + j] = 1;

  OneHotGraph oh = OneHotGraph::encode(z_t, cfg.X, cfg.E);

  in.x_in = Tensor({n, cfg.X + cfg.pe_node});
  for (int i = 0; i < n; ++i) {
    if (!in.node_mask[static_cast<size_t>(i)]) continue;  // padded rows stay zero
    for (int c = 0; c < cfg.X; ++c)
      in.x_in.at(i, c) = oh.x[static_cast<size_t>(i) * cfg.X + c];
    for (int c = 0; c < cfg.pe_node; ++c)
      in.x_in.at(i, cfg.X + c) = pe.node[static_cast<size_t>(i) * cfg.pe_node + c];
  }

  in.e_in = Tensor({n * n, cfg.E + cfg.pe_edge});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (!in.node_mask[static_cast<size_t>(i)] || !in.node_mask[static_cast<size_t>(j)])
        continue;
      int r = i * n + j;
      for (int c = 0; c < cfg.E; ++c)
        in.e_in.at(r, c) = oh.e[static_cast<size_t>(r) * cfg.E + c];
      for (int c = 0; c < cfg.pe_edge; ++c)
        in.e_in.at(r, cfg.E + c) = pe.edge[static_cast<size_t>(r) * cfg.pe_edge + c];
    }

  in.y_in = Tensor({1, 1 + cfg.pe_graph});
  in.y_in.at(0, 0) = t;
  for (int c = 0; c < cfg.pe_graph; ++c) in.y_in.at(0, 1 + c) = pe.graph[static_cast<size_t>(c)];
  return in;
}

namespace {

// Resolves registry tensors to tape refs lazily, binding each parameter
// once. Lookup is by exact name; build_params and this resolver must agree.
struct Bound {
  Tape& tape;
  const DenoiserParams& params;
  std::vector<Tape::Ref> refs;

  Bound(Tape& t, const DenoiserParams& p)
      : tape(t), params(p), refs(p.tensors.size(), Tape::kNone) {}

  Tape::Ref operator()(const std::string& name) {
    for (size_t i = 0; i < params.names.size(); ++i)
      if (params.names[i] == name) {
        if (refs[i] == Tape::kNone) refs[i] = tape.param(&params.tensors[i]);
        return refs[i];
      }
    throw InvalidParam("denoiser_forward: missing parameter " + name);
  }
};

Tape::Ref mlp2(Tape& t, Bound& P, const std::string& prefix, Tape::Ref in) {
  Tape::Ref h = t.relu(t.linear(in, P(prefix + "_w1"), P(prefix + "_b1")));
  return t.linear(h, P(prefix + "_w2"), P(prefix + "_b2"));
}

}  // namespace

ForwardRefs denoiser_forward(Tape& tape, const ModelConfig& cfg, const DenoiserParams& params,
                             const EncodedInput& in) {
  cfg.validate();
  int n = in.n;
  if (n < 1) throw InvalidParam("denoiser_forward: empty graph");
  Bound P(tape, params);

  bool any_pair = false;
  for (char m : in.pair_mask) any_pair |= (m != 0);

  Tape::Ref X = mlp2(tape, P, "embed_x", tape.constant(in.x_in));
  Tape::Ref E = mlp2(tape, P, "embed_e", tape.constant(in.e_in));
  Tape::Ref y = mlp2(tape, P, "embed_y", tape.constant(in.y_in));

  Tensor ones_x({n, cfg.d_x}, 1.0);
  Tape::Ref ones_x_ref = tape.constant(std::move(ones_x));

  for (int l = 0; l < cfg.layers; ++l) {
    std::string p = "l" + std::to_string(l) + "_";
    Tape::Ref Xn = cfg.layer_norm ? tape.layer_norm(X, P(p + "ln_x_g"), P(p + "ln_x_b")) : X;
    Tape::Ref En = cfg.layer_norm ? tape.layer_norm(E, P(p + "ln_e_g"), P(p + "ln_e_b")) : E;
    Tape::Ref yn = cfg.layer_norm ? tape.layer_norm(y, P(p + "ln_y_g"), P(p + "ln_y_b")) : y;

    Tape::Ref q_s = tape.linear(Xn, P(p + "wq_s"), Tape::kNone);
    Tape::Ref k_s = tape.linear(Xn, P(p + "wk_s"), Tape::kNone);
    Tape::Ref v_s = tape.linear(Xn, P(p + "wv_s"), Tape::kNone);
    Tape::Ref q_t = tape.linear(Xn, P(p + "wq_t"), Tape::kNone);
    Tape::Ref k_t = tape.linear(Xn, P(p + "wk_t"), Tape::kNone);
    Tape::Ref v_t = tape.linear(Xn, P(p + "wv_t"), Tape::kNone);

    // directional per-channel scores, source queries against target keys
    Tape::Ref st = tape.qk_scores(q_s, k_t, cfg.n_heads);
    Tape::Ref ts = tape.qk_scores(q_t, k_s, cfg.n_heads);

    // edge features modulate the scores; the reverse direction sees E^T
    Tape::Ref en_t = tape.transpose_pairs(En, n);
    Tape::Ref st_mod = tape.film(tape.linear(En, P(p + "w_eadd_s"), Tape::kNone),
                                 tape.linear(En, P(p + "w_emul_s"), Tape::kNone), st);
    Tape::Ref ts_mod = tape.film(tape.linear(en_t, P(p + "w_eadd_t"), Tape::kNone),
                                 tape.linear(en_t, P(p + "w_emul_t"), Tape::kNone), ts);

    // edge stream: global features modulate the source-to-target scores
    Tape::Ref e_mod = tape.film_rows(tape.linear(yn, P(p + "w_yadd_e"), Tape::kNone),
                                     tape.linear(yn, P(p + "w_ymul_e"), Tape::kNone), st_mod);
    Tape::Ref E_next = tape.add(E, tape.linear(e_mod, P(p + "w_out_e"), P(p + "b_out_e")));

    // node stream: joint softmax over both directions' keys
    Tape::Ref att = tape.dual_attend(st_mod, ts_mod, v_s, v_t, in.node_mask);
    Tape::Ref x_mod = tape.film_rows(tape.linear(yn, P(p + "w_yadd_x"), Tape::kNone),
                                     tape.linear(yn, P(p + "w_ymul_x"), Tape::kNone), att);
    Tape::Ref gate = tape.sigmoid(
        tape.linear(tape.concat_cols(Xn, att), P(p + "w_gate"), P(p + "b_gate")));
    Tape::Ref kept = tape.mul(tape.add(ones_x_ref, gate), X);
    Tape::Ref swapped = tape.mul(tape.add_scaled(ones_x_ref, gate, -1.0), x_mod);
    Tape::Ref X_next = tape.linear(tape.add(kept, swapped), P(p + "w_out_x"), P(p + "b_out_x"));

    // global stream: residual plus pooled node and edge summaries
    Tape::Ref y_sum = tape.add(y, tape.linear(yn, P(p + "w_y"), P(p + "b_y")));
    Tape::Ref pooled_x = tape.linear(tape.pna_pool(Xn, in.node_mask), P(p + "w_pna_x"),
                                     Tape::kNone);
    y_sum = tape.add(y_sum, pooled_x);
    if (any_pair) {
      Tape::Ref pooled_e = tape.linear(tape.pna_pool(En, in.pair_mask), P(p + "w_pna_e"),
                                       Tape::kNone);
      y_sum = tape.add(y_sum, pooled_e);
    }
    Tape::Ref y_next = tape.linear(y_sum, P(p + "w_out_y"), P(p + "b_out_y"));

    X = X_next;
    E = E_next;
    y = y_next;

    // feed-forward sublayers with their own residuals
    Tape::Ref fx = cfg.layer_norm ? tape.layer_norm(X, P(p + "ln_fx_g"), P(p + "ln_fx_b")) : X;
    X = tape.add(X, mlp2(tape, P, p + "ff_x", fx));
    Tape::Ref fe = cfg.layer_norm ? tape.layer_norm(E, P(p + "ln_fe_g"), P(p + "ln_fe_b")) : E;
    E = tape.add(E, mlp2(tape, P, p + "ff_e", fe));
    Tape::Ref fy = cfg.layer_norm ? tape.layer_norm(y, P(p + "ln_fy_g"), P(p + "ln_fy_b")) : y;
    y = tape.add(y, mlp2(tape, P, p + "ff_y", fy));
  }

  Tape::Ref Xf = cfg.layer_norm ? tape.layer_norm(X, P("ln_out_x_g"), P("ln_out_x_b")) : X;
  Tape::Ref Ef = cfg.layer_norm ? tape.layer_norm(E, P("ln_out_e_g"), P("ln_out_e_b")) : E;
  ForwardRefs out;
  out.x_logits = mlp2(tape, P, "dec_x", Xf);
  out.e_logits = mlp2(tape, P, "dec_e", Ef);
  return out;
}

DenoiserOutput predict(const ModelConfig& cfg, const DenoiserParams& params, const DiGraph& z_t,
                       const PEFeatures& pe, double t) {
  EncodedInput in = encode_input(cfg, z_t, pe, t);
  Tape tape(false);
  ForwardRefs refs = denoiser_forward(tape, cfg, params, in);
  Tape::Ref xp = tape.softmax_rows(refs.x_logits);
  Tape::Ref ep = tape.softmax_rows(refs.e_logits);
  DenoiserOutput out;
  out.n = z_t.n;
  out.X = cfg.X;
  out.E = cfg.E;
  out.x_prob = tape.val(xp).v;
  out.e_prob = tape.val(ep).v;
  return out;
}

double loss_and_grad(const ModelConfig& cfg, const DenoiserParams& params, const DiGraph& z_t,
                     const PEFeatures& pe, double t, const DiGraph& clean, double lambda_edge,
                     std::vector<Tensor>* grads_out, std::int64_t* clamp_events) {
  if (clean.n != z_t.n) throw ShapeMismatch("loss_and_grad: clean and noisy sizes disagree");
  if (lambda_edge < 0.0) throw InvalidParam("loss_and_grad: lambda_edge must be >= 0");
  EncodedInput in = encode_input(cfg, z_t, pe, t);

  std::vector<int> x_targets(static_cast<size_t>(clean.n));
  for (int i = 0; i < clean.n; ++i) {
    int cls = clean.x[static_cast<size_t>(i)];
    if (cls < 1 || cls > cfg.X) throw InvalidParam("loss_and_grad: node class out of range");
    x_targets[static_cast<size_t>(i)] = cls - 1;
  }
  std::vector<int> e_targets(static_cast<size_t>(clean.n) * clean.n, 0);
  for (int i = 0; i < clean.n; ++i)
    for (int j = 0; j < clean.n; ++j) {
      int cls = clean.edge(i, j);
      if (cls < 0 || cls >= cfg.E) throw InvalidParam("loss_and_grad: edge class out of range");
      e_targets[static_cast<size_t>(i) * clean.n + j] = cls;
    }

  Tape tape(grads_out != nullptr);
  ForwardRefs refs = denoiser_forward(tape, cfg, params, in);
  Tape::Ref node_ce = tape.ce_loss(refs.x_logits, x_targets, in.node_mask);
  Tape::Ref edge_ce = tape.ce_loss(refs.e_logits, e_targets, in.pair_mask);
  Tape::Ref total = tape.add_scaled(node_ce, edge_ce, lambda_edge);
  double loss = tape.val(total).v[0];

  if (grads_out) {
    tape.backward(total);
    grads_out->clear();
    grads_out->reserve(params.tensors.size());
    for (const Tensor& t : params.tensors) grads_out->emplace_back(t.shape);
    tape.export_param_grads(params.tensors, *grads_out);
  }
  if (clamp_events) *clamp_events += tape.clamp_count();
  return loss;
}

DenoiserOutput NeuralDenoiser::operator()(const DiGraph& z_t, double t) const {
  if (pe_every < 1) throw InvalidParam("NeuralDenoiser: pe_every must be >= 1");
  if (!has_cache_ || pe_cache_.n != z_t.n || calls_since_pe_ >= pe_every) {
    pe_cache_ = pe_features(z_t, pe_cfg);
    calls_since_pe_ = 0;
    has_cache_ = true;
  }
  ++calls_since_pe_;
  return predict(cfg, params, z_t, pe_cache_, t);
}

std::vector<double> oracle_posterior(const std::vector<double>& prior,
                                     const std::vector<double>& noise, double kappa,
                                     int observed) {
  if (prior.size() != noise.size() || prior.empty())
    throw ShapeMismatch("oracle_posterior: distribution sizes disagree");
  if (observed < 0 || observed >= static_cast<int>(prior.size()))
    throw InvalidParam("oracle_posterior: observed class out of range");
  if (kappa < 0.0 || kappa > 1.0) throw InvalidParam("oracle_posterior: kappa outside [0,1]");
  std::vector<double> w(prior.size());
  double z = 0.0;
  // The corruption keeps the clean class with probability kappa and
  // otherwise redraws from `noise` independently of the clean class, so the
  // likelihood of the observation is kappa * [j == observed] plus a term
  // that is constant in j: (1 - kappa) * noise(observed).
  double background = (1.0 - kappa) * noise[static_cast<size_t>(observed)];
  for (size_t j = 0; j < prior.size(); ++j) {
    double lik = background + (static_cast<int>(j) == observed ? kappa : 0.0);
    w[j] = prior[j] * lik;
    z += w[j];
  }
  if (z <= 0.0) throw ZeroSupport("oracle_posterior: observation impossible under the model");
  for (double& x : w) x /= z;
  return w;
}

DenoiserOutput OracleDenoiser::operator()(const DiGraph& z_t, double t) const {
  double kappa = kappa_of_time ? kappa_of_time(t) : t;
  DenoiserOutput out;
  out.n = z_t.n;
  out.X = static_cast<int>(x_prior.size());
  out.E = static_cast<int>(e_prior.size());
  out.x_prob.resize(static_cast<size_t>(z_t.n) * out.X);
  out.e_prob.resize(static_cast<size_t>(z_t.n) * z_t.n * out.E);
  for (int i = 0; i < z_t.n; ++i) {
    int cls = z_t.x[static_cast<size_t>(i)] - 1;
    std::vector<double> post = oracle_posterior(x_prior, x_noise, kappa, cls);
    for (int c = 0; c < out.X; ++c) out.x_prob[static_cast<size_t>(i) * out.X + c] = post[static_cast<size_t>(c)];
  }
  for (int i = 0; i < z_t.n; ++i)
    for (int j = 0; j < z_t.n; ++j) {
      size_t base = (static_cast<size_t>(i) * z_t.n + j) * out.E;
      if (i == j) {
        out.e_prob[base] = 1.0;  // diagonal is structurally absent
        continue;
      }
      std::vector<double> post = oracle_posterior(e_prior, e_noise, kappa, z_t.edge(i, j));
      for (int c = 0; c < out.E; ++c) out.e_prob[base + c] = post[static_cast<size_t>(c)];
    }
  return out;
}

MleModel mle_fit(const std::vector<DiGraph>& graphs, int X, int E) {
  if (graphs.empty()) throw EmptyDataset("mle_fit: no training graphs");
  MleModel m;
  m.X = X;
  m.E = E;
  std::vector<std::pair<int, int>> n_counts;  // (n, count), sorted by n
  std::vector<double> x_counts(static_cast<size_t>(X), 0.0);
  std::vector<double> e_counts(static_cast<size_t>(X) * X * E, 0.0);
  std::vector<double> pooled(static_cast<size_t>(E), 0.0);
  for (const DiGraph& g : graphs) {
    g.validate(X, E);
    auto it = std::lower_bound(n_counts.begin(), n_counts.end(), std::make_pair(g.n, 0));
    if (it != n_counts.end() && it->first == g.n)
      ++it->second;
    else
      n_counts.insert(it, {g.n, 1});
    for (int cls : g.x) x_counts[static_cast<size_t>(cls - 1)] += 1.0;
    for (int i = 0; i < g.n; ++i)
      for (int j = 0; j < g.n; ++j) {
        if (i == j) continue;
        int ca = g.x[static_cast<size_t>(i)] - 1;
        int cb = g.x[static_cast<size_t>(j)] - 1;
        int ec = g.edge(i, j);
        e_counts[(static_cast<size_t>(ca) * X + cb) * E + ec] += 1.0;
        pooled[static_cast<size_t>(ec)] += 1.0;
      }
  }
  double n_total = 0.0;
  for (auto& [nv, cnt] : n_counts) n_total += cnt;
  for (auto& [nv, cnt] : n_counts) {
    m.n_values.push_back(nv);
    m.n_probs.push_back(cnt / n_total);
  }
  double x_total = 0.0;
  for (double c : x_counts) x_total += c;
  m.x_probs.resize(static_cast<size_t>(X));
  for (int c = 0; c < X; ++c) m.x_probs[static_cast<size_t>(c)] = x_counts[static_cast<size_t>(c)] / x_total;
  double pooled_total = 0.0;
  for (double c : pooled) pooled_total += c;
  m.e_pooled.assign(static_cast<size_t>(E), 0.0);
  if (pooled_total > 0.0)
    for (int c = 0; c < E; ++c) m.e_pooled[static_cast<size_t>(c)] = pooled[static_cast<size_t>(c)] / pooled_total;
  else
    m.e_pooled[0] = 1.0;  // single-node corpus: no pairs observed, default absent
  m.e_cond.assign(static_cast<size_t>(X) * X * E, 0.0);
  for (int a = 0; a < X; ++a)
    for (int bcls = 0; bcls < X; ++bcls) {
      size_t base = (static_cast<size_t>(a) * X + bcls) * E;
      double tot = 0.0;
      for (int c = 0; c < E; ++c) tot += e_counts[base + c];
      if (tot > 0.0)
        for (int c = 0; c < E; ++c) m.e_cond[base + c] = e_counts[base + c] / tot;
      // unseen pairs stay all-zero; the sampler falls back to e_pooled
    }
  return m;
}

DiGraph mle_sample(const MleModel& m, Rng& rng) {
  if (m.n_values.empty()) throw EmptyDataset("mle_sample: model was not fitted");
  int n = m.n_values[static_cast<size_t>(rng.categorical(m.n_probs))];
  DiGraph g(n);
  for (int i = 0; i < n; ++i) g.x[static_cast<size_t>(i)] = rng.categorical(m.x_probs) + 1;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      int ca = g.x[static_cast<size_t>(i)] - 1;
      int cb = g.x[static_cast<size_t>(j)] - 1;
      size_t base = (static_cast<size_t>(ca) * m.X + cb) * m.E;
      double tot = 0.0;
      for (int c = 0; c < m.E; ++c) tot += m.e_cond[base + c];
      std::vector<double> row(static_cast<size_t>(m.E));
      for (int c = 0; c < m.E; ++c)
        row[static_cast<size_t>(c)] = tot > 0.0 ? m.e_cond[base + c] : m.e_pooled[static_cast<size_t>(c)];
      g.set_edge(i, j, rng.categorical(row));
    }
  return g;
}

namespace {

constexpr char kMagic[8] = {'D', 'G', 'C', 'K', '0', '0', '0', '1'};

void write_f32(std::ofstream& out, const std::vector<Tensor>& tensors) {
  for (const Tensor& t : tensors) {
    std::vector<float> buf(t.v.size());
    for (size_t i = 0; i < t.v.size(); ++i) buf[i] = static_cast<float>(t.v[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

void read_f32(std::ifstream& in, std::vector<Tensor>& tensors, const char* what) {
  for (Tensor& t : tensors) {
    std::vector<float> buf(t.v.size());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw CheckpointError(std::string("checkpoint payload truncated in ") + what);
    for (size_t i = 0; i < t.v.size(); ++i) t.v[i] = static_cast<double>(buf[i]);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  ordered_json header;
  header["model"] = ordered_json::parse(ckpt.model.to_json());
  header["pe"] = ordered_json::parse(pe_config_to_json(ckpt.pe));
  header["seed"] = ckpt.seed;
  header["step"] = ckpt.step;
  header["tensor_count"] = ckpt.params.tensors.size();
  header["has_opt"] = ckpt.has_opt;
  if (ckpt.has_opt) {
    header["opt"] = {{"lr", ckpt.opt.lr},       {"beta1", ckpt.opt.beta1},
                     {"beta2", ckpt.opt.beta2}, {"eps", ckpt.opt.eps},
                     {"weight_decay", ckpt.opt.weight_decay}, {"step", ckpt.opt.step}};
  }
  header["meta"] = ordered_json::parse(ckpt.meta_json);
  std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("save_checkpoint: cannot open " + path);
  out.write(kMagic, sizeof(kMagic));
  std::uint64_t len = header_text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  write_f32(out, ckpt.params.tensors);
  if (ckpt.has_opt) {
    write_f32(out, ckpt.opt.m);
    write_f32(out, ckpt.opt.u);
  }
  if (!out) throw IoError("save_checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("load_checkpoint: bad magic in " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 20)) throw CheckpointError("load_checkpoint: absurd header length");
  std::string header_text(len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError("load_checkpoint: truncated header");

  ordered_json header;
  try {
    header = ordered_json::parse(header_text);
  } catch (const nlohmann::json::exception& ex) {
    throw CheckpointError(std::string("load_checkpoint: header is not JSON: ") + ex.what());
  }

  Checkpoint ckpt;
  ckpt.model = ModelConfig::from_json(header.at("model").dump());
  ckpt.pe = pe_config_from_json(header.at("pe").dump());
  ckpt.seed = header.value("seed", std::uint64_t{0});
  ckpt.step = header.value("step", std::int64_t{0});
  ckpt.has_opt = header.value("has_opt", false);
  ckpt.meta_json = header.value("meta", ordered_json::object()).dump();

  // Rebuild the registry for shapes and names, then overwrite the values.
  Rng shape_rng(0);
  ckpt.params = build_params(ckpt.model, shape_rng);
  if (header.value("tensor_count", size_t{0}) != ckpt.params.tensors.size())
    throw CheckpointError("load_checkpoint: tensor count disagrees with the config");
  read_f32(in, ckpt.params.tensors, "parameters");
  if (ckpt.has_opt) {
    const auto& opt = header.at("opt");
    ckpt.opt.init(ckpt.params.tensors);  // init zeroes the step counter
    ckpt.opt.lr = opt.value("lr", 2e-4);
    ckpt.opt.beta1 = opt.value("beta1", 0.9);
    ckpt.opt.beta2 = opt.value("beta2", 0.999);
    ckpt.opt.eps = opt.value("eps", 1e-8);
    ckpt.opt.weight_decay = opt.value("weight_decay", 1e-12);
    ckpt.opt.step = opt.value("step", std::int64_t{0});
    read_f32(in, ckpt.opt.m, "first moments");
    read_f32(in, ckpt.opt.u, "second moments");
  }
  for (const Tensor& t : ckpt.params.tensors) t.check_finite("load_checkpoint");
  return ckpt;
}

}  // namespace digen
