#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "digen/denoiser.hpp"
#include "digen/synth.hpp"
#include "digen/train.hpp"

using namespace digen;

namespace {

ModelConfig tiny_config(int X = 2, int E = 2) {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.d_x = 8;
  cfg.d_e = 4;
  cfg.d_y = 4;
  cfg.n_heads = 2;
  cfg.ff_x = 8;
  cfg.ff_e = 4;
  cfg.ff_y = 4;
  cfg.X = X;
  cfg.E = E;
  return cfg;
}

PEConfig walk_pe_config() {
  // Small random-walk encoding, cheap to compute in unit tests.
  PEConfig pc;
  pc.kind = PEKind::RRWP;
  pc.K_walk = 3;
  pc.use_ppr = false;
  return pc;
}

DiGraph ring_graph(int n, int X) {
  DiGraph g(n);
  for (int i = 0; i < n; ++i) {
    g.x[static_cast<size_t>(i)] = 1 + (i % X);
    g.set_edge(i, (i + 1) % n, 1);
  }
  return g;
}

bool same_vector(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (std::abs(a[i] - b[i]) > tol) return false;
  return true;
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("model config: json round trip and validation") {
  ModelConfig cfg = tiny_config(3, 4);
  cfg.pe_node = 6;
  cfg.pe_edge = 6;
  cfg.pe_graph = 3;
  ModelConfig back = ModelConfig::from_json(cfg.to_json());
  CHECK(back.layers == cfg.layers);
  CHECK(back.d_x == cfg.d_x);
  CHECK(back.n_heads == cfg.n_heads);
  CHECK(back.X == 3);
  CHECK(back.E == 4);
  CHECK(back.pe_edge == 6);
  CHECK(back.layer_norm == cfg.layer_norm);

  ModelConfig bad = cfg;
  bad.n_heads = 3;  // does not divide d_x = 8
  CHECK_THROWS_AS(bad.validate(), InvalidParam);
  bad = cfg;
  bad.E = 1;
  CHECK_THROWS_AS(bad.validate(), InvalidParam);
  CHECK_THROWS_AS(ModelConfig::from_json("{nope"), ParseError);
}

TEST_CASE("parameter registry: unique names, sane init, stable order") {
  ModelConfig cfg = tiny_config();
  Rng rng(7);
  DenoiserParams params = build_params(cfg, rng);
  CHECK(params.names.size() == params.tensors.size());
  CHECK(params.names.front() == "embed_x_w1");
  CHECK(params.names.back() == "dec_e_b2");
  for (size_t i = 0; i < params.names.size(); ++i)
    for (size_t j = i + 1; j < params.names.size(); ++j)
      REQUIRE(params.names[i] != params.names[j]);

  // Norm scales start at one, every bias and norm shift at zero.
  const Tensor& gamma = params.by_name("l0_ln_x_g");
  for (double v : gamma.v) CHECK(v == 1.0);
  const Tensor& bias = params.by_name("l0_b_gate");
  for (double v : bias.v) CHECK(v == 0.0);
  CHECK(params.total_size() > 0);

  // Same seed, same registry; the order is the checkpoint contract.
  Rng rng2(7);
  DenoiserParams again = build_params(cfg, rng2);
  for (size_t k = 0; k < params.tensors.size(); ++k) {
    REQUIRE(params.names[k] == again.names[k]);
    REQUIRE(params.tensors[k].v == again.tensors[k].v);
  }
}

TEST_CASE("encode_input: one-hot layout, time slot, masks") {
  ModelConfig cfg = tiny_config(2, 3);
  DiGraph g(3);
  g.x = {1, 2, 1};
  g.set_edge(0, 1, 2);
  g.set_edge(1, 2, 1);
  PEFeatures pe;
  pe.n = 3;
  EncodedInput in = encode_input(cfg, g, pe, 0.25);

  CHECK(in.x_in.dim(0) == 3);
  CHECK(in.x_in.dim(1) == 2);
  CHECK(in.x_in.at(0, 0) == 1.0);
  CHECK(in.x_in.at(1, 1) == 1.0);
  CHECK(in.x_in.at(1, 0) == 0.0);

  CHECK(in.e_in.dim(0) == 9);
  CHECK(in.e_in.at(0 * 3 + 1, 2) == 1.0);  // edge class 2 at pair (0,1)
  CHECK(in.e_in.at(1 * 3 + 2, 1) == 1.0);
  CHECK(in.e_in.at(2 * 3 + 1, 0) == 1.0);  // absent pair is class 0
  CHECK(in.e_in.at(0 * 3 + 0, 0) == 1.0);  // diagonal encoded as class 0

  CHECK(in.y_in.dim(1) == 1);
  CHECK(in.y_in.at(0, 0) == 0.25);

  CHECK(in.node_mask == std::vector<char>{1, 1, 1});
  CHECK(in.pair_mask[0 * 3 + 0] == 0);
  CHECK(in.pair_mask[0 * 3 + 1] == 1);

  std::vector<char> mask = {1, 0, 1};
  EncodedInput masked = encode_input(cfg, g, pe, 0.25, &mask);
  for (int c = 0; c < 2; ++c) CHECK(masked.x_in.at(1, c) == 0.0);
  CHECK(masked.pair_mask[0 * 3 + 1] == 0);
  CHECK(masked.pair_mask[0 * 3 + 2] == 1);

  CHECK_THROWS_AS(encode_input(cfg, g, pe, -0.1), InvalidParam);
  PEFeatures wrong = pe;
  wrong.d_node = 4;
  CHECK_THROWS_AS(encode_input(cfg, g, wrong, 0.5), ShapeMismatch);
  std::vector<char> short_mask = {1, 0};
  CHECK_THROWS_AS(encode_input(cfg, g, pe, 0.5, &short_mask), ShapeMismatch);
}

TEST_CASE("forward: probability rows normalize and react to time") {
  ModelConfig cfg = tiny_config(2, 2);
  Rng rng(11);
  DenoiserParams params = build_params(cfg, rng);
  DiGraph g = ring_graph(5, 2);
  PEFeatures pe;
  pe.n = 5;

  DenoiserOutput early = predict(cfg, params, g, pe, 0.1);
  for (int i = 0; i < 5; ++i) {
    double sum = 0.0;
    for (int c = 0; c < 2; ++c) {
      double p = early.xp(i, c);
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
      sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      double sum = 0.0;
      for (int c = 0; c < 2; ++c) sum += early.ep(i, j, c);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }

  // The time scalar feeds the global stream, which modulates everything.
  DenoiserOutput late = predict(cfg, params, g, pe, 0.9);
  double moved = 0.0;
  for (size_t k = 0; k < early.x_prob.size(); ++k)
    moved = std::max(moved, std::abs(early.x_prob[k] - late.x_prob[k]));
  CHECK(moved > 1e-9);
}

TEST_CASE("forward: single-node graph stays finite") {
  ModelConfig cfg = tiny_config(2, 2);
  Rng rng(3);
  DenoiserParams params = build_params(cfg, rng);
  DiGraph g(1);
  g.x = {2};
  PEFeatures pe;
  pe.n = 1;
  DenoiserOutput out = predict(cfg, params, g, pe, 0.5);
  CHECK(out.xp(0, 0) + out.xp(0, 1) == doctest::Approx(1.0).epsilon(1e-9));
  for (double p : out.x_prob) CHECK(std::isfinite(p));
}

TEST_CASE("edge stream reaches node logits only through score modulation and pooling") {
  ModelConfig cfg = tiny_config(2, 3);
  Rng rng(5);
  DenoiserParams params = build_params(cfg, rng);
  // Cut every path from E into the node and global streams.
  for (const char* name : {"l0_w_emul_s", "l0_w_eadd_s", "l0_w_emul_t", "l0_w_eadd_t",
                           "l0_w_pna_e"})
    for (double& v : params.by_name(name).v) v = 0.0;

  DiGraph a = ring_graph(4, 2);
  DiGraph b = a;
  b.set_edge(0, 1, 0);
  b.set_edge(2, 0, 2);
  PEFeatures pe;
  pe.n = 4;
  DenoiserOutput out_a = predict(cfg, params, a, pe, 0.5);
  DenoiserOutput out_b = predict(cfg, params, b, pe, 0.5);
  CHECK(out_a.x_prob == out_b.x_prob);  // bit-identical: no edge path remains

  // Restore one modulation path and the influence returns.
  Rng rng2(6);
  params.by_name("l0_w_emul_s") = init_uniform(cfg.d_e, cfg.d_x, rng2);
  DenoiserOutput out_a2 = predict(cfg, params, a, pe, 0.5);
  DenoiserOutput out_b2 = predict(cfg, params, b, pe, 0.5);
  CHECK_FALSE(same_vector(out_a2.x_prob, out_b2.x_prob, 1e-12));
}

TEST_CASE("saturated gate ignores the modulated stream") {
  ModelConfig cfg = tiny_config(2, 2);
  Rng rng(9);
  DenoiserParams params = build_params(cfg, rng);
  // gate = sigmoid(700) rounds to exactly 1, so the (1 - g) branch is
  // multiplied by exactly zero and the value projections cannot matter.
  for (double& v : params.by_name("l0_w_gate").v) v = 0.0;
  for (double& v : params.by_name("l0_b_gate").v) v = 700.0;

  DiGraph g = ring_graph(4, 2);
  PEFeatures pe;
  pe.n = 4;
  DenoiserOutput base = predict(cfg, params, g, pe, 0.5);

  DenoiserParams tampered = params;
  Rng rng2(10);
  tampered.by_name("l0_wv_s") = init_uniform(cfg.d_x, cfg.d_x, rng2);
  tampered.by_name("l0_wv_t") = init_uniform(cfg.d_x, cfg.d_x, rng2);
  DenoiserOutput same = predict(cfg, tampered, g, pe, 0.5);
  CHECK(base.x_prob == same.x_prob);

  // With the gate saturated the other way the modulated stream is live.
  for (double& v : params.by_name("l0_b_gate").v) v = -700.0;
  for (double& v : tampered.by_name("l0_b_gate").v) v = -700.0;
  DenoiserOutput base_open = predict(cfg, params, g, pe, 0.5);
  DenoiserOutput diff_open = predict(cfg, tampered, g, pe, 0.5);
  CHECK_FALSE(same_vector(base_open.x_prob, diff_open.x_prob, 1e-12));
}

TEST_CASE("masked padding slots cannot leak into real outputs") {
  ModelConfig cfg = tiny_config(2, 2);
  Rng rng(13);
  DenoiserParams params = build_params(cfg, rng);

  DiGraph a(4);
  a.x = {1, 2, 1, 2};
  a.set_edge(0, 1, 1);
  a.set_edge(2, 0, 1);
  a.set_edge(3, 1, 1);  // content of the padded slot
  DiGraph b = a;
  b.x[3] = 1;
  b.set_edge(3, 1, 0);
  b.set_edge(1, 3, 1);

  std::vector<char> mask = {1, 1, 1, 0};
  PEFeatures pe;
  pe.n = 4;
  EncodedInput in_a = encode_input(cfg, a, pe, 0.5, &mask);
  EncodedInput in_b = encode_input(cfg, b, pe, 0.5, &mask);

  Tape ta(false), tb(false);
  ForwardRefs ra = denoiser_forward(ta, cfg, params, in_a);
  ForwardRefs rb = denoiser_forward(tb, cfg, params, in_b);
  const Tensor& xa = ta.val(ra.x_logits);
  const Tensor& xb = tb.val(rb.x_logits);
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < cfg.X; ++c) REQUIRE(xa.at(i, c) == xb.at(i, c));
  const Tensor& ea = ta.val(ra.e_logits);
  const Tensor& eb = tb.val(rb.e_logits);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int c = 0; c < cfg.E; ++c) REQUIRE(ea.at(i * 4 + j, c) == eb.at(i * 4 + j, c));
}

TEST_CASE("full-model permutation equivariance with walk encodings") {
  ModelConfig cfg = tiny_config(2, 2);
  PEConfig pc = walk_pe_config();
  PEDims dims = pe_dims(pc);
  cfg.pe_node = dims.node;
  cfg.pe_edge = dims.edge;
  cfg.pe_graph = dims.graph;
  Rng rng(17);
  NeuralDenoiser model;
  model.cfg = cfg;
  model.pe_cfg = pc;
  model.params = build_params(cfg, rng);

  Rng grng(21);
  DiGraph g = gen_er(6, 6, 0.4, false, grng);
  for (int i = 0; i < g.n; ++i) g.x[static_cast<size_t>(i)] = 1 + (i % 2);

  std::vector<int> perm = {3, 0, 5, 1, 4, 2};  // image of each original index
  DiGraph pg(g.n);
  for (int i = 0; i < g.n; ++i) pg.x[static_cast<size_t>(perm[static_cast<size_t>(i)])] =
      g.x[static_cast<size_t>(i)];
  for (int i = 0; i < g.n; ++i)
    for (int j = 0; j < g.n; ++j)
      if (i != j)
        pg.set_edge(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)], g.edge(i, j));

  DenoiserOutput out = model(g, 0.4);
  DenoiserOutput pout = model(pg, 0.4);
  for (int i = 0; i < g.n; ++i)
    for (int c = 0; c < cfg.X; ++c)
      CHECK(out.xp(i, c) ==
            doctest::Approx(pout.xp(perm[static_cast<size_t>(i)], c)).epsilon(1e-5));
  for (int i = 0; i < g.n; ++i)
    for (int j = 0; j < g.n; ++j)
      for (int c = 0; c < cfg.E; ++c)
        CHECK(out.ep(i, j, c) ==
              doctest::Approx(pout.ep(perm[static_cast<size_t>(i)],
                                      perm[static_cast<size_t>(j)], c))
                  .epsilon(1e-5));
}

TEST_CASE("neural wrapper honours the structural-feature recompute cadence") {
  ModelConfig cfg = tiny_config(2, 2);
  PEConfig pc = walk_pe_config();
  PEDims dims = pe_dims(pc);
  cfg.pe_node = dims.node;
  cfg.pe_edge = dims.edge;
  cfg.pe_graph = dims.graph;
  Rng prng(3);
  DenoiserParams params = build_params(cfg, prng);

  DiGraph ring = ring_graph(4, 1);
  DiGraph chord = ring;
  chord.set_edge(0, 2, 1);

  NeuralDenoiser every_call;
  every_call.cfg = cfg;
  every_call.pe_cfg = pc;
  every_call.params = params;
  every_call.pe_every = 1;

  NeuralDenoiser stale;
  stale.cfg = cfg;
  stale.pe_cfg = pc;
  stale.params = params;
  stale.pe_every = 100;

  (void)every_call(ring, 0.4);
  DenoiserOutput fresh = every_call(chord, 0.4);
  (void)stale(ring, 0.4);
  DenoiserOutput reused = stale(chord, 0.4);

  // The fresh path matches a direct forward pass with the chord features,
  // the stale path matches one that still carries the ring features.
  DenoiserOutput want_fresh = predict(cfg, params, chord, pe_features(chord, pc), 0.4);
  DenoiserOutput want_stale = predict(cfg, params, chord, pe_features(ring, pc), 0.4);
  REQUIRE(fresh.e_prob == want_fresh.e_prob);
  REQUIRE(fresh.x_prob == want_fresh.x_prob);
  REQUIRE(reused.e_prob == want_stale.e_prob);
  REQUIRE(reused.x_prob == want_stale.x_prob);
  CHECK(reused.e_prob != fresh.e_prob);

  // A node-count change invalidates the cache even mid-cadence.
  DiGraph bigger = ring_graph(5, 1);
  DenoiserOutput grown = stale(bigger, 0.4);
  DenoiserOutput want_grown = predict(cfg, params, bigger, pe_features(bigger, pc), 0.4);
  REQUIRE(grown.e_prob == want_grown.e_prob);

  NeuralDenoiser bad;
  bad.cfg = cfg;
  bad.pe_cfg = pc;
  bad.params = params;
  bad.pe_every = 0;
  CHECK_THROWS_AS(bad(ring, 0.4), InvalidParam);
}

TEST_CASE("loss agrees with predicted probabilities") {
  ModelConfig cfg = tiny_config(2, 3);
  Rng rng(23);
  DenoiserParams params = build_params(cfg, rng);
  DiGraph noisy = ring_graph(4, 2);
  DiGraph clean = noisy;
  clean.set_edge(0, 1, 2);
  clean.x[2] = 2;
  PEFeatures pe;
  pe.n = 4;

  double lambda = 0.7;
  double loss = loss_and_grad(cfg, params, noisy, pe, 0.3, clean, lambda, nullptr);
  DenoiserOutput out = predict(cfg, params, noisy, pe, 0.3);
  double expect = 0.0;
  for (int i = 0; i < 4; ++i) expect -= std::log(out.xp(i, clean.x[static_cast<size_t>(i)] - 1));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (i != j) expect -= lambda * std::log(out.ep(i, j, clean.edge(i, j)));
  CHECK(loss == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("all-zero parameters give the uniform-prediction loss") {
  ModelConfig cfg = tiny_config(3, 2);
  Rng rng(29);
  DenoiserParams params = build_params(cfg, rng);
  for (Tensor& t : params.tensors)
    for (double& v : t.v) v = 0.0;
  DiGraph g = ring_graph(5, 3);
  PEFeatures pe;
  pe.n = 5;

  double lambda = 0.7;
  double loss = loss_and_grad(cfg, params, g, pe, 0.5, g, lambda, nullptr);
  double expect = 5.0 * std::log(3.0) + lambda * 20.0 * std::log(2.0);
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
  double node_only = loss_and_grad(cfg, params, g, pe, 0.5, g, 0.0, nullptr);
  CHECK(node_only == doctest::Approx(5.0 * std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("analytic gradients match finite differences through the whole model") {
  ModelConfig cfg = tiny_config(2, 2);
  PEConfig pc = walk_pe_config();
  PEDims dims = pe_dims(pc);
  cfg.pe_node = dims.node;
  cfg.pe_edge = dims.edge;
  cfg.pe_graph = dims.graph;
  Rng rng(31);
  DenoiserParams params = build_params(cfg, rng);

  DiGraph noisy = ring_graph(4, 2);
  DiGraph clean = noisy;
  clean.set_edge(1, 3, 1);
  PEFeatures pe = pe_features(noisy, pc);

  std::vector<Tensor> grads;
  loss_and_grad(cfg, params, noisy, pe, 0.35, clean, 0.9, &grads);
  REQUIRE(grads.size() == params.tensors.size());

  auto loss_fn = [&]() {
    return loss_and_grad(cfg, params, noisy, pe, 0.35, clean, 0.9, nullptr);
  };
  Rng probe_rng(37);
  double err = gradcheck(params.tensors, loss_fn, grads, 4, probe_rng);
  CHECK(err < 1e-4);
}

TEST_CASE("loss rejects out-of-range classes") {
  ModelConfig cfg = tiny_config(2, 2);
  Rng rng(41);
  DenoiserParams params = build_params(cfg, rng);
  DiGraph noisy = ring_graph(3, 2);
  DiGraph clean = noisy;
  clean.x[0] = 3;  // only two node classes exist
  PEFeatures pe;
  pe.n = 3;
  CHECK_THROWS_AS(loss_and_grad(cfg, params, noisy, pe, 0.5, clean, 1.0, nullptr),
                  InvalidParam);
}

TEST_CASE("short training run reduces the loss") {
  Rng data_rng(43);
  std::vector<DiGraph> data;
  for (int i = 0; i < 24; ++i) data.push_back(gen_er(5, 7, 0.3, false, data_rng));

  ModelConfig cfg = tiny_config(1, 2);
  cfg.d_x = 16;
  cfg.ff_x = 16;
  Checkpoint ckpt;
  ckpt.model = cfg;
  ckpt.pe = walk_pe_config();
  PEDims dims = pe_dims(ckpt.pe);
  ckpt.model.pe_node = dims.node;
  ckpt.model.pe_edge = dims.edge;
  ckpt.model.pe_graph = dims.graph;
  ckpt.seed = 99;
  Rng prng(99);
  ckpt.params = build_params(ckpt.model, prng);

  Corruptor corrupt = [](const DiGraph& clean, Rng& rng) {
    double t = rng.uniform();
    DiGraph noisy = clean;
    for (int i = 0; i < clean.n; ++i)
      for (int j = 0; j < clean.n; ++j)
        if (i != j && rng.uniform() > t) noisy.set_edge(i, j, rng.uniform_int(2));
    return std::make_pair(noisy, t);
  };

  TrainConfig tc;
  tc.steps = 50;
  tc.batch_size = 4;
  tc.lr = 4e-3;
  tc.lambda_edge = 2.0;
  tc.log_every = 10;
  TrainResult res = train_denoiser(tc, ckpt, data, corrupt);
  REQUIRE(res.loss_trace.size() == 5);
  CHECK(res.last_interval_loss < res.first_interval_loss);
  CHECK(ckpt.step == 50);
}

TEST_CASE("training is independent of the thread count") {
  Rng data_rng(47);
  std::vector<DiGraph> data;
  for (int i = 0; i < 12; ++i) data.push_back(gen_er(4, 6, 0.4, false, data_rng));

  auto run = [&](int threads) {
    ModelConfig cfg = tiny_config(1, 2);
    Checkpoint ckpt;
    ckpt.model = cfg;
    ckpt.pe = walk_pe_config();
    PEDims dims = pe_dims(ckpt.pe);
    ckpt.model.pe_node = dims.node;
    ckpt.model.pe_edge = dims.edge;
    ckpt.model.pe_graph = dims.graph;
    ckpt.seed = 7;
    Rng prng(7);
    ckpt.params = build_params(ckpt.model, prng);
    Corruptor corrupt = [](const DiGraph& clean, Rng& rng) {
      double t = rng.uniform();
      DiGraph noisy = clean;
      for (int i = 0; i < clean.n; ++i)
        for (int j = 0; j < clean.n; ++j)
          if (i != j && rng.uniform() > t) noisy.set_edge(i, j, rng.uniform_int(2));
      return std::make_pair(noisy, t);
    };
    TrainConfig tc;
    tc.steps = 8;
    tc.batch_size = 6;
    tc.threads = threads;
    tc.log_every = 0;
    train_denoiser(tc, ckpt, data, corrupt);
    return ckpt;
  };

  Checkpoint serial = run(1);
  Checkpoint parallel = run(4);
  REQUIRE(serial.params.tensors.size() == parallel.params.tensors.size());
  for (size_t k = 0; k < serial.params.tensors.size(); ++k)
    REQUIRE(serial.params.tensors[k].v == parallel.params.tensors[k].v);
}

TEST_CASE("checkpoint: round trip, resume determinism, corruption errors") {
  ModelConfig cfg = tiny_config(2, 2);
  PEConfig pc = walk_pe_config();
  PEDims dims = pe_dims(pc);
  cfg.pe_node = dims.node;
  cfg.pe_edge = dims.edge;
  cfg.pe_graph = dims.graph;
  Rng rng(53);
  Checkpoint ckpt;
  ckpt.model = cfg;
  ckpt.pe = pc;
  ckpt.seed = 1234;
  ckpt.step = 17;
  ckpt.params = build_params(cfg, rng);
  ckpt.has_opt = true;
  ckpt.opt.init(ckpt.params.tensors);
  ckpt.opt.step = 17;
  for (Tensor& m : ckpt.opt.m)
    for (double& v : m.v) v = 0.125;  // exactly representable in f32
  ckpt.meta_json = "{\"dataset\":\"toy\"}";

  std::string path = "ckpt_test_round.bin";
  save_checkpoint(path, ckpt);
  Checkpoint back = load_checkpoint(path);
  CHECK(back.model.d_x == cfg.d_x);
  CHECK(back.seed == 1234);
  CHECK(back.step == 17);
  CHECK(back.has_opt);
  CHECK(back.opt.step == 17);
  CHECK(back.meta_json.find("toy") != std::string::npos);
  REQUIRE(back.params.tensors.size() == ckpt.params.tensors.size());
  for (size_t k = 0; k < ckpt.params.tensors.size(); ++k) {
    REQUIRE(back.params.names[k] == ckpt.params.names[k]);
    for (size_t i = 0; i < ckpt.params.tensors[k].v.size(); ++i) {
      double want = static_cast<double>(static_cast<float>(ckpt.params.tensors[k].v[i]));
      REQUIRE(back.params.tensors[k].v[i] == want);
    }
  }
  CHECK(back.opt.m[0].v[0] == 0.125);

  // Saving what was just loaded reproduces the file byte for byte.
  std::string path2 = "ckpt_test_round2.bin";
  save_checkpoint(path2, back);
  CHECK(read_file_bytes(path) == read_file_bytes(path2));

  // Two independent loads resumed for the same steps stay bit-identical.
  Rng data_rng(59);
  std::vector<DiGraph> data;
  for (int i = 0; i < 8; ++i) data.push_back(gen_er(4, 5, 0.4, false, data_rng));
  Corruptor corrupt = [](const DiGraph& clean, Rng& r) {
    double t = r.uniform();
    DiGraph noisy = clean;
    for (int i = 0; i < clean.n; ++i)
      for (int j = 0; j < clean.n; ++j)
        if (i != j && r.uniform() > t) noisy.set_edge(i, j, r.uniform_int(2));
    return std::make_pair(noisy, t);
  };
  TrainConfig tc;
  tc.steps = 5;
  tc.batch_size = 2;
  tc.log_every = 0;
  Checkpoint run_a = load_checkpoint(path);
  Checkpoint run_b = load_checkpoint(path);
  train_denoiser(tc, run_a, data, corrupt);
  train_denoiser(tc, run_b, data, corrupt);
  CHECK(run_a.step == 22);
  for (size_t k = 0; k < run_a.params.tensors.size(); ++k)
    REQUIRE(run_a.params.tensors[k].v == run_b.params.tensors[k].v);

  std::ofstream bad("ckpt_test_bad.bin", std::ios::binary);
  bad << "NOTACKPT and then some";
  bad.close();
  CHECK_THROWS_AS(load_checkpoint("ckpt_test_bad.bin"), CheckpointError);
  std::string bytes = read_file_bytes(path);
  std::ofstream trunc("ckpt_test_trunc.bin", std::ios::binary);
  trunc.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  trunc.close();
  CHECK_THROWS_AS(load_checkpoint("ckpt_test_trunc.bin"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint("ckpt_test_missing.bin"), IoError);

  std::remove(path.c_str());
  std::remove(path2.c_str());
  std::remove("ckpt_test_bad.bin");
  std::remove("ckpt_test_trunc.bin");
}

TEST_CASE("count baseline: single-graph corpus is memorized") {
  DiGraph g(3);
  g.x = {2, 1, 2};
  g.set_edge(0, 1, 1);
  MleModel m = mle_fit({g}, 2, 2);
  CHECK(m.n_values == std::vector<int>{3});
  CHECK(m.n_probs[0] == 1.0);
  CHECK(m.x_probs[0] == doctest::Approx(1.0 / 3.0));
  CHECK(m.x_probs[1] == doctest::Approx(2.0 / 3.0));
  Rng rng(61);
  for (int trial = 0; trial < 10; ++trial) CHECK(mle_sample(m, rng).n == 3);
}

TEST_CASE("count baseline: recovers the edge density of a dense corpus") {
  Rng rng(67);
  std::vector<DiGraph> data;
  for (int i = 0; i < 2; ++i) data.push_back(gen_er(75, 75, 0.3, false, rng));
  // 2 * 75 * 74 = 11100 ordered pairs observed
  MleModel m = mle_fit(data, 1, 2);
  CHECK(m.e_cond[1] == doctest::Approx(0.3).epsilon(0.04));
  CHECK(m.e_cond[0] + m.e_cond[1] == doctest::Approx(1.0));
  CHECK(m.e_pooled[1] == doctest::Approx(m.e_cond[1]));
}

TEST_CASE("count baseline: edge independence breaks acyclicity") {
  Rng rng(71);
  std::vector<DiGraph> data;
  for (int i = 0; i < 40; ++i) data.push_back(gen_er(8, 10, 0.35, true, rng));
  MleModel m = mle_fit(data, 1, 2);
  bool found_two_cycle = false;
  for (int trial = 0; trial < 200 && !found_two_cycle; ++trial) {
    DiGraph g = mle_sample(m, rng);
    for (int i = 0; i < g.n && !found_two_cycle; ++i)
      for (int j = i + 1; j < g.n; ++j)
        if (g.edge(i, j) != 0 && g.edge(j, i) != 0) {
          found_two_cycle = true;
          break;
        }
  }
  CHECK(found_two_cycle);  // a two-cycle can never appear in the training DAGs
}

TEST_CASE("posterior oracle: endpoints, worked example, brute force") {
  std::vector<double> prior = {0.4, 0.6};
  std::vector<double> uniform = {0.5, 0.5};

  // Fully kept observation pins the clean class.
  std::vector<double> kept = oracle_posterior(prior, uniform, 1.0, 1);
  CHECK(kept[0] == 0.0);
  CHECK(kept[1] == 1.0);

  // Fully noised observation carries no information.
  std::vector<double> noised = oracle_posterior(prior, uniform, 0.0, 0);
  CHECK(noised[0] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(noised[1] == doctest::Approx(0.6).epsilon(1e-12));

  // Half kept, uniform noise, edge observed absent under a 0.6 prior for
  // present: the clean edge is present with probability exactly 1/3.
  std::vector<double> half = oracle_posterior(prior, uniform, 0.5, 0);
  CHECK(half[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // Brute force over every clean value with a skewed noise distribution.
  std::vector<double> noise = {0.2, 0.8};
  double kappa = 0.3;
  for (int obs = 0; obs < 2; ++obs) {
    double joint[2];
    for (int clean = 0; clean < 2; ++clean) {
      double lik = kappa * (clean == obs ? 1.0 : 0.0) +
                   (1.0 - kappa) * noise[static_cast<size_t>(obs)];
      joint[clean] = prior[static_cast<size_t>(clean)] * lik;
    }
    double z = joint[0] + joint[1];
    std::vector<double> got = oracle_posterior(prior, noise, kappa, obs);
    CHECK(got[0] == doctest::Approx(joint[0] / z).epsilon(1e-12));
    CHECK(got[1] == doctest::Approx(joint[1] / z).epsilon(1e-12));
  }

  CHECK_THROWS_AS(oracle_posterior(prior, uniform, 1.5, 0), InvalidParam);
  CHECK_THROWS_AS(oracle_posterior({1.0, 0.0}, {1.0, 0.0}, 1.0, 1), ZeroSupport);
}

TEST_CASE("posterior oracle: graph-level wrapper fills every position") {
  OracleDenoiser oracle;
  oracle.x_prior = {1.0};
  oracle.e_prior = {0.4, 0.6};
  oracle.x_noise = {1.0};
  oracle.e_noise = {0.5, 0.5};
  oracle.kappa_of_time = [](double t) { return t; };

  DiGraph g(2);
  g.x = {1, 1};
  g.set_edge(0, 1, 1);  // (1,0) stays absent
  // Observed present: w(present) = 0.6 * (0.5 + 0.25), w(absent) = 0.4 * 0.25.
  DenoiserOutput out = oracle(g, 0.5);
  CHECK(out.ep(0, 1, 1) == doctest::Approx(9.0 / 11.0).epsilon(1e-12));
  CHECK(out.ep(1, 0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(out.ep(0, 0, 0) == 1.0);  // diagonal fixed to absent
  CHECK(out.xp(0, 0) == 1.0);
}
