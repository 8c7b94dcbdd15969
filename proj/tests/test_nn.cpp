#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "digen/nn.hpp"

using namespace digen;

namespace {

Tensor random_tensor(int r, int c, Rng& rng, double scale = 1.0) {
  Tensor t({r, c});
  for (double& x : t.v) x = rng.normal() * scale;
  return t;
}

// Runs `build` twice: once traced for analytic gradients, then repeatedly
// untraced inside the finite-difference probe. `build` must consume the
// tensors through Tape::param so the same storage is perturbed.
double op_gradcheck(std::vector<Tensor>& params,
                    const std::function<Tape::Ref(Tape&, std::vector<Tape::Ref>&)>& build,
                    Rng& rng) {
  Tape traced(true);
  std::vector<Tape::Ref> refs;
  refs.reserve(params.size());
  for (Tensor& p : params) refs.push_back(traced.param(&p));
  Tape::Ref loss = build(traced, refs);
  traced.backward(loss);
  std::vector<Tensor> analytic;
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor g = traced.grad(refs[i]);
    if (g.v.empty()) g = Tensor(params[i].shape);
    analytic.push_back(std::move(g));
  }
  auto loss_fn = [&]() {
    Tape t(false);
    std::vector<Tape::Ref> rs;
    for (Tensor& p : params) rs.push_back(t.param(&p));
    return t.val(build(t, rs)).v[0];
  };
  return gradcheck(params, loss_fn, analytic, 0, rng);
}

// Collapse any tensor to a scalar through a fixed quadratic so every entry
// influences the loss with a distinct weight.
Tape::Ref squash(Tape& t, Tape::Ref x) {
  const Tensor& xv = t.val(x);
  Tensor w(xv.shape);
  for (int i = 0; i < w.size(); ++i) w.v[static_cast<size_t>(i)] = 0.1 * (i % 7) + 0.05;
  Tape::Ref wref = t.constant(std::move(w));
  Tape::Ref prod = t.mul(x, wref);
  Tensor ones({xv.dim(1), 1}, 1.0);
  Tape::Ref col = t.linear(prod, t.constant(std::move(ones)), Tape::kNone);
  Tensor ones2({1, t.val(col).dim(0)}, 1.0);
  // (1, R) @ (R, 1) -> scalar
  Tape::Ref rowvec = t.constant(std::move(ones2));
  return t.linear(rowvec, col, Tape::kNone);
}

}  // namespace

TEST_CASE("linear forward matches hand computation") {
  Tape t(false);
  Tensor x({2, 3});
  x.v = {1, 2, 3, 4, 5, 6};
  Tensor w({3, 2});
  w.v = {1, 0, 0, 1, 1, 1};
  Tensor b({1, 2});
  b.v = {10, 20};
  Tape::Ref y = t.linear(t.constant(x), t.constant(w), t.constant(b));
  CHECK(t.val(y).at(0, 0) == doctest::Approx(1 + 3 + 10));
  CHECK(t.val(y).at(0, 1) == doctest::Approx(2 + 3 + 20));
  CHECK(t.val(y).at(1, 0) == doctest::Approx(4 + 6 + 10));
  CHECK(t.val(y).at(1, 1) == doctest::Approx(5 + 6 + 20));
}

TEST_CASE("gradcheck: linear with bias") {
  Rng rng(101);
  std::vector<Tensor> params = {random_tensor(3, 4, rng), random_tensor(4, 2, rng),
                                random_tensor(1, 2, rng)};
  double err = op_gradcheck(
      params,
      [](Tape& t, std::vector<Tape::Ref>& r) {
        return squash(t, t.linear(r[0], r[1], r[2]));
      },
      rng);
  CHECK(err < 1e-4);
}

TEST_CASE("gradcheck: relu and sigmoid chain") {
  Rng rng(102);
  // keep entries away from the relu kink so finite differences are clean
  std::vector<Tensor> params = {random_tensor(3, 5, rng)};
  for (double& x : params[0].v)
    if (std::abs(x) < 0.05) x = 0.3;
  double err = op_gradcheck(
      params,
      [](Tape& t, std::vector<Tape::Ref>& r) {
        return squash(t, t.sigmoid(t.relu(r[0])));
      },
      rng);
  CHECK(err < 1e-4);
}

TEST_CASE("gradcheck: elementwise add, scaled add, mul") {
  Rng rng(103);
  std::vector<Tensor> params = {random_tensor(4, 3, rng), random_tensor(4, 3, rng)};
  double err = op_gradcheck(
      params,
      [](Tape& t, std::vector<Tape::Ref>& r) {
        return squash(t, t.mul(t.add_scaled(r[0], r[1], 2.5), t.add(r[0], r[1])));
      },
      rng);
  CHECK(err < 1e-4);
}

TEST_CASE("film identities from the contract") {
  Rng rng(104);
  Tensor a = random_tensor(3, 4, rng);
  Tensor m = random_tensor(3, 4, rng);
  Tensor h = random_tensor(3, 4, rng);
  Tensor zero({3, 4});

  Tape t(false);
  // a = 0, m = 0 -> output is h exactly
  Tape::Ref id = t.film(t.constant(zero), t.constant(zero), t.constant(h));
  for (int i = 0; i < 12; ++i) CHECK(t.val(id).v[static_cast<size_t>(i)] == h.v[static_cast<size_t>(i)]);
  // h = 0 -> output is a exactly
  Tape::Ref just_a = t.film(t.constant(a), t.constant(m), t.constant(zero));
  for (int i = 0; i < 12; ++i) CHECK(t.val(just_a).v[static_cast<size_t>(i)] == a.v[static_cast<size_t>(i)]);
}

TEST_CASE("gradcheck: film and row-broadcast film") {
  Rng rng(105);
  std::vector<Tensor> params = {random_tensor(3, 4, rng), random_tensor(3, 4, rng),
                                random_tensor(3, 4, rng), random_tensor(1, 4, rng),
                                random_tensor(1, 4, rng)};
  double err = op_gradcheck(
      params,
      [](Tape& t, std::vector<Tape::Ref>& r) {
        Tape::Ref full = t.film(r[0], r[1], r[2]);
        return squash(t, t.film_rows(r[3], r[4], full));
      },
      rng);
  CHECK(err < 1e-4);
}

TEST_CASE("layer norm normalizes rows and gradchecks") {
  Rng rng(106);
  std::vector<Tensor> params = {random_tensor(4, 6, rng, 2.0), random_tensor(1, 6, rng),
                                random_tensor(1, 6, rng)};
  {
    Tape t(false);
    Tensor gamma({1, 6}, 1.0);
    Tensor beta({1, 6}, 0.0);
    Tape::Ref y = t.layer_norm(t.param(&params[0]), t.constant(gamma), t.constant(beta));
    for (int r = 0; r < 4; ++r) {
      double mean = 0.0, var = 0.0;
      for (int c = 0; c < 6; ++c) mean += t.val(y).at(r, c);
      mean /= 6;
      for (int c = 0; c < 6; ++c) {
        double d = t.val(y).at(r, c) - mean;
        var += d * d;
      }
      CHECK(std::abs(mean) < 1e-12);
      CHECK(var / 6 == doctest::Approx(1.0).epsilon(1e-4));  // eps shrinks it slightly
    }
  }
  double err = op_gradcheck(
      params,
      [](Tape& t, std::vector<Tape::Ref>& r) {
        return squash(t, t.layer_norm(r[0], r[1], r[2]));
      },
      rng);
  CHECK(err < 1e-4);
}

TEST_CASE("gradcheck: concat and pair transpose") {
  Rng rng(107);
  std::vector<Tensor> params = {random_tensor(9, 2, rng), random_tensor(9, 3, rng)};
  double err = op_gradcheck(
      params,
      [](Tape& t, std::vector<Tape::Ref>& r) {
        return squash(t, t.concat_cols(t.transpose_pairs(r[0], 3), r[1]));
      },
      rng);
  CHECK(err < 1e-4);
}

TEST_CASE("qk scores match hand computation and gradcheck") {
  Rng rng(108);
  {
    Tape t(false);
    Tensor q({2, 2});
    q.v = {1, 2, 3, 4};
    Tensor k({2, 2});
    k.v = {5, 6, 7, 8};
    // one head, d_q = 2, scale 1/sqrt(2)
    Tape::Ref s = t.qk_scores(t.constant(q), t.constant(k), 1);
    double inv = 1.0 / std::sqrt(2.0);
    CHECK(t.val(s).at(0 * 2 + 0, 0) == doctest::Approx(1 * 5 * inv));
    CHECK(t.val(s).at(0 * 2 + 1, 1) == doctest::Approx(2 * 8 * inv));
    CHECK(t.val(s).at(1 * 2 + 0, 0) == doctest::Approx(3 * 5 * inv));
  }
  std::vector<Tensor> params = {random_tensor(3, 4, rng), random_tensor(3, 4, rng)};
  double err = op_gradcheck(
      params,
      [](Tape& t, std::vector<Tape::Ref>& r) {
        return squash(t, t.qk_scores(r[0], r[1], 2));
      },
      rng);
  CHECK(err < 1e-4);
}

TEST_CASE("dual attention per channel: weights sum to one over both blocks") {
  Rng rng(109);
  int n = 3, C = 4;
  Tensor y_st = random_tensor(n * n, C, rng);
  Tensor y_ts = random_tensor(n * n, C, rng);
  Tensor ones({n, C}, 1.0);
  std::vector<char> mask(static_cast<size_t>(n), 1);
  Tape t(false);
  // with all values = 1 the convex combination must return exactly 1
  Tape::Ref out = t.dual_attend(t.constant(y_st), t.constant(y_ts), t.constant(ones),
                                t.constant(ones), mask);
  for (double x : t.val(out).v) CHECK(x == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("dual attention ignores masked keys and queries") {
  Rng rng(110);
  int n = 3, C = 2;
  Tensor y_st = random_tensor(n * n, C, rng);
  Tensor y_ts = random_tensor(n * n, C, rng);
  Tensor v1 = random_tensor(n, C, rng);
  Tensor v2 = random_tensor(n, C, rng);
  std::vector<char> mask = {1, 1, 0};

  Tape t(false);
  Tape::Ref full = t.dual_attend(t.constant(y_st), t.constant(y_ts), t.constant(v1),
                                 t.constant(v2), mask);
  // poison everything about node 2; unmasked outputs must not move a bit
  Tensor y_st_g = y_st, y_ts_g = y_ts, v1_g = v1, v2_g = v2;
  for (int j = 0; j < n; ++j)
    for (int c = 0; c < C; ++c) {
      y_st_g.at(2 * n + j, c) = 1e9;
      y_st_g.at(j * n + 2, c) = -3e7;
      y_ts_g.at(2 * n + j, c) = 7e8;
      y_ts_g.at(j * n + 2, c) = 4e5;
    }
  for (int c = 0; c < C; ++c) {
    v1_g.at(2, c) = 1e12;
    v2_g.at(2, c) = -1e12;
  }
  Tape::Ref poisoned = t.dual_attend(t.constant(y_st_g), t.constant(y_ts_g), t.constant(v1_g),
                                     t.constant(v2_g), mask);
  for (int i = 0; i < 2; ++i)
    for (int c = 0; c < C; ++c)
      CHECK(t.val(full).at(i, c) == t.val(poisoned).at(i, c));
  for (int c = 0; c < C; ++c) CHECK(t.val(poisoned).at(2, c) == 0.0);
}

TEST_CASE("gradcheck: dual attention") {
  Rng rng(111);
  int n = 3, C = 4;
  std::vector<Tensor> params = {random_tensor(n * n, C, rng), random_tensor(n * n, C, rng),
                                random_tensor(n, C, rng), random_tensor(n, C, rng)};
  std::vector<char> mask(static_cast<size_t>(n), 1);
  double err = op_gradcheck(
      params,
      [mask](Tape& t, std::vector<Tape::Ref>& r) {
        return squash(t, t.dual_attend(r[0], r[1], r[2], r[3], mask));
      },
      rng);
  CHECK(err < 1e-4);
}

TEST_CASE("pna pool matches the two-point example") {
  // features {1, 3} on two nodes -> (max, min, mean, std) = (3, 1, 2, 1)
  Tensor x({2, 1});
  x.v = {1.0, 3.0};
  std::vector<char> mask = {1, 1};
  Tape t(false);
  Tape::Ref p = t.pna_pool(t.constant(x), mask);
  CHECK(t.val(p).at(0, 0) == doctest::Approx(3.0));
  CHECK(t.val(p).at(0, 1) == doctest::Approx(1.0));
  CHECK(t.val(p).at(0, 2) == doctest::Approx(2.0));
  CHECK(t.val(p).at(0, 3) == doctest::Approx(1.0));  // population std
}

TEST_CASE("pna pool: constant column has std zero, all-masked throws") {
  Tensor x({3, 2}, 5.0);
  std::vector<char> mask = {1, 1, 1};
  Tape t(false);
  Tape::Ref p = t.pna_pool(t.constant(x), mask);
  CHECK(t.val(p).at(0, 6) == 0.0);
  CHECK(t.val(p).at(0, 7) == 0.0);
  std::vector<char> none = {0, 0, 0};
  CHECK_THROWS_AS(t.pna_pool(t.constant(x), none), AllMasked);
}

TEST_CASE("pna pool respects the row mask") {
  Tensor x({3, 1});
  x.v = {1.0, 100.0, 3.0};
  std::vector<char> mask = {1, 0, 1};
  Tape t(false);
  Tape::Ref p = t.pna_pool(t.constant(x), mask);
  CHECK(t.val(p).at(0, 0) == doctest::Approx(3.0));
  CHECK(t.val(p).at(0, 1) == doctest::Approx(1.0));
  CHECK(t.val(p).at(0, 2) == doctest::Approx(2.0));
}

TEST_CASE("gradcheck: pna pool away from ties") {
  Rng rng(112);
  // well-separated entries keep argmax/argmin stable under the probe step
  Tensor x({4, 3});
  for (int i = 0; i < x.size(); ++i) x.v[static_cast<size_t>(i)] = 0.37 * i * (i % 2 ? 1 : -1);
  std::vector<Tensor> params = {x};
  std::vector<char> mask(4, 1);
  double err = op_gradcheck(
      params,
      [mask](Tape& t, std::vector<Tape::Ref>& r) {
        return squash(t, t.pna_pool(r[0], mask));
      },
      rng);
  CHECK(err < 1e-4);
}

TEST_CASE("ce loss: exact values and gradcheck") {
  {
    // uniform logits over 4 classes, 3 unmasked rows -> 3 ln 4
    Tensor logits({3, 4}, 0.7);
    std::vector<int> targets = {0, 2, 3};
    std::vector<char> mask = {1, 1, 1};
    Tape t(false);
    Tape::Ref l = t.ce_loss(t.constant(logits), targets, mask);
    CHECK(t.val(l).v[0] == doctest::Approx(3.0 * std::log(4.0)).epsilon(1e-12));
  }
  {
    // masked rows contribute nothing, even with absurd logits
    Tensor logits({2, 3});
    logits.v = {0, 0, 0, 500, -500, 0};
    std::vector<int> targets = {1, 1};
    std::vector<char> mask = {1, 0};
    Tape t(false);
    Tape::Ref l = t.ce_loss(t.constant(logits), targets, mask);
    CHECK(t.val(l).v[0] == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }
  Rng rng(113);
  std::vector<Tensor> params = {random_tensor(5, 4, rng)};
  std::vector<int> targets = {0, 3, 1, 2, 2};
  std::vector<char> mask = {1, 1, 0, 1, 1};
  double err = op_gradcheck(
      params,
      [targets, mask](Tape& t, std::vector<Tape::Ref>& r) {
        return t.ce_loss(r[0], targets, mask);
      },
      rng);
  CHECK(err < 1e-4);
}

TEST_CASE("ce loss clamps vanishing probabilities and counts them") {
  Tensor logits({1, 2});
  logits.v = {0.0, 200.0};  // p(class 0) = e^-200, far below the floor
  std::vector<int> targets = {0};
  std::vector<char> mask = {1};
  Tape t(true);
  Tape::Ref l = t.ce_loss(t.constant(logits), targets, mask);
  CHECK(t.val(l).v[0] == doctest::Approx(-std::log(1e-30)));
  CHECK(t.clamp_count() == 1);
}

TEST_CASE("softmax rows sum to one and gradcheck") {
  Rng rng(114);
  std::vector<Tensor> params = {random_tensor(3, 5, rng)};
  {
    Tape t(false);
    Tape::Ref s = t.softmax_rows(t.param(&params[0]));
    for (int r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (int c = 0; c < 5; ++c) sum += t.val(s).at(r, c);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  double err = op_gradcheck(
      params,
      [](Tape& t, std::vector<Tape::Ref>& r) {
        return squash(t, t.softmax_rows(r[0]));
      },
      rng);
  CHECK(err < 1e-4);
}

TEST_CASE("composite graph of every op gradchecks end to end") {
  Rng rng(115);
  int n = 3, C = 4;
  std::vector<Tensor> params;
  params.push_back(random_tensor(n, C, rng));          // node features
  params.push_back(random_tensor(C, C, rng));          // projection
  params.push_back(random_tensor(1, C, rng));          // bias
  params.push_back(random_tensor(n * n, C, rng));      // edge features
  params.push_back(random_tensor(1, C, rng));          // ln gamma
  params.push_back(random_tensor(1, C, rng));          // ln beta
  std::vector<char> mask(static_cast<size_t>(n), 1);
  double err = op_gradcheck(
      params,
      [mask, n](Tape& t, std::vector<Tape::Ref>& r) {
        Tape::Ref xn = t.layer_norm(r[0], r[4], r[5]);
        Tape::Ref q = t.linear(xn, r[1], r[2]);
        Tape::Ref k = t.linear(xn, r[1], Tape::kNone);
        Tape::Ref v = t.sigmoid(t.linear(xn, r[1], r[2]));
        Tape::Ref scores = t.qk_scores(q, k, 2);
        Tape::Ref scores2 = t.film(r[3], scores, t.transpose_pairs(scores, n));
        Tape::Ref attended = t.dual_attend(scores, scores2, v, xn, mask);
        Tape::Ref pooled = t.pna_pool(attended, mask);
        return squash(t, pooled);
      },
      rng);
  CHECK(err < 1e-4);
}

TEST_CASE("adamw drives a quadratic toward its minimum deterministically") {
  std::vector<Tensor> params = {Tensor({1, 2}, 5.0)};
  AdamW opt;
  opt.lr = 0.05;
  opt.init(params);
  for (int step = 0; step < 2000; ++step) {
    std::vector<Tensor> grads = {Tensor({1, 2})};
    grads[0].v[0] = 2.0 * (params[0].v[0] - 1.0);
    grads[0].v[1] = 2.0 * (params[0].v[1] + 2.0);
    opt.update(params, grads);
  }
  CHECK(params[0].v[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(params[0].v[1] == doctest::Approx(-2.0).epsilon(1e-3));

  // identical seeds and gradients give bit-identical trajectories
  std::vector<Tensor> a = {Tensor({1, 3}, 2.0)}, b = {Tensor({1, 3}, 2.0)};
  AdamW oa, ob;
  oa.init(a);
  ob.init(b);
  for (int step = 0; step < 50; ++step) {
    std::vector<Tensor> g = {Tensor({1, 3}, 0.25 * (step % 5))};
    oa.update(a, g);
    ob.update(b, g);
  }
  for (int i = 0; i < 3; ++i) CHECK(a[0].v[static_cast<size_t>(i)] == b[0].v[static_cast<size_t>(i)]);
}

TEST_CASE("non-tracing tape refuses backward and stores no attention") {
  Tape t(false);
  Tensor x({1, 1}, 2.0);
  Tape::Ref r = t.relu(t.param(&x));
  CHECK_THROWS_AS(t.backward(r), InvalidParam);
}
