#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "digen/dfm.hpp"
#include "digen/synth.hpp"

using namespace digen;

namespace {

// Oracle for a product target: single node class, each ordered pair present
// independently with probability p, uniform noise, linear keep schedule.
OracleDenoiser er_oracle(double p) {
  OracleDenoiser oracle;
  oracle.x_prior = {1.0};
  oracle.e_prior = {1.0 - p, p};
  oracle.x_noise = {1.0};
  oracle.e_noise = {0.5, 0.5};
  oracle.kappa_of_time = [](double t) { return t; };
  return oracle;
}

// Total variation between sampled 3-node graphs and the exact product law
// over the 64 edge configurations.
double tv_to_product(const DenoiserFn& den, const NoiseModel& nm, const SamplingKnobs& knobs,
                     double p, int samples, Rng& rng) {
  std::vector<double> counts(64, 0.0);
  for (int trial = 0; trial < samples; ++trial) {
    DiGraph g = dfm_sample(den, nm, knobs, NodeCountSource::fixed(3), rng);
    int idx = 0, bit = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        if (i == j) continue;
        if (g.edge(i, j) != 0) idx |= 1 << bit;
        ++bit;
      }
    counts[static_cast<size_t>(idx)] += 1.0;
  }
  double tv = 0.0;
  for (int idx = 0; idx < 64; ++idx) {
    int bits = __builtin_popcount(static_cast<unsigned>(idx));
    double exact = std::pow(p, bits) * std::pow(1.0 - p, 6 - bits);
    tv += std::abs(counts[static_cast<size_t>(idx)] / samples - exact);
  }
  return tv / 2.0;
}

}  // namespace

TEST_CASE("distortions: endpoints, worked values, monotonicity") {
  for (Distortion kind : {Distortion::IDENTITY, Distortion::POLYDEC, Distortion::COS,
                          Distortion::REVCOS, Distortion::POLYINC}) {
    CHECK(distort(0.0, kind) == 0.0);
    CHECK(distort(1.0, kind) == 1.0);
    double prev = 0.0;
    for (int k = 1; k <= 1000; ++k) {
      double cur = distort(k / 1000.0, kind);
      REQUIRE(cur > prev);
      prev = cur;
    }
  }
  CHECK(distort(0.5, Distortion::POLYDEC) == 0.75);
  CHECK(distort(0.5, Distortion::POLYINC) == 0.25);
  CHECK(distort(0.5, Distortion::COS) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(distort(0.5, Distortion::REVCOS) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(distort(1.5, Distortion::IDENTITY), InvalidParam);

  for (Distortion kind : {Distortion::IDENTITY, Distortion::POLYDEC, Distortion::COS,
                          Distortion::REVCOS, Distortion::POLYINC})
    CHECK(distortion_from_string(distortion_to_string(kind)) == kind);
  CHECK_THROWS_AS(distortion_from_string("sigmoid"), InvalidParam);
}

TEST_CASE("noise model: uniform and smoothed marginal") {
  NoiseModel uni = NoiseModel::uniform(3, 2);
  CHECK(uni.x == std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3});
  CHECK(uni.e == std::vector<double>{0.5, 0.5});

  Rng rng(5);
  std::vector<DiGraph> data;
  for (int i = 0; i < 20; ++i) data.push_back(gen_er(6, 9, 0.25, false, rng));
  NoiseModel marg = NoiseModel::marginal(data, 1, 2);
  CHECK(marg.x[0] == doctest::Approx(1.0));
  CHECK(marg.e[0] + marg.e[1] == doctest::Approx(1.0));
  CHECK(marg.e[1] == doctest::Approx(0.25).epsilon(0.25));
  for (double v : marg.e) CHECK(v > 0.0);

  // A class never observed still gets positive mass from the floor.
  NoiseModel wide = NoiseModel::marginal(data, 2, 3);
  CHECK(wide.x[1] > 0.0);
  CHECK(wide.e[2] > 0.0);
  CHECK_THROWS_AS(NoiseModel::marginal({}, 1, 2), EmptyDataset);
}

TEST_CASE("noising: endpoints and midpoint keep probability") {
  NoiseModel nm = NoiseModel::uniform(2, 2);
  Rng rng(7);
  Rng grng(8);
  for (int trial = 0; trial < 20; ++trial) {
    DiGraph g = gen_er(4, 7, 0.4, false, grng);
    for (int i = 0; i < g.n; ++i) g.x[static_cast<size_t>(i)] = 1 + (i % 2);
    DiGraph same = dfm_noise_sample(g, 1.0, nm, rng);
    REQUIRE(same.x == g.x);
    REQUIRE(same.e == g.e);
  }

  // t = 0: forget the clean graph entirely.
  DiGraph clean(1);
  clean.x = {1};
  int ones = 0;
  const int draws = 100000;
  for (int trial = 0; trial < draws; ++trial)
    if (dfm_noise_sample(clean, 0.0, nm, rng).x[0] == 1) ++ones;
  CHECK(std::abs(ones / static_cast<double>(draws) - 0.5) < 0.01);

  // t = 0.5, clean edge present: P(present) = 0.5 + 0.5 * 0.5 = 0.75.
  DiGraph pair(2);
  pair.x = {1, 1};
  pair.set_edge(0, 1, 1);
  int present = 0;
  for (int trial = 0; trial < draws; ++trial)
    if (dfm_noise_sample(pair, 0.5, nm, rng).edge(0, 1) == 1) ++present;
  double freq = present / static_cast<double>(draws);
  CHECK(std::abs(freq - 0.75) < 3.0 * std::sqrt(0.75 * 0.25 / draws));
}

TEST_CASE("conditional rate: worked example and structure") {
  std::vector<double> uniform = {0.5, 0.5};

  // Binary states, z1 = class 0, observed class 1 at t = 0.5:
  // rate back to the clean class is ReLU[0.5 - (-0.5)] / (2 * 0.25) = 2.
  std::vector<double> r = cond_rate(1, 0, 0.5, uniform);
  CHECK(r[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(r[1] == doctest::Approx(-2.0).epsilon(1e-15));

  // Sitting on the clean class near t = 1: no reason to leave.
  std::vector<double> stay = cond_rate(0, 0, 0.9, uniform);
  CHECK(stay[0] == 0.0);
  CHECK(stay[1] == 0.0);

  // t = 0 instantiates the same formula with the limit distribution.
  std::vector<double> start = cond_rate(1, 0, 0.0, uniform);
  CHECK(start[0] == doctest::Approx(1.0 / (2.0 * 0.5)).epsilon(1e-15));

  // Generator structure on a skewed 3-class limit.
  std::vector<double> limit = {0.2, 0.3, 0.5};
  for (int z1 = 0; z1 < 3; ++z1)
    for (int zt = 0; zt < 3; ++zt) {
      std::vector<double> row = cond_rate(zt, z1, 0.4, limit);
      double off = 0.0;
      for (int j = 0; j < 3; ++j)
        if (j != zt) {
          REQUIRE(row[static_cast<size_t>(j)] >= 0.0);
          off += row[static_cast<size_t>(j)];
        }
      REQUIRE(row[static_cast<size_t>(zt)] == doctest::Approx(-off).epsilon(1e-12));
    }

  // Observed state impossible under the conditioning: t = 1 off the target.
  CHECK_THROWS_AS(cond_rate(1, 0, 1.0, uniform), ZeroSupport);
}

TEST_CASE("predicted rate: degenerate and uniform predictions") {
  NoiseModel nm = NoiseModel::uniform(1, 2);
  DiGraph g(2);
  g.x = {1, 1};
  g.set_edge(0, 1, 1);

  // Point mass on a clean graph reproduces cond_rate against it.
  DenoiserOutput point;
  point.n = 2;
  point.X = 1;
  point.E = 2;
  point.x_prob = {1.0, 1.0};
  point.e_prob = {1, 0, /*0,1*/ 0, 1, /*1,0*/ 1, 0, /*1,1*/ 1, 0};
  RateField rf = predicted_rate(point, g, 0.3, nm);
  std::vector<double> direct = cond_rate(1, 1, 0.3, nm.e);  // pair (0,1): observed=clean=present
  CHECK(rf.e_row(0, 1)[0] == doctest::Approx(direct[0]).epsilon(1e-15));
  std::vector<double> direct10 = cond_rate(0, 0, 0.3, nm.e);
  CHECK(rf.e_row(1, 0)[1] == doctest::Approx(direct10[1]).epsilon(1e-15));

  // Uniform prediction averages the two conditional rows.
  DenoiserOutput half = point;
  half.e_prob = {1, 0, 0.5, 0.5, 1, 0, 1, 0};
  RateField rf_half = predicted_rate(half, g, 0.3, nm);
  std::vector<double> a = cond_rate(1, 0, 0.3, nm.e);
  std::vector<double> b = cond_rate(1, 1, 0.3, nm.e);
  for (int c = 0; c < 2; ++c)
    CHECK(rf_half.e_row(0, 1)[c] ==
          doctest::Approx(0.5 * (a[static_cast<size_t>(c)] + b[static_cast<size_t>(c)]))
              .epsilon(1e-15));

  // Diagonal pair rows stay identically zero.
  CHECK(rf.e_row(0, 0)[0] == 0.0);
  CHECK(rf.e_row(1, 1)[1] == 0.0);

  DenoiserOutput misaligned = point;
  misaligned.n = 3;
  CHECK_THROWS_AS(predicted_rate(misaligned, g, 0.3, nm), ShapeMismatch);
}

TEST_CASE("guidance: identity at zero, targeted boost otherwise") {
  NoiseModel nm = NoiseModel::uniform(1, 3);
  DiGraph g(2);
  g.x = {1, 1};  // all pairs start at class 0

  DenoiserOutput pred;
  pred.n = 2;
  pred.X = 1;
  pred.E = 3;
  pred.x_prob = {1.0, 1.0};
  pred.e_prob.assign(2 * 2 * 3, 0.0);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      pred.e_prob[(static_cast<size_t>(i) * 2 + j) * 3 + 2] = 1.0;  // point mass on class 2

  RateField base = predicted_rate(pred, g, 0.4, nm);
  RateField same = base;
  apply_guidance(same, pred, g, 0.4, 0.0, nm);
  CHECK(same.e_rate == base.e_rate);
  CHECK(same.x_rate == base.x_rate);

  RateField boosted = base;
  apply_guidance(boosted, pred, g, 0.4, 0.3, nm);
  // Only the rate toward the predicted class grows; the worked value is
  // omega / (Z * p_{t|1}(0 | 2)) = 0.3 / (3 * (0.6 / 3)).
  double expect_delta = 0.3 / (3.0 * (0.6 / 3.0));
  CHECK(boosted.e_row(0, 1)[2] - base.e_row(0, 1)[2] ==
        doctest::Approx(expect_delta).epsilon(1e-12));
  CHECK(boosted.e_row(0, 1)[1] == base.e_row(0, 1)[1]);
  CHECK(boosted.e_row(0, 1)[0] < base.e_row(0, 1)[0]);  // diagonal entry more negative
}

TEST_CASE("stochasticity: identity at zero, detailed-balance increment") {
  NoiseModel nm = NoiseModel::uniform(1, 2);
  DiGraph g(2);
  g.x = {1, 1};
  g.set_edge(0, 1, 1);

  DenoiserOutput pred;
  pred.n = 2;
  pred.X = 1;
  pred.E = 2;
  pred.x_prob = {1.0, 1.0};
  pred.e_prob = {0.7, 0.3, 0.2, 0.8, 0.6, 0.4, 0.5, 0.5};

  RateField base = predicted_rate(pred, g, 0.4, nm);
  RateField same = base;
  apply_stochasticity(same, pred, g, 0.4, 0.0, nm);
  CHECK(same.e_rate == base.e_rate);

  double eta = 10.0;
  RateField noisy = base;
  apply_stochasticity(noisy, pred, g, 0.4, eta, nm);
  // Pair (0,1) sits at class 1; the boost toward class 0 is
  // eta * (t * pred(0) + (1-t) * limit(0)).
  double expect = eta * (0.4 * 0.2 + 0.6 * 0.5);
  CHECK(noisy.e_row(0, 1)[0] - base.e_row(0, 1)[0] == doctest::Approx(expect).epsilon(1e-12));

  // The underlying auxiliary rate satisfies detailed balance for every
  // conditioning class: p(i|z1) R(i,j|z1) = p(j|z1) R(j,i|z1) with
  // R(i,j|z1) = p(j|z1).
  std::vector<double> limit = {0.3, 0.7};
  for (int z1 = 0; z1 < 2; ++z1)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        double t = 0.35;
        auto p = [&](int k) {
          return t * (k == z1 ? 1.0 : 0.0) + (1.0 - t) * limit[static_cast<size_t>(k)];
        };
        CHECK(p(i) * p(j) == doctest::Approx(p(j) * p(i)).epsilon(1e-15));
      }
}

TEST_CASE("euler step: frequencies match transition probabilities") {
  Rng rng(11);
  const int trials = 100000;

  // Unclamped: q = {0.15, stay, 0.6}.
  double rates[3] = {0.3, -1.5, 1.2};
  int counts[3] = {0, 0, 0};
  for (int k = 0; k < trials; ++k) ++counts[euler_step_class(1, rates, 3, 0.5, rng)];
  auto within = [&](int idx, double p) {
    double freq = counts[idx] / static_cast<double>(trials);
    return std::abs(freq - p) < 3.0 * std::sqrt(p * (1.0 - p) / trials);
  };
  CHECK(within(0, 0.15));
  CHECK(within(1, 0.25));
  CHECK(within(2, 0.60));

  // Clamped: raw probabilities 2 and 2 renormalize to a half each.
  double hot[3] = {4.0, -8.0, 4.0};
  int hot_counts[3] = {0, 0, 0};
  for (int k = 0; k < trials; ++k) ++hot_counts[euler_step_class(1, hot, 3, 0.5, rng)];
  CHECK(hot_counts[1] == 0);  // staying is impossible after the clamp
  CHECK(std::abs(hot_counts[0] / static_cast<double>(trials) - 0.5) <
        3.0 * std::sqrt(0.25 / trials));
}

TEST_CASE("sampler: single-step chain hits the exact product marginal") {
  OracleDenoiser oracle = er_oracle(0.6);
  NoiseModel nm = NoiseModel::uniform(1, 2);
  SamplingKnobs knobs;
  knobs.steps = 1;

  // One Euler step from t=0 with the prior prediction moves each pair to
  // present with probability exactly 0.6 regardless of its start state.
  Rng rng(13);
  const int trials = 50000;
  int present = 0;
  for (int k = 0; k < trials; ++k) {
    DiGraph g = dfm_sample(DenoiserFn(oracle), nm, knobs, NodeCountSource::fixed(2), rng);
    present += (g.edge(0, 1) != 0) + (g.edge(1, 0) != 0);
  }
  double freq = present / (2.0 * trials);
  CHECK(std::abs(freq - 0.6) < 3.0 * std::sqrt(0.6 * 0.4 / (2.0 * trials)));
}

TEST_CASE("sampler: grid resolution never degrades the recovered law") {
  // With exact per-variable rates the marginal interpolation is linear in
  // t, so the Euler chain reproduces the product target at any step count
  // and the measured TV sits at the Monte Carlo noise floor for both grids.
  OracleDenoiser oracle = er_oracle(0.6);
  NoiseModel nm = NoiseModel::uniform(1, 2);

  SamplingKnobs coarse;
  coarse.steps = 2;
  SamplingKnobs fine;
  fine.steps = 64;
  Rng rng_a(17);
  Rng rng_b(17);
  double tv_coarse = tv_to_product(DenoiserFn(oracle), nm, coarse, 0.6, 20000, rng_a);
  double tv_fine = tv_to_product(DenoiserFn(oracle), nm, fine, 0.6, 20000, rng_b);
  CHECK(tv_fine < 0.05);
  CHECK(tv_coarse < 0.05);
}

TEST_CASE("corruptor: distorted time and interpolation sample") {
  NoiseModel nm = NoiseModel::uniform(1, 2);
  Corruptor corrupt = make_dfm_corruptor(nm, Distortion::POLYDEC);
  Rng grng(19);
  DiGraph clean = gen_er(6, 6, 0.5, false, grng);

  Rng rng_a(23);
  Rng rng_b(23);
  auto [za, ta] = corrupt(clean, rng_a);
  auto [zb, tb] = corrupt(clean, rng_b);
  CHECK(ta == tb);
  CHECK(za.e == zb.e);
  CHECK(ta >= 0.0);
  CHECK(ta <= 1.0);

  // Polydec shifts the drawn times upward: mean of 2u - u^2 over u~U[0,1]
  // is 2/3 against 1/2 for the identity.
  Rng rng_mean(29);
  double sum = 0.0;
  const int reps = 20000;
  for (int k = 0; k < reps; ++k) sum += corrupt(clean, rng_mean).second;
  CHECK(sum / reps == doctest::Approx(2.0 / 3.0).epsilon(0.02));
}
