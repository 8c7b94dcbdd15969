#pragma once

#include <string>
#include <vector>

#include "digen/denoiser.hpp"
#include "digen/train.hpp"

namespace digen {

// Limit distribution the noising process converges to as t goes to 0.
enum class NoiseKind { UNIFORM, MARGINAL };

struct NoiseModel {
  NoiseKind kind = NoiseKind::UNIFORM;
  std::vector<double> x;  // simplex over node classes
  std::vector<double> e;  // simplex over edge classes

  static NoiseModel uniform(int X, int E);
  // Empirical class frequencies with an additive 1e-8 floor, renormalized,
  // so every class stays reachable by the reverse process.
  static NoiseModel marginal(const std::vector<DiGraph>& data, int X, int E);
  void validate() const;
};

// Monotone bijections of [0,1] reallocating denoising resolution along the
// trajectory.
enum class Distortion { IDENTITY, POLYDEC, COS, REVCOS, POLYINC };

double distort(double t, Distortion kind);
std::string distortion_to_string(Distortion kind);
Distortion distortion_from_string(const std::string& name);

struct SamplingKnobs {
  int steps = 500;
  Distortion distortion = Distortion::IDENTITY;
  double omega = 0.0;  // target guidance strength
  double eta = 0.0;    // detailed-balance stochasticity scale

  void validate() const;
};

// Empirical node-count distribution of a training set.
struct NodeCountSource {
  std::vector<int> values;
  std::vector<double> probs;

  static NodeCountSource from_graphs(const std::vector<DiGraph>& data);
  static NodeCountSource fixed(int n);
  int draw(Rng& rng) const;
};

// Interpolation sample: every node and ordered pair independently keeps its
// clean class with probability t and otherwise draws from the limit.
DiGraph dfm_noise_sample(const DiGraph& g1, double t, const NoiseModel& nm, Rng& rng);

// Rate vector out of state z_t conditioned on clean class z1 at time t,
// classes indexed from 0. Off-diagonal entries are nonnegative; the z_t
// entry is minus their sum, so the vector is a generator row.
std::vector<double> cond_rate(int z_t, int z1, double t, const std::vector<double>& limit);

// Generator rows for every node and ordered pair of a graph.
struct RateField {
  int n = 0;
  int X = 1;
  int E = 2;
  std::vector<double> x_rate;  // n * X
  std::vector<double> e_rate;  // n * n * E, diagonal pairs all zero

  double* x_row(int i) { return x_rate.data() + static_cast<size_t>(i) * X; }
  double* e_row(int i, int j) {
    return e_rate.data() + (static_cast<size_t>(i) * n + j) * E;
  }
  const double* x_row(int i) const { return x_rate.data() + static_cast<size_t>(i) * X; }
  const double* e_row(int i, int j) const {
    return e_rate.data() + (static_cast<size_t>(i) * n + j) * E;
  }
};

// Expectation of cond_rate over the predicted clean-class distribution,
// summed exactly over classes.
RateField predicted_rate(const DenoiserOutput& pred, const DiGraph& g_t, double t,
                         const NoiseModel& nm);

// Additive bias toward predicted clean classes:
// rate(j) += omega * pred(j) / (Z^{>0} * p_{t|1}(z_t | j)) for j != z_t.
void apply_guidance(RateField& rates, const DenoiserOutput& pred, const DiGraph& g_t, double t,
                    double omega, const NoiseModel& nm);

// Adds eta times the detailed-balance rate E_{z1~pred}[p_{t|1}(j | z1)],
// which expands to eta * (t * pred(j) + (1-t) * limit(j)) for j != z_t.
void apply_stochasticity(RateField& rates, const DenoiserOutput& pred, const DiGraph& g_t,
                         double t, double eta, const NoiseModel& nm);

// One Euler transition for a single variable: move to j with probability
// rates[j] * dt, renormalizing proportionally when the total exceeds 1.
// `rates` is a generator row of length C; returns the new class index.
int euler_step_class(int cur, const double* rates, int C, double dt, Rng& rng);

// Full reverse sampler: draw N, start from the limit distribution, walk the
// distorted time grid with Euler steps, decode by argmax at t = 1.
DiGraph dfm_sample(const DenoiserFn& denoiser, const NoiseModel& nm, const SamplingKnobs& knobs,
                   const NodeCountSource& counts, Rng& rng);

// Training-side corruption: t drawn uniformly, optionally distorted, then
// one interpolation sample at that time.
Corruptor make_dfm_corruptor(const NoiseModel& nm, Distortion train_distortion);

}  // namespace digen
