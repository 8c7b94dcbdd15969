#pragma once

#include <vector>

#include "digen/dfm.hpp"

namespace digen {

// Cosine noise schedule on a T-step grid over the transformed time
// t' = 1 - t/T, so t' = 1 is the clean end and t' = 0 is pure noise.
struct DiffusionSchedule {
  int T = 500;
  double s = 0.008;  // schedule offset keeping the clean end slightly noisy

  void validate() const;
};

// Keep probability at transformed time t': cos(pi/2 * (1 - t' + s)/(1 + s))^2.
double alpha_bar(double t_prime, double s);

// Closed-form forward corruption: each variable keeps its clean class with
// probability alpha_bar(t') and otherwise draws from the limit distribution.
DiGraph dd_forward_noise(const DiGraph& g1, double t_prime, double s, const NoiseModel& nm,
                         Rng& rng);

// Single-step forward posterior over the class at the less-noisy level,
// given clean class z1 and the observed class z_t at keep level ab_cur.
// ab_next is the keep level one grid step closer to clean (ab_next >= ab_cur).
std::vector<double> dd_posterior(int z_t, int z1, double ab_cur, double ab_next,
                                 const std::vector<double>& m);

// Reverse sampler: start from the limit distribution at t' = 0, walk the
// grid towards t' = 1 using the predicted clean distribution to marginalize
// the posterior, decode by argmax at the clean end.
DiGraph dd_sample(const DenoiserFn& denoiser, const NoiseModel& nm,
                  const DiffusionSchedule& sched, const NodeCountSource& counts, Rng& rng);

// Training-side corruption: draw a grid level t in {1..T}, corrupt at
// t' = 1 - t/T, and hand the network t' as its time input.
Corruptor make_dd_corruptor(const NoiseModel& nm, const DiffusionSchedule& sched);

}  // namespace digen
