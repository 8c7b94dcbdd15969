#include "digen/dd.hpp"

#include <cmath>

namespace digen {

void DiffusionSchedule::validate() const {
  if (T < 1) throw InvalidParam("DiffusionSchedule: T must be >= 1");
  if (s < 0.0) throw InvalidParam("DiffusionSchedule: s must be >= 0");
}

double alpha_bar(double t_prime, double s) {
  if (t_prime < 0.0 || t_prime > 1.0) throw InvalidParam("alpha_bar: t' outside [0,1]");
  double c = std::cos(M_PI / 2.0 * (1.0 - t_prime + s) / (1.0 + s));
  return c * c;
}

DiGraph dd_forward_noise(const DiGraph& g1, double t_prime, double s, const NoiseModel& nm,
                         Rng& rng) {
  double keep = alpha_bar(t_prime, s);
  DiGraph z = g1;
  for (int i = 0; i < z.n; ++i)
    if (rng.uniform() >= keep) z.x[static_cast<size_t>(i)] = rng.categorical(nm.x) + 1;
  for (int i = 0; i < z.n; ++i)
    for (int j = 0; j < z.n; ++j)
      if (i != j && rng.uniform() >= keep) z.set_edge(i, j, rng.categorical(nm.e));
  return z;
}

std::vector<double> dd_posterior(int z_t, int z1, double ab_cur, double ab_next,
                                 const std::vector<double>& m) {
  int C = static_cast<int>(m.size());
  if (z_t < 0 || z_t >= C || z1 < 0 || z1 >= C)
    throw InvalidParam("dd_posterior: class index out of range");
  if (ab_cur < 0.0 || ab_next > 1.0 || ab_cur > ab_next)
    throw InvalidParam("dd_posterior: keep levels must satisfy 0 <= ab_cur <= ab_next <= 1");
  // Keep mixtures compose multiplicatively, so the single step from the
  // ab_next level down to the ab_cur level keeps with probability
  // ab_cur / ab_next (zero when both levels are pure noise).
  double alpha_step = ab_next > 0.0 ? ab_cur / ab_next : 0.0;
  std::vector<double> w(static_cast<size_t>(C), 0.0);
  double total = 0.0;
  for (int k = 0; k < C; ++k) {
    double step_term =
        alpha_step * (k == z_t ? 1.0 : 0.0) + (1.0 - alpha_step) * m[static_cast<size_t>(z_t)];
    double next_term =
        ab_next * (k == z1 ? 1.0 : 0.0) + (1.0 - ab_next) * m[static_cast<size_t>(k)];
    w[static_cast<size_t>(k)] = step_term * next_term;
    total += w[static_cast<size_t>(k)];
  }
  if (total <= 0.0) throw ZeroSupport("dd_posterior: observation impossible under the chain");
  for (double& v : w) v /= total;
  return w;
}

namespace {

// Reverse kernel for one variable: marginalize the posterior over the
// predicted clean-class distribution, then draw.
int reverse_draw(int cur, const double* pred, double ab_cur, double ab_next,
                 const std::vector<double>& m, std::vector<double>& scratch, Rng& rng) {
  int C = static_cast<int>(m.size());
  scratch.assign(static_cast<size_t>(C), 0.0);
  for (int z1 = 0; z1 < C; ++z1) {
    double w = pred[z1];
    if (w <= 0.0) continue;
    std::vector<double> post = dd_posterior(cur, z1, ab_cur, ab_next, m);
    for (int k = 0; k < C; ++k) scratch[static_cast<size_t>(k)] += w * post[static_cast<size_t>(k)];
  }
  return rng.categorical(scratch);
}

}  // namespace

DiGraph dd_sample(const DenoiserFn& denoiser, const NoiseModel& nm,
                  const DiffusionSchedule& sched, const NodeCountSource& counts, Rng& rng) {
  sched.validate();
  nm.validate();
  if (!denoiser) throw InvalidParam("dd_sample: denoiser is empty");

  int n = counts.draw(rng);
  DiGraph z(n);
  for (int i = 0; i < n; ++i) z.x[static_cast<size_t>(i)] = rng.categorical(nm.x) + 1;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) z.set_edge(i, j, rng.categorical(nm.e));

  std::vector<double> scratch;
  double T = static_cast<double>(sched.T);
  for (int k = 0; k < sched.T; ++k) {
    double tp_cur = k / T;
    double ab_cur = alpha_bar(tp_cur, sched.s);
    double ab_next = alpha_bar((k + 1) / T, sched.s);

    DenoiserOutput pred = denoiser(z, tp_cur);
    if (pred.n != n || pred.X != static_cast<int>(nm.x.size()) ||
        pred.E != static_cast<int>(nm.e.size()))
      throw ShapeMismatch("dd_sample: prediction misaligned with the state");

    // All variables step from the frozen pre-step state.
    DiGraph next = z;
    for (int i = 0; i < n; ++i)
      next.x[static_cast<size_t>(i)] =
          reverse_draw(z.x[static_cast<size_t>(i)] - 1,
                       pred.x_prob.data() + static_cast<size_t>(i) * pred.X, ab_cur, ab_next,
                       nm.x, scratch, rng) +
          1;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j)
          next.set_edge(i, j,
                        reverse_draw(z.edge(i, j),
                                     pred.e_prob.data() + (static_cast<size_t>(i) * n + j) * pred.E,
                                     ab_cur, ab_next, nm.e, scratch, rng));
    z = std::move(next);
  }

  DenoiserOutput pred = denoiser(z, 1.0);
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int c = 1; c < pred.X; ++c)
      if (pred.xp(i, c) > pred.xp(i, best)) best = c;
    z.x[static_cast<size_t>(i)] = best + 1;
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      int best = 0;
      for (int c = 1; c < pred.E; ++c)
        if (pred.ep(i, j, c) > pred.ep(i, j, best)) best = c;
      z.set_edge(i, j, best);
    }
  return z;
}

Corruptor make_dd_corruptor(const NoiseModel& nm, const DiffusionSchedule& sched) {
  nm.validate();
  sched.validate();
  return [nm, sched](const DiGraph& clean, Rng& rng) {
    int level = 1 + rng.uniform_int(sched.T);  // forward step in {1..T}
    double t_prime = 1.0 - level / static_cast<double>(sched.T);
    return std::make_pair(dd_forward_noise(clean, t_prime, sched.s, nm, rng), t_prime);
  };
}

}  // namespace digen
