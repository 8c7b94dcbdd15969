#include "digen/dfm.hpp"

#include <algorithm>
#include <cmath>

namespace digen {

namespace {

std::vector<double> uniform_simplex(int C) {
  return std::vector<double>(static_cast<size_t>(C), 1.0 / C);
}

void check_simplex(const std::vector<double>& p, const char* what) {
  if (p.empty()) throw InvalidParam(std::string(what) + ": empty distribution");
  double sum = 0.0;
  for (double v : p) {
    if (v < 0.0 || !std::isfinite(v)) throw InvalidParam(std::string(what) + ": bad entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw InvalidParam(std::string(what) + ": entries do not sum to 1");
}

double interp(double t, int cls, int clean, const std::vector<double>& limit) {
  return t * (cls == clean ? 1.0 : 0.0) + (1.0 - t) * limit[static_cast<size_t>(cls)];
}

int positive_support(double t, int clean, const std::vector<double>& limit) {
  int count = 0;
  for (int j = 0; j < static_cast<int>(limit.size()); ++j)
    if (interp(t, j, clean, limit) > 0.0) ++count;
  return count;
}

}  // namespace

NoiseModel NoiseModel::uniform(int X, int E) {
  if (X < 1 || E < 1) throw InvalidParam("NoiseModel: class counts must be >= 1");
  NoiseModel nm;
  nm.kind = NoiseKind::UNIFORM;
  nm.x = uniform_simplex(X);
  nm.e = uniform_simplex(E);
  return nm;
}

NoiseModel NoiseModel::marginal(const std::vector<DiGraph>& data, int X, int E) {
  if (data.empty()) throw EmptyDataset("NoiseModel::marginal: no graphs");
  NoiseModel nm;
  nm.kind = NoiseKind::MARGINAL;
  nm.x.assign(static_cast<size_t>(X), 0.0);
  nm.e.assign(static_cast<size_t>(E), 0.0);
  for (const DiGraph& g : data) {
    g.validate(X, E);
    for (int cls : g.x) nm.x[static_cast<size_t>(cls - 1)] += 1.0;
    for (int i = 0; i < g.n; ++i)
      for (int j = 0; j < g.n; ++j)
        if (i != j) nm.e[static_cast<size_t>(g.edge(i, j))] += 1.0;
  }
  for (std::vector<double>* p : {&nm.x, &nm.e}) {
    double sum = 0.0;
    for (double& v : *p) {
      v += 1e-8;  // keep every class reachable
      sum += v;
    }
    for (double& v : *p) v /= sum;
  }
  nm.validate();
  return nm;
}

void NoiseModel::validate() const {
  check_simplex(x, "NoiseModel node distribution");
  check_simplex(e, "NoiseModel edge distribution");
  if (kind == NoiseKind::MARGINAL) {
    for (double v : x)
      if (v <= 0.0) throw InvalidParam("NoiseModel: marginal node entry not positive");
    for (double v : e)
      if (v <= 0.0) throw InvalidParam("NoiseModel: marginal edge entry not positive");
  }
}

double distort(double t, Distortion kind) {
  if (t < 0.0 || t > 1.0) throw InvalidParam("distort: t outside [0,1]");
  switch (kind) {
    case Distortion::IDENTITY:
      return t;
    case Distortion::POLYDEC:
      return 2.0 * t - t * t;
    case Distortion::COS:
      return (1.0 - std::cos(M_PI * t)) / 2.0;
    case Distortion::REVCOS:
      return 2.0 * t - (1.0 - std::cos(M_PI * t)) / 2.0;
    case Distortion::POLYINC:
      return t * t;
  }
  throw InvalidParam("distort: unknown kind");
}

std::string distortion_to_string(Distortion kind) {
  switch (kind) {
    case Distortion::IDENTITY: return "identity";
    case Distortion::POLYDEC: return "polydec";
    case Distortion::COS: return "cos";
    case Distortion::REVCOS: return "revcos";
    case Distortion::POLYINC: return "polyinc";
  }
  throw InvalidParam("distortion_to_string: unknown kind");
}

Distortion distortion_from_string(const std::string& name) {
  if (name == "identity") return Distortion::IDENTITY;
  if (name == "polydec") return Distortion::POLYDEC;
  if (name == "cos") return Distortion::COS;
  if (name == "revcos") return Distortion::REVCOS;
  if (name == "polyinc") return Distortion::POLYINC;
  throw InvalidParam("distortion_from_string: unknown kind " + name);
}

void SamplingKnobs::validate() const {
  if (steps < 1) throw InvalidParam("SamplingKnobs: steps must be >= 1");
  if (omega < 0.0) throw InvalidParam("SamplingKnobs: omega must be >= 0");
  if (eta < 0.0) throw InvalidParam("SamplingKnobs: eta must be >= 0");
}

NodeCountSource NodeCountSource::from_graphs(const std::vector<DiGraph>& data) {
  if (data.empty()) throw EmptyDataset("NodeCountSource: no graphs");
  NodeCountSource src;
  for (const DiGraph& g : data) {
    auto it = std::lower_bound(src.values.begin(), src.values.end(), g.n);
    if (it != src.values.end() && *it == g.n) {
      src.probs[static_cast<size_t>(it - src.values.begin())] += 1.0;
    } else {
      src.probs.insert(src.probs.begin() + (it - src.values.begin()), 1.0);
      src.values.insert(it, g.n);
    }
  }
  for (double& p : src.probs) p /= static_cast<double>(data.size());
  return src;
}

NodeCountSource NodeCountSource::fixed(int n) {
  if (n < 1) throw InvalidParam("NodeCountSource: n must be >= 1");
  NodeCountSource src;
  src.values = {n};
  src.probs = {1.0};
  return src;
}

int NodeCountSource::draw(Rng& rng) const {
  if (values.empty()) throw EmptyDataset("NodeCountSource: empty");
  return values[static_cast<size_t>(rng.categorical(probs))];
}

DiGraph dfm_noise_sample(const DiGraph& g1, double t, const NoiseModel& nm, Rng& rng) {
  if (t < 0.0 || t > 1.0) throw InvalidParam("dfm_noise_sample: t outside [0,1]");
  DiGraph z = g1;
  for (int i = 0; i < z.n; ++i)
    if (rng.uniform() >= t) z.x[static_cast<size_t>(i)] = rng.categorical(nm.x) + 1;
  for (int i = 0; i < z.n; ++i)
    for (int j = 0; j < z.n; ++j)
      if (i != j && rng.uniform() >= t) z.set_edge(i, j, rng.categorical(nm.e));
  return z;
}

std::vector<double> cond_rate(int z_t, int z1, double t, const std::vector<double>& limit) {
  int C = static_cast<int>(limit.size());
  if (z_t < 0 || z_t >= C || z1 < 0 || z1 >= C)
    throw InvalidParam("cond_rate: class index out of range");
  double p_cur = interp(t, z_t, z1, limit);
  if (p_cur <= 0.0) throw ZeroSupport("cond_rate: observed state has zero probability");
  double z_pos = static_cast<double>(positive_support(t, z1, limit));
  double dp_cur = (z_t == z1 ? 1.0 : 0.0) - limit[static_cast<size_t>(z_t)];
  std::vector<double> r(static_cast<size_t>(C), 0.0);
  double total = 0.0;
  for (int j = 0; j < C; ++j) {
    if (j == z_t) continue;
    double dp_j = (j == z1 ? 1.0 : 0.0) - limit[static_cast<size_t>(j)];
    double num = dp_j - dp_cur;
    if (num > 0.0) {
      r[static_cast<size_t>(j)] = num / (z_pos * p_cur);
      total += r[static_cast<size_t>(j)];
    }
  }
  r[static_cast<size_t>(z_t)] = -total;
  return r;
}

namespace {

// Expected generator row over the predicted clean distribution, written into
// `row` (length C). Same math as cond_rate, inlined to avoid per-variable
// allocations in the sampling loop.
void expected_rate_row(const double* pred, int cur, double t, const std::vector<double>& limit,
                       double* row) {
  int C = static_cast<int>(limit.size());
  for (int j = 0; j < C; ++j) row[j] = 0.0;
  double total = 0.0;
  for (int c = 0; c < C; ++c) {
    double w = pred[c];
    if (w <= 0.0) continue;
    double p_cur = interp(t, cur, c, limit);
    if (p_cur <= 0.0)
      throw ZeroSupport("predicted_rate: observed state impossible under a predicted class");
    double z_pos = static_cast<double>(positive_support(t, c, limit));
    double dp_cur = (cur == c ? 1.0 : 0.0) - limit[static_cast<size_t>(cur)];
    double scale = w / (z_pos * p_cur);
    for (int j = 0; j < C; ++j) {
      if (j == cur) continue;
      double num = ((j == c ? 1.0 : 0.0) - limit[static_cast<size_t>(j)]) - dp_cur;
      if (num > 0.0) {
        row[j] += scale * num;
        total += scale * num;
      }
    }
  }
  row[cur] = -total;
}

void check_aligned(const DenoiserOutput& pred, const DiGraph& g_t, const NoiseModel& nm) {
  if (pred.n != g_t.n) throw ShapeMismatch("rate computation: prediction size disagrees");
  if (pred.X != static_cast<int>(nm.x.size()) || pred.E != static_cast<int>(nm.e.size()))
    throw ShapeMismatch("rate computation: class counts disagree with the noise model");
}

}  // namespace

RateField predicted_rate(const DenoiserOutput& pred, const DiGraph& g_t, double t,
                         const NoiseModel& nm) {
  check_aligned(pred, g_t, nm);
  RateField rf;
  rf.n = g_t.n;
  rf.X = pred.X;
  rf.E = pred.E;
  rf.x_rate.assign(static_cast<size_t>(rf.n) * rf.X, 0.0);
  rf.e_rate.assign(static_cast<size_t>(rf.n) * rf.n * rf.E, 0.0);
  for (int i = 0; i < rf.n; ++i)
    expected_rate_row(pred.x_prob.data() + static_cast<size_t>(i) * rf.X,
                      g_t.x[static_cast<size_t>(i)] - 1, t, nm.x, rf.x_row(i));
  for (int i = 0; i < rf.n; ++i)
    for (int j = 0; j < rf.n; ++j) {
      if (i == j) continue;  // diagonal pairs never transition
      expected_rate_row(pred.e_prob.data() + (static_cast<size_t>(i) * rf.n + j) * rf.E,
                        g_t.edge(i, j), t, nm.e, rf.e_row(i, j));
    }
  return rf;
}

namespace {

// rate(j) += omega * pred(j) / (Z^{>0}(j) * p_{t|1}(cur | j)): the
// expectation over predicted clean classes of the guidance delta term.
void guidance_row(const double* pred, int cur, double t, const std::vector<double>& limit,
                  double omega, double* row) {
  int C = static_cast<int>(limit.size());
  double added = 0.0;
  for (int j = 0; j < C; ++j) {
    if (j == cur) continue;
    double p_cur_given_j = interp(t, cur, j, limit);
    if (p_cur_given_j <= 0.0) continue;  // unreachable clean class carries no guidance
    double z_pos = static_cast<double>(positive_support(t, j, limit));
    double delta = omega * pred[j] / (z_pos * p_cur_given_j);
    row[j] += delta;
    added += delta;
  }
  row[cur] -= added;
}

// rate(j) += eta * E_pred[p_{t|1}(j | z1)] = eta * (t pred(j) + (1-t) limit(j)).
void stochasticity_row(const double* pred, int cur, double t, const std::vector<double>& limit,
                       double eta, double* row) {
  int C = static_cast<int>(limit.size());
  double added = 0.0;
  for (int j = 0; j < C; ++j) {
    if (j == cur) continue;
    double delta = eta * (t * pred[j] + (1.0 - t) * limit[static_cast<size_t>(j)]);
    row[j] += delta;
    added += delta;
  }
  row[cur] -= added;
}

}  // namespace

void apply_guidance(RateField& rates, const DenoiserOutput& pred, const DiGraph& g_t, double t,
                    double omega, const NoiseModel& nm) {
  if (omega < 0.0) throw InvalidParam("apply_guidance: omega must be >= 0");
  if (omega == 0.0) return;
  check_aligned(pred, g_t, nm);
  for (int i = 0; i < rates.n; ++i)
    guidance_row(pred.x_prob.data() + static_cast<size_t>(i) * rates.X,
                 g_t.x[static_cast<size_t>(i)] - 1, t, nm.x, omega, rates.x_row(i));
  for (int i = 0; i < rates.n; ++i)
    for (int j = 0; j < rates.n; ++j) {
      if (i == j) continue;
      guidance_row(pred.e_prob.data() + (static_cast<size_t>(i) * rates.n + j) * rates.E,
                   g_t.edge(i, j), t, nm.e, omega, rates.e_row(i, j));
    }
}

void apply_stochasticity(RateField& rates, const DenoiserOutput& pred, const DiGraph& g_t,
                         double t, double eta, const NoiseModel& nm) {
  if (eta < 0.0) throw InvalidParam("apply_stochasticity: eta must be >= 0");
  if (eta == 0.0) return;
  check_aligned(pred, g_t, nm);
  for (int i = 0; i < rates.n; ++i)
    stochasticity_row(pred.x_prob.data() + static_cast<size_t>(i) * rates.X,
                      g_t.x[static_cast<size_t>(i)] - 1, t, nm.x, eta, rates.x_row(i));
  for (int i = 0; i < rates.n; ++i)
    for (int j = 0; j < rates.n; ++j) {
      if (i == j) continue;
      stochasticity_row(pred.e_prob.data() + (static_cast<size_t>(i) * rates.n + j) * rates.E,
                        g_t.edge(i, j), t, nm.e, eta, rates.e_row(i, j));
    }
}

int euler_step_class(int cur, const double* rates, int C, double dt, Rng& rng) {
  if (dt < 0.0) throw InvalidParam("euler_step_class: negative step");
  double total = 0.0;
  for (int j = 0; j < C; ++j)
    if (j != cur) total += rates[j] * dt;
  double scale = total > 1.0 ? 1.0 / total : 1.0;
  double u = rng.uniform();
  double cum = 0.0;
  for (int j = 0; j < C; ++j) {
    if (j == cur) continue;
    cum += rates[j] * dt * scale;
    if (u < cum) return j;
  }
  return cur;
}

DiGraph dfm_sample(const DenoiserFn& denoiser, const NoiseModel& nm, const SamplingKnobs& knobs,
                   const NodeCountSource& counts, Rng& rng) {
  knobs.validate();
  nm.validate();
  if (!denoiser) throw InvalidParam("dfm_sample: denoiser is empty");

  int n = counts.draw(rng);
  DiGraph z(n);
  for (int i = 0; i < n; ++i) z.x[static_cast<size_t>(i)] = rng.categorical(nm.x) + 1;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) z.set_edge(i, j, rng.categorical(nm.e));

  double steps = static_cast<double>(knobs.steps);
  for (int k = 0; k < knobs.steps; ++k) {
    double t_cur = distort(k / steps, knobs.distortion);
    double t_next = distort((k + 1) / steps, knobs.distortion);
    double dt = t_next - t_cur;

    DenoiserOutput pred = denoiser(z, t_cur);
    RateField rf = predicted_rate(pred, z, t_cur, nm);
    apply_guidance(rf, pred, z, t_cur, knobs.omega, nm);
    apply_stochasticity(rf, pred, z, t_cur, knobs.eta, nm);

    // All variables step from the frozen pre-step state.
    DiGraph next = z;
    for (int i = 0; i < n; ++i)
      next.x[static_cast<size_t>(i)] =
          euler_step_class(z.x[static_cast<size_t>(i)] - 1, rf.x_row(i), rf.X, dt, rng) + 1;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j)
          next.set_edge(i, j, euler_step_class(z.edge(i, j), rf.e_row(i, j), rf.E, dt, rng));
    z = std::move(next);
  }

  // Decode: most probable clean class per position at t = 1.
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

Corruptor make_dfm_corruptor(const NoiseModel& nm, Distortion train_distortion) {
  nm.validate();
  return [nm, train_distortion](const DiGraph& clean, Rng& rng) {
    double t = distort(rng.uniform(), train_distortion);
    return std::make_pair(dfm_noise_sample(clean, t, nm, rng), t);
  };
}

}  // namespace digen
