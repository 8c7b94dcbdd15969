#include "digen/posenc.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace digen {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using ordered_json = nlohmann::ordered_json;

void PEConfig::validate() const {
  if ((kind == PEKind::MAGLAP || kind == PEKind::MULTI_MAGLAP) && q_list.empty())
    throw InvalidParam("PEConfig: MagLap kinds need a nonempty q_list");
  if (k_eigen < 1) throw InvalidParam("PEConfig: k_eigen must be >= 1");
  if (K_walk < 1) throw InvalidParam("PEConfig: K_walk must be >= 1");
  if (use_ppr && (p_restart <= 0.0 || p_restart >= 1.0))
    throw InvalidParam("PEConfig: p_restart must lie in (0,1)");
  if (walk == WalkKind::PAGERANK && (teleport <= 0.0 || teleport >= 1.0))
    throw InvalidParam("PEConfig: teleport must lie in (0,1)");
}

std::vector<double> q_preset5() { return {0.0, 0.1, 0.2, 0.3, 0.4}; }

std::vector<double> q_preset10() {
  std::vector<double> q(10);
  for (int i = 0; i < 10; ++i) q[i] = 0.01 * (i + 1);
  return q;
}

PEDims pe_dims(const PEConfig& cfg) {
  PEDims d;
  switch (cfg.kind) {
    case PEKind::NONE:
      break;
    case PEKind::LAP:
      d.node = 2 * cfg.k_eigen;  // [Re | Im], Im identically zero
      d.graph = cfg.k_eigen;
      break;
    case PEKind::DIRLAP:
      d.node = cfg.k_eigen;
      d.graph = cfg.k_eigen;
      break;
    case PEKind::MAGLAP:
    case PEKind::MULTI_MAGLAP: {
      int Q = static_cast<int>(cfg.q_list.size());
      d.node = 2 * cfg.k_eigen * Q;
      d.graph = cfg.k_eigen * Q;
      break;
    }
    case PEKind::RRWP:
      d.edge = 2 * cfg.K_walk + (cfg.use_ppr ? 1 : 0);
      d.node = d.edge;
      break;
  }
  return d;
}

PEKind pe_kind_from_string(const std::string& s) {
  if (s == "none") return PEKind::NONE;
  if (s == "lap") return PEKind::LAP;
  if (s == "dirlap") return PEKind::DIRLAP;
  if (s == "maglap") return PEKind::MAGLAP;
  if (s == "multi_maglap") return PEKind::MULTI_MAGLAP;
  if (s == "rrwp") return PEKind::RRWP;
  throw InvalidParam("unknown positional-encoding kind: " + s);
}

std::string pe_kind_to_string(PEKind k) {
  switch (k) {
    case PEKind::NONE: return "none";
    case PEKind::LAP: return "lap";
    case PEKind::DIRLAP: return "dirlap";
    case PEKind::MAGLAP: return "maglap";
    case PEKind::MULTI_MAGLAP: return "multi_maglap";
    case PEKind::RRWP: return "rrwp";
  }
  return "none";
}

WalkKind walk_from_string(const std::string& s) {
  if (s == "plain") return WalkKind::PLAIN;
  if (s == "lazy") return WalkKind::LAZY;
  if (s == "pagerank") return WalkKind::PAGERANK;
  throw InvalidParam("unknown walk kind: " + s);
}

std::string walk_to_string(WalkKind w) {
  switch (w) {
    case WalkKind::PLAIN: return "plain";
    case WalkKind::LAZY: return "lazy";
    case WalkKind::PAGERANK: return "pagerank";
  }
  return "pagerank";
}

std::string pe_config_to_json(const PEConfig& cfg) {
  ordered_json j;
  j["kind"] = pe_kind_to_string(cfg.kind);
  j["q_list"] = cfg.q_list;
  j["k_eigen"] = cfg.k_eigen;
  j["K_walk"] = cfg.K_walk;
  j["use_ppr"] = cfg.use_ppr;
  j["p_restart"] = cfg.p_restart;
  j["normalized"] = cfg.normalized;
  j["walk"] = walk_to_string(cfg.walk);
  j["teleport"] = cfg.teleport;
  return j.dump();
}

PEConfig pe_config_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("pe_config_from_json: ") + ex.what(), 0);
  }
  PEConfig cfg;
  cfg.kind = pe_kind_from_string(j.value("kind", "none"));
  if (j.contains("q_list")) cfg.q_list = j["q_list"].get<std::vector<double>>();
  if (cfg.q_list.empty() && cfg.kind == PEKind::MAGLAP) cfg.q_list = {0.1};
  if (cfg.q_list.empty() && cfg.kind == PEKind::MULTI_MAGLAP) cfg.q_list = q_preset5();
  cfg.k_eigen = j.value("k_eigen", cfg.k_eigen);
  cfg.K_walk = j.value("K_walk", cfg.K_walk);
  cfg.use_ppr = j.value("use_ppr", cfg.use_ppr);
  cfg.p_restart = j.value("p_restart", cfg.p_restart);
  cfg.normalized = j.value("normalized", cfg.normalized);
  cfg.walk = walk_from_string(j.value("walk", "pagerank"));
  cfg.teleport = j.value("teleport", cfg.teleport);
  cfg.validate();
  return cfg;
}

namespace {

// 0/1 arc indicator, any nonzero class counts.
MatrixXd binary_adjacency(const DiGraph& g) {
  MatrixXd a = MatrixXd::Zero(g.n, g.n);
  for (int i = 0; i < g.n; ++i)
    for (int j = 0; j < g.n; ++j)
      if (g.edge(i, j) != 0) a(i, j) = 1.0;
  return a;
}

MatrixXd or_symmetrize(const MatrixXd& a) {
  MatrixXd s = a;
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j)
      if (a(j, i) > 0.0) s(i, j) = 1.0;
  return s;
}

// Phase fix: first component of largest modulus made real nonnegative.
void gauge_fix(Eigen::VectorXcd& v) {
  int best = 0;
  double best_mod = std::abs(v(0));
  for (int i = 1; i < v.size(); ++i) {
    double m = std::abs(v(i));
    if (m > best_mod * (1.0 + 1e-12)) {
      best = i;
      best_mod = m;
    }
  }
  if (best_mod <= 0.0) return;
  std::complex<double> phase = v(best) / best_mod;
  v /= phase;
}

void sign_fix(VectorXd& v) {
  int best = 0;
  double best_mod = std::abs(v(0));
  for (int i = 1; i < v.size(); ++i) {
    double m = std::abs(v(i));
    if (m > best_mod * (1.0 + 1e-12)) {
      best = i;
      best_mod = m;
    }
  }
  if (v(best) < 0.0) v = -v;
}

// Row-stochastic forward transition; out-degree-0 nodes get a self-loop.
MatrixXd forward_transition(const MatrixXd& a) {
  int n = static_cast<int>(a.rows());
  MatrixXd t = a;
  for (int i = 0; i < n; ++i) {
    double deg = t.row(i).sum();
    if (deg == 0.0) {
      t(i, i) = 1.0;
      deg = 1.0;
    }
    t.row(i) /= deg;
  }
  return t;
}

}  // namespace

MatrixXcd magnetic_laplacian(const DiGraph& g, double q, bool normalized) {
  MatrixXd a = binary_adjacency(g);
  MatrixXd as = or_symmetrize(a);
  VectorXd deg = as.rowwise().sum();
  MatrixXcd l(g.n, g.n);
  const std::complex<double> I(0.0, 1.0);
  for (int u = 0; u < g.n; ++u)
    for (int v = 0; v < g.n; ++v) {
      double theta = 2.0 * M_PI * q * (a(u, v) - a(v, u));
      std::complex<double> coupling = as(u, v) * std::exp(I * theta);
      if (normalized) {
        double du = deg(u) > 0 ? 1.0 / std::sqrt(deg(u)) : 0.0;
        double dv = deg(v) > 0 ? 1.0 / std::sqrt(deg(v)) : 0.0;
        l(u, v) = (u == v ? 1.0 : 0.0) - du * dv * coupling;
      } else {
        l(u, v) = (u == v ? deg(u) : 0.0) - coupling;
      }
    }
  return l;
}

MatrixXd sym_laplacian(const DiGraph& g, bool normalized) {
  MatrixXd as = or_symmetrize(binary_adjacency(g));
  VectorXd deg = as.rowwise().sum();
  MatrixXd l(g.n, g.n);
  for (int u = 0; u < g.n; ++u)
    for (int v = 0; v < g.n; ++v) {
      if (normalized) {
        double du = deg(u) > 0 ? 1.0 / std::sqrt(deg(u)) : 0.0;
        double dv = deg(v) > 0 ? 1.0 / std::sqrt(deg(v)) : 0.0;
        l(u, v) = (u == v ? 1.0 : 0.0) - du * dv * as(u, v);
      } else {
        l(u, v) = (u == v ? deg(u) : 0.0) - as(u, v);
      }
    }
  return l;
}

MatrixXd directed_laplacian(const DiGraph& g, WalkKind walk, double teleport) {
  int n = g.n;
  MatrixXd a = binary_adjacency(g);
  MatrixXd p;
  if (walk == WalkKind::PAGERANK) {
    if (teleport <= 0.0 || teleport >= 1.0)
      throw InvalidParam("directed_laplacian: teleport must lie in (0,1)");
    MatrixXd w(n, n);
    for (int i = 0; i < n; ++i) {
      double deg = a.row(i).sum();
      if (deg == 0.0)
        w.row(i).setConstant(1.0 / n);  // dangling row: jump anywhere
      else
        w.row(i) = a.row(i) / deg;
    }
    p = (1.0 - teleport) * w + MatrixXd::Constant(n, n, teleport / n);
  } else {
    MatrixXd w = forward_transition(a);
    p = (walk == WalkKind::LAZY) ? MatrixXd(0.5 * (MatrixXd::Identity(n, n) + w)) : w;
  }

  // Damped power iteration for the stationary row vector; damping keeps
  // periodic chains (e.g. pure cycles) convergent without changing the
  // fixed point.
  Eigen::RowVectorXd pi = Eigen::RowVectorXd::Constant(n, 1.0 / n);
  const int cap = 200000;
  bool converged = false;
  for (int it = 0; it < cap; ++it) {
    Eigen::RowVectorXd next = 0.5 * pi + 0.5 * (pi * p);
    double s = next.sum();
    if (s <= 0.0) throw NonConvergent("directed_laplacian: stationary mass vanished");
    next /= s;
    double delta = (next - pi).cwiseAbs().sum();
    pi = next;
    if (delta <= 1e-10) {
      converged = true;
      break;
    }
  }
  if (!converged) throw NonConvergent("directed_laplacian: power iteration hit the cap");

  VectorXd sqrt_phi(n), inv_sqrt_phi(n);
  for (int i = 0; i < n; ++i) {
    double phi = pi(i);
    sqrt_phi(i) = phi > 0 ? std::sqrt(phi) : 0.0;
    inv_sqrt_phi(i) = phi > 0 ? 1.0 / std::sqrt(phi) : 0.0;  // 0^(-1/2) := 0
  }
  MatrixXd s = sqrt_phi.asDiagonal() * p * inv_sqrt_phi.asDiagonal();
  MatrixXd l = MatrixXd::Identity(n, n) - 0.5 * (s + s.transpose());
  return 0.5 * (l + l.transpose());  // scrub fp asymmetry
}

namespace {

struct SpectralPart {
  VectorXd values;      // ascending, size min(k, n)
  MatrixXcd vectors;    // n x min(k, n), gauge fixed
};

SpectralPart hermitian_eigs(const MatrixXcd& m, int k) {
  Eigen::SelfAdjointEigenSolver<MatrixXcd> solver(m);
  if (solver.info() != Eigen::Success)
    throw EigenFailure("hermitian eigendecomposition did not converge");
  int keep = std::min<int>(k, static_cast<int>(m.rows()));
  SpectralPart part;
  part.values = solver.eigenvalues().head(keep);
  part.vectors = solver.eigenvectors().leftCols(keep);
  for (int c = 0; c < keep; ++c) {
    Eigen::VectorXcd v = part.vectors.col(c);
    gauge_fix(v);
    part.vectors.col(c) = v;
  }
  return part;
}

}  // namespace

PEFeatures maglap_features(const DiGraph& g, const std::vector<double>& q_list, int k_eigen,
                           bool normalized) {
  if (k_eigen < 1) throw InvalidParam("maglap_features: k_eigen must be >= 1");
  if (q_list.empty()) throw InvalidParam("maglap_features: empty q_list");
  int n = g.n;
  int Q = static_cast<int>(q_list.size());
  PEFeatures f;
  f.n = n;
  f.d_node = 2 * k_eigen * Q;
  f.d_graph = k_eigen * Q;
  f.node.assign(static_cast<size_t>(n) * f.d_node, 0.0);
  f.graph.assign(f.d_graph, 0.0);
  for (int qi = 0; qi < Q; ++qi) {
    auto part = hermitian_eigs(magnetic_laplacian(g, q_list[qi], normalized), k_eigen);
    int keep = static_cast<int>(part.values.size());
    for (int c = 0; c < keep; ++c) f.graph[static_cast<size_t>(qi) * k_eigen + c] = part.values(c);
    int base = qi * 2 * k_eigen;
    for (int v = 0; v < n; ++v)
      for (int c = 0; c < keep; ++c) {
        f.node[static_cast<size_t>(v) * f.d_node + base + c] = part.vectors(v, c).real();
        f.node[static_cast<size_t>(v) * f.d_node + base + k_eigen + c] = part.vectors(v, c).imag();
      }
  }
  return f;
}

PEFeatures lap_features(const DiGraph& g, int k_eigen, bool normalized) {
  if (k_eigen < 1) throw InvalidParam("lap_features: k_eigen must be >= 1");
  int n = g.n;
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(sym_laplacian(g, normalized));
  if (solver.info() != Eigen::Success)
    throw EigenFailure("lap_features: eigendecomposition did not converge");
  int keep = std::min(k_eigen, n);
  PEFeatures f;
  f.n = n;
  f.d_node = 2 * k_eigen;
  f.d_graph = k_eigen;
  f.node.assign(static_cast<size_t>(n) * f.d_node, 0.0);
  f.graph.assign(f.d_graph, 0.0);
  for (int c = 0; c < keep; ++c) {
    f.graph[c] = solver.eigenvalues()(c);
    VectorXd v = solver.eigenvectors().col(c);
    sign_fix(v);
    for (int u = 0; u < n; ++u) f.node[static_cast<size_t>(u) * f.d_node + c] = v(u);
  }
  return f;
}

PEFeatures dirlap_features(const DiGraph& g, int k_eigen, WalkKind walk, double teleport) {
  if (k_eigen < 1) throw InvalidParam("dirlap_features: k_eigen must be >= 1");
  int n = g.n;
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(directed_laplacian(g, walk, teleport));
  if (solver.info() != Eigen::Success)
    throw EigenFailure("dirlap_features: eigendecomposition did not converge");
  int keep = std::min(k_eigen, n);
  PEFeatures f;
  f.n = n;
  f.d_node = k_eigen;
  f.d_graph = k_eigen;
  f.node.assign(static_cast<size_t>(n) * f.d_node, 0.0);
  f.graph.assign(f.d_graph, 0.0);
  for (int c = 0; c < keep; ++c) {
    f.graph[c] = solver.eigenvalues()(c);
    VectorXd v = solver.eigenvectors().col(c);
    sign_fix(v);
    for (int u = 0; u < n; ++u) f.node[static_cast<size_t>(u) * f.d_node + c] = v(u);
  }
  return f;
}

PEFeatures rrwp_features(const DiGraph& g, int K_walk, bool use_ppr, double p_restart) {
  if (K_walk < 1) throw InvalidParam("rrwp_features: K_walk must be >= 1");
  if (use_ppr && (p_restart <= 0.0 || p_restart > 1.0))
    throw InvalidParam("rrwp_features: p_restart must lie in (0,1]");
  int n = g.n;
  MatrixXd a = binary_adjacency(g);
  MatrixXd t = forward_transition(a);
  MatrixXd r = forward_transition(a.transpose());

  int slices = 2 * K_walk + (use_ppr ? 1 : 0);
  PEFeatures f;
  f.n = n;
  f.d_edge = slices;
  f.d_node = slices;
  f.edge.assign(static_cast<size_t>(n) * n * slices, 0.0);
  f.node.assign(static_cast<size_t>(n) * slices, 0.0);

  auto put_slice = [&](int s, const MatrixXd& m) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        f.edge[(static_cast<size_t>(i) * n + j) * slices + s] = m(i, j);
    for (int i = 0; i < n; ++i) f.node[static_cast<size_t>(i) * slices + s] = m(i, i);
  };

  MatrixXd power = MatrixXd::Identity(n, n);
  for (int k = 0; k < K_walk; ++k) {
    put_slice(k, power);
    if (k + 1 < K_walk) power = power * t;
  }
  power = MatrixXd::Identity(n, n);
  for (int k = 0; k < K_walk; ++k) {
    put_slice(K_walk + k, power);
    if (k + 1 < K_walk) power = power * r;
  }
  if (use_ppr) {
    MatrixXd sys = MatrixXd::Identity(n, n) - (1.0 - p_restart) * t;
    Eigen::PartialPivLU<MatrixXd> lu(sys);
    MatrixXd ppr = lu.solve(p_restart * MatrixXd::Identity(n, n));
    double resid = (sys * ppr - p_restart * MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff();
    if (!std::isfinite(resid) || resid > 1e-6)
      throw SingularMatrix("rrwp_features: PPR solve failed");
    put_slice(2 * K_walk, ppr);
  }
  return f;
}

PEFeatures pe_features(const DiGraph& g, const PEConfig& cfg) {
  cfg.validate();
  switch (cfg.kind) {
    case PEKind::NONE: {
      PEFeatures f;
      f.n = g.n;
      return f;
    }
    case PEKind::LAP:
      return lap_features(g, cfg.k_eigen, cfg.normalized);
    case PEKind::DIRLAP:
      return dirlap_features(g, cfg.k_eigen, cfg.walk, cfg.teleport);
    case PEKind::MAGLAP:
    case PEKind::MULTI_MAGLAP:
      return maglap_features(g, cfg.q_list, cfg.k_eigen, cfg.normalized);
    case PEKind::RRWP:
      return rrwp_features(g, cfg.K_walk, cfg.use_ppr, cfg.p_restart);
  }
  throw InvalidParam("pe_features: unknown kind");
}

}  // namespace digen
