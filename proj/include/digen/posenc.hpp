#pragma once

#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "digen/graph.hpp"

namespace digen {

enum class PEKind { NONE, LAP, DIRLAP, MAGLAP, MULTI_MAGLAP, RRWP };
enum class WalkKind { PLAIN, LAZY, PAGERANK };

struct PEConfig {
  PEKind kind = PEKind::NONE;
  std::vector<double> q_list;  // MagLap potentials
  int k_eigen = 10;
  int K_walk = 20;
  bool use_ppr = false;
  double p_restart = 0.05;
  bool normalized = false;     // MagLap / Lap variant
  WalkKind walk = WalkKind::PAGERANK;
  double teleport = 0.05;

  void validate() const;
};

// Preset potentials: five equidistant values starting at 0, or ten spanning
// (0.01 .. 0.1].
std::vector<double> q_preset5();
std::vector<double> q_preset10();

struct PEFeatures {
  int n = 0;
  int d_node = 0, d_edge = 0, d_graph = 0;
  std::vector<double> node;   // n * d_node
  std::vector<double> edge;   // n * n * d_edge
  std::vector<double> graph;  // d_graph
};

struct PEDims {
  int node = 0, edge = 0, graph = 0;
};
PEDims pe_dims(const PEConfig& cfg);

PEKind pe_kind_from_string(const std::string& s);
std::string pe_kind_to_string(PEKind k);
WalkKind walk_from_string(const std::string& s);
std::string walk_to_string(WalkKind w);

// JSON round trip used by run configs and checkpoints.
std::string pe_config_to_json(const PEConfig& cfg);
PEConfig pe_config_from_json(const std::string& json_text);

// L = D - A_s .* exp(i Theta), or the normalized variant
// I - (D^-1/2 A_s D^-1/2) .* exp(i Theta), where A_s is the OR-symmetrized
// 0/1 adjacency and Theta_uv = 2 pi q (A_uv - A_vu). Hermitian PSD.
Eigen::MatrixXcd magnetic_laplacian(const DiGraph& g, double q, bool normalized);

Eigen::MatrixXd sym_laplacian(const DiGraph& g, bool normalized);

// L = I - (Phi^1/2 P Phi^-1/2 + Phi^-1/2 P^T Phi^1/2)/2 with Phi the
// stationary distribution of the chosen walk, found by damped power
// iteration to relative tolerance 1e-10.
Eigen::MatrixXd directed_laplacian(const DiGraph& g, WalkKind walk, double teleport);

PEFeatures maglap_features(const DiGraph& g, const std::vector<double>& q_list, int k_eigen,
                           bool normalized);
PEFeatures rrwp_features(const DiGraph& g, int K_walk, bool use_ppr, double p_restart);
PEFeatures lap_features(const DiGraph& g, int k_eigen, bool normalized);
PEFeatures dirlap_features(const DiGraph& g, int k_eigen, WalkKind walk, double teleport);

PEFeatures pe_features(const DiGraph& g, const PEConfig& cfg);

}  // namespace digen
