#pragma once

#include <vector>

#include "localsym/graph.hpp"
#include "localsym/rng.hpp"
#include "localsym/tensor.hpp"

namespace localsym {

/// Basis of a matrix Lie algebra: k generators of size m x m.
struct LieBasis {
  std::vector<Tensor> matrices;

  std::size_t k() const { return matrices.size(); }
  std::size_t m() const { return matrices.empty() ? 0 : matrices[0].shape()[0]; }

  static LieBasis random(std::size_t k, std::size_t m, double scale, RngStream& rng);
  static LieBasis so2();
  static LieBasis so13();  // standard rotation + boost generators, Minkowski signature (-,+,+,+)
};

/// Candidate coset representatives with their held-out equivariance losses.
struct CosetBank {
  std::vector<Tensor> matrices;
  std::vector<double> losses;      // non-negative; +inf for degenerate candidates
  std::vector<bool> degenerate;    // hit the singular guard during training

  std::size_t size() const { return matrices.size(); }
};

/// Symmetric bilinear form J with B^T J + J B = 0 for all generators.
struct InvariantMetric {
  Tensor J;                 // m x m, symmetric, unit Frobenius norm
  double residual = 0.0;    // max_i ||B_i^T J + J B_i||_F
  bool degenerate = false;  // multiple near-minimal singular directions
  double spectral_gap = 0.0;
};

/// g = exp(sum_i eta_i B_i), eta ~ N(0, I_k).
Tensor sample_group_element(const LieBasis& basis, RngStream& rng);

/// Same sampling with the coefficients supplied (used by trainers and tests).
Tensor group_element(const LieBasis& basis, const std::vector<double>& eta);

/// Graph node for exp(sum_i eta_i B_i) given parameter nodes for the basis.
NodeId group_element_node(Graph& g, const std::vector<NodeId>& basis_nodes,
                          const std::vector<double>& eta);

/// Standard-basis regularization: gamma * sum_{i<j} cos(vec|B_i|, vec|B_j|).
/// Zero for k <= 1. Throws on a zero-norm generator.
double sbr_loss(const LieBasis& basis, double gamma);
NodeId sbr_loss_node(Graph& g, const std::vector<NodeId>& basis_nodes, double gamma);

/// Plain cosine-similarity regularization (ablation of the absolute value).
double cosine_reg(const LieBasis& basis, double gamma);
NodeId cosine_reg_node(Graph& g, const std::vector<NodeId>& basis_nodes, double gamma);

/// Growth regularization: -iota * sum_i min(||B_i||_F, beta).
double growth_reg(const LieBasis& basis, double iota, double beta);
NodeId growth_reg_node(Graph& g, const std::vector<NodeId>& basis_nodes, double iota,
                       double beta);

/// C / |det C|^(1/m); preserves the sign of det. Throws if |det C| <= 1e-8.
Tensor normalize_coset(const Tensor& c);

/// Approximate min over t of ||M - exp(sum_s t_s B_s)||_F.
/// Coarse grid over [-pi,pi]^k (k <= 2) or random starts (k > 2), refined by
/// gradient descent; an empty basis reduces to ||M - I||_F.
double component_distance(const Tensor& m, const LieBasis& basis);

/// Unit-norm symmetric J minimizing sum_i ||B_i^T J + J B_i||_F^2, computed
/// from the least eigenvector of the stacked operator on symmetric matrices.
/// Sign fixed so the largest-magnitude diagonal entry is positive.
InvariantMetric invariant_metric(const LieBasis& basis);

}  // namespace localsym
