#include "localsym/lie.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "localsym/linalg.hpp"

namespace localsym {

LieBasis LieBasis::random(std::size_t k, std::size_t m, double scale, RngStream& rng) {
  LieBasis basis;
  basis.matrices.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    Tensor b({m, m});
    for (auto& v : b.storage()) v = scale * rng.next_normal();
    basis.matrices.push_back(std::move(b));
  }
  return basis;
}

LieBasis LieBasis::so2() {
  LieBasis b;
  b.matrices.push_back(Tensor::matrix({{0.0, -1.0}, {1.0, 0.0}}));
  return b;
}

LieBasis LieBasis::so13() {
  LieBasis b;
  auto gen = [](std::initializer_list<std::initializer_list<double>> rows) {
    return Tensor::matrix(rows);
  };
  // spatial rotations
  b.matrices.push_back(gen({{0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, -1}, {0, 0, 1, 0}}));
  b.matrices.push_back(gen({{0, 0, 0, 0}, {0, 0, 0, 1}, {0, 0, 0, 0}, {0, -1, 0, 0}}));
  b.matrices.push_back(gen({{0, 0, 0, 0}, {0, 0, -1, 0}, {0, 1, 0, 0}, {0, 0, 0, 0}}));
  // boosts along each spatial axis
  b.matrices.push_back(gen({{0, 1, 0, 0}, {1, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}}));
  b.matrices.push_back(gen({{0, 0, 1, 0}, {0, 0, 0, 0}, {1, 0, 0, 0}, {0, 0, 0, 0}}));
  b.matrices.push_back(gen({{0, 0, 0, 1}, {0, 0, 0, 0}, {0, 0, 0, 0}, {1, 0, 0, 0}}));
  return b;
}

Tensor group_element(const LieBasis& basis, const std::vector<double>& eta) {
  if (basis.k() == 0) throw std::invalid_argument("group_element: empty basis");
  if (eta.size() != basis.k()) {
    throw std::invalid_argument("group_element: expected " + std::to_string(basis.k()) +
                                " coefficients, got " + std::to_string(eta.size()));
  }
  const std::size_t m = basis.m();
  Tensor s({m, m});
  for (std::size_t i = 0; i < basis.k(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) s[j] += eta[i] * basis.matrices[i][j];
  }
  return detail::matexp_forward(s, nullptr);
}

Tensor sample_group_element(const LieBasis& basis, RngStream& rng) {
  std::vector<double> eta(basis.k());
  for (auto& e : eta) e = rng.next_normal();
  return group_element(basis, eta);
}

NodeId group_element_node(Graph& g, const std::vector<NodeId>& basis_nodes,
                          const std::vector<double>& eta) {
  if (basis_nodes.empty()) throw std::invalid_argument("group_element_node: empty basis");
  if (eta.size() != basis_nodes.size()) {
    throw std::invalid_argument("group_element_node: eta size mismatch");
  }
  NodeId s = g.scale(basis_nodes[0], eta[0]);
  for (std::size_t i = 1; i < basis_nodes.size(); ++i) {
    s = g.add(s, g.scale(basis_nodes[i], eta[i]));
  }
  return g.matexp(s);
}

namespace {

void check_norms(const LieBasis& basis, const char* who) {
  for (std::size_t i = 0; i < basis.k(); ++i) {
    if (basis.matrices[i].frobenius_norm() == 0.0) {
      throw std::invalid_argument(std::string(who) + ": generator " + std::to_string(i) +
                                  " has zero norm");
    }
  }
}

double pair_reg(const LieBasis& basis, double gamma, bool use_abs) {
  if (basis.k() <= 1) return 0.0;
  check_norms(basis, use_abs ? "sbr_loss" : "cosine_reg");
  double total = 0.0;
  for (std::size_t i = 0; i < basis.k(); ++i) {
    for (std::size_t j = i + 1; j < basis.k(); ++j) {
      const Tensor& bi = basis.matrices[i];
      const Tensor& bj = basis.matrices[j];
      double dot = 0.0;
      for (std::size_t t = 0; t < bi.size(); ++t) {
        dot += use_abs ? std::abs(bi[t]) * std::abs(bj[t]) : bi[t] * bj[t];
      }
      total += dot / (bi.frobenius_norm() * bj.frobenius_norm());
    }
  }
  return gamma * total;
}

NodeId pair_reg_node(Graph& g, const std::vector<NodeId>& basis_nodes, double gamma,
                     bool use_abs) {
  if (basis_nodes.size() <= 1) return g.constant(Tensor::scalar(0.0));
  std::vector<NodeId> vecs, norms;
  for (NodeId b : basis_nodes) {
    vecs.push_back(use_abs ? g.abs(b) : b);
    norms.push_back(g.l2norm(b));
  }
  NodeId total = kNoNode;
  for (std::size_t i = 0; i < basis_nodes.size(); ++i) {
    for (std::size_t j = i + 1; j < basis_nodes.size(); ++j) {
      const NodeId term =
          g.div(g.sum(g.mul(vecs[i], vecs[j])), g.mul(norms[i], norms[j]));
      total = total == kNoNode ? term : g.add(total, term);
    }
  }
  return g.scale(total, gamma);
}

}  // namespace

double sbr_loss(const LieBasis& basis, double gamma) { return pair_reg(basis, gamma, true); }

NodeId sbr_loss_node(Graph& g, const std::vector<NodeId>& basis_nodes, double gamma) {
  return pair_reg_node(g, basis_nodes, gamma, true);
}

double cosine_reg(const LieBasis& basis, double gamma) { return pair_reg(basis, gamma, false); }

NodeId cosine_reg_node(Graph& g, const std::vector<NodeId>& basis_nodes, double gamma) {
  return pair_reg_node(g, basis_nodes, gamma, false);
}

double growth_reg(const LieBasis& basis, double iota, double beta) {
  if (iota < 0.0 || beta <= 0.0) {
    throw std::invalid_argument("growth_reg: need iota >= 0 and beta > 0");
  }
  double total = 0.0;
  for (const Tensor& b : basis.matrices) total += std::min(b.frobenius_norm(), beta);
  return -iota * total;
}

NodeId growth_reg_node(Graph& g, const std::vector<NodeId>& basis_nodes, double iota,
                       double beta) {
  if (basis_nodes.empty()) return g.constant(Tensor::scalar(0.0));
  const NodeId beta_c = g.constant(Tensor::scalar(beta));
  NodeId total = kNoNode;
  for (NodeId b : basis_nodes) {
    // min(||B||, beta) = beta - relu(beta - ||B||)
    const NodeId clamped = g.sub(beta_c, g.relu(g.sub(beta_c, g.l2norm(b))));
    total = total == kNoNode ? clamped : g.add(total, clamped);
  }
  return g.scale(total, -iota);
}

Tensor normalize_coset(const Tensor& c) {
  if (c.ndim() != 2 || c.shape()[0] != c.shape()[1]) {
    throw std::invalid_argument("normalize_coset: square matrix required");
  }
  const double det = determinant(c);
  if (std::abs(det) <= 1e-8) {
    throw std::runtime_error("normalize_coset: |det| = " + std::to_string(std::abs(det)) +
                             " below singular guard 1e-8");
  }
  const double s = std::pow(std::abs(det), -1.0 / static_cast<double>(c.shape()[0]));
  Tensor out = c;
  for (auto& v : out.storage()) v *= s;
  return out;
}

namespace {

struct DistanceEval {
  double loss;                 // squared Frobenius distance
  std::vector<double> grad;
};

DistanceEval distance_eval(const Tensor& target, const LieBasis& basis,
                           const std::vector<double>& t) {
  Graph g;
  std::vector<NodeId> coeffs;
  NodeId s = kNoNode;
  for (std::size_t i = 0; i < basis.k(); ++i) {
    const NodeId ti = g.parameter("t" + std::to_string(i), Tensor::scalar(t[i]));
    coeffs.push_back(ti);
    const NodeId term = g.mul(g.constant(basis.matrices[i]), ti);
    s = s == kNoNode ? term : g.add(s, term);
  }
  const NodeId diff = g.sub(g.constant(target), g.matexp(s));
  const NodeId loss = g.sum(g.mul(diff, diff));
  DistanceEval out;
  out.loss = g.forward(loss).value();
  auto grads = g.backward(loss);
  out.grad.resize(basis.k());
  for (std::size_t i = 0; i < basis.k(); ++i) out.grad[i] = grads["t" + std::to_string(i)][0];
  return out;
}

// gradient descent with Armijo backtracking; the objective is smooth and the
// minima of interest are near-quadratic, so this converges far below 1e-6
double refine_distance(const Tensor& target, const LieBasis& basis, std::vector<double> t) {
  DistanceEval cur = distance_eval(target, basis, t);
  double step = 1.0;
  for (int iter = 0; iter < 300; ++iter) {
    double gnorm2 = 0.0;
    for (double v : cur.grad) gnorm2 += v * v;
    if (gnorm2 < 1e-24 || cur.loss < 1e-26) break;
    step = std::min(step * 2.0, 1e3);
    bool moved = false;
    for (int bt = 0; bt < 60; ++bt) {
      std::vector<double> cand(t);
      for (std::size_t i = 0; i < t.size(); ++i) cand[i] -= step * cur.grad[i];
      DistanceEval next = distance_eval(target, basis, cand);
      if (next.loss <= cur.loss - 1e-4 * step * gnorm2) {
        t = std::move(cand);
        cur = std::move(next);
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  return std::sqrt(std::max(cur.loss, 0.0));
}

}  // namespace

double component_distance(const Tensor& m, const LieBasis& basis) {
  if (m.ndim() != 2 || m.shape()[0] != m.shape()[1]) {
    throw std::invalid_argument("component_distance: square matrix required");
  }
  if (basis.k() == 0) {
    Tensor d = m;
    const std::size_t n = m.shape()[0];
    for (std::size_t i = 0; i < n; ++i) d(i, i) -= 1.0;
    return d.frobenius_norm();
  }
  if (basis.m() != m.shape()[0]) {
    throw std::invalid_argument("component_distance: dimension mismatch");
  }
  const std::size_t k = basis.k();

  std::vector<std::vector<double>> starts;
  if (k <= 2) {
    constexpr int kGridPoints = 64;
    std::vector<std::pair<double, std::vector<double>>> scored;
    std::vector<double> t(k, 0.0);
    const auto eval_t = [&](const std::vector<double>& tt) {
      Tensor s({basis.m(), basis.m()});
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < s.size(); ++j) s[j] += tt[i] * basis.matrices[i][j];
      Tensor e = detail::matexp_forward(s, nullptr);
      double d2 = 0.0;
      for (std::size_t j = 0; j < e.size(); ++j) {
        const double diff = m[j] - e[j];
        d2 += diff * diff;
      }
      return d2;
    };
    const double lo = -std::numbers::pi, hi = std::numbers::pi;
    const int total = k == 1 ? kGridPoints : kGridPoints * kGridPoints;
    for (int idx = 0; idx < total; ++idx) {
      t[0] = lo + (hi - lo) * (idx % kGridPoints) / (kGridPoints - 1);
      if (k == 2) t[1] = lo + (hi - lo) * (idx / kGridPoints) / (kGridPoints - 1);
      scored.emplace_back(eval_t(t), t);
    }
    std::sort(scored.begin(), scored.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < std::min<std::size_t>(4, scored.size()); ++i) {
      starts.push_back(scored[i].second);
    }
  } else {
    RngStream rng(0xC05E7u);
    starts.emplace_back(k, 0.0);  // always try the identity
    for (int s = 0; s < 31; ++s) {
      std::vector<double> t(k);
      for (auto& v : t) v = rng.next_normal();
      starts.push_back(std::move(t));
    }
  }

  double best = std::numeric_limits<double>::infinity();
  for (const auto& start : starts) {
    best = std::min(best, refine_distance(m, basis, start));
  }
  return best;
}

InvariantMetric invariant_metric(const LieBasis& basis) {
  if (basis.k() == 0) throw std::invalid_argument("invariant_metric: empty basis");
  const std::size_t m = basis.m();
  if (m < 2) throw std::invalid_argument("invariant_metric: need m >= 2");

  // orthonormal basis of symmetric matrices under the Frobenius inner product
  std::vector<Tensor> sym;
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a; b < m; ++b) {
      Tensor e({m, m});
      if (a == b) {
        e(a, a) = 1.0;
      } else {
        e(a, b) = inv_sqrt2;
        e(b, a) = inv_sqrt2;
      }
      sym.push_back(std::move(e));
    }
  }
  const std::size_t ds = sym.size();

  // normal matrix of the stacked operator J -> (B_i^T J + J B_i)_i
  Tensor ktk({ds, ds});
  for (const Tensor& b : basis.matrices) {
    const Tensor bt = transpose(b);
    std::vector<Tensor> images;
    images.reserve(ds);
    for (const Tensor& e : sym) {
      Tensor t = matmul(bt, e);
      const Tensor eb = matmul(e, b);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] += eb[i];
      images.push_back(std::move(t));
    }
    for (std::size_t r = 0; r < ds; ++r) {
      for (std::size_t c = r; c < ds; ++c) {
        const double v = frobenius_dot(images[r], images[c]);
        ktk(r, c) += v;
        if (c != r) ktk(c, r) += v;
      }
    }
  }

  const auto eig = symmetric_eigen(ktk);
  InvariantMetric out;
  out.spectral_gap = ds > 1 ? eig.values[1] - eig.values[0] : 0.0;
  out.degenerate = ds > 1 && out.spectral_gap < 1e-8 * std::max(1.0, eig.values.back());

  Tensor j({m, m});
  for (std::size_t r = 0; r < ds; ++r) {
    const double c = eig.vectors(r, 0);
    for (std::size_t i = 0; i < j.size(); ++i) j[i] += c * sym[r][i];
  }
  const double norm = j.frobenius_norm();
  for (auto& v : j.storage()) v /= norm;

  double max_diag = 0.0;
  double sign = 1.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (std::abs(j(i, i)) > max_diag) {
      max_diag = std::abs(j(i, i));
      sign = j(i, i) >= 0.0 ? 1.0 : -1.0;
    }
  }
  if (sign < 0.0) {
    for (auto& v : j.storage()) v = -v;
  }

  out.residual = 0.0;
  for (const Tensor& b : basis.matrices) {
    Tensor t = matmul(transpose(b), j);
    const Tensor jb = matmul(j, b);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += jb[i];
    out.residual = std::max(out.residual, t.frobenius_norm());
  }
  out.J = std::move(j);
  return out;
}

}  // namespace localsym
