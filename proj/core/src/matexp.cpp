#include <cmath>
#include <stdexcept>

#include "localsym/graph.hpp"
#include "localsym/linalg.hpp"

namespace localsym::detail {

namespace {

constexpr int kTaylorOrder = 20;
constexpr double kScaleThreshold = 1.0;

Tensor taylor_exp(const Tensor& x) {
  // Horner form: I + X(I + X/2 (I + X/3 (...)))
  const std::size_t m = x.shape()[0];
  Tensor p = Tensor::identity(m);
  for (int n = kTaylorOrder; n >= 1; --n) {
    Tensor xp = matmul(x, p);
    for (auto& v : xp.storage()) v /= static_cast<double>(n);
    p = Tensor::identity(m);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += xp[i];
  }
  return p;
}

}  // namespace

// stages layout: [0] = scaled input X, [1] = scalar 2^s, [2..2+s) = pre-squaring values
Tensor matexp_forward(const Tensor& a, std::vector<Tensor>* stages) {
  if (a.ndim() != 2 || a.shape()[0] != a.shape()[1]) {
    throw std::invalid_argument("matexp: square matrix required, got " +
                                shape_to_string(a.shape()));
  }
  if (!a.all_finite()) throw std::invalid_argument("matexp: non-finite entries");
  const double norm = a.frobenius_norm();
  int s = 0;
  double factor = 1.0;
  while (norm / factor > kScaleThreshold) {
    ++s;
    factor *= 2.0;
  }
  Tensor x = a;
  for (auto& v : x.storage()) v /= factor;
  if (stages) {
    stages->clear();
    stages->push_back(x);
    stages->push_back(Tensor::scalar(factor));
  }
  Tensor e = taylor_exp(x);
  for (int i = 0; i < s; ++i) {
    if (stages) stages->push_back(e);
    e = matmul(e, e);
  }
  return e;
}

Tensor matexp_backward(const Tensor& grad_out, const std::vector<Tensor>& stages) {
  const Tensor& x = stages[0];
  const double factor = stages[1][0];
  const std::size_t m = x.shape()[0];

  // unwind the squaring chain: d(E^2) = dE E + E dE
  Tensor g = grad_out;
  for (std::size_t j = stages.size(); j-- > 2;) {
    const Tensor& e = stages[j];
    const Tensor et = transpose(e);
    Tensor g1 = matmul(g, et);
    const Tensor g2 = matmul(et, g);
    for (std::size_t i = 0; i < g1.size(); ++i) g1[i] += g2[i];
    g = std::move(g1);
  }

  // adjoint of the truncated series: sum over i+j <= N-1 of X^T^i G X^T^j / (i+j+1)!
  std::vector<Tensor> xt_pow;
  xt_pow.push_back(Tensor::identity(m));
  const Tensor xt = transpose(x);
  for (int i = 1; i <= kTaylorOrder - 1; ++i) xt_pow.push_back(matmul(xt_pow.back(), xt));
  std::vector<double> inv_fact(kTaylorOrder + 1, 1.0);
  for (int n = 1; n <= kTaylorOrder; ++n) inv_fact[n] = inv_fact[n - 1] / n;

  Tensor gx({m, m});
  for (int i = 0; i <= kTaylorOrder - 1; ++i) {
    const Tensor left = matmul(xt_pow[i], g);
    for (int j = 0; i + j <= kTaylorOrder - 1; ++j) {
      const Tensor term = matmul(left, xt_pow[j]);
      const double c = inv_fact[i + j + 1];
      for (std::size_t t = 0; t < gx.size(); ++t) gx[t] += c * term[t];
    }
  }
  for (auto& v : gx.storage()) v /= factor;
  return gx;
}

}  // namespace localsym::detail
