#include "localsym/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace localsym {

namespace {

void require_square(const Tensor& a, const char* who) {
  if (a.ndim() != 2 || a.shape()[0] != a.shape()[1]) {
    throw std::invalid_argument(std::string(who) + ": square matrix required, got " +
                                shape_to_string(a.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0]) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_to_string(a.shape()) +
                                " x " + shape_to_string(b.shape()));
  }
  const std::size_t r = a.shape()[0], k = a.shape()[1], c = b.shape()[1];
  Tensor out({r, c});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const double av = pa[i * k + t];
      if (av == 0.0) continue;
      const double* brow = pb + t * c;
      double* orow = po + i * c;
      for (std::size_t j = 0; j < c; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) throw std::invalid_argument("transpose: 2-D tensor required");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = a(i, j);
  return out;
}

double determinant(const Tensor& a) {
  require_square(a, "determinant");
  const std::size_t n = a.shape()[0];
  Tensor lu = a;
  double det = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(lu(r, col)) > std::abs(lu(pivot, col))) pivot = r;
    if (lu(pivot, col) == 0.0) return 0.0;
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(pivot, j), lu(col, j));
      det = -det;
    }
    det *= lu(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = lu(r, col) / lu(col, col);
      for (std::size_t j = col; j < n; ++j) lu(r, j) -= f * lu(col, j);
    }
  }
  return det;
}

Tensor inverse(const Tensor& a) {
  require_square(a, "inverse");
  const std::size_t n = a.shape()[0];
  Tensor m = a;
  Tensor inv = Tensor::identity(n);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(m(r, col)) > std::abs(m(pivot, col))) pivot = r;
    if (std::abs(m(pivot, col)) < 1e-14) {
      throw std::runtime_error("inverse: singular matrix (pivot " + std::to_string(col) + ")");
    }
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) {
        std::swap(m(pivot, j), m(col, j));
        std::swap(inv(pivot, j), inv(col, j));
      }
    }
    const double d = m(col, col);
    for (std::size_t j = 0; j < n; ++j) {
      m(col, j) /= d;
      inv(col, j) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = m(r, col);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        m(r, j) -= f * m(col, j);
        inv(r, j) -= f * inv(col, j);
      }
    }
  }
  return inv;
}

SymmetricEigen symmetric_eigen(const Tensor& a) {
  require_square(a, "symmetric_eigen");
  const std::size_t n = a.shape()[0];
  Tensor m = a;
  Tensor v = Tensor::identity(n);
  const int max_sweeps = 100;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += m(p, q) * m(p, q);
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(m(p, q)) < 1e-300) continue;
        const double theta = (m(q, q) - m(p, p)) / (2.0 * m(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < n; ++i) {
          const double mip = m(i, p), miq = m(i, q);
          m(i, p) = c * mip - s * miq;
          m(i, q) = s * mip + c * miq;
        }
        for (std::size_t j = 0; j < n; ++j) {
          const double mpj = m(p, j), mqj = m(q, j);
          m(p, j) = c * mpj - s * mqj;
          m(q, j) = s * mpj + c * mqj;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vip = v(i, p), viq = v(i, q);
          v(i, p) = c * vip - s * viq;
          v(i, q) = s * vip + c * viq;
        }
      }
    }
  }
  SymmetricEigen out;
  out.values.resize(n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return m(x, x) < m(y, y); });
  out.vectors = Tensor({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = m(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
  }
  return out;
}

double frobenius_dot(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("frobenius_dot: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
  const double na = a.frobenius_norm();
  const double nb = b.frobenius_norm();
  if (na == 0.0 || nb == 0.0) {
    throw std::invalid_argument("cosine_similarity: zero-norm input");
  }
  return frobenius_dot(a, b) / (na * nb);
}

double largest_principal_angle(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[0] != b.shape()[0]) {
    throw std::invalid_argument("largest_principal_angle: column matrices of equal height");
  }
  // modified Gram-Schmidt orthonormalization
  auto orthonormalize = [](const Tensor& m) {
    const std::size_t rows = m.shape()[0], cols = m.shape()[1];
    Tensor q = m;
    std::size_t kept = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      for (std::size_t prev = 0; prev < kept; ++prev) {
        double dot = 0.0;
        for (std::size_t i = 0; i < rows; ++i) dot += q(i, prev) * q(i, j);
        for (std::size_t i = 0; i < rows; ++i) q(i, j) -= dot * q(i, prev);
      }
      double norm = 0.0;
      for (std::size_t i = 0; i < rows; ++i) norm += q(i, j) * q(i, j);
      norm = std::sqrt(norm);
      if (norm > 1e-12) {
        for (std::size_t i = 0; i < rows; ++i) q(i, kept) = q(i, j) / norm;
        ++kept;
      }
    }
    Tensor out({rows, kept});
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < kept; ++j) out(i, j) = q(i, j);
    return out;
  };
  const Tensor qa = orthonormalize(a);
  const Tensor qb = orthonormalize(b);
  if (qa.shape()[1] != qb.shape()[1]) return std::acos(0.0);  // rank mismatch: 90 deg
  if (qa.shape()[1] == 0) return 0.0;
  // cos of principal angles = singular values of qa^T qb; smallest singular
  // value from the symmetric eigenproblem of (qa^T qb)^T (qa^T qb)
  const Tensor c = matmul(transpose(qa), qb);
  const Tensor ctc = matmul(transpose(c), c);
  const auto eig = symmetric_eigen(ctc);
  double smin2 = eig.values.front();
  smin2 = std::clamp(smin2, 0.0, 1.0);
  return std::acos(std::sqrt(smin2));
}

}  // namespace localsym
