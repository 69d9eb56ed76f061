#pragma once

#include <vector>

#include "localsym/tensor.hpp"

namespace localsym {

/// 2-D matrix product (a: r x k, b: k x c).
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

/// Determinant via LU with partial pivoting; square input required.
double determinant(const Tensor& a);

/// Inverse via Gauss-Jordan with partial pivoting; throws on singular input.
Tensor inverse(const Tensor& a);

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues ascending; eigenvectors returned as columns.
struct SymmetricEigen {
  std::vector<double> values;
  Tensor vectors;
};
SymmetricEigen symmetric_eigen(const Tensor& a);

/// Frobenius inner product <a, b> = sum(a .* b).
double frobenius_dot(const Tensor& a, const Tensor& b);

/// Cosine similarity of two tensors viewed as flat vectors.
double cosine_similarity(const Tensor& a, const Tensor& b);

/// Largest principal angle (radians) between the column spans of two
/// equal-height matrices. Columns are orthonormalized internally.
double largest_principal_angle(const Tensor& a, const Tensor& b);

}  // namespace localsym
