#include "localsym/tensor.hpp"

#include <algorithm>

namespace localsym {

std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  s += ")";
  return s;
}

std::vector<std::size_t> broadcast_shapes(const std::vector<std::size_t>& a,
                                          const std::vector<std::size_t>& b) {
  const std::size_t n = std::max(a.size(), b.size());
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    const std::size_t db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw std::invalid_argument("broadcast: incompatible shapes " + shape_to_string(a) +
                                  " and " + shape_to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {

std::vector<std::size_t> row_major_strides(const std::vector<std::size_t>& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// strides of `shape` aligned (right) into `out_shape`, zero where broadcast
std::vector<std::size_t> broadcast_strides(const std::vector<std::size_t>& shape,
                                           const std::vector<std::size_t>& out_shape) {
  const auto base = row_major_strides(shape);
  std::vector<std::size_t> s(out_shape.size(), 0);
  const std::size_t off = out_shape.size() - shape.size();
  for (std::size_t i = 0; i < shape.size(); ++i) {
    s[off + i] = shape[i] == 1 ? 0 : base[i];
  }
  return s;
}

}  // namespace

Tensor broadcast_binary(const Tensor& a, const Tensor& b, double (*op)(double, double)) {
  if (a.same_shape(b)) {  // fast path
    Tensor out(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < a.size(); ++i) po[i] = op(pa[i], pb[i]);
    return out;
  }
  const auto out_shape = broadcast_shapes(a.shape(), b.shape());
  Tensor out(out_shape);
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  const std::size_t nd = out_shape.size();
  std::vector<std::size_t> idx(nd, 0);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::size_t total = out.size();
  std::size_t ia = 0, ib = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    po[flat] = op(pa[ia], pb[ib]);
    for (std::size_t d = nd; d-- > 0;) {
      idx[d]++;
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out_shape[d]) break;
      ia -= sa[d] * out_shape[d];
      ib -= sb[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return out;
}

Tensor reduce_to_shape(const Tensor& g, const std::vector<std::size_t>& target) {
  if (g.shape() == target) return g;
  Tensor out(target);
  const auto st = broadcast_strides(target, g.shape());
  const auto& gs = g.shape();
  const std::size_t nd = gs.size();
  std::vector<std::size_t> idx(nd, 0);
  const double* pg = g.data();
  double* po = out.data();
  std::size_t it = 0;
  for (std::size_t flat = 0; flat < g.size(); ++flat) {
    po[it] += pg[flat];
    for (std::size_t d = nd; d-- > 0;) {
      idx[d]++;
      it += st[d];
      if (idx[d] < gs[d]) break;
      it -= st[d] * gs[d];
      idx[d] = 0;
    }
  }
  return out;
}

}  // namespace localsym
