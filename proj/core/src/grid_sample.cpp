#include <cmath>
#include <stdexcept>

#include "localsym/graph.hpp"

namespace localsym::detail {

namespace {

struct SampleDims {
  std::size_t n, c, s_in, s_out;
  int r_in, r_out;
  bool batched, per_sample_m;
};

SampleDims sample_dims(const Tensor& patch, const Tensor& minv, int out_radius) {
  SampleDims d{};
  d.batched = patch.ndim() == 4;
  if (patch.ndim() != 3 && patch.ndim() != 4) {
    throw std::invalid_argument("grid_sample: patch must be (C,H,W) or (N,C,H,W), got " +
                                shape_to_string(patch.shape()));
  }
  d.n = d.batched ? patch.shape()[0] : 1;
  d.c = patch.shape()[d.batched ? 1 : 0];
  const std::size_t h = patch.shape()[d.batched ? 2 : 1];
  const std::size_t w = patch.shape()[d.batched ? 3 : 2];
  if (h != w || h % 2 == 0) {
    throw std::invalid_argument("grid_sample: patch must be square with odd side, got " +
                                shape_to_string(patch.shape()));
  }
  d.s_in = h;
  d.r_in = static_cast<int>(h / 2);
  d.r_out = out_radius < 0 ? d.r_in : out_radius;
  d.s_out = static_cast<std::size_t>(2 * d.r_out + 1);
  if (minv.ndim() == 2 && minv.shape()[0] == 2 && minv.shape()[1] == 2) {
    d.per_sample_m = false;
  } else if (minv.ndim() == 3 && minv.shape()[0] == d.n && minv.shape()[1] == 2 &&
             minv.shape()[2] == 2 && d.batched) {
    d.per_sample_m = true;
  } else {
    throw std::invalid_argument("grid_sample: transform must be (2,2) or (N,2,2), got " +
                                shape_to_string(minv.shape()));
  }
  if (!minv.all_finite()) throw std::invalid_argument("grid_sample: non-finite transform");
  return d;
}

}  // namespace

Tensor grid_sample_forward(const Tensor& patch, const Tensor& minv, int out_radius,
                           double fill) {
  const SampleDims d = sample_dims(patch, minv, out_radius);
  Tensor out(d.batched
                 ? std::vector<std::size_t>{d.n, d.c, d.s_out, d.s_out}
                 : std::vector<std::size_t>{d.c, d.s_out, d.s_out});
  const double* pp = patch.data();
  double* po = out.data();
  const std::size_t in_plane = d.s_in * d.s_in;
  const std::size_t out_plane = d.s_out * d.s_out;
  const int s_in = static_cast<int>(d.s_in);
  for (std::size_t n = 0; n < d.n; ++n) {
    const double* m = minv.data() + (d.per_sample_m ? n * 4 : 0);
    for (std::size_t ro = 0; ro < d.s_out; ++ro) {
      const double dy = static_cast<double>(static_cast<int>(ro) - d.r_out);
      for (std::size_t co = 0; co < d.s_out; ++co) {
        const double dx = static_cast<double>(static_cast<int>(co) - d.r_out);
        const double col_f = m[0] * dx + m[1] * dy + d.r_in;
        const double row_f = m[2] * dx + m[3] * dy + d.r_in;
        const double fx = std::floor(col_f);
        const double fy = std::floor(row_f);
        const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
        const double tx = col_f - fx, ty = row_f - fy;
        for (std::size_t ch = 0; ch < d.c; ++ch) {
          const double* plane = pp + (n * d.c + ch) * in_plane;
          const auto at = [&](int y, int x) -> double {
            return (x >= 0 && x < s_in && y >= 0 && y < s_in)
                       ? plane[static_cast<std::size_t>(y) * d.s_in + x]
                       : fill;
          };
          const double v00 = at(y0, x0), v01 = at(y0, x0 + 1);
          const double v10 = at(y0 + 1, x0), v11 = at(y0 + 1, x0 + 1);
          const double top = tx == 0.0 ? v00 : (1.0 - tx) * v00 + tx * v01;
          const double bot = tx == 0.0 ? v10 : (1.0 - tx) * v10 + tx * v11;
          po[(n * d.c + ch) * out_plane + ro * d.s_out + co] =
              ty == 0.0 ? top : (1.0 - ty) * top + ty * bot;
        }
      }
    }
  }
  return out;
}

void grid_sample_backward(const Tensor& grad_out, const Tensor& patch, const Tensor& minv,
                          int out_radius, double fill, Tensor* grad_patch, Tensor* grad_minv) {
  const SampleDims d = sample_dims(patch, minv, out_radius);
  const double* pp = patch.data();
  const double* pg = grad_out.data();
  const std::size_t in_plane = d.s_in * d.s_in;
  const std::size_t out_plane = d.s_out * d.s_out;
  const int s_in = static_cast<int>(d.s_in);
  for (std::size_t n = 0; n < d.n; ++n) {
    const double* m = minv.data() + (d.per_sample_m ? n * 4 : 0);
    double* gm = grad_minv ? grad_minv->data() + (d.per_sample_m ? n * 4 : 0) : nullptr;
    for (std::size_t ro = 0; ro < d.s_out; ++ro) {
      const double dy = static_cast<double>(static_cast<int>(ro) - d.r_out);
      for (std::size_t co = 0; co < d.s_out; ++co) {
        const double dx = static_cast<double>(static_cast<int>(co) - d.r_out);
        const double col_f = m[0] * dx + m[1] * dy + d.r_in;
        const double row_f = m[2] * dx + m[3] * dy + d.r_in;
        const double fx = std::floor(col_f);
        const double fy = std::floor(row_f);
        const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
        const double tx = col_f - fx, ty = row_f - fy;
        double gcol = 0.0, grow = 0.0;
        for (std::size_t ch = 0; ch < d.c; ++ch) {
          const double* plane = pp + (n * d.c + ch) * in_plane;
          const double g = pg[(n * d.c + ch) * out_plane + ro * d.s_out + co];
          if (g == 0.0) continue;
          const auto in_range = [&](int y, int x) {
            return x >= 0 && x < s_in && y >= 0 && y < s_in;
          };
          const auto at = [&](int y, int x) -> double {
            return in_range(y, x) ? plane[static_cast<std::size_t>(y) * d.s_in + x] : fill;
          };
          const double v00 = at(y0, x0), v01 = at(y0, x0 + 1);
          const double v10 = at(y0 + 1, x0), v11 = at(y0 + 1, x0 + 1);
          if (grad_minv) {
            gcol += g * ((1.0 - ty) * (v01 - v00) + ty * (v11 - v10));
            grow += g * ((1.0 - tx) * (v10 - v00) + tx * (v11 - v01));
          }
          if (grad_patch) {
            double* gplane = grad_patch->data() + (n * d.c + ch) * in_plane;
            const auto scatter = [&](int y, int x, double w) {
              if (w != 0.0 && in_range(y, x)) {
                gplane[static_cast<std::size_t>(y) * d.s_in + x] += g * w;
              }
            };
            scatter(y0, x0, (1.0 - tx) * (1.0 - ty));
            scatter(y0, x0 + 1, tx * (1.0 - ty));
            scatter(y0 + 1, x0, (1.0 - tx) * ty);
            scatter(y0 + 1, x0 + 1, tx * ty);
          }
        }
        if (gm) {
          gm[0] += gcol * dx;
          gm[1] += gcol * dy;
          gm[2] += grow * dx;
          gm[3] += grow * dy;
        }
      }
    }
  }
}

}  // namespace localsym::detail
