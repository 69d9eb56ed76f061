#include "localsym/geometry.hpp"

#include <cmath>
#include <stdexcept>

#include "localsym/linalg.hpp"

namespace localsym {

int Chart::center_col(std::size_t grid_w) const {
  return static_cast<int>(std::lround(center_x * static_cast<double>(grid_w - 1)));
}

int Chart::center_row(std::size_t grid_h) const {
  return static_cast<int>(std::lround(center_y * static_cast<double>(grid_h - 1)));
}

void Atlas::validate(std::size_t grid_h, std::size_t grid_w) const {
  if (charts.empty()) throw std::invalid_argument("atlas: no charts");
  for (std::size_t c = 0; c < charts.size(); ++c) {
    const Chart& ch = charts[c];
    const std::string tag = "atlas chart " + std::to_string(c) + ": ";
    if (ch.out_radius <= 0 || ch.in_radius < ch.out_radius) {
      throw std::invalid_argument(tag + "need in_radius >= out_radius > 0, got in=" +
                                  std::to_string(ch.in_radius) + " out=" +
                                  std::to_string(ch.out_radius));
    }
    if (static_cast<std::size_t>(2 * ch.in_radius + 1) > grid_h ||
        static_cast<std::size_t>(2 * ch.in_radius + 1) > grid_w) {
      throw std::invalid_argument(tag + "in-radius window exceeds the grid");
    }
    const int row = ch.center_row(grid_h), col = ch.center_col(grid_w);
    if (row - ch.out_radius < 0 || col - ch.out_radius < 0 ||
        row + ch.out_radius >= static_cast<int>(grid_h) ||
        col + ch.out_radius >= static_cast<int>(grid_w)) {
      throw std::invalid_argument(tag + "out-radius square falls outside the grid");
    }
    if (ch.chart_map) {
      const Tensor& m = *ch.chart_map;
      if (m.ndim() != 2 || m.shape()[0] != 2 || m.shape()[1] != 2) {
        throw std::invalid_argument(tag + "chart_map must be 2x2");
      }
      if (std::abs(determinant(m)) <= 1e-8) {
        throw std::invalid_argument(tag + "chart_map is singular");
      }
    }
  }
}

LocalPatch pullback(const FeatureField& field, const Chart& chart, int radius) {
  const std::size_t C = field.channels(), H = field.height(), W = field.width();
  const int row_c = chart.center_row(H), col_c = chart.center_col(W);
  const std::size_t side = static_cast<std::size_t>(2 * radius + 1);
  Tensor patch({C, side, side});

  const bool identity_map = !chart.chart_map.has_value();
  if (identity_map) {
    // inclusion chart: plain recentered window, zero outside the grid
    for (std::size_t ch = 0; ch < C; ++ch) {
      for (int dy = -radius; dy <= radius; ++dy) {
        const int gy = row_c + dy;
        for (int dx = -radius; dx <= radius; ++dx) {
          const int gx = col_c + dx;
          const bool inside = gy >= 0 && gy < static_cast<int>(H) && gx >= 0 &&
                              gx < static_cast<int>(W);
          patch(ch, static_cast<std::size_t>(dy + radius), static_cast<std::size_t>(dx + radius)) =
              inside ? field.data(ch, static_cast<std::size_t>(gy), static_cast<std::size_t>(gx))
                     : 0.0;
        }
      }
    }
    return patch;
  }

  const Tensor map_inv = inverse(*chart.chart_map);
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const double sx = map_inv(0, 0) * dx + map_inv(0, 1) * dy + col_c;
      const double sy = map_inv(1, 0) * dx + map_inv(1, 1) * dy + row_c;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
      const double tx = sx - fx, ty = sy - fy;
      for (std::size_t ch = 0; ch < C; ++ch) {
        const auto at = [&](int y, int x) -> double {
          return (y >= 0 && y < static_cast<int>(H) && x >= 0 && x < static_cast<int>(W))
                     ? field.data(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x))
                     : 0.0;
        };
        const double top = (1.0 - tx) * at(y0, x0) + tx * at(y0, x0 + 1);
        const double bot = (1.0 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1);
        patch(ch, static_cast<std::size_t>(dy + radius), static_cast<std::size_t>(dx + radius)) =
            (1.0 - ty) * top + ty * bot;
      }
    }
  }
  return patch;
}

LocalPatch act_on_patch(const Tensor& g, const LocalPatch& patch) {
  if (g.ndim() != 2 || g.shape()[0] != 2 || g.shape()[1] != 2) {
    throw std::invalid_argument("act_on_patch: 2x2 group element required");
  }
  const double det = determinant(g);
  if (std::abs(det) <= 1e-8) {
    throw std::invalid_argument("act_on_patch: |det g| = " + std::to_string(std::abs(det)) +
                                " below singular guard 1e-8");
  }
  return detail::grid_sample_forward(patch, inverse(g), -1, 0.0);
}

NodeId act_on_patch_node(Graph& graph, NodeId patch, NodeId g_inverse, int out_radius) {
  return graph.grid_sample(patch, g_inverse, out_radius, 0.0);
}

Tensor act_on_vectors(const Tensor& g, const Tensor& sample) {
  if (g.ndim() != 2 || g.shape()[0] != g.shape()[1]) {
    throw std::invalid_argument("act_on_vectors: square group element required");
  }
  if (sample.ndim() != 2 || sample.shape()[1] != g.shape()[0]) {
    throw std::invalid_argument("act_on_vectors: samples " + shape_to_string(sample.shape()) +
                                " do not match action dimension " +
                                std::to_string(g.shape()[0]));
  }
  return matmul(sample, transpose(g));
}

Tensor warp_validity_mask(const Tensor& minv, int out_radius) {
  const std::size_t side = static_cast<std::size_t>(2 * out_radius + 1);
  Tensor mask({1, side, side});
  const double lim = static_cast<double>(out_radius) + 1e-9;
  for (std::size_t ro = 0; ro < side; ++ro) {
    const double dy = static_cast<double>(static_cast<int>(ro) - out_radius);
    for (std::size_t co = 0; co < side; ++co) {
      const double dx = static_cast<double>(static_cast<int>(co) - out_radius);
      const double qx = minv(0, 0) * dx + minv(0, 1) * dy;
      const double qy = minv(1, 0) * dx + minv(1, 1) * dy;
      mask(0, ro, co) = (std::abs(qx) <= lim && std::abs(qy) <= lim) ? 1.0 : 0.0;
    }
  }
  return mask;
}

}  // namespace localsym
