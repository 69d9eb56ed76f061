#pragma once

#include <optional>
#include <vector>

#include "localsym/graph.hpp"
#include "localsym/tensor.hpp"

namespace localsym {

/// Square neighborhood of a grid with a context margin.
///
/// The chart proper is the out-radius square; predictors read the larger
/// in-radius window so the out-region keeps its full dependency cone.
/// `chart_map` is the linear part of the chart coordinate map (identity for
/// plain recentering charts); pullback resamples through its inverse.
struct Chart {
  double center_x = 0.5;  // fraction-of-grid coordinates, (0,0) = top-left
  double center_y = 0.5;
  int in_radius = 0;      // pixels
  int out_radius = 0;     // pixels
  std::optional<Tensor> chart_map;  // 2x2

  int center_col(std::size_t grid_w) const;
  int center_row(std::size_t grid_h) const;
};

struct Atlas {
  std::vector<Chart> charts;

  /// Checks chart invariants against a grid: non-empty atlas, in >= out > 0,
  /// the out-radius square inside the grid, invertible chart maps.
  void validate(std::size_t grid_h, std::size_t grid_w) const;
};

/// Discretized feature field: `channels` values per grid point, pixel
/// coordinates mapped to [0,1]^2 fractions of the grid.
struct FeatureField {
  Tensor data;  // (C,H,W)

  std::size_t channels() const { return data.shape()[0]; }
  std::size_t height() const { return data.shape()[1]; }
  std::size_t width() const { return data.shape()[2]; }
};

/// Pullback patch in chart coordinates: odd-sided square (2r+1)^2 centered
/// on the chart center, spanning [-1,1]^2 in local units.
using LocalPatch = Tensor;  // (C, 2r+1, 2r+1)

enum class ActionMode {
  FieldWarp,               // (g.E)(p) = E(g^-1 p) on planar patches
  VectorLinearInvariant,   // g acts on input vectors, scalar output unchanged
  VectorLinearEquivariant, // g acts on both input and output vectors
};

struct ActionSpec {
  ActionMode mode = ActionMode::FieldWarp;
  std::size_t m = 2;  // action dimension
};

/// Extract the square window of the given radius around the chart center.
/// Pixels sourced outside the grid read 0 (zero-extension of the field);
/// a non-identity chart_map resamples through its inverse.
LocalPatch pullback(const FeatureField& field, const Chart& chart, int radius);

/// Apply the linear action of g to a patch: out(p) = patch(g^-1 p), bilinear,
/// zero fill outside. g must be invertible (|det| > 1e-8).
LocalPatch act_on_patch(const Tensor& g, const LocalPatch& patch);

/// Graph version of act_on_patch with g^-1 supplied as a node.
NodeId act_on_patch_node(Graph& graph, NodeId patch, NodeId g_inverse, int out_radius = -1);

/// Row-wise linear action: each row v of `sample` maps to g v.
Tensor act_on_vectors(const Tensor& g, const Tensor& sample);

/// Validity mask for comparing warped predictions: out-pixel p is valid iff
/// its preimage minv @ p stays inside the out-radius square, so neither side
/// of the equivariance comparison reads zero-extension fill.
Tensor warp_validity_mask(const Tensor& minv, int out_radius);

}  // namespace localsym
