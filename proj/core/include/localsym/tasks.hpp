#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "localsym/geometry.hpp"
#include "localsym/graph.hpp"
#include "localsym/tensor.hpp"

namespace localsym {

/// Explicit finite-difference heat simulation on a square grid, pixel
/// spacing h = 1, Dirichlet boundaries on the grid edge and on an excluded
/// rectangle that acts as a fixed heat source.
struct HeatConfig {
  std::size_t grid = 64;
  std::size_t n_samples = 2000;
  double alpha = 1.0;
  double dt = 0.1;
  int n_steps = 5;
  double excl_x0 = 0.1, excl_y0 = 0.2;  // fraction coords, (0,0) top-left
  double excl_x1 = 0.3, excl_y1 = 0.5;
  double boundary_value = 1.4142135623730951;  // sqrt(2)
  std::uint64_t seed = 0;

  // initial-condition sinusoid ranges (amplitude, periods per grid)
  double amp_min = 0.5, amp_max = 1.5;
  double freq_min = 1.0, freq_max = 4.0;

  double lambda() const { return alpha * dt; }  // alpha*dt/h^2 with h=1

  /// Throws unless the explicit stencil is stable (alpha*dt/h^2 <= 1/4)
  /// and the exclusion rectangle lies inside (0,1)^2.
  void validate() const;
};

struct FieldDataset {
  std::size_t height = 0, width = 0, channels = 1;
  std::vector<Tensor> X, Y;  // (C,H,W) per sample
  std::uint64_t seed = 0;
  std::string generator;  // "heat" or empty for file-loaded data

  std::size_t size() const { return X.size(); }
};

struct VectorDataset {
  std::size_t dim = 0;
  Tensor X;  // (n, dim)
  Tensor y;  // (n, 1)
  std::uint64_t seed = 0;
  std::string generator;

  std::size_t size() const { return X.shape()[0]; }
};

/// Initial condition = vertical sinusoid + horizontal sinusoid with random
/// parameters; output = n_steps of the 5-point explicit stencil with the
/// boundary and exclusion rectangle clamped to the boundary value.
/// Deterministic given cfg.seed; per-sample streams derive from the index.
FieldDataset gen_heat_dataset(const HeatConfig& cfg);

/// Stencil update applied to the interior of a patch, borders held; returns
/// the center out-radius crop. Requires in_radius - out_radius >= n_steps so
/// the crop's dependency cone never touches the held border.
LocalPatch heat_oracle(const LocalPatch& patch_in, double alpha_dt, int n_steps,
                       int out_radius);

/// f(x, y) = |x| + |y|, uniform samples in [-range, range]^2. D4 symmetry.
VectorDataset gen_l1_dataset(std::size_t n, double range, std::uint64_t seed);

/// f(x, y) = arctan((y + 0.1) / x); x resampled while |x| < 0.05.
VectorDataset gen_arctan_dataset(std::size_t n, std::uint64_t seed);

/// x ~ N(0, I_m), y = x^T diag(-1,1,...,1) x. Invariant under O(1, m-1).
VectorDataset gen_quadratic_invariant_dataset(std::size_t n, std::size_t m,
                                              std::uint64_t seed);

enum class PredictorKind { HeatOracle, Mlp, Cnn };

PredictorKind predictor_kind_from_string(const std::string& s);
std::string to_string(PredictorKind k);

/// Localized chart predictor: a trainable network or an exact differentiable
/// oracle. Field-mode predictors map the in-radius patch to the out-radius
/// patch; vector-mode predictors map R^dim to a scalar.
class Predictor {
 public:
  PredictorKind kind = PredictorKind::Mlp;
  int chart_index = 0;

  // field mode
  int in_radius = 0, out_radius = 0;
  std::size_t field_channels = 1;

  // architectures
  std::vector<std::size_t> mlp_widths;    // in, hidden..., out (tanh between)
  std::vector<std::size_t> cnn_channels;  // in, hidden..., out (3x3, relu between)
  std::size_t cnn_kernel = 3;

  // oracle
  double oracle_alpha_dt = 0.0;
  int oracle_steps = 0;          // effective (possibly reduced) step count
  int oracle_steps_requested = 0;

  std::map<std::string, Tensor> params;

  std::string param_prefix() const { return "chart" + std::to_string(chart_index) + "."; }
  std::size_t parameter_count() const;
  bool steps_reduced() const { return oracle_steps != oracle_steps_requested; }

  /// Append the predictor's computation to a graph. Parameters enter as
  /// trainable leaves or frozen constants. Field mode expects (N,C,H,W)
  /// input and yields the out-radius crop; vector mode maps (N,dim) to (N,1).
  NodeId apply(Graph& g, NodeId input, bool trainable) const;
};

struct PredictorSpec {
  PredictorKind kind = PredictorKind::Mlp;
  std::size_t mlp_hidden = 64;
  std::size_t mlp_layers = 3;   // total affine layers
  std::size_t cnn_hidden = 16;
  std::size_t cnn_layers = 4;   // total conv layers
  // oracle settings copied from the task's HeatConfig
  double oracle_alpha_dt = 0.0;
  int oracle_steps = 0;
};

/// Field-mode predictor for a chart; parameters seeded deterministically.
Predictor build_field_predictor(const PredictorSpec& spec, const Chart& chart,
                                std::size_t channels, int chart_index, std::uint64_t seed);

/// Vector-mode predictor (3-layer MLP by default).
Predictor build_vector_predictor(const PredictorSpec& spec, std::size_t input_dim,
                                 int chart_index, std::uint64_t seed);

}  // namespace localsym
