#include "localsym/tasks.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "localsym/rng.hpp"

namespace localsym {

void HeatConfig::validate() const {
  if (grid < 3) throw std::invalid_argument("heat: grid too small");
  if (n_steps < 0) throw std::invalid_argument("heat: negative step count");
  if (lambda() > 0.25 + 1e-12) {
    throw std::invalid_argument("heat: explicit stencil unstable, alpha*dt/h^2 = " +
                                std::to_string(lambda()) + " > 1/4");
  }
  if (!(excl_x0 > 0.0 && excl_x0 < excl_x1 && excl_x1 < 1.0 && excl_y0 > 0.0 &&
        excl_y0 < excl_y1 && excl_y1 < 1.0)) {
    throw std::invalid_argument("heat: exclusion rectangle must lie inside (0,1)^2");
  }
}

namespace {

struct HeldRegion {
  int row0, row1, col0, col1;  // inclusive exclusion-rectangle pixel bounds
  std::size_t h, w;

  bool held(int i, int j) const {
    if (i == 0 || j == 0 || i == static_cast<int>(h) - 1 || j == static_cast<int>(w) - 1) {
      return true;
    }
    return i >= row0 && i <= row1 && j >= col0 && j <= col1;
  }
};

HeldRegion held_region(const HeatConfig& cfg) {
  HeldRegion r{};
  r.h = cfg.grid;
  r.w = cfg.grid;
  const double sy = static_cast<double>(cfg.grid - 1);
  const double sx = static_cast<double>(cfg.grid - 1);
  r.row0 = static_cast<int>(std::ceil(cfg.excl_y0 * sy));
  r.row1 = static_cast<int>(std::floor(cfg.excl_y1 * sy));
  r.col0 = static_cast<int>(std::ceil(cfg.excl_x0 * sx));
  r.col1 = static_cast<int>(std::floor(cfg.excl_x1 * sx));
  return r;
}

}  // namespace

FieldDataset gen_heat_dataset(const HeatConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.grid;
  const HeldRegion held = held_region(cfg);
  const double lam = cfg.lambda();

  FieldDataset ds;
  ds.height = n;
  ds.width = n;
  ds.channels = 1;
  ds.seed = cfg.seed;
  ds.generator = "heat";
  ds.X.reserve(cfg.n_samples);
  ds.Y.reserve(cfg.n_samples);

  RngStream root(cfg.seed);
  for (std::size_t s = 0; s < cfg.n_samples; ++s) {
    RngStream rng = root.child(s);
    const double av = rng.next_uniform(cfg.amp_min, cfg.amp_max);
    const double fv = rng.next_uniform(cfg.freq_min, cfg.freq_max);
    const double pv = rng.next_uniform(0.0, 2.0 * std::numbers::pi);
    const double ah = rng.next_uniform(cfg.amp_min, cfg.amp_max);
    const double fh = rng.next_uniform(cfg.freq_min, cfg.freq_max);
    const double ph = rng.next_uniform(0.0, 2.0 * std::numbers::pi);

    Tensor x({1, n, n});
    for (std::size_t i = 0; i < n; ++i) {
      const double yfrac = static_cast<double>(i) / static_cast<double>(n - 1);
      const double vert = av * std::sin(2.0 * std::numbers::pi * fv * yfrac + pv);
      for (std::size_t j = 0; j < n; ++j) {
        const double xfrac = static_cast<double>(j) / static_cast<double>(n - 1);
        const double horiz = ah * std::sin(2.0 * std::numbers::pi * fh * xfrac + ph);
        x(0, i, j) = held.held(static_cast<int>(i), static_cast<int>(j))
                         ? cfg.boundary_value
                         : vert + horiz;
      }
    }

    Tensor u = x;
    Tensor next({1, n, n});
    for (int step = 0; step < cfg.n_steps; ++step) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          if (held.held(static_cast<int>(i), static_cast<int>(j))) {
            next(0, i, j) = cfg.boundary_value;
          } else {
            const double c = u(0, i, j);
            next(0, i, j) = c + lam * (u(0, i - 1, j) + u(0, i + 1, j) + u(0, i, j - 1) +
                                       u(0, i, j + 1) - 4.0 * c);
          }
        }
      }
      std::swap(u, next);
    }
    ds.X.push_back(std::move(x));
    ds.Y.push_back(std::move(u));
  }
  return ds;
}

LocalPatch heat_oracle(const LocalPatch& patch_in, double alpha_dt, int n_steps,
                       int out_radius) {
  if (patch_in.ndim() != 3 || patch_in.shape()[1] != patch_in.shape()[2] ||
      patch_in.shape()[1] % 2 == 0) {
    throw std::invalid_argument("heat_oracle: odd square patch required");
  }
  if (alpha_dt > 0.25 + 1e-12) {
    throw std::invalid_argument("heat_oracle: unstable alpha*dt = " + std::to_string(alpha_dt));
  }
  const std::size_t side = patch_in.shape()[1];
  const int in_radius = static_cast<int>(side / 2);
  if (in_radius - out_radius < n_steps) {
    throw std::invalid_argument(
        "heat_oracle: dependency cone escapes the patch, need in_radius - out_radius >= "
        "n_steps (" +
        std::to_string(in_radius) + " - " + std::to_string(out_radius) + " < " +
        std::to_string(n_steps) + ")");
  }
  const std::size_t C = patch_in.shape()[0];
  Tensor u = patch_in;
  Tensor next = patch_in;
  for (int step = 0; step < n_steps; ++step) {
    for (std::size_t ch = 0; ch < C; ++ch) {
      for (std::size_t i = 1; i + 1 < side; ++i) {
        for (std::size_t j = 1; j + 1 < side; ++j) {
          const double c = u(ch, i, j);
          next(ch, i, j) = c + alpha_dt * (u(ch, i - 1, j) + u(ch, i + 1, j) +
                                           u(ch, i, j - 1) + u(ch, i, j + 1) - 4.0 * c);
        }
      }
    }
    std::swap(u, next);
  }
  const std::size_t out_side = static_cast<std::size_t>(2 * out_radius + 1);
  const std::size_t off = static_cast<std::size_t>(in_radius - out_radius);
  Tensor out({C, out_side, out_side});
  for (std::size_t ch = 0; ch < C; ++ch)
    for (std::size_t i = 0; i < out_side; ++i)
      for (std::size_t j = 0; j < out_side; ++j) out(ch, i, j) = u(ch, i + off, j + off);
  return out;
}

VectorDataset gen_l1_dataset(std::size_t n, double range, std::uint64_t seed) {
  if (range <= 0.0) throw std::invalid_argument("l1 task: range must be positive");
  VectorDataset ds;
  ds.dim = 2;
  ds.seed = seed;
  ds.generator = "l1";
  ds.X = Tensor({n, 2});
  ds.y = Tensor({n, 1});
  RngStream root(seed);
  for (std::size_t s = 0; s < n; ++s) {
    RngStream rng = root.child(s);
    const double x = rng.next_uniform(-range, range);
    const double y = rng.next_uniform(-range, range);
    ds.X(s, 0) = x;
    ds.X(s, 1) = y;
    ds.y(s, 0) = std::abs(x) + std::abs(y);
  }
  return ds;
}

VectorDataset gen_arctan_dataset(std::size_t n, std::uint64_t seed) {
  VectorDataset ds;
  ds.dim = 2;
  ds.seed = seed;
  ds.generator = "arctan";
  ds.X = Tensor({n, 2});
  ds.y = Tensor({n, 1});
  RngStream root(seed);
  for (std::size_t s = 0; s < n; ++s) {
    RngStream rng = root.child(s);
    double x = rng.next_uniform(-1.0, 1.0);
    while (std::abs(x) < 0.05) x = rng.next_uniform(-1.0, 1.0);  // singularity guard
    const double y = rng.next_uniform(-1.0, 1.0);
    ds.X(s, 0) = x;
    ds.X(s, 1) = y;
    ds.y(s, 0) = std::atan((y + 0.1) / x);
  }
  return ds;
}

VectorDataset gen_quadratic_invariant_dataset(std::size_t n, std::size_t m,
                                              std::uint64_t seed) {
  if (m < 2) throw std::invalid_argument("quadratic task: need m >= 2");
  VectorDataset ds;
  ds.dim = m;
  ds.seed = seed;
  ds.generator = "quadratic";
  ds.X = Tensor({n, m});
  ds.y = Tensor({n, 1});
  RngStream root(seed);
  for (std::size_t s = 0; s < n; ++s) {
    RngStream rng = root.child(s);
    double q = 0.0;
    for (std::size_t d = 0; d < m; ++d) {
      const double v = rng.next_normal();
      ds.X(s, d) = v;
      q += (d == 0 ? -1.0 : 1.0) * v * v;
    }
    ds.y(s, 0) = q;
  }
  return ds;
}

PredictorKind predictor_kind_from_string(const std::string& s) {
  if (s == "heat_oracle" || s == "oracle") return PredictorKind::HeatOracle;
  if (s == "mlp") return PredictorKind::Mlp;
  if (s == "cnn") return PredictorKind::Cnn;
  throw std::invalid_argument("unknown predictor kind: " + s);
}

std::string to_string(PredictorKind k) {
  switch (k) {
    case PredictorKind::HeatOracle: return "heat_oracle";
    case PredictorKind::Mlp: return "mlp";
    case PredictorKind::Cnn: return "cnn";
  }
  return "?";
}

std::size_t Predictor::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

namespace {

Tensor glorot_uniform(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out,
                      RngStream& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = rng.next_uniform(-limit, limit);
  return t;
}

NodeId leaf(Graph& g, const Predictor& p, const std::string& name, bool trainable) {
  const std::string full = p.param_prefix() + name;
  return trainable ? g.parameter(full, p.params.at(name)) : g.constant(p.params.at(name));
}

}  // namespace

NodeId Predictor::apply(Graph& g, NodeId input, bool trainable) const {
  switch (kind) {
    case PredictorKind::Mlp: {
      NodeId x = input;
      const std::size_t layers = mlp_widths.size() - 1;
      for (std::size_t l = 0; l < layers; ++l) {
        const std::string id = "lin" + std::to_string(l);
        x = g.add(g.matmul(x, leaf(g, *this, id + ".w", trainable)),
                  leaf(g, *this, id + ".b", trainable));
        if (l + 1 < layers) x = g.tanh(x);
      }
      return x;
    }
    case PredictorKind::Cnn: {
      NodeId x = input;
      const std::size_t layers = cnn_channels.size() - 1;
      const int pad = static_cast<int>(cnn_kernel / 2);
      for (std::size_t l = 0; l < layers; ++l) {
        const std::string id = "conv" + std::to_string(l);
        x = g.conv2d(x, leaf(g, *this, id + ".w", trainable), leaf(g, *this, id + ".b", trainable),
                     pad);
        if (l + 1 < layers) x = g.relu(x);
      }
      return g.grid_sample(x, g.constant(Tensor::identity(2)), out_radius, 0.0);
    }
    case PredictorKind::HeatOracle: {
      if (field_channels != 1) {
        throw std::invalid_argument("heat oracle predictor: single-channel fields only");
      }
      const double lam = oracle_alpha_dt;
      Tensor kernel({1, 1, 3, 3});
      kernel(0, 0, 0, 1) = lam;
      kernel(0, 0, 1, 0) = lam;
      kernel(0, 0, 1, 2) = lam;
      kernel(0, 0, 2, 1) = lam;
      kernel(0, 0, 1, 1) = 1.0 - 4.0 * lam;
      const NodeId kern = g.constant(std::move(kernel));

      const std::size_t side = static_cast<std::size_t>(2 * in_radius + 1);
      Tensor interior({1, side, side});
      Tensor border = Tensor::full({1, side, side}, 1.0);
      for (std::size_t i = 1; i + 1 < side; ++i)
        for (std::size_t j = 1; j + 1 < side; ++j) {
          interior(0, i, j) = 1.0;
          border(0, i, j) = 0.0;
        }
      const NodeId maski = g.constant(std::move(interior));
      const NodeId maskb = g.constant(std::move(border));

      NodeId u = input;
      for (int step = 0; step < oracle_steps; ++step) {
        const NodeId stencil = g.conv2d(u, kern, kNoNode, 1);
        u = g.add(g.mul(stencil, maski), g.mul(u, maskb));
      }
      return g.grid_sample(u, g.constant(Tensor::identity(2)), out_radius, 0.0);
    }
  }
  throw std::invalid_argument("predictor: unknown kind");
}

Predictor build_field_predictor(const PredictorSpec& spec, const Chart& chart,
                                std::size_t channels, int chart_index, std::uint64_t seed) {
  Predictor p;
  p.kind = spec.kind;
  p.chart_index = chart_index;
  p.in_radius = chart.in_radius;
  p.out_radius = chart.out_radius;
  p.field_channels = channels;
  if (spec.kind == PredictorKind::HeatOracle) {
    p.oracle_alpha_dt = spec.oracle_alpha_dt;
    p.oracle_steps_requested = spec.oracle_steps;
    const int max_steps = chart.in_radius - chart.out_radius;
    p.oracle_steps = std::min(spec.oracle_steps, max_steps);
    return p;
  }
  if (spec.kind == PredictorKind::Mlp) {
    throw std::invalid_argument("field tasks need a cnn or heat_oracle predictor");
  }
  if (spec.cnn_layers < 1) throw std::invalid_argument("cnn: need at least one layer");
  p.cnn_channels.push_back(channels);
  for (std::size_t l = 0; l + 1 < spec.cnn_layers; ++l) p.cnn_channels.push_back(spec.cnn_hidden);
  p.cnn_channels.push_back(channels);
  p.cnn_kernel = 3;
  RngStream rng = RngStream(seed).child(0x6F00 + static_cast<std::uint64_t>(chart_index));
  for (std::size_t l = 0; l + 1 < p.cnn_channels.size(); ++l) {
    const std::size_t ci = p.cnn_channels[l], co = p.cnn_channels[l + 1];
    RngStream lr = rng.child(l);
    const std::size_t fan_in = ci * p.cnn_kernel * p.cnn_kernel;
    const std::size_t fan_out = co * p.cnn_kernel * p.cnn_kernel;
    p.params["conv" + std::to_string(l) + ".w"] =
        glorot_uniform({co, ci, p.cnn_kernel, p.cnn_kernel}, fan_in, fan_out, lr);
    p.params["conv" + std::to_string(l) + ".b"] = Tensor({co});
  }
  return p;
}

Predictor build_vector_predictor(const PredictorSpec& spec, std::size_t input_dim,
                                 int chart_index, std::uint64_t seed) {
  if (spec.kind != PredictorKind::Mlp) {
    throw std::invalid_argument("vector tasks need an mlp predictor");
  }
  Predictor p;
  p.kind = PredictorKind::Mlp;
  p.chart_index = chart_index;
  if (spec.mlp_layers < 1) throw std::invalid_argument("mlp: need at least one layer");
  p.mlp_widths.push_back(input_dim);
  for (std::size_t l = 0; l + 1 < spec.mlp_layers; ++l) p.mlp_widths.push_back(spec.mlp_hidden);
  p.mlp_widths.push_back(1);
  RngStream rng = RngStream(seed).child(0x3E00 + static_cast<std::uint64_t>(chart_index));
  for (std::size_t l = 0; l + 1 < p.mlp_widths.size(); ++l) {
    const std::size_t in = p.mlp_widths[l], out = p.mlp_widths[l + 1];
    RngStream lr = rng.child(l);
    p.params["lin" + std::to_string(l) + ".w"] = glorot_uniform({in, out}, in, out, lr);
    p.params["lin" + std::to_string(l) + ".b"] = Tensor({out});
  }
  return p;
}

}  // namespace localsym
