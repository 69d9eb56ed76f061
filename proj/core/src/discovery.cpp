#include "localsym/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "localsym/linalg.hpp"
#include "localsym/optimizer.hpp"
#include "localsym/rng.hpp"

namespace localsym {

namespace {

// rng stream labels, one per consumer
constexpr std::uint64_t kShuffleLabel = 0x7A1;
constexpr std::uint64_t kBasisLabel = 0xBA515;
constexpr std::uint64_t kEtaLabel = 0xE7A;
constexpr std::uint64_t kCosetLabel = 0xC05E75;
constexpr std::uint64_t kHeldoutLabel = 0x4E1D;
constexpr std::uint64_t kSelectLabel = 0xD1;

}  // namespace

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "mse") return LossKind::Mse;
  if (s == "mae") return LossKind::Mae;
  throw std::invalid_argument("unknown loss kind: " + s);
}

RegKind reg_kind_from_string(const std::string& s) {
  if (s == "sbr") return RegKind::Sbr;
  if (s == "cosine") return RegKind::Cosine;
  if (s == "none") return RegKind::None;
  throw std::invalid_argument("unknown regularization kind: " + s);
}

std::string to_string(LossKind k) { return k == LossKind::Mse ? "mse" : "mae"; }

std::string to_string(RegKind k) {
  switch (k) {
    case RegKind::Sbr: return "sbr";
    case RegKind::Cosine: return "cosine";
    case RegKind::None: return "none";
  }
  return "?";
}

void DiscoveryConfig::validate() const {
  if (K < q || q < 1) throw std::invalid_argument("discovery: need K >= q >= 1");
  if (epsilon <= 0.0) throw std::invalid_argument("discovery: need epsilon > 0");
  if (batch_size < 1) throw std::invalid_argument("discovery: need batch_size >= 1");
  if (iota < 0.0 || beta <= 0.0) throw std::invalid_argument("discovery: need iota >= 0, beta > 0");
}

TaskView TaskView::field_task(const FieldDataset& ds, const Atlas& atlas) {
  TaskView t;
  t.action = ActionSpec{ActionMode::FieldWarp, 2};
  t.field = &ds;
  t.atlas = &atlas;
  return t;
}

TaskView TaskView::vector_task(const VectorDataset& ds, ActionMode mode) {
  TaskView t;
  t.action = ActionSpec{mode, ds.dim};
  t.vectors = &ds;
  return t;
}

std::size_t TaskView::sample_count() const {
  return field ? field->size() : (vectors ? vectors->size() : 0);
}

void TaskView::validate() const {
  if (field) {
    if (!atlas) throw std::invalid_argument("field task: atlas required");
    if (field->size() == 0) throw std::invalid_argument("field task: empty dataset");
    atlas->validate(field->height, field->width);
  } else if (vectors) {
    if (vectors->size() == 0) throw std::invalid_argument("vector task: empty dataset");
  } else {
    throw std::invalid_argument("task: no dataset bound");
  }
}

namespace {

struct ChartData {
  Chart chart;
  std::vector<Tensor> x_in;   // (C, Sin, Sin)
  std::vector<Tensor> y_out;  // (C, Sout, Sout)
};

std::vector<ChartData> pull_charts(const FieldDataset& ds, const Atlas& atlas) {
  std::vector<ChartData> out;
  out.reserve(atlas.charts.size());
  for (const Chart& chart : atlas.charts) {
    ChartData cd;
    cd.chart = chart;
    cd.x_in.reserve(ds.size());
    cd.y_out.reserve(ds.size());
    for (std::size_t s = 0; s < ds.size(); ++s) {
      cd.x_in.push_back(pullback(FeatureField{ds.X[s]}, chart, chart.in_radius));
      cd.y_out.push_back(pullback(FeatureField{ds.Y[s]}, chart, chart.out_radius));
    }
    out.push_back(std::move(cd));
  }
  return out;
}

Tensor stack_batch(const std::vector<Tensor>& pool, const std::vector<std::size_t>& idx) {
  std::vector<std::size_t> shape = pool[idx[0]].shape();
  shape.insert(shape.begin(), idx.size());
  Tensor out(shape);
  const std::size_t stride = pool[idx[0]].size();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Tensor& t = pool[idx[i]];
    for (std::size_t j = 0; j < stride; ++j) out[i * stride + j] = t[j];
  }
  return out;
}

Tensor gather_rows(const Tensor& mat, const std::vector<std::size_t>& idx) {
  const std::size_t cols = mat.shape()[1];
  Tensor out({idx.size(), cols});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = mat(idx[i], j);
  return out;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, RngStream& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.next_u64() % i;
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

NodeId error_node(Graph& g, NodeId pred, NodeId target, LossKind loss) {
  const NodeId d = g.sub(pred, target);
  return loss == LossKind::Mae ? g.abs(d) : g.mul(d, d);
}

/// L(Phi(g.x), g.Phi(x)) on the out-radius crop; mask == nullptr compares the
/// full zero-padded patches (strict padding).
NodeId field_equi_loss_node(Graph& g, const Predictor& p, NodeId x_in, NodeId phi_x,
                            NodeId minv, const Tensor* mask, LossKind loss) {
  const NodeId warped = g.grid_sample(x_in, minv, -1, 0.0);
  const NodeId pred = p.apply(g, warped, false);
  const NodeId other = g.grid_sample(phi_x, minv, -1, 0.0);
  const NodeId err = error_node(g, pred, other, loss);
  if (!mask) return g.mean(err);
  double msum = 0.0;
  for (double v : mask->storage()) msum += v;
  return g.scale(g.sum(g.mul(err, g.constant(*mask))), 1.0 / msum);
}

Tensor batch_masks(const Tensor& minv_batch, int out_radius) {
  const std::size_t n = minv_batch.shape()[0];
  const std::size_t side = static_cast<std::size_t>(2 * out_radius + 1);
  Tensor out({n, 1, side, side});
  for (std::size_t s = 0; s < n; ++s) {
    Tensor m({2, 2});
    for (std::size_t i = 0; i < 4; ++i) m[i] = minv_batch[s * 4 + i];
    const Tensor mask = warp_validity_mask(m, out_radius);
    double msum = 0.0;
    for (double v : mask.storage()) msum += v;
    if (msum <= 0.0) {
      throw std::runtime_error(
          "equivariance loss: group element maps the whole chart out of view; "
          "use a smaller growth limit");
    }
    for (std::size_t j = 0; j < mask.size(); ++j) out[s * mask.size() + j] = mask[j];
  }
  return out;
}

Tensor single_mask(const Tensor& minv, int out_radius) {
  const Tensor mask = warp_validity_mask(minv, out_radius);
  double msum = 0.0;
  for (double v : mask.storage()) msum += v;
  if (msum <= 0.0) {
    throw std::runtime_error(
        "equivariance loss: group element maps the whole chart out of view; "
        "use a smaller growth limit");
  }
  std::vector<std::size_t> shape = mask.shape();
  shape.insert(shape.begin(), 1);
  return Tensor(shape, mask.storage());
}

/// Vector-mode equivariance: g acts per sample (g_nodes.size() == batch) or
/// uniformly (g_nodes.size() == 1).
NodeId vector_equi_loss_node(Graph& g, const Predictor& p, const Tensor& x_batch,
                             NodeId phi_x, const std::vector<NodeId>& g_nodes,
                             ActionMode mode, LossKind loss) {
  const std::size_t bsz = x_batch.shape()[0];
  const std::size_t m = x_batch.shape()[1];
  NodeId gx;
  if (g_nodes.size() == 1) {
    gx = g.matmul(g.constant(x_batch), g.transpose(g_nodes[0]));
  } else {
    std::vector<NodeId> rows;
    rows.reserve(bsz);
    for (std::size_t s = 0; s < bsz; ++s) {
      Tensor row({1, m});
      for (std::size_t j = 0; j < m; ++j) row(0, j) = x_batch(s, j);
      rows.push_back(g.matmul(g.constant(std::move(row)), g.transpose(g_nodes[s])));
    }
    gx = g.concat(rows, 0);
  }
  const NodeId pred = p.apply(g, gx, false);
  if (mode == ActionMode::VectorLinearInvariant) {
    return g.mean(error_node(g, pred, phi_x, loss));
  }
  // equivariant outputs transform like the inputs
  NodeId other;
  if (g_nodes.size() == 1) {
    other = g.matmul(phi_x, g.transpose(g_nodes[0]));
  } else {
    throw std::invalid_argument("vector equivariant mode: per-sample elements unsupported");
  }
  return g.mean(error_node(g, pred, other, loss));
}

std::vector<Tensor> predict_field_all(const Predictor& p, const std::vector<Tensor>& xs,
                                      std::size_t batch) {
  std::vector<Tensor> out;
  out.reserve(xs.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < xs.size(); start += batch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(xs.size(), start + batch); ++i) idx.push_back(i);
    Graph g;
    const NodeId x = g.constant(stack_batch(xs, idx));
    const NodeId y = p.apply(g, x, false);
    const Tensor& val = g.forward(y);
    const std::size_t stride = val.size() / idx.size();
    std::vector<std::size_t> shape(val.shape().begin() + 1, val.shape().end());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Tensor t(shape);
      for (std::size_t j = 0; j < stride; ++j) t[j] = val[i * stride + j];
      out.push_back(std::move(t));
    }
  }
  return out;
}

Tensor predict_vectors_all(const Predictor& p, const Tensor& x) {
  Graph g;
  const NodeId y = p.apply(g, g.constant(x), false);
  return g.forward(y);
}

void sync_params(Predictor& p, const std::map<std::string, Tensor>& store) {
  const std::string prefix = p.param_prefix();
  for (auto& [name, value] : p.params) value = store.at(prefix + name);
}

double train_one_predictor(Predictor& p, const std::vector<Tensor>& xs,
                           const std::vector<Tensor>& ys, const Tensor* x_mat,
                           const Tensor* y_mat, const DiscoveryConfig& cfg,
                           std::size_t epochs, std::vector<double>* trace) {
  std::map<std::string, Tensor> store;
  for (const auto& [name, value] : p.params) store[p.param_prefix() + name] = value;
  OptimizerState opt;
  opt.config.learning_rate = cfg.lr_predictor;
  RngStream shuffle_root =
      RngStream(cfg.seed).child(kShuffleLabel).child(static_cast<std::uint64_t>(p.chart_index));
  const std::size_t n = x_mat ? x_mat->shape()[0] : xs.size();
  double last = 0.0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    RngStream rng = shuffle_root.child(epoch);
    const auto order = shuffled_indices(n, rng);
    double epoch_loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      std::vector<std::size_t> idx(order.begin() + start,
                                   order.begin() + std::min(n, start + cfg.batch_size));
      Graph g;
      Predictor bound = p;  // parameters read from p.params at apply time
      bound.params.clear();
      for (const auto& [name, value] : p.params) {
        bound.params[name] = store.at(p.param_prefix() + name);
      }
      NodeId pred, target;
      if (x_mat) {
        pred = bound.apply(g, g.constant(gather_rows(*x_mat, idx)), true);
        target = g.constant(gather_rows(*y_mat, idx));
      } else {
        pred = bound.apply(g, g.constant(stack_batch(xs, idx)), true);
        target = g.constant(stack_batch(ys, idx));
      }
      const NodeId loss = g.mean(error_node(g, pred, target, cfg.loss));
      const double lv = g.forward(loss).value();
      if (!std::isfinite(lv)) {
        throw std::runtime_error("train_predictors: loss diverged (non-finite) on chart " +
                                 std::to_string(p.chart_index) + ", epoch " +
                                 std::to_string(epoch));
      }
      auto grads = g.backward(loss);
      adam_step(opt, store, grads);
      epoch_loss += lv;
      ++steps;
    }
    last = epoch_loss / static_cast<double>(steps);
    if (trace) trace->push_back(last);
  }
  sync_params(p, store);
  return last;
}

double eval_predictor_loss(const Predictor& p, const std::vector<Tensor>& xs,
                           const std::vector<Tensor>& ys, const Tensor* x_mat,
                           const Tensor* y_mat, const DiscoveryConfig& cfg) {
  const std::size_t n = x_mat ? x_mat->shape()[0] : xs.size();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start < n; start += cfg.batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(n, start + cfg.batch_size); ++i) idx.push_back(i);
    Graph g;
    NodeId pred, target;
    if (x_mat) {
      pred = p.apply(g, g.constant(gather_rows(*x_mat, idx)), false);
      target = g.constant(gather_rows(*y_mat, idx));
    } else {
      pred = p.apply(g, g.constant(stack_batch(xs, idx)), false);
      target = g.constant(stack_batch(ys, idx));
    }
    const NodeId loss = g.sum(error_node(g, pred, target, cfg.loss));
    total += g.forward(loss).value();
    count += g.value(pred).size();
  }
  return total / static_cast<double>(count);
}

TrainResult train_predictors_impl(const TaskView& task, const PredictorSpec& spec,
                                  const DiscoveryConfig& cfg, std::vector<Predictor>* warm,
                                  std::size_t epochs) {
  TrainResult res;
  if (task.field) {
    const auto charts = pull_charts(*task.field, *task.atlas);
    for (std::size_t c = 0; c < charts.size(); ++c) {
      Predictor p = warm ? (*warm)[c]
                         : build_field_predictor(spec, charts[c].chart, task.field->channels,
                                                 static_cast<int>(c), cfg.seed);
      std::vector<double> trace;
      double final_loss;
      if (p.kind == PredictorKind::HeatOracle) {
        final_loss = eval_predictor_loss(p, charts[c].x_in, charts[c].y_out, nullptr, nullptr,
                                         cfg);
        trace.push_back(final_loss);
      } else {
        final_loss =
            train_one_predictor(p, charts[c].x_in, charts[c].y_out, nullptr, nullptr, cfg,
                                epochs, &trace);
      }
      res.predictors.push_back(std::move(p));
      res.final_losses.push_back(final_loss);
      res.traces.push_back(std::move(trace));
    }
  } else {
    Predictor p = warm ? (*warm)[0]
                       : build_vector_predictor(spec, task.vectors->dim, 0, cfg.seed);
    std::vector<double> trace;
    const double final_loss = train_one_predictor(p, {}, {}, &task.vectors->X,
                                                  &task.vectors->y, cfg, epochs, &trace);
    res.predictors.push_back(std::move(p));
    res.final_losses.push_back(final_loss);
    res.traces.push_back(std::move(trace));
  }
  return res;
}

}  // namespace

TrainResult train_predictors(const TaskView& task, const PredictorSpec& spec,
                             const DiscoveryConfig& cfg) {
  task.validate();
  cfg.validate();
  return train_predictors_impl(task, spec, cfg, nullptr, cfg.predictor_epochs);
}

double equivariance_loss(const Predictor& predictor, const Tensor& g_elem, const Tensor& sample,
                         const ActionSpec& action, LossKind loss, bool strict_padding) {
  const double det = determinant(g_elem);
  if (std::abs(det) <= 1e-8) {
    throw std::invalid_argument("equivariance_loss: |det g| = " + std::to_string(std::abs(det)) +
                                " below singular guard");
  }
  Graph g;
  if (action.mode == ActionMode::FieldWarp) {
    std::vector<std::size_t> shape = sample.shape();
    shape.insert(shape.begin(), 1);
    const Tensor x_in(shape, sample.storage());
    const Tensor minv = inverse(g_elem);
    const std::vector<Tensor> one = {sample};
    const Tensor phi = predict_field_all(predictor, one, 1)[0];
    std::vector<std::size_t> pshape = phi.shape();
    pshape.insert(pshape.begin(), 1);
    const Tensor phi_b(pshape, phi.storage());
    Tensor mask;
    if (!strict_padding) mask = single_mask(minv, predictor.out_radius);
    const NodeId lnode =
        field_equi_loss_node(g, predictor, g.constant(x_in), g.constant(phi_b),
                             g.constant(minv), strict_padding ? nullptr : &mask, loss);
    return g.forward(lnode).value();
  }
  Tensor x = sample;
  if (x.ndim() == 1) x = Tensor({1, x.size()}, x.storage());
  const Tensor phi = predict_vectors_all(predictor, x);
  const NodeId lnode =
      vector_equi_loss_node(g, predictor, x, g.constant(phi), {g.constant(g_elem)},
                            action.mode, loss);
  return g.forward(lnode).value();
}

namespace {

struct FieldStage {
  std::vector<ChartData> charts;
  std::vector<std::vector<Tensor>> phi;  // [chart][sample] -> (C,So,So)
};

FieldStage prepare_field_stage(const std::vector<Predictor>& predictors, const TaskView& task,
                               std::size_t batch) {
  FieldStage st;
  st.charts = pull_charts(*task.field, *task.atlas);
  st.phi.resize(st.charts.size());
  for (std::size_t c = 0; c < st.charts.size(); ++c) {
    st.phi[c] = predict_field_all(predictors[c], st.charts[c].x_in, batch);
  }
  return st;
}

GeneratorResult discover_generators_impl(const std::vector<Predictor>& predictors,
                                         const TaskView& task, const DiscoveryConfig& cfg,
                                         const LieBasis* warm_start, std::size_t epochs) {
  if (cfg.k < 1) throw std::invalid_argument("discover_generators: need k >= 1");
  const std::size_t m = task.action.m;

  LieBasis basis;
  if (warm_start) {
    basis = *warm_start;
  } else {
    RngStream rng = RngStream(cfg.seed).child(kBasisLabel);
    basis = LieBasis::random(cfg.k, m, cfg.basis_init_scale, rng);
  }

  std::map<std::string, Tensor> store;
  for (std::size_t i = 0; i < cfg.k; ++i) store["B" + std::to_string(i)] = basis.matrices[i];
  OptimizerState opt;
  opt.config.learning_rate = cfg.lr_basis;

  FieldStage field_stage;
  Tensor phi_vec;
  if (task.field) {
    field_stage = prepare_field_stage(predictors, task, cfg.batch_size);
  } else {
    phi_vec = predict_vectors_all(predictors[0], task.vectors->X);
  }

  const std::size_t n = task.sample_count();
  RngStream shuffle_root = RngStream(cfg.seed).child(kShuffleLabel).child(0xB);
  RngStream eta_root = RngStream(cfg.seed).child(kEtaLabel);

  GeneratorResult res;
  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    RngStream rng = shuffle_root.child(epoch);
    const auto order = shuffled_indices(n, rng);
    double epoch_loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      std::vector<std::size_t> idx(order.begin() + start,
                                   order.begin() + std::min(n, start + cfg.batch_size));
      const std::size_t bsz = idx.size();
      Graph g;
      std::vector<NodeId> basis_nodes;
      for (std::size_t i = 0; i < cfg.k; ++i) {
        basis_nodes.push_back(g.parameter("B" + std::to_string(i), store["B" + std::to_string(i)]));
      }

      RngStream step_rng = eta_root.child(global_step);
      NodeId total = kNoNode;
      if (task.field) {
        // one warp matrix exp(-sum eta B) per sample; shared across charts
        std::vector<NodeId> minv_nodes;
        for (std::size_t s = 0; s < bsz; ++s) {
          RngStream srng = step_rng.child(s);
          std::vector<double> eta(cfg.k);
          for (auto& e : eta) e = -srng.next_normal();
          minv_nodes.push_back(g.reshape(group_element_node(g, basis_nodes, eta), {1, 2, 2}));
        }
        const NodeId minv_b =
            bsz == 1 ? g.reshape(minv_nodes[0], {1, 2, 2}) : g.concat(minv_nodes, 0);
        const Tensor& mv = g.forward(minv_b);
        for (std::size_t c = 0; c < field_stage.charts.size(); ++c) {
          const ChartData& cd = field_stage.charts[c];
          Tensor mask;
          const Tensor* mask_ptr = nullptr;
          if (!cfg.strict_padding) {
            mask = batch_masks(mv, cd.chart.out_radius);
            mask_ptr = &mask;
          }
          const NodeId x_in = g.constant(stack_batch(cd.x_in, idx));
          const NodeId phi = g.constant(stack_batch(field_stage.phi[c], idx));
          const NodeId closs =
              field_equi_loss_node(g, predictors[c], x_in, phi, minv_b, mask_ptr, cfg.loss);
          total = total == kNoNode ? closs : g.add(total, closs);
        }
      } else {
        std::vector<NodeId> g_nodes;
        for (std::size_t s = 0; s < bsz; ++s) {
          RngStream srng = step_rng.child(s);
          std::vector<double> eta(cfg.k);
          for (auto& e : eta) e = srng.next_normal();
          g_nodes.push_back(group_element_node(g, basis_nodes, eta));
        }
        const Tensor xb = gather_rows(task.vectors->X, idx);
        Tensor pb({bsz, 1});
        for (std::size_t s = 0; s < bsz; ++s) pb(s, 0) = phi_vec(idx[s], 0);
        total = vector_equi_loss_node(g, predictors[0], xb, g.constant(pb), g_nodes,
                                      task.action.mode, cfg.loss);
      }

      if (cfg.reg == RegKind::Sbr) {
        total = g.add(total, sbr_loss_node(g, basis_nodes, cfg.gamma));
      } else if (cfg.reg == RegKind::Cosine) {
        total = g.add(total, cosine_reg_node(g, basis_nodes, cfg.gamma));
      }
      total = g.add(total, growth_reg_node(g, basis_nodes, cfg.iota, cfg.beta));

      const double lv = g.forward(total).value();
      if (!std::isfinite(lv)) {
        throw std::runtime_error("discover_generators: non-finite loss at step " +
                                 std::to_string(global_step));
      }
      auto grads = g.backward(total);
      adam_step(opt, store, grads);
      epoch_loss += lv;
      ++steps;
      ++global_step;
    }
    res.trace.push_back(epoch_loss / static_cast<double>(steps));
  }

  res.basis.matrices.clear();
  for (std::size_t i = 0; i < cfg.k; ++i) {
    res.basis.matrices.push_back(store["B" + std::to_string(i)]);
  }
  return res;
}

}  // namespace

GeneratorResult discover_generators(const std::vector<Predictor>& predictors,
                                    const TaskView& task, const DiscoveryConfig& cfg) {
  task.validate();
  cfg.validate();
  return discover_generators_impl(predictors, task, cfg, nullptr, cfg.generator_epochs);
}

namespace {

double eval_coset_loss(const std::vector<Predictor>& predictors, const TaskView& task,
                       const FieldStage* field_stage, const Tensor& phi_vec,
                       const Tensor& g_elem, const std::vector<std::size_t>& heldout,
                       const DiscoveryConfig& cfg) {
  double total = 0.0;
  std::size_t chunks = 0;
  for (std::size_t start = 0; start < heldout.size(); start += cfg.batch_size) {
    std::vector<std::size_t> idx(heldout.begin() + start,
                                 heldout.begin() + std::min(heldout.size(),
                                                            start + cfg.batch_size));
    Graph g;
    NodeId loss = kNoNode;
    if (task.field) {
      const Tensor minv = inverse(g_elem);
      for (std::size_t c = 0; c < field_stage->charts.size(); ++c) {
        const ChartData& cd = field_stage->charts[c];
        Tensor mask;
        const Tensor* mask_ptr = nullptr;
        if (!cfg.strict_padding) {
          mask = single_mask(minv, cd.chart.out_radius);
          mask_ptr = &mask;
        }
        const NodeId x_in = g.constant(stack_batch(cd.x_in, idx));
        const NodeId phi = g.constant(stack_batch(field_stage->phi[c], idx));
        const NodeId closs = field_equi_loss_node(g, predictors[c], x_in, phi,
                                                  g.constant(minv), mask_ptr, cfg.loss);
        loss = loss == kNoNode ? closs : g.add(loss, closs);
      }
    } else {
      const Tensor xb = gather_rows(task.vectors->X, idx);
      Tensor pb({idx.size(), 1});
      for (std::size_t s = 0; s < idx.size(); ++s) pb(s, 0) = phi_vec(idx[s], 0);
      loss = vector_equi_loss_node(g, predictors[0], xb, g.constant(pb),
                                   {g.constant(g_elem)}, task.action.mode, cfg.loss);
    }
    total += g.forward(loss).value();
    ++chunks;
  }
  return total / static_cast<double>(chunks);
}

}  // namespace

CosetBank discover_cosets(const std::vector<Predictor>& predictors, const TaskView& task,
                          const LieBasis& basis, const DiscoveryConfig& cfg) {
  task.validate();
  cfg.validate();
  (void)basis;  // the basis enters at filtering time, not during optimization
  const std::size_t m = task.action.m;
  const std::size_t K = cfg.K;

  RngStream init_rng = RngStream(cfg.seed).child(kCosetLabel);
  std::map<std::string, Tensor> store;
  std::vector<bool> frozen(K, false);
  for (std::size_t l = 0; l < K; ++l) {
    Tensor c({m, m});
    do {
      for (auto& v : c.storage()) v = cfg.coset_init_scale * init_rng.next_normal();
    } while (std::abs(determinant(c)) < 0.1);  // avoid seeding next to the singular guard
    store["C" + std::to_string(l)] = std::move(c);
  }

  OptimizerState opt;
  opt.config.learning_rate = cfg.lr_cosets;

  FieldStage field_stage;
  Tensor phi_vec;
  if (task.field) {
    field_stage = prepare_field_stage(predictors, task, cfg.batch_size);
  } else {
    phi_vec = predict_vectors_all(predictors[0], task.vectors->X);
  }

  const std::size_t n = task.sample_count();
  RngStream shuffle_root = RngStream(cfg.seed).child(kShuffleLabel).child(0xC);

  for (std::size_t epoch = 0; epoch < cfg.coset_epochs; ++epoch) {
    RngStream rng = shuffle_root.child(epoch);
    const auto order = shuffled_indices(n, rng);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      std::vector<std::size_t> idx(order.begin() + start,
                                   order.begin() + std::min(n, start + cfg.batch_size));
      Graph g;
      NodeId total = kNoNode;
      std::vector<Tensor> minv_values;  // per live candidate, for masks
      for (std::size_t l = 0; l < K; ++l) {
        if (frozen[l]) continue;
        const std::string name = "C" + std::to_string(l);
        if (std::abs(determinant(store[name])) <= 1e-8) {
          frozen[l] = true;  // singular guard: freeze, do not fail the run
          continue;
        }
        const NodeId c = g.parameter(name, store[name]);
        const NodeId gl = cfg.normalize_cosets ? g.det_normalize(c) : c;
        NodeId closs = kNoNode;
        if (task.field) {
          const NodeId minv = g.matinv(gl);
          const Tensor& mv = g.forward(minv);
          for (std::size_t ch = 0; ch < field_stage.charts.size(); ++ch) {
            const ChartData& cd = field_stage.charts[ch];
            Tensor mask;
            const Tensor* mask_ptr = nullptr;
            if (!cfg.strict_padding) {
              mask = single_mask(mv, cd.chart.out_radius);
              mask_ptr = &mask;
            }
            const NodeId x_in = g.constant(stack_batch(cd.x_in, idx));
            const NodeId phi = g.constant(stack_batch(field_stage.phi[ch], idx));
            const NodeId t = field_equi_loss_node(g, predictors[ch], x_in, phi, minv,
                                                  mask_ptr, cfg.loss);
            closs = closs == kNoNode ? t : g.add(closs, t);
          }
        } else {
          const Tensor xb = gather_rows(task.vectors->X, idx);
          Tensor pb({idx.size(), 1});
          for (std::size_t s = 0; s < idx.size(); ++s) pb(s, 0) = phi_vec(idx[s], 0);
          closs = vector_equi_loss_node(g, predictors[0], xb, g.constant(pb), {gl},
                                        task.action.mode, cfg.loss);
        }
        total = total == kNoNode ? closs : g.add(total, closs);
      }
      if (total == kNoNode) break;  // everything frozen
      const double lv = g.forward(total).value();
      if (!std::isfinite(lv)) {
        throw std::runtime_error("discover_cosets: non-finite loss");
      }
      auto grads = g.backward(total);
      adam_step(opt, store, grads);
    }
  }

  // held-out ranking batch
  RngStream held_rng = RngStream(cfg.seed).child(kHeldoutLabel);
  const std::size_t h = std::min(cfg.heldout_samples, n);
  auto held_order = shuffled_indices(n, held_rng);
  held_order.resize(h);

  CosetBank bank;
  bank.matrices.reserve(K);
  for (std::size_t l = 0; l < K; ++l) {
    const Tensor& raw = store["C" + std::to_string(l)];
    bool degenerate = frozen[l] || std::abs(determinant(raw)) <= 1e-8;
    Tensor g_elem = raw;
    if (!degenerate && cfg.normalize_cosets) g_elem = normalize_coset(raw);
    double loss = std::numeric_limits<double>::infinity();
    if (!degenerate) {
      loss = eval_coset_loss(predictors, task, task.field ? &field_stage : nullptr, phi_vec,
                             g_elem, held_order, cfg);
    }
    bank.matrices.push_back(std::move(g_elem));
    bank.losses.push_back(loss);
    bank.degenerate.push_back(degenerate);
  }
  return bank;
}

std::vector<std::size_t> filter_duplicate_coset_indices(const CosetBank& bank,
                                                        const LieBasis& basis, std::size_t q,
                                                        double epsilon) {
  if (q > bank.size()) q = bank.size();
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    if (!bank.degenerate.empty() && bank.degenerate[i]) continue;
    order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (bank.losses[a] != bank.losses[b]) return bank.losses[a] < bank.losses[b];
    return a < b;  // ties broken by candidate index
  });
  if (order.size() > q) order.resize(q);

  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    const Tensor& ci = bank.matrices[i];
    bool duplicate = false;
    for (std::size_t j : kept) {
      const Tensor quotient = matmul(ci, inverse(bank.matrices[j]));
      if (component_distance(quotient, basis) <= epsilon) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) kept.push_back(i);
  }
  return kept;
}

std::vector<Tensor> filter_duplicate_cosets(const CosetBank& bank, const LieBasis& basis,
                                            std::size_t q, double epsilon) {
  std::vector<Tensor> kept;
  for (std::size_t i : filter_duplicate_coset_indices(bank, basis, q, epsilon)) {
    kept.push_back(bank.matrices[i]);
  }
  return kept;
}

DimensionReport select_basis_dimension(const std::vector<Predictor>& predictors,
                                       const TaskView& task, std::size_t k_max,
                                       std::size_t runs_per_k, const DiscoveryConfig& cfg) {
  if (k_max < 1 || runs_per_k < 2) {
    throw std::invalid_argument("select_basis_dimension: need k_max >= 1, runs_per_k >= 2");
  }
  task.validate();
  const double angle_limit_deg = 15.0;
  const double weak_ratio = 0.1;

  DimensionReport report;
  for (std::size_t k = 1; k <= k_max; ++k) {
    DimensionStats stats;
    stats.k = k;
    for (std::size_t run = 0; run < runs_per_k; ++run) {
      DiscoveryConfig run_cfg = cfg;
      run_cfg.k = k;
      run_cfg.seed = RngStream(cfg.seed).child(kSelectLabel).child(k).child(run).next_u64();
      stats.runs.push_back(
          discover_generators_impl(predictors, task, run_cfg, nullptr, cfg.generator_epochs)
              .basis);
    }
    const std::size_t m2 = task.action.m * task.action.m;
    auto vectorize = [&](const LieBasis& b) {
      Tensor v({m2, b.k()});
      for (std::size_t j = 0; j < b.k(); ++j)
        for (std::size_t i = 0; i < m2; ++i) v(i, j) = b.matrices[j][i];
      return v;
    };
    double worst = 0.0;
    for (std::size_t a = 0; a < stats.runs.size(); ++a) {
      for (std::size_t b = a + 1; b < stats.runs.size(); ++b) {
        const double ang =
            largest_principal_angle(vectorize(stats.runs[a]), vectorize(stats.runs[b]));
        worst = std::max(worst, ang * 180.0 / std::numbers::pi);
      }
    }
    stats.max_pairwise_angle_deg = worst;
    double ratio = 1.0;
    for (const LieBasis& b : stats.runs) {
      double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
      for (const Tensor& t : b.matrices) {
        const double norm = t.frobenius_norm();
        lo = std::min(lo, norm);
        hi = std::max(hi, norm);
      }
      if (hi > 0.0) ratio = std::min(ratio, lo / hi);
    }
    stats.weakest_norm_ratio = ratio;
    report.per_k.push_back(std::move(stats));
  }

  for (const DimensionStats& s : report.per_k) {
    if (report.consistent_k == 0 && s.max_pairwise_angle_deg <= angle_limit_deg) {
      report.consistent_k = s.k;
    }
    if (report.weak_k == 0 && s.weakest_norm_ratio < weak_ratio) report.weak_k = s.k;
  }
  if (report.consistent_k == 0) {
    report.recommended_k = 0;
    report.rationale = "no stable dimension <= " + std::to_string(k_max) +
                       ": runs disagree at every k";
  } else if (report.weak_k > report.consistent_k) {
    report.recommended_k = report.weak_k - 1;
    report.rationale = "consistent from k=" + std::to_string(report.consistent_k) +
                       "; weakest generator collapses at k=" + std::to_string(report.weak_k);
  } else {
    report.recommended_k = report.consistent_k;
    report.rationale = "consistent from k=" + std::to_string(report.consistent_k) +
                       "; no weak generator up to k_max";
  }
  return report;
}

DiscoveryResult run_discovery(const TaskView& task, const PredictorSpec& spec,
                              const DiscoveryConfig& cfg) {
  task.validate();
  cfg.validate();
  DiscoveryResult out;

  if (cfg.interleave && cfg.k >= 1) {
    // tandem mode: alternate one predictor epoch with one discovery epoch
    std::vector<Predictor> warm;
    LieBasis basis;
    bool have_basis = false;
    const std::size_t rounds = std::max(cfg.predictor_epochs, cfg.generator_epochs);
    TrainResult tr;
    for (std::size_t round = 0; round < rounds; ++round) {
      tr = train_predictors_impl(task, spec, cfg, round == 0 ? nullptr : &warm, 1);
      warm = tr.predictors;
      GeneratorResult gr =
          discover_generators_impl(warm, task, cfg, have_basis ? &basis : nullptr, 1);
      basis = gr.basis;
      have_basis = true;
      out.generator_trace.push_back(gr.trace.back());
    }
    out.predictors = warm;
    out.predictor_losses = tr.final_losses;
    out.predictor_traces = tr.traces;
    out.basis = basis;
  } else {
    TrainResult tr = train_predictors_impl(task, spec, cfg, nullptr, cfg.predictor_epochs);
    out.predictors = tr.predictors;
    out.predictor_losses = tr.final_losses;
    out.predictor_traces = tr.traces;
    if (cfg.k >= 1) {
      GeneratorResult gr =
          discover_generators_impl(out.predictors, task, cfg, nullptr, cfg.generator_epochs);
      out.basis = gr.basis;
      out.generator_trace = gr.trace;
    }
  }

  if (cfg.K >= 1) {
    out.bank = discover_cosets(out.predictors, task, out.basis, cfg);
    const auto kept = filter_duplicate_coset_indices(out.bank, out.basis, cfg.q, cfg.epsilon);
    for (std::size_t i : kept) {
      out.unique_cosets.push_back(out.bank.matrices[i]);
      out.unique_losses.push_back(out.bank.losses[i]);
      out.unique_dets.push_back(determinant(out.bank.matrices[i]));
    }
  }

  if (cfg.compute_metric && out.basis.k() >= 1) {
    out.metric = invariant_metric(out.basis);
  }
  return out;
}

}  // namespace localsym
