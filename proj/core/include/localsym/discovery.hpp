#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "localsym/geometry.hpp"
#include "localsym/lie.hpp"
#include "localsym/tasks.hpp"

namespace localsym {

enum class LossKind { Mse, Mae };
enum class RegKind { Sbr, Cosine, None };

LossKind loss_kind_from_string(const std::string& s);
RegKind reg_kind_from_string(const std::string& s);
std::string to_string(LossKind k);
std::string to_string(RegKind k);

struct DiscoveryConfig {
  std::size_t k = 1;        // generator count
  std::size_t K = 16;       // coset candidates
  std::size_t q = 8;        // top cosets kept before duplicate filtering
  double epsilon = 0.3;     // duplicate threshold (Frobenius)
  double gamma = 0.1;       // sbr / cosine weight
  double iota = 0.1;        // growth factor
  double beta = 1.0;        // growth limit
  RegKind reg = RegKind::Sbr;
  bool normalize_cosets = true;
  bool strict_padding = false;  // compare full zero-padded patches, no mask
  bool interleave = false;      // train predictors in tandem with discovery
  std::size_t predictor_epochs = 10;
  std::size_t generator_epochs = 10;
  std::size_t coset_epochs = 10;
  std::size_t batch_size = 32;
  double lr_predictor = 1e-3;
  double lr_basis = 1e-3;
  double lr_cosets = 1e-3;
  LossKind loss = LossKind::Mae;
  std::size_t heldout_samples = 256;  // coset ranking batch
  double basis_init_scale = 0.1;
  double coset_init_scale = 1.0;
  bool compute_metric = false;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One experiment's data plus the way the group acts on it. Vector-mode
/// tasks are global-symmetry problems expressed as a single trivial chart.
struct TaskView {
  ActionSpec action;
  const FieldDataset* field = nullptr;
  const Atlas* atlas = nullptr;
  const VectorDataset* vectors = nullptr;

  static TaskView field_task(const FieldDataset& ds, const Atlas& atlas);
  static TaskView vector_task(const VectorDataset& ds,
                              ActionMode mode = ActionMode::VectorLinearInvariant);

  std::size_t sample_count() const;
  void validate() const;
};

struct TrainResult {
  std::vector<Predictor> predictors;
  std::vector<double> final_losses;            // per chart
  std::vector<std::vector<double>> traces;     // per chart, per epoch
};

/// Step 1: fit one localized predictor per chart (oracles skip training).
TrainResult train_predictors(const TaskView& task, const PredictorSpec& spec,
                             const DiscoveryConfig& cfg);

/// Equivariance error of one predictor for one group element and sample.
/// FieldWarp compares Phi(g.x) with g.Phi(x) on the masked out-radius crop;
/// invariant vector mode compares Phi(g.x) with Phi(x).
double equivariance_loss(const Predictor& predictor, const Tensor& g, const Tensor& sample,
                         const ActionSpec& action, LossKind loss, bool strict_padding = false);

struct GeneratorResult {
  LieBasis basis;
  std::vector<double> trace;  // mean total loss per epoch
};

/// Step 2: optimize the Lie algebra basis until the predictors are
/// equivariant to sampled one-parameter elements.
GeneratorResult discover_generators(const std::vector<Predictor>& predictors,
                                    const TaskView& task, const DiscoveryConfig& cfg);

/// Step 3: independently optimize K coset candidates; losses in the returned
/// bank are evaluated on a fixed held-out batch.
CosetBank discover_cosets(const std::vector<Predictor>& predictors, const TaskView& task,
                          const LieBasis& basis, const DiscoveryConfig& cfg);

/// Keep the top q candidates by loss, then greedily drop any candidate whose
/// quotient against a kept one lies in the identity component (distance <= eps).
std::vector<Tensor> filter_duplicate_cosets(const CosetBank& bank, const LieBasis& basis,
                                            std::size_t q, double epsilon);
std::vector<std::size_t> filter_duplicate_coset_indices(const CosetBank& bank,
                                                        const LieBasis& basis, std::size_t q,
                                                        double epsilon);

struct DimensionStats {
  std::size_t k = 0;
  double max_pairwise_angle_deg = 0.0;  // subspace consistency across runs
  double weakest_norm_ratio = 1.0;      // min_i ||B_i|| / max_i ||B_i||, worst run
  std::vector<LieBasis> runs;
};

struct DimensionReport {
  std::vector<DimensionStats> per_k;
  std::size_t consistent_k = 0;   // smallest k with all pairwise angles <= 15 deg (0: none)
  std::size_t weak_k = 0;         // first k whose weakest generator falls below 0.1*max (0: none)
  std::size_t recommended_k = 0;  // 0: no stable dimension <= k_max
  std::string rationale;
};

/// Repeated generator discovery across k = 1..k_max with runs_per_k seeds;
/// recommends the basis dimension from subspace consistency plus the
/// weakest-generator-norm rule.
DimensionReport select_basis_dimension(const std::vector<Predictor>& predictors,
                                       const TaskView& task, std::size_t k_max,
                                       std::size_t runs_per_k, const DiscoveryConfig& cfg);

struct DiscoveryResult {
  LieBasis basis;
  std::vector<double> generator_trace;
  CosetBank bank;
  std::vector<Tensor> unique_cosets;
  std::vector<double> unique_losses;
  std::vector<double> unique_dets;
  std::vector<Predictor> predictors;
  std::vector<double> predictor_losses;
  std::vector<std::vector<double>> predictor_traces;
  std::optional<InvariantMetric> metric;
};

/// Steps 1-3 plus filtering (and optionally the invariant metric) in order.
DiscoveryResult run_discovery(const TaskView& task, const PredictorSpec& spec,
                              const DiscoveryConfig& cfg);

}  // namespace localsym
