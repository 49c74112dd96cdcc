#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cilf/model.hpp"
#include "cilf/prototype_memory.hpp"
#include "cilf/rng.hpp"
#include "cilf/tensor.hpp"

namespace cilf {

enum class ProtoSource : std::uint8_t { Gaussian, Hardness };

/// Pseudo-features of old class nodes, row-major [count×dim].
struct ProtoBatch {
  std::size_t dim = 0;
  std::vector<double> features;
  std::vector<std::size_t> labels;
  std::vector<ProtoSource> sources;

  std::size_t count() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  std::span<const double> row(std::size_t i) const { return std::span<const double>(features).subspan(i * dim, dim); }
  /// [count×dim] tensor; requires a non-empty batch.
  Tensor to_tensor() const;
  void append(const ProtoBatch& other);
};

struct LossWeights {
  double alpha = 10.0;   // prototype augmentation
  double beta = 10.0;    // feature distillation
  double gamma = 1.0;    // implicit augmentation strength
  double lambda = 0.7;   // hardness mix coefficient

  void validate() const;
};

/// Uniformly drawn (with replacement) stored class nodes, each row μ_k + r·e
/// with e ~ N(0, I). Diagonal/Full memories scale e by the stored covariance
/// (sqrt of variances / Cholesky factor) instead of r.
ProtoBatch sample_proto_batch(const PrototypeMemory& memory, std::size_t count, Rng& rng);

/// 1 - cosine similarity. Requires both vectors to be non-zero.
double cosine_distance(std::span<const double> a, std::span<const double> b);

/// Index of the row of `features` [B×d] with minimum cosine distance to
/// `target`, skipping zero-norm rows; ties go to the lowest index.
std::optional<std::size_t> nearest_by_cosine(std::span<const double> target, const Tensor& features);

struct HardnessResult {
  ProtoBatch batch;
  /// Rows of the minibatch excluded for having zero norm.
  std::size_t excluded_rows = 0;
  /// Set when no usable new feature existed (batch is empty).
  bool no_usable_features = false;
};

/// For each stored class node k (all views, or only view-0 nodes when
/// `view0_only`), mixes λ·μ_k + (1-λ)·z* with z* the cosine-nearest row of
/// `new_features`, labelled k.
HardnessResult hardness_instances(const PrototypeMemory& memory, const Tensor& new_features, double lambda,
                                  bool view0_only = false, std::size_t views_per_class = 1);

/// Mean cross-entropy of the head over the pseudo-features.
Var explicit_protoaug_loss(Tape& tape, ClassifierHead& head, const ProtoBatch& batch);

/// Closed-form upper bound of the expected cross-entropy over
/// z ~ N(μ_k, γΣ_k), averaged over the stored nodes (or `nodes` if given):
///   ℓ_c = φ_cᵀμ_k + b_c + (γ/2)(φ_c - φ_k)ᵀ Σ_k (φ_c - φ_k).
Var implicit_protoaug_loss(Tape& tape, ClassifierHead& head, const PrototypeMemory& memory, double gamma,
                           std::span<const std::size_t> nodes = {});

/// The augmented logits of implicit_protoaug_loss as a differentiable op of
/// the head weight [C×d] and bias [C]; row r belongs to nodes[r].
Var implicit_logits(Var weight, Var bias, const PrototypeMemory& memory, double gamma,
                    std::span<const std::size_t> nodes);

/// Batch mean of ‖f_old(x) - f_new(x)‖ (or its square with `squared`). The
/// snapshot branch is a constant. Throws PreconditionError without a snapshot.
Var kd_feature_loss(Tape& tape, Var current_features, const ModelSnapshot* snapshot, const Tensor& batch,
                    bool squared = false);
/// Same, with precomputed snapshot features.
Var kd_feature_loss(Tape& tape, Var current_features, const Tensor& snapshot_features, bool squared = false);

struct LossParts {
  Var new_loss;
  std::optional<Var> old_loss;
  std::optional<Var> kd_loss;
};

/// L_new + α·L_old + β·L_kd from stage 2 on; L_new alone at stage 1.
Var total_loss(const LossParts& parts, const LossWeights& weights, std::size_t stage);

}  // namespace cilf
