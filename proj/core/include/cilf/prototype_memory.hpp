#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cilf/tensor.hpp"

namespace cilf {

enum class CovarianceMode { Radius, Diagonal, Full };

std::string covariance_name(CovarianceMode mode);
CovarianceMode parse_covariance(const std::string& name);

/// class-node id -> vector (prototype, diagonal, or row-major d×d matrix).
using VectorMap = std::map<std::size_t, std::vector<double>>;

/// Per-class arithmetic means of `features` [N×d]. Classes without samples
/// are absent from the result.
VectorMap compute_prototypes(const Tensor& features, std::span<const std::size_t> labels);

struct RadiusEstimate {
  double radius = 0.0;
  /// Sum of tr(Σ_k) over the classes seen and the number of classes.
  double trace_sum = 0.0;
  std::size_t classes = 0;
  /// Set when every class had a single sample (r is then 0).
  bool degenerate = false;
};

/// r² = (1/(|C|·d)) Σ_k tr(Σ_k) with biased (1/n_k) per-class covariance.
RadiusEstimate compute_radius_first_task(const Tensor& features, std::span<const std::size_t> labels);

/// r_t² = (|C_old|·r_{t-1}² + (1/d)·Σ_{k new} tr(Σ_k)) / (|C_old| + |C_new|).
double update_radius_running(double previous_radius, std::size_t old_classes, const Tensor& new_features,
                             std::span<const std::size_t> new_labels);

struct CovarianceEstimate {
  CovarianceMode mode = CovarianceMode::Radius;
  /// Diagonal: d variances per class. Full: d×d row-major per class. Radius: empty.
  VectorMap values;
  /// Classes where full mode fell back to the diagonal (n_k < 2).
  std::vector<std::size_t> fallbacks;
};

/// Biased per-class covariance, symmetrized, with negative diagonal entries clamped to 0.
CovarianceEstimate estimate_covariance(const Tensor& features, std::span<const std::size_t> labels,
                                       CovarianceMode mode);

/// Prototypes μ_k and covariance summaries for every class node committed so
/// far. Append-only across stages.
class PrototypeMemory {
 public:
  PrototypeMemory() = default;
  PrototypeMemory(std::size_t feature_dim, CovarianceMode mode);

  std::size_t feature_dim() const noexcept { return feature_dim_; }
  CovarianceMode mode() const noexcept { return mode_; }
  double radius() const noexcept { return radius_; }
  void set_radius(double r);

  bool empty() const noexcept { return prototypes_.empty(); }
  std::size_t size() const noexcept { return prototypes_.size(); }
  bool contains(std::size_t node) const { return prototypes_.count(node) != 0; }
  std::vector<std::size_t> nodes() const;

  const VectorMap& prototypes() const noexcept { return prototypes_; }
  std::span<const double> prototype(std::size_t node) const;
  /// Stored diagonal (Diagonal) or d×d matrix (Full); empty span in Radius mode.
  std::span<const double> covariance(std::size_t node) const;
  /// Σ_k as a dense d×d matrix, whatever the storage mode (Radius -> r²·I).
  std::vector<double> dense_covariance(std::size_t node) const;

  /// Adds new class nodes. Throws ProtocolError if a node already exists.
  /// `covariances` must cover every new node unless the mode is Radius.
  void commit(const VectorMap& prototypes, const VectorMap& covariances = {});

  /// Stored floats: nodes·d prototypes + 1 radius, plus nodes·d (Diagonal)
  /// or nodes·d² (Full) covariance entries.
  std::size_t entry_count() const;

 private:
  std::size_t feature_dim_ = 0;
  CovarianceMode mode_ = CovarianceMode::Radius;
  double radius_ = 0.0;
  VectorMap prototypes_;
  VectorMap covariances_;
};

}  // namespace cilf
