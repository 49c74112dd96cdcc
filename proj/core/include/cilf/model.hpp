#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "cilf/rng.hpp"
#include "cilf/tensor.hpp"

namespace cilf {

enum class ArchKind { Mlp, SmallConv };

/// Feature extractor layout.
///  Mlp:       flatten -> dense(hidden[0]) -> relu -> ... -> dense(feature_dim)
///  SmallConv: conv3x3(conv_channels[0]) -> relu -> avgpool2 -> conv3x3(conv_channels[1]) -> relu -> avgpool2
///             -> flatten -> dense(feature_dim)
struct ArchSpec {
  ArchKind kind = ArchKind::Mlp;
  std::size_t channels = 1;
  std::size_t side = 16;
  std::vector<std::size_t> hidden = {128, 128};
  std::vector<std::size_t> conv_channels = {8, 16};
  std::size_t feature_dim = 64;

  void validate() const;
};

std::string arch_name(ArchKind kind);
ArchKind parse_arch(const std::string& name);

using NamedParams = std::vector<std::pair<std::string, Tensor*>>;

class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(ArchSpec arch, Rng& rng);

  const ArchSpec& arch() const noexcept { return arch_; }
  std::size_t feature_dim() const noexcept { return arch_.feature_dim; }

  /// Records the forward pass with weights as tape parameters.
  Var forward(Tape& tape, Var input);
  /// Records the forward pass with weights as constants (no gradient).
  Var forward_frozen(Tape& tape, Var input) const;
  /// Tape-free inference: [B×C×S×S] -> [B×d].
  Tensor extract(const Tensor& batch) const;

  NamedParams named_parameters();
  std::vector<Tensor*> parameters();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;

  bool operator==(const FeatureExtractor& other) const;

 private:
  void check_input(const Tensor& batch) const;
  template <typename Bind>
  Var forward_impl(Var input, Bind bind) const;

  ArchSpec arch_;
  // MLP: weights[i] is [in×out], biases[i] is [out]. SmallConv: conv kernels
  // first (no bias), then the final dense layer.
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
  std::vector<Tensor> kernels_;
};

/// Unified linear classifier over `views_per_class`·(seen classes) nodes.
/// Node id for class c and view v is views_per_class·c + v.
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(std::size_t feature_dim, std::size_t views_per_class);

  std::size_t feature_dim() const noexcept { return feature_dim_; }
  std::size_t views_per_class() const noexcept { return views_; }
  std::size_t num_nodes() const noexcept { return num_nodes_; }
  std::size_t num_classes() const noexcept { return num_nodes_ / views_; }

  /// logits = z·φᵀ + b, with φ and b as tape parameters.
  Var forward(Tape& tape, Var features);
  Var forward_frozen(Tape& tape, Var features) const;
  Tensor classify(const Tensor& features) const;

  /// Appends views·count rows drawn from N(0, 0.01²) with zero biases.
  /// Existing rows are untouched.
  void expand(std::size_t new_classes, Rng& rng);

  const Tensor& weight() const noexcept { return weight_; }
  const Tensor& bias() const noexcept { return bias_; }
  Tensor& weight() noexcept { return weight_; }
  Tensor& bias() noexcept { return bias_; }

  NamedParams named_parameters();
  std::vector<Tensor*> parameters();

  /// Restores from stored arrays (checkpoint loading).
  void assign(Tensor weight, Tensor bias);

 private:
  Var affine(Var features, Var weight, Var bias) const;

  std::size_t feature_dim_ = 0;
  std::size_t views_ = 1;
  std::size_t num_nodes_ = 0;
  Tensor weight_;  // [nodes×d], empty until the first expansion
  Tensor bias_;    // [nodes]
};

/// Frozen copy of an extractor. Never participates in gradient updates.
class ModelSnapshot {
 public:
  explicit ModelSnapshot(const FeatureExtractor& source) : extractor_(source) {}

  Tensor extract(const Tensor& batch) const { return extractor_.extract(batch); }
  const FeatureExtractor& extractor() const noexcept { return extractor_; }

 private:
  FeatureExtractor extractor_;
};

struct IncrementalModel {
  FeatureExtractor extractor;
  ClassifierHead head;

  IncrementalModel() = default;
  IncrementalModel(const ArchSpec& arch, std::size_t views_per_class, Rng& rng)
      : extractor(arch, rng), head(arch.feature_dim, views_per_class) {}

  ModelSnapshot snapshot() const { return ModelSnapshot(extractor); }
  /// Extractor then head parameters, in a fixed order.
  std::vector<Tensor*> parameters();
};

}  // namespace cilf
