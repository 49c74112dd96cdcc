#include "cilf/prototype_memory.hpp"

#include <algorithm>
#include <cmath>

#include "cilf/errors.hpp"

namespace cilf {
namespace {

struct ClassMoments {
  std::size_t count = 0;
  std::vector<double> sum;
};

void check_features(const Tensor& features, std::span<const std::size_t> labels) {
  if (features.rank() != 2) throw DimensionError("features must be [N×d], got " + shape_string(features.shape()));
  if (features.dim(0) != labels.size()) {
    throw DimensionError(std::to_string(labels.size()) + " labels for " + std::to_string(features.dim(0)) +
                         " feature rows");
  }
}

// Per class: trace of the biased covariance, n_k.
std::map<std::size_t, std::pair<double, std::size_t>> class_traces(const Tensor& features,
                                                                  std::span<const std::size_t> labels) {
  const auto means = compute_prototypes(features, labels);
  const std::size_t d = features.dim(1);
  std::map<std::size_t, std::pair<double, std::size_t>> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& mu = means.at(labels[i]);
    auto& [acc, n] = out[labels[i]];
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = features[i * d + j] - mu[j];
      acc += diff * diff;
    }
    ++n;
  }
  for (auto& [k, v] : out) v.first /= double(v.second);
  return out;
}

}  // namespace

std::string covariance_name(CovarianceMode mode) {
  switch (mode) {
    case CovarianceMode::Radius: return "radius";
    case CovarianceMode::Diagonal: return "diag";
    case CovarianceMode::Full: return "full";
  }
  return "radius";
}

CovarianceMode parse_covariance(const std::string& name) {
  if (name == "radius") return CovarianceMode::Radius;
  if (name == "diag") return CovarianceMode::Diagonal;
  if (name == "full") return CovarianceMode::Full;
  throw ConfigError("unknown covariance mode '" + name + "' (expected radius, diag or full)");
}

VectorMap compute_prototypes(const Tensor& features, std::span<const std::size_t> labels) {
  check_features(features, labels);
  const std::size_t d = features.dim(1);
  std::map<std::size_t, ClassMoments> acc;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& m = acc[labels[i]];
    if (m.sum.empty()) m.sum.assign(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) m.sum[j] += features[i * d + j];
    ++m.count;
  }
  VectorMap out;
  for (auto& [k, m] : acc) {
    for (auto& v : m.sum) v /= double(m.count);
    out.emplace(k, std::move(m.sum));
  }
  return out;
}

RadiusEstimate compute_radius_first_task(const Tensor& features, std::span<const std::size_t> labels) {
  check_features(features, labels);
  const std::size_t d = features.dim(1);
  RadiusEstimate est;
  bool any_multi = false;
  for (const auto& [k, tr] : class_traces(features, labels)) {
    est.trace_sum += tr.first;
    ++est.classes;
    any_multi = any_multi || tr.second >= 2;
  }
  est.degenerate = !any_multi;
  if (est.classes > 0) est.radius = std::sqrt(est.trace_sum / (double(est.classes) * double(d)));
  return est;
}

double update_radius_running(double previous_radius, std::size_t old_classes, const Tensor& new_features,
                             std::span<const std::size_t> new_labels) {
  check_features(new_features, new_labels);
  const std::size_t d = new_features.dim(1);
  double trace_sum = 0.0;
  std::size_t new_classes = 0;
  for (const auto& [k, tr] : class_traces(new_features, new_labels)) {
    trace_sum += tr.first;
    ++new_classes;
  }
  const double total = double(old_classes + new_classes);
  if (total == 0.0) return previous_radius;
  const double r2 = (double(old_classes) * previous_radius * previous_radius + trace_sum / double(d)) / total;
  return std::sqrt(r2);
}

CovarianceEstimate estimate_covariance(const Tensor& features, std::span<const std::size_t> labels,
                                       CovarianceMode mode) {
  check_features(features, labels);
  CovarianceEstimate est;
  est.mode = mode;
  if (mode == CovarianceMode::Radius) return est;

  const std::size_t d = features.dim(1);
  const auto means = compute_prototypes(features, labels);
  std::map<std::size_t, std::size_t> counts;
  for (auto y : labels) ++counts[y];

  for (const auto& [k, mu] : means) {
    const bool full = mode == CovarianceMode::Full && counts[k] >= 2;
    if (mode == CovarianceMode::Full && !full) est.fallbacks.push_back(k);
    est.values[k].assign(full ? d * d : d, 0.0);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& mu = means.at(labels[i]);
    auto& cov = est.values[labels[i]];
    const double* x = features.data().data() + i * d;
    if (cov.size() == d * d && d > 1) {
      for (std::size_t a = 0; a < d; ++a) {
        const double da = x[a] - mu[a];
        for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += da * (x[b] - mu[b]);
      }
    } else {
      for (std::size_t a = 0; a < d; ++a) cov[a] += (x[a] - mu[a]) * (x[a] - mu[a]);
    }
  }
  for (auto& [k, cov] : est.values) {
    const double n = double(counts[k]);
    for (auto& v : cov) v /= n;
    if (cov.size() == d * d && d > 1) {
      for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = a + 1; b < d; ++b) {
          const double sym = 0.5 * (cov[a * d + b] + cov[b * d + a]);
          cov[a * d + b] = sym;
          cov[b * d + a] = sym;
        }
        cov[a * d + a] = std::max(cov[a * d + a], 0.0);
      }
    } else {
      for (auto& v : cov) v = std::max(v, 0.0);
    }
  }
  if (mode == CovarianceMode::Full && !est.fallbacks.empty()) {
    // Singleton classes: expand their diagonal to a d×d matrix so storage is uniform.
    for (auto k : est.fallbacks) {
      auto& cov = est.values[k];
      if (cov.size() == d * d) continue;
      std::vector<double> dense(d * d, 0.0);
      for (std::size_t a = 0; a < d; ++a) dense[a * d + a] = cov[a];
      cov = std::move(dense);
    }
  }
  return est;
}

// ---------------------------------------------------------------------------

PrototypeMemory::PrototypeMemory(std::size_t feature_dim, CovarianceMode mode) : feature_dim_(feature_dim), mode_(mode) {
  if (feature_dim == 0) throw ConfigError("prototype memory needs d >= 1");
}

void PrototypeMemory::set_radius(double r) {
  if (!(r >= 0.0) || !std::isfinite(r)) throw ArgumentError("radius must be finite and non-negative");
  radius_ = r;
}

std::vector<std::size_t> PrototypeMemory::nodes() const {
  std::vector<std::size_t> out;
  out.reserve(prototypes_.size());
  for (const auto& [k, v] : prototypes_) out.push_back(k);
  return out;
}

std::span<const double> PrototypeMemory::prototype(std::size_t node) const {
  auto it = prototypes_.find(node);
  if (it == prototypes_.end()) throw IndexError("no prototype stored for class node " + std::to_string(node));
  return it->second;
}

std::span<const double> PrototypeMemory::covariance(std::size_t node) const {
  if (mode_ == CovarianceMode::Radius) return {};
  auto it = covariances_.find(node);
  if (it == covariances_.end()) throw IndexError("no covariance stored for class node " + std::to_string(node));
  return it->second;
}

std::vector<double> PrototypeMemory::dense_covariance(std::size_t node) const {
  const std::size_t d = feature_dim_;
  std::vector<double> out(d * d, 0.0);
  switch (mode_) {
    case CovarianceMode::Radius:
      for (std::size_t a = 0; a < d; ++a) out[a * d + a] = radius_ * radius_;
      break;
    case CovarianceMode::Diagonal: {
      const auto diag = covariance(node);
      for (std::size_t a = 0; a < d; ++a) out[a * d + a] = diag[a];
      break;
    }
    case CovarianceMode::Full: {
      const auto full = covariance(node);
      std::copy(full.begin(), full.end(), out.begin());
      break;
    }
  }
  return out;
}

void PrototypeMemory::commit(const VectorMap& prototypes, const VectorMap& covariances) {
  const std::size_t d = feature_dim_;
  const std::size_t cov_len = mode_ == CovarianceMode::Full ? d * d : d;
  for (const auto& [k, mu] : prototypes) {
    if (contains(k)) throw ProtocolError("class node " + std::to_string(k) + " already has a stored prototype");
    if (mu.size() != d) throw DimensionError("prototype of length " + std::to_string(mu.size()) + ", expected " + std::to_string(d));
    if (mode_ != CovarianceMode::Radius) {
      auto it = covariances.find(k);
      if (it == covariances.end()) throw PreconditionError("missing covariance for class node " + std::to_string(k));
      if (it->second.size() != cov_len) throw DimensionError("covariance summary has the wrong length");
    }
  }
  for (const auto& [k, mu] : prototypes) {
    prototypes_.emplace(k, mu);
    if (mode_ != CovarianceMode::Radius) covariances_.emplace(k, covariances.at(k));
  }
}

std::size_t PrototypeMemory::entry_count() const {
  const std::size_t n = prototypes_.size();
  const std::size_t d = feature_dim_;
  std::size_t entries = n * d + 1;
  if (mode_ == CovarianceMode::Diagonal) entries += n * d;
  if (mode_ == CovarianceMode::Full) entries += n * d * d;
  return entries;
}

}  // namespace cilf
