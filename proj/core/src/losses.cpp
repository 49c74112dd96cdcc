#include "cilf/losses.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "cilf/errors.hpp"

namespace cilf {
namespace {

// Lower Cholesky factor of a PSD matrix; a small diagonal jitter is added
// until the factorization succeeds.
std::vector<double> cholesky_psd(std::span<const double> a, std::size_t d) {
  double jitter = 0.0;
  for (int attempt = 0; attempt < 8; ++attempt) {
    std::vector<double> l(d * d, 0.0);
    bool ok = true;
    for (std::size_t i = 0; i < d && ok; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double s = a[i * d + j] + (i == j ? jitter : 0.0);
        for (std::size_t k = 0; k < j; ++k) s -= l[i * d + k] * l[j * d + k];
        if (i == j) {
          if (s < 0.0 && s > -1e-12) s = 0.0;
          if (s < 0.0) {
            ok = false;
            break;
          }
          l[i * d + i] = std::sqrt(s);
        } else {
          l[i * d + j] = l[j * d + j] > 0.0 ? s / l[j * d + j] : 0.0;
        }
      }
    }
    if (ok) return l;
    jitter = jitter == 0.0 ? 1e-10 : jitter * 100.0;
  }
  throw ArgumentError("covariance is not positive semi-definite");
}

}  // namespace

Tensor ProtoBatch::to_tensor() const {
  if (empty()) throw DimensionError("empty proto batch has no tensor form");
  return Tensor({count(), dim}, features);
}

void ProtoBatch::append(const ProtoBatch& other) {
  if (other.empty()) return;
  if (dim == 0) dim = other.dim;
  if (other.dim != dim) throw DimensionError("proto batch dimension mismatch");
  features.insert(features.end(), other.features.begin(), other.features.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  sources.insert(sources.end(), other.sources.begin(), other.sources.end());
}

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0)) throw ArgumentError("alpha, beta and gamma must be >= 0");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ArgumentError("lambda must lie in [0, 1]");
}

ProtoBatch sample_proto_batch(const PrototypeMemory& memory, std::size_t count, Rng& rng) {
  if (memory.empty()) throw PreconditionError("cannot sample pseudo-features from an empty prototype memory");
  const std::size_t d = memory.feature_dim();
  const auto nodes = memory.nodes();
  ProtoBatch out;
  out.dim = d;
  out.features.reserve(count * d);
  out.labels.reserve(count);
  out.sources.assign(count, ProtoSource::Gaussian);

  std::map<std::size_t, std::vector<double>> factors;
  std::vector<double> noise(d);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t node = nodes[rng.index(nodes.size())];
    const auto mu = memory.prototype(node);
    for (auto& e : noise) e = rng.normal();
    switch (memory.mode()) {
      case CovarianceMode::Radius:
        for (std::size_t j = 0; j < d; ++j) out.features.push_back(mu[j] + memory.radius() * noise[j]);
        break;
      case CovarianceMode::Diagonal: {
        const auto var = memory.covariance(node);
        for (std::size_t j = 0; j < d; ++j) out.features.push_back(mu[j] + std::sqrt(var[j]) * noise[j]);
        break;
      }
      case CovarianceMode::Full: {
        auto it = factors.find(node);
        if (it == factors.end()) it = factors.emplace(node, cholesky_psd(memory.covariance(node), d)).first;
        const auto& l = it->second;
        for (std::size_t j = 0; j < d; ++j) {
          double acc = mu[j];
          for (std::size_t k = 0; k <= j; ++k) acc += l[j * d + k] * noise[k];
          out.features.push_back(acc);
        }
        break;
      }
    }
    out.labels.push_back(node);
  }
  return out;
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine_distance: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw ArgumentError("cosine distance is undefined for zero vectors");
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

std::optional<std::size_t> nearest_by_cosine(std::span<const double> target, const Tensor& features) {
  if (features.rank() != 2 || features.dim(1) != target.size()) {
    throw DimensionError("nearest_by_cosine: features " + shape_string(features.shape()) + " vs target of " +
                         std::to_string(target.size()));
  }
  double tnorm = 0.0;
  for (double v : target) tnorm += v * v;
  if (tnorm == 0.0) return std::nullopt;
  std::optional<std::size_t> best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < features.dim(0); ++r) {
    const auto row = features.row(r);
    double n = 0.0;
    for (double v : row) n += v * v;
    if (n == 0.0) continue;
    const double dist = cosine_distance(target, row);
    if (dist < best_dist) {
      best_dist = dist;
      best = r;
    }
  }
  return best;
}

HardnessResult hardness_instances(const PrototypeMemory& memory, const Tensor& new_features, double lambda,
                                  bool view0_only, std::size_t views_per_class) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ArgumentError("lambda must lie in [0, 1]");
  if (new_features.rank() != 2 || new_features.dim(1) != memory.feature_dim()) {
    throw DimensionError("hardness_instances: features " + shape_string(new_features.shape()) +
                         " do not match memory dimension " + std::to_string(memory.feature_dim()));
  }
  HardnessResult result;
  result.batch.dim = memory.feature_dim();
  for (std::size_t r = 0; r < new_features.dim(0); ++r) {
    double n = 0.0;
    for (double v : new_features.row(r)) n += v * v;
    if (n == 0.0) ++result.excluded_rows;
  }
  if (result.excluded_rows == new_features.dim(0)) {
    result.no_usable_features = true;
    return result;
  }
  const std::size_t d = memory.feature_dim();
  for (const auto& [node, mu] : memory.prototypes()) {
    if (view0_only && views_per_class > 0 && node % views_per_class != 0) continue;
    const auto nearest = nearest_by_cosine(mu, new_features);
    if (!nearest) continue;  // zero prototype: cosine distance undefined
    const auto z = new_features.row(*nearest);
    for (std::size_t j = 0; j < d; ++j) result.batch.features.push_back(lambda * mu[j] + (1.0 - lambda) * z[j]);
    result.batch.labels.push_back(node);
    result.batch.sources.push_back(ProtoSource::Hardness);
  }
  return result;
}

Var explicit_protoaug_loss(Tape& tape, ClassifierHead& head, const ProtoBatch& batch) {
  if (batch.empty()) throw PreconditionError("explicit_protoaug_loss needs a non-empty proto batch");
  if (batch.dim != head.feature_dim()) {
    throw DimensionError("proto batch dimension " + std::to_string(batch.dim) + " vs head dimension " +
                         std::to_string(head.feature_dim()));
  }
  Var logits = head.forward(tape, tape.constant(batch.to_tensor()));
  return ops::softmax_cross_entropy(logits, batch.labels);
}

Var implicit_logits(Var weight, Var bias, const PrototypeMemory& memory, double gamma,
                    std::span<const std::size_t> nodes) {
  if (!(gamma >= 0.0)) throw ArgumentError("gamma must be non-negative");
  const Tensor& W = weight.value();
  const Tensor& b = bias.value();
  const std::size_t C = W.dim(0), d = W.dim(1);
  if (d != memory.feature_dim()) throw DimensionError("head dimension does not match prototype memory");
  if (nodes.empty()) throw PreconditionError("implicit_logits needs at least one class node");
  for (auto k : nodes) {
    if (k >= C) throw IndexError("stored class node " + std::to_string(k) + " has no head row");
  }
  const std::size_t K = nodes.size();
  const CovarianceMode mode = memory.mode();
  const double r2 = memory.radius() * memory.radius();

  // For each stored node k, rows v_c = φ_c - φ_k (zero for c == k) and Σ_k·v_c.
  // The Σv rows are kept for the backward pass.
  auto sigma_v = std::make_shared<std::vector<double>>(gamma != 0.0 ? K * C * d : 0, 0.0);
  Tensor out({K, C});
  std::vector<double> v(C * d);
  for (std::size_t r = 0; r < K; ++r) {
    const std::size_t k = nodes[r];
    const auto mu = memory.prototype(k);
    const double* phi_k = W.data().data() + k * d;
    for (std::size_t c = 0; c < C; ++c) {
      const double* phi_c = W.data().data() + c * d;
      double lin = 0.0;
      for (std::size_t j = 0; j < d; ++j) lin += phi_c[j] * mu[j];
      out[r * C + c] = lin + b[c];
    }
    if (gamma == 0.0) continue;
    for (std::size_t c = 0; c < C; ++c) {
      const double* phi_c = W.data().data() + c * d;
      for (std::size_t j = 0; j < d; ++j) v[c * d + j] = c == k ? 0.0 : phi_c[j] - phi_k[j];
    }
    std::span<double> sv(sigma_v->data() + r * C * d, C * d);
    switch (mode) {
      case CovarianceMode::Radius:
        for (std::size_t i = 0; i < C * d; ++i) sv[i] = r2 * v[i];
        break;
      case CovarianceMode::Diagonal: {
        const auto diag = memory.covariance(k);
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t j = 0; j < d; ++j) sv[c * d + j] = diag[j] * v[c * d + j];
        }
        break;
      }
      case CovarianceMode::Full:
        // Σ is symmetric, so V·Σ gives the rows Σ·v_c.
        math::gemm(v, memory.covariance(k), sv, C, d, d);
        break;
    }
    for (std::size_t c = 0; c < C; ++c) {
      double quad = 0.0;
      for (std::size_t j = 0; j < d; ++j) quad += v[c * d + j] * sv[c * d + j];
      out[r * C + c] += 0.5 * gamma * quad;
    }
  }

  std::vector<std::size_t> node_list(nodes.begin(), nodes.end());
  std::vector<std::vector<double>> protos;
  protos.reserve(K);
  for (auto k : node_list) {
    const auto mu = memory.prototype(k);
    protos.emplace_back(mu.begin(), mu.end());
  }
  return weight.tape->record(
      std::move(out), {weight, bias},
      [node_list = std::move(node_list), protos = std::move(protos), sigma_v, gamma, C, d](
          std::span<const double> g, std::span<double* const> in) {
        for (std::size_t r = 0; r < node_list.size(); ++r) {
          const std::size_t k = node_list[r];
          const auto& mu = protos[r];
          for (std::size_t c = 0; c < C; ++c) {
            const double gl = g[r * C + c];
            if (gl == 0.0) continue;
            if (in[1] != nullptr) in[1][c] += gl;
            if (in[0] == nullptr) continue;
            double* dphi_c = in[0] + c * d;
            for (std::size_t j = 0; j < d; ++j) dphi_c[j] += gl * mu[j];
            if (c == k || gamma == 0.0) continue;
            const double* sv = sigma_v->data() + (r * C + c) * d;
            double* dphi_k = in[0] + k * d;
            for (std::size_t j = 0; j < d; ++j) {
              dphi_c[j] += gl * gamma * sv[j];
              dphi_k[j] -= gl * gamma * sv[j];
            }
          }
        }
      });
}

Var implicit_protoaug_loss(Tape& tape, ClassifierHead& head, const PrototypeMemory& memory, double gamma,
                           std::span<const std::size_t> nodes) {
  if (!(gamma >= 0.0)) throw ArgumentError("gamma must be non-negative");
  if (memory.empty()) throw PreconditionError("implicit_protoaug_loss needs stored prototypes");
  std::vector<std::size_t> selected(nodes.begin(), nodes.end());
  if (selected.empty()) selected = memory.nodes();
  Var logits = implicit_logits(tape.parameter(head.weight()), tape.parameter(head.bias()), memory, gamma, selected);
  return ops::softmax_cross_entropy(logits, selected);
}

Var kd_feature_loss(Tape& tape, Var current_features, const Tensor& snapshot_features, bool squared) {
  if (current_features.value().shape() != snapshot_features.shape()) {
    throw DimensionError("kd_feature_loss: feature shapes differ " + shape_string(current_features.value().shape()) +
                         " vs " + shape_string(snapshot_features.shape()));
  }
  Var diff = ops::sub(current_features, tape.constant(snapshot_features));
  return ops::mean(squared ? ops::row_sq_norm(diff) : ops::row_l2_norm(diff));
}

Var kd_feature_loss(Tape& tape, Var current_features, const ModelSnapshot* snapshot, const Tensor& batch,
                    bool squared) {
  if (snapshot == nullptr) throw PreconditionError("feature distillation needs a snapshot of the previous extractor");
  return kd_feature_loss(tape, current_features, snapshot->extract(batch), squared);
}

Var total_loss(const LossParts& parts, const LossWeights& weights, std::size_t stage) {
  weights.validate();
  Var total = parts.new_loss;
  if (stage <= 1) return total;
  if (parts.old_loss && weights.alpha != 0.0) total = ops::add(total, ops::scale(*parts.old_loss, weights.alpha));
  if (parts.kd_loss && weights.beta != 0.0) total = ops::add(total, ops::scale(*parts.kd_loss, weights.beta));
  return total;
}

}  // namespace cilf
