#include "cilf/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "cilf/errors.hpp"

namespace cilf {
namespace {

constexpr std::size_t kEvalChunk = 512;

Tensor gather_view(const Tensor& logits, std::size_t views, std::size_t view, std::size_t classes) {
  const std::size_t batch = logits.dim(0), nodes = logits.dim(1);
  Tensor out({batch, classes});
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t c = 0; c < classes; ++c) out[r * classes + c] = logits[r * nodes + views * c + view];
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  if (scores.rank() != 2) throw DimensionError("argmax_rows needs a 2-D tensor");
  const std::size_t rows = scores.dim(0), cols = scores.dim(1);
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (scores[r * cols + c] > scores[r * cols + best]) best = c;
    }
    out[r] = best;
  }
  return out;
}

Tensor plain_logits(const IncrementalModel& model, const Tensor& batch) {
  const auto& head = model.head;
  const Tensor logits = head.classify(model.extractor.extract(batch));
  return gather_view(logits, head.views_per_class(), 0, head.num_classes());
}

Tensor ensemble_logits(const IncrementalModel& model, const Tensor& batch) {
  const auto& head = model.head;
  if (head.views_per_class() != kSstViews) {
    throw ConfigError("ensemble prediction needs a head with " + std::to_string(kSstViews) + " views per class");
  }
  if (batch.rank() != 4 || batch.dim(2) != batch.dim(3)) {
    throw DimensionError("ensemble prediction needs square [B×C×S×S] inputs, got " + shape_string(batch.shape()));
  }
  const std::size_t classes = head.num_classes();
  Tensor sum({batch.dim(0), classes});
  for (std::size_t v = 0; v < kSstViews; ++v) {
    const Tensor rotated = v == 0 ? batch : rotate_batch(batch, v);
    const Tensor view = gather_view(head.classify(model.extractor.extract(rotated)), kSstViews, v, classes);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += view[i];
  }
  for (auto& x : sum.data()) x /= double(kSstViews);
  return sum;
}

std::vector<std::size_t> predict_plain(const IncrementalModel& model, const Tensor& batch) {
  return argmax_rows(plain_logits(model, batch));
}

std::vector<std::size_t> predict_ensemble(const IncrementalModel& model, const Tensor& batch) {
  return argmax_rows(ensemble_logits(model, batch));
}

VectorMap class_prototypes(const PrototypeMemory& memory, std::size_t views_per_class) {
  if (views_per_class == 0) throw ArgumentError("views_per_class must be >= 1");
  VectorMap out;
  for (const auto& [node, mu] : memory.prototypes()) {
    if (node % views_per_class == 0) out.emplace(node / views_per_class, mu);
  }
  return out;
}

std::vector<std::size_t> ncm_predict_features(const Tensor& features, const VectorMap& prototypes,
                                              std::span<const std::size_t> classes) {
  if (features.rank() != 2) throw DimensionError("ncm_predict expects [B×d] features");
  if (classes.empty()) throw ConfigError("ncm_predict needs at least one candidate class");
  std::vector<std::size_t> sorted(classes.begin(), classes.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t d = features.dim(1);
  std::vector<const std::vector<double>*> protos;
  for (auto c : sorted) {
    auto it = prototypes.find(c);
    if (it == prototypes.end()) throw ConfigError("no prototype for class " + std::to_string(c));
    if (it->second.size() != d) throw DimensionError("prototype dimension does not match features");
    protos.push_back(&it->second);
  }
  std::vector<std::size_t> out(features.dim(0));
  for (std::size_t r = 0; r < features.dim(0); ++r) {
    const auto z = features.row(r);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) dist += (z[j] - (*protos[i])[j]) * (z[j] - (*protos[i])[j]);
      if (dist < best) {
        best = dist;
        out[r] = sorted[i];
      }
    }
  }
  return out;
}

std::vector<std::size_t> ncm_predict(const FeatureExtractor& extractor, const VectorMap& prototypes,
                                     std::span<const std::size_t> classes, const Tensor& batch) {
  return ncm_predict_features(extractor.extract(batch), prototypes, classes);
}

void AccuracyMatrix::push_stage(std::vector<double> row) {
  if (row.size() != rows_.size() + 1) {
    throw DimensionError("stage " + std::to_string(rows_.size()) + " needs " + std::to_string(rows_.size() + 1) +
                         " task accuracies, got " + std::to_string(row.size()));
  }
  for (double a : row) {
    if (!(a >= 0.0 && a <= 1.0)) throw ArgumentError("accuracy entries must lie in [0, 1]");
  }
  rows_.push_back(std::move(row));
}

double AccuracyMatrix::at(std::size_t m, std::size_t n) const {
  if (m >= rows_.size() || n > m) {
    throw IndexError("accuracy a(" + std::to_string(m) + "," + std::to_string(n) + ") is outside the filled triangle");
  }
  return rows_[m][n];
}

std::optional<double> forgetting_at(const AccuracyMatrix& matrix, std::size_t k) {
  if (k == 0 || k >= matrix.stages()) return std::nullopt;
  double total = 0.0;
  for (std::size_t n = 0; n < k; ++n) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t t = n; t < k; ++t) best = std::max(best, matrix.at(t, n) - matrix.at(k, n));
    total += best;
  }
  return total / double(k);
}

EvalReport compute_metrics(const AccuracyMatrix& matrix, std::span<const double> stage_accuracy) {
  if (stage_accuracy.size() != matrix.stages()) {
    throw DimensionError("compute_metrics: " + std::to_string(stage_accuracy.size()) + " stage accuracies for " +
                         std::to_string(matrix.stages()) + " stages");
  }
  EvalReport report;
  report.stage_accuracy.assign(stage_accuracy.begin(), stage_accuracy.end());
  double running = 0.0;
  for (std::size_t t = 0; t < stage_accuracy.size(); ++t) {
    running += stage_accuracy[t];
    report.average_accuracy.push_back(running / double(t + 1));
    const auto f = forgetting_at(matrix, t);
    report.forgetting.push_back(f);
    report.forgetting_clamped.push_back(f ? std::optional<double>(std::max(*f, 0.0)) : std::nullopt);
  }
  return report;
}

double compute_ece(std::span<const double> confidences, std::span<const std::uint8_t> correct, std::size_t num_bins) {
  if (confidences.empty()) throw ArgumentError("ECE of an empty prediction set is undefined");
  if (confidences.size() != correct.size()) throw DimensionError("ECE: confidence and correctness lengths differ");
  if (num_bins == 0) throw ArgumentError("ECE needs at least one bin");
  std::vector<double> conf_sum(num_bins, 0.0), hits(num_bins, 0.0), count(num_bins, 0.0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (!(c >= 0.0 && c <= 1.0)) throw ArgumentError("confidences must lie in [0, 1]");
    // Bin b covers (b/B, (b+1)/B]; the edge tests settle rounding in c·B.
    const auto raw = static_cast<long long>(std::ceil(c * double(num_bins))) - 1;
    auto bin = static_cast<std::size_t>(std::clamp<long long>(raw, 0, static_cast<long long>(num_bins) - 1));
    while (bin > 0 && c <= double(bin) / double(num_bins)) --bin;
    while (bin + 1 < num_bins && c > double(bin + 1) / double(num_bins)) ++bin;
    conf_sum[bin] += c;
    hits[bin] += correct[i] != 0 ? 1.0 : 0.0;
    count[bin] += 1.0;
  }
  const double n = double(confidences.size());
  double ece = 0.0;
  for (std::size_t b = 0; b < num_bins; ++b) {
    if (count[b] == 0.0) continue;
    ece += (count[b] / n) * std::abs(hits[b] / count[b] - conf_sum[b] / count[b]);
  }
  return ece;
}

Prediction predict_dataset(const IncrementalModel& model, const LabeledDataset& data, bool ensemble) {
  Prediction out;
  out.labels.reserve(data.size());
  out.confidence.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kEvalChunk) {
    const std::size_t end = std::min(data.size(), start + kEvalChunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor batch = data.batch(idx);
    const Tensor logits = ensemble ? ensemble_logits(model, batch) : plain_logits(model, batch);
    const auto probs = math::softmax_rows(logits.data(), logits.dim(0), logits.dim(1));
    const auto labels = argmax_rows(logits);
    for (std::size_t r = 0; r < labels.size(); ++r) {
      out.labels.push_back(labels[r]);
      out.confidence.push_back(probs[r * logits.dim(1) + labels[r]]);
    }
  }
  return out;
}

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth) {
  if (predicted.size() != truth.size()) throw DimensionError("accuracy: prediction and label counts differ");
  if (truth.empty()) throw ArgumentError("accuracy of an empty set is undefined");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return double(hits) / double(truth.size());
}

void export_features_2d(const FeatureExtractor& extractor, const LabeledDataset& data, std::size_t stage,
                        const std::filesystem::path& path, bool append) {
  if (extractor.feature_dim() != 2) {
    throw ConfigError("feature export needs a 2-dimensional feature space, extractor has d=" +
                      std::to_string(extractor.feature_dim()));
  }
  const bool header = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw ConfigError("cannot write feature export " + path.string());
  if (header) out << "feature_x,feature_y,label,stage\n";
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kEvalChunk) {
    const std::size_t end = std::min(data.size(), start + kEvalChunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor feats = extractor.extract(data.batch(idx));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      out << format_double(feats[2 * r]) << ',' << format_double(feats[2 * r + 1]) << ',' << data.labels[idx[r]]
          << ',' << stage << '\n';
    }
  }
}

std::vector<std::string> corruption_kinds() { return {"gaussian_noise", "brightness", "box_blur"}; }

std::vector<Corruption> corruption_presets(const std::string& kind) {
  if (kind == "gaussian_noise") return {GaussianNoise{0.3}, GaussianNoise{0.45}, GaussianNoise{0.6}};
  if (kind == "brightness") return {Brightness{0.1}, Brightness{0.2}, Brightness{0.3}};
  if (kind == "box_blur") return {BoxBlur{3}, BoxBlur{5}, BoxBlur{7}};
  throw ConfigError("unknown corruption kind '" + kind + "' (expected gaussian_noise, brightness or box_blur)");
}

std::vector<CorruptionResult> evaluate_under_corruption(const IncrementalModel& model, const LabeledDataset& clean,
                                                        std::span<const Corruption> kinds, bool ensemble,
                                                        std::uint64_t seed) {
  std::vector<CorruptionResult> out;
  out.push_back({"clean", accuracy(predict_dataset(model, clean, ensemble).labels, clean.labels)});
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    const LabeledDataset shifted = corrupt(clean, kinds[i], seed + i);
    out.push_back({corruption_name(kinds[i]), accuracy(predict_dataset(model, shifted, ensemble).labels, shifted.labels)});
  }
  return out;
}

}  // namespace cilf
