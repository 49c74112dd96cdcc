#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cilf/dataset.hpp"
#include "cilf/model.hpp"
#include "cilf/prototype_memory.hpp"
#include "cilf/tensor.hpp"

namespace cilf {

/// Row-wise argmax; ties go to the lowest column.
std::vector<std::size_t> argmax_rows(const Tensor& scores);

/// Logits of the view-0 nodes {V·c}, one column per seen class: [B×k].
Tensor plain_logits(const IncrementalModel& model, const Tensor& batch);
/// Average over the four rotated views of the logits at nodes {4c+v}: [B×k].
/// Requires a head with four views per class and square inputs.
Tensor ensemble_logits(const IncrementalModel& model, const Tensor& batch);

std::vector<std::size_t> predict_plain(const IncrementalModel& model, const Tensor& batch);
std::vector<std::size_t> predict_ensemble(const IncrementalModel& model, const Tensor& batch);

/// Class prototypes for NCM: the view-0 node of every class, keyed by class id.
VectorMap class_prototypes(const PrototypeMemory& memory, std::size_t views_per_class);

/// Nearest prototype by Euclidean distance over `classes` (ties -> lowest id).
/// Throws ConfigError when a candidate class has no prototype.
std::vector<std::size_t> ncm_predict(const FeatureExtractor& extractor, const VectorMap& prototypes,
                                     std::span<const std::size_t> classes, const Tensor& batch);
/// Same, on precomputed features.
std::vector<std::size_t> ncm_predict_features(const Tensor& features, const VectorMap& prototypes,
                                              std::span<const std::size_t> classes);

/// a(m, n): accuracy on task n's test split after stage m (both 0-based, n <= m).
class AccuracyMatrix {
 public:
  std::size_t stages() const noexcept { return rows_.size(); }
  /// Appends the row for the next stage; must hold exactly stages()+1 entries in [0,1].
  void push_stage(std::vector<double> row);
  double at(std::size_t m, std::size_t n) const;
  const std::vector<double>& row(std::size_t m) const { return rows_.at(m); }

 private:
  std::vector<std::vector<double>> rows_;
};

struct EvalReport {
  /// Accuracy on all seen classes after each stage.
  std::vector<double> stage_accuracy;
  /// Running averages A_1..A_T.
  std::vector<double> average_accuracy;
  /// Forgetting after each stage, absent for the first.
  std::vector<std::optional<double>> forgetting;
  std::vector<std::optional<double>> forgetting_clamped;

  double last_accuracy() const { return stage_accuracy.back(); }
};

/// Average accuracy and forgetting. For k >= 2,
/// F_k = mean over n < k of max_{t<k}(a(t,n) - a(k,n)); unclamped and clamped at 0.
EvalReport compute_metrics(const AccuracyMatrix& matrix, std::span<const double> stage_accuracy);

/// Forgetting at stage k (0-based) from the task-wise matrix; absent for k == 0.
std::optional<double> forgetting_at(const AccuracyMatrix& matrix, std::size_t k);

/// Expected calibration error over equal-width confidence bins; `correct` holds 1 for a hit.
double compute_ece(std::span<const double> confidences, std::span<const std::uint8_t> correct, std::size_t num_bins = 15);

struct Prediction {
  std::vector<std::size_t> labels;
  /// Max softmax probability of the scored logits.
  std::vector<double> confidence;
};

/// Predicts a dataset in fixed-size chunks (ensemble or plain logits).
Prediction predict_dataset(const IncrementalModel& model, const LabeledDataset& data, bool ensemble);

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth);

/// Writes `feature_x,feature_y,label,stage` rows. With `append` the header is
/// written only if the file is new or empty. Throws ConfigError unless d == 2.
void export_features_2d(const FeatureExtractor& extractor, const LabeledDataset& data, std::size_t stage,
                        const std::filesystem::path& path, bool append = false);

/// Preset severities 1..3 of each corruption kind.
std::vector<Corruption> corruption_presets(const std::string& kind);
std::vector<std::string> corruption_kinds();

struct CorruptionResult {
  std::string name;  // "clean" for the reference row
  double accuracy = 0.0;
};

/// Clean accuracy first, then one row per corruption.
std::vector<CorruptionResult> evaluate_under_corruption(const IncrementalModel& model, const LabeledDataset& clean,
                                                        std::span<const Corruption> kinds, bool ensemble,
                                                        std::uint64_t seed);

}  // namespace cilf
