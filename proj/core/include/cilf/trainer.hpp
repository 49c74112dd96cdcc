#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cilf/adam.hpp"
#include "cilf/dataset.hpp"
#include "cilf/evaluation.hpp"
#include "cilf/losses.hpp"
#include "cilf/metrics_csv.hpp"
#include "cilf/model.hpp"
#include "cilf/prototype_memory.hpp"

namespace cilf {

enum class ProtoAugMode { Explicit, Implicit };
enum class RadiusPolicy { FirstTask, Running };

std::string protoaug_name(ProtoAugMode mode);
ProtoAugMode parse_protoaug(const std::string& name);
std::string radius_policy_name(RadiusPolicy policy);
RadiusPolicy parse_radius_policy(const std::string& name);

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::vector<std::size_t> lr_decay_epochs = {30, 50};
  double lr_decay_factor = 0.1;
  LossWeights weights;
  ProtoAugMode protoaug_mode = ProtoAugMode::Explicit;
  CovarianceMode covariance_mode = CovarianceMode::Radius;
  bool hardness_enabled = true;
  /// Restrict hardness mixing to view-0 class nodes.
  bool hardness_view0_only = false;
  bool sst_enabled = true;
  /// Evaluate with the multi-view ensemble (requires sst_enabled).
  bool ensemble_eval = true;
  bool kd_squared = false;
  RadiusPolicy radius_policy = RadiusPolicy::FirstTask;
  std::uint64_t seed = 0;
  /// Per-stage checkpoints are written here when non-empty.
  std::filesystem::path checkpoint_dir;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  std::size_t views_per_class() const noexcept { return sst_enabled ? kSstViews : 1; }
};

/// Step decay: lr · factor^(number of decay epochs <= epoch).
double lr_schedule(std::size_t epoch, const TrainConfig& cfg);

struct StageResult {
  std::size_t stage = 0;  // 1-based
  std::vector<double> loss_trace;  // mean training loss per epoch
  std::vector<std::size_t> committed_nodes;
  std::string checkpoint;

  std::size_t head_nodes_before = 0;
  std::size_t head_nodes_after = 0;
  std::size_t expansions = 0;
  /// Optimizer steps already taken when the head was expanded.
  std::size_t steps_before_expansion = 0;
  std::size_t optimizer_steps = 0;
  std::size_t proto_batches = 0;
  std::size_t hardness_rows = 0;
  std::size_t kd_terms = 0;
  double radius = 0.0;
};

/// Stateful driver of the stage loop: owns the model, the prototype memory
/// and the set of classes seen so far.
class IncrementalTrainer {
 public:
  IncrementalTrainer(const ArchSpec& arch, TrainConfig cfg);

  /// Trains one task. Throws ProtocolError when its classes overlap the seen
  /// ones or do not continue the incremental id range, AbortedRunError on a
  /// non-finite loss.
  StageResult run_stage(const Task& task);

  const TrainConfig& config() const noexcept { return cfg_; }
  const IncrementalModel& model() const noexcept { return model_; }
  IncrementalModel& model() noexcept { return model_; }
  const PrototypeMemory& memory() const noexcept { return memory_; }
  std::size_t stage() const noexcept { return stage_; }
  const std::set<std::size_t>& seen_classes() const noexcept { return seen_; }

 private:
  double train_epoch(const LabeledDataset& data, const std::optional<ModelSnapshot>& snapshot, AdamState& adam,
                     std::vector<Tensor*>& params, double lr, Rng& shuffle_rng, Rng& aug_rng, StageResult& result);
  void commit_statistics(const LabeledDataset& data, StageResult& result);

  TrainConfig cfg_;
  IncrementalModel model_;
  PrototypeMemory memory_;
  std::size_t stage_ = 0;
  std::set<std::size_t> seen_;
  std::string last_checkpoint_;
};

struct StageEvaluation {
  std::vector<double> task_accuracy;  // a(m, n) for n <= m
  double acc_all_seen = 0.0;
  double acc_new_task = 0.0;
  std::optional<double> acc_old_classes;
  double ece = 0.0;
};

/// Evaluates the current model on the test splits of tasks [0, seen_tasks).
StageEvaluation evaluate_stage(const IncrementalModel& model, const TaskStream& stream, std::size_t seen_tasks,
                               bool ensemble);

struct RunRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  AccuracyMatrix matrix;
  EvalReport report;
  std::vector<MetricsRow> rows;
  std::vector<StageResult> stages;
  IncrementalModel final_model;
  PrototypeMemory final_memory;
};

struct RunOptions {
  std::string run_id = "run";
  /// Called after each stage's evaluation.
  std::function<void(const IncrementalTrainer&, const StageResult&, const Task&)> on_stage;
};

/// Runs every task of the stream in order and evaluates after each stage.
RunRecord run_sequence(const TaskStream& stream, const ArchSpec& arch, const TrainConfig& cfg,
                       const RunOptions& options = {});

}  // namespace cilf
