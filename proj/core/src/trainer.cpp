#include "cilf/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "cilf/checkpoint.hpp"
#include "cilf/errors.hpp"

namespace cilf {
namespace {

constexpr std::size_t kFeatureChunk = 512;

constexpr std::uint64_t kInitStream = 0x01;
constexpr std::uint64_t kExpandStream = 0x100;
constexpr std::uint64_t kShuffleStream = 0x200;
constexpr std::uint64_t kAugmentStream = 0x300;

Tensor extract_all(const FeatureExtractor& extractor, const LabeledDataset& data) {
  const std::size_t d = extractor.feature_dim();
  std::vector<double> out;
  out.reserve(data.size() * d);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kFeatureChunk) {
    const std::size_t end = std::min(data.size(), start + kFeatureChunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor f = extractor.extract(data.batch(idx));
    out.insert(out.end(), f.data().begin(), f.data().end());
  }
  return Tensor({data.size(), d}, std::move(out));
}

}  // namespace

std::string protoaug_name(ProtoAugMode mode) { return mode == ProtoAugMode::Explicit ? "explicit" : "implicit"; }

ProtoAugMode parse_protoaug(const std::string& name) {
  if (name == "explicit") return ProtoAugMode::Explicit;
  if (name == "implicit") return ProtoAugMode::Implicit;
  throw ConfigError("unknown protoaug mode '" + name + "' (expected explicit or implicit)");
}

std::string radius_policy_name(RadiusPolicy policy) {
  return policy == RadiusPolicy::FirstTask ? "first_task" : "running";
}

RadiusPolicy parse_radius_policy(const std::string& name) {
  if (name == "first_task") return RadiusPolicy::FirstTask;
  if (name == "running") return RadiusPolicy::Running;
  throw ConfigError("unknown radius policy '" + name + "' (expected first_task or running)");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train.learning_rate must be > 0");
  for (std::size_t i = 1; i < lr_decay_epochs.size(); ++i) {
    if (lr_decay_epochs[i] <= lr_decay_epochs[i - 1]) throw ConfigError("train.lr_decay_epochs must be strictly increasing");
  }
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) throw ConfigError("train.lr_decay_factor must be in (0, 1]");
  try {
    weights.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("loss weights: ") + e.what());
  }
  if (ensemble_eval && !sst_enabled) throw ConfigError("eval.ensemble needs the rotation transformation (train.sst = true)");
}

double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  double lr = cfg.learning_rate;
  for (auto e : cfg.lr_decay_epochs) {
    if (epoch >= e) lr *= cfg.lr_decay_factor;
  }
  return lr;
}

IncrementalTrainer::IncrementalTrainer(const ArchSpec& arch, TrainConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng init = Rng::derive(cfg_.seed, kInitStream);
  model_ = IncrementalModel(arch, cfg_.views_per_class(), init);
  memory_ = PrototypeMemory(arch.feature_dim, cfg_.covariance_mode);
}

StageResult IncrementalTrainer::run_stage(const Task& task) {
  const std::size_t n_new = task.classes.size();
  if (n_new == 0) throw ProtocolError("task has no classes");
  const std::size_t first = task.first_label, end = first + n_new;
  for (std::size_t c = first; c < end; ++c) {
    if (seen_.count(c)) throw ProtocolError("class " + std::to_string(c) + " was already learned in an earlier stage");
  }
  if (first != model_.head.num_classes()) {
    throw ProtocolError("task classes start at id " + std::to_string(first) + " but " +
                        std::to_string(model_.head.num_classes()) + " classes have been learned");
  }
  for (const auto* split : {&task.train, &task.test}) {
    for (auto y : split->labels) {
      if (y < first || y >= end) {
        throw ProtocolError("sample labelled " + std::to_string(y) + " outside the task's class range [" +
                            std::to_string(first) + ", " + std::to_string(end) + ")");
      }
    }
  }
  if (task.train.size() == 0) throw ProtocolError("task has an empty training split");

  const std::size_t stage = stage_ + 1;
  StageResult result;
  result.stage = stage;

  const LabeledDataset train = cfg_.sst_enabled ? apply_sst(task.train).data : task.train;

  result.head_nodes_before = model_.head.num_nodes();
  result.steps_before_expansion = 0;
  Rng expand_rng = Rng::derive(cfg_.seed, kExpandStream + stage);
  model_.head.expand(n_new, expand_rng);
  ++result.expansions;
  result.head_nodes_after = model_.head.num_nodes();

  std::optional<ModelSnapshot> snapshot;
  if (stage > 1 && cfg_.weights.beta > 0.0) snapshot.emplace(model_.snapshot());

  auto params = model_.parameters();
  AdamState adam(params, AdamOptions{cfg_.learning_rate, 0.9, 0.999, 1e-8});
  Rng shuffle_rng = Rng::derive(cfg_.seed, kShuffleStream + stage);
  Rng aug_rng = Rng::derive(cfg_.seed, kAugmentStream + stage);
  for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    const double loss = train_epoch(train, snapshot, adam, params, lr_schedule(epoch, cfg_), shuffle_rng, aug_rng, result);
    result.loss_trace.push_back(loss);
  }
  result.optimizer_steps = adam.step;

  commit_statistics(train, result);
  for (std::size_t c = first; c < end; ++c) seen_.insert(c);
  stage_ = stage;

  if (!cfg_.checkpoint_dir.empty()) {
    std::filesystem::create_directories(cfg_.checkpoint_dir);
    const auto path = cfg_.checkpoint_dir / ("stage" + std::to_string(stage) + ".ckpt");
    save_checkpoint(path, model_, memory_, stage_);
    result.checkpoint = path.string();
    last_checkpoint_ = result.checkpoint;
  }
  return result;
}

double IncrementalTrainer::train_epoch(const LabeledDataset& data, const std::optional<ModelSnapshot>& snapshot,
                                       AdamState& adam, std::vector<Tensor*>& params, double lr, Rng& shuffle_rng,
                                       Rng& aug_rng, StageResult& result) {
  const std::size_t stage = stage_ + 1;
  const bool old_terms = stage > 1;
  const auto& w = cfg_.weights;
  adam.options.learning_rate = lr;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle_rng.shuffle(std::span<std::size_t>(order));

  double loss_sum = 0.0;
  std::size_t batches = 0;
  std::vector<std::size_t> labels;
  for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
    const std::size_t stop = std::min(order.size(), start + cfg_.batch_size);
    const std::span<const std::size_t> idx(order.data() + start, stop - start);
    labels.clear();
    for (auto i : idx) labels.push_back(data.labels[i]);
    const Tensor x = data.batch(idx);

    Tape tape;
    Var z = model_.extractor.forward(tape, tape.constant(x));
    LossParts parts{ops::softmax_cross_entropy(model_.head.forward(tape, z), labels), std::nullopt, std::nullopt};

    if (old_terms && w.alpha > 0.0) {
      ProtoBatch hard;
      if (cfg_.hardness_enabled) {
        auto h = hardness_instances(memory_, z.value(), w.lambda, cfg_.hardness_view0_only, cfg_.views_per_class());
        hard = std::move(h.batch);
        result.hardness_rows += hard.count();
      }
      if (cfg_.protoaug_mode == ProtoAugMode::Explicit) {
        ProtoBatch pb = sample_proto_batch(memory_, idx.size(), aug_rng);
        pb.append(hard);
        parts.old_loss = explicit_protoaug_loss(tape, model_.head, pb);
      } else {
        Var implicit = implicit_protoaug_loss(tape, model_.head, memory_, w.gamma);
        parts.old_loss = hard.empty() ? implicit
                                      : ops::scale(ops::add(implicit, explicit_protoaug_loss(tape, model_.head, hard)), 0.5);
      }
      ++result.proto_batches;
    }
    if (old_terms && w.beta > 0.0) {
      parts.kd_loss = kd_feature_loss(tape, z, snapshot ? &*snapshot : nullptr, x, cfg_.kd_squared);
      ++result.kd_terms;
    }

    Var total = total_loss(parts, w, stage);
    const double value = total.value().item();
    if (!std::isfinite(value)) {
      throw AbortedRunError("non-finite training loss at stage " + std::to_string(stage) + ", optimizer step " +
                                std::to_string(adam.step + 1),
                            last_checkpoint_);
    }
    for (auto* p : params) p->zero_grad();
    tape.backward(total);
    adam_step(params, adam);
    loss_sum += value;
    ++batches;
  }
  return loss_sum / double(batches);
}

void IncrementalTrainer::commit_statistics(const LabeledDataset& data, StageResult& result) {
  const Tensor feats = extract_all(model_.extractor, data);
  const VectorMap protos = compute_prototypes(feats, data.labels);
  const CovarianceEstimate cov = estimate_covariance(feats, data.labels, cfg_.covariance_mode);
  if (stage_ == 0) {
    memory_.set_radius(compute_radius_first_task(feats, data.labels).radius);
  } else if (cfg_.radius_policy == RadiusPolicy::Running) {
    memory_.set_radius(update_radius_running(memory_.radius(), memory_.size(), feats, data.labels));
  }
  memory_.commit(protos, cov.values);
  for (const auto& [k, mu] : protos) result.committed_nodes.push_back(k);
  result.radius = memory_.radius();
}

StageEvaluation evaluate_stage(const IncrementalModel& model, const TaskStream& stream, std::size_t seen_tasks,
                               bool ensemble) {
  if (seen_tasks == 0 || seen_tasks > stream.tasks.size()) throw ArgumentError("evaluate_stage: bad task count");
  StageEvaluation out;
  std::vector<double> confidences;
  std::vector<std::uint8_t> correct;
  std::size_t hits = 0, total = 0, old_hits = 0, old_total = 0;
  for (std::size_t n = 0; n < seen_tasks; ++n) {
    const auto& test = stream.tasks[n].test;
    if (test.size() == 0) throw ConfigError("task " + std::to_string(n + 1) + " has an empty test split");
    const Prediction pred = predict_dataset(model, test, ensemble);
    std::size_t task_hits = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const bool ok = pred.labels[i] == test.labels[i];
      task_hits += ok;
      correct.push_back(ok);
      confidences.push_back(pred.confidence[i]);
    }
    out.task_accuracy.push_back(double(task_hits) / double(test.size()));
    hits += task_hits;
    total += test.size();
    if (n + 1 < seen_tasks) {
      old_hits += task_hits;
      old_total += test.size();
    }
  }
  out.acc_all_seen = double(hits) / double(total);
  out.acc_new_task = out.task_accuracy.back();
  if (old_total > 0) out.acc_old_classes = double(old_hits) / double(old_total);
  out.ece = compute_ece(confidences, correct);
  return out;
}

RunRecord run_sequence(const TaskStream& stream, const ArchSpec& arch, const TrainConfig& cfg, const RunOptions& options) {
  if (stream.tasks.empty()) throw ConfigError("task stream has no tasks");
  IncrementalTrainer trainer(arch, cfg);
  RunRecord record;
  record.run_id = options.run_id;
  record.seed = cfg.seed;
  std::vector<double> stage_acc;
  for (std::size_t m = 0; m < stream.tasks.size(); ++m) {
    const auto t0 = std::chrono::steady_clock::now();
    StageResult result = trainer.run_stage(stream.tasks[m]);
    const StageEvaluation eval = evaluate_stage(trainer.model(), stream, m + 1, cfg.ensemble_eval);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    record.matrix.push_stage(eval.task_accuracy);
    stage_acc.push_back(eval.acc_all_seen);
    record.report = compute_metrics(record.matrix, stage_acc);

    MetricsRow row;
    row.run_id = options.run_id;
    row.seed = cfg.seed;
    row.stage = m + 1;
    row.n_seen_classes = trainer.seen_classes().size();
    row.acc_all_seen = eval.acc_all_seen;
    row.acc_new_task = eval.acc_new_task;
    row.acc_old_classes = eval.acc_old_classes;
    row.average_accuracy = record.report.average_accuracy[m];
    row.forgetting = record.report.forgetting[m];
    row.forgetting_clamped = record.report.forgetting_clamped[m];
    row.ece = eval.ece;
    row.wall_seconds = seconds;
    record.rows.push_back(row);

    if (options.on_stage) options.on_stage(trainer, result, stream.tasks[m]);
    record.stages.push_back(std::move(result));
  }
  record.final_model = trainer.model();
  record.final_memory = trainer.memory();
  return record;
}

}  // namespace cilf
