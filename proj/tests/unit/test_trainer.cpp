#include <gtest/gtest.h>

#include <filesystem>

#include "cilf/errors.hpp"
#include "cilf/trainer.hpp"

using namespace cilf;

namespace {

ArchSpec tiny_arch() {
  ArchSpec a;
  a.side = 8;
  a.hidden = {16};
  a.feature_dim = 8;
  return a;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 16;
  c.lr_decay_epochs = {1};
  c.seed = 3;
  return c;
}

TaskStream tiny_stream(std::size_t classes = 4, std::size_t tasks = 1) {
  const LabeledDataset ds = generate_glyphs(classes, 10, 8, 0.2, 1);
  return make_task_stream(ds, {StreamMode::HalfThenEqual, tasks, 0}, 5);
}

}  // namespace

TEST(LrSchedule, StepDecay) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(lr_schedule(0, c), 1e-3);
  EXPECT_DOUBLE_EQ(lr_schedule(29, c), 1e-3);
  EXPECT_DOUBLE_EQ(lr_schedule(30, c), 1e-4);
  EXPECT_NEAR(lr_schedule(50, c), 1e-5, 1e-20);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.validate();
  c.lr_decay_epochs = {5, 5};
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.sst_enabled = false;
  EXPECT_THROW(c.validate(), ConfigError);  // ensemble needs rotated views
  c.ensemble_eval = false;
  c.validate();
  EXPECT_EQ(c.views_per_class(), 1u);
  EXPECT_THROW(parse_protoaug("soft"), ConfigError);
  EXPECT_EQ(parse_radius_policy(radius_policy_name(RadiusPolicy::Running)), RadiusPolicy::Running);
}

TEST(Trainer, FirstStageCounts) {
  const TaskStream s = tiny_stream(4, 1);
  IncrementalTrainer tr(tiny_arch(), tiny_config());
  const StageResult r = tr.run_stage(s.tasks[0]);
  EXPECT_EQ(tr.model().head.num_nodes(), 8u);
  EXPECT_EQ(tr.memory().size(), 8u);
  EXPECT_EQ(r.committed_nodes.size(), 8u);
  EXPECT_EQ(r.loss_trace.size(), 2u);
  EXPECT_EQ(r.expansions, 1u);
  EXPECT_EQ(r.steps_before_expansion, 0u);
  EXPECT_EQ(r.head_nodes_before, 0u);
  EXPECT_EQ(r.head_nodes_after, 8u);
  // Stage 1 trains on the new-class loss only.
  EXPECT_EQ(r.proto_batches, 0u);
  EXPECT_EQ(r.hardness_rows, 0u);
  EXPECT_EQ(r.kd_terms, 0u);
  EXPECT_GT(r.radius, 0.0);
  EXPECT_EQ(tr.stage(), 1u);
}

TEST(Trainer, LaterStagesUseAugmentationAndAppendOnlyMemory) {
  const TaskStream s = tiny_stream(4, 1);
  IncrementalTrainer tr(tiny_arch(), tiny_config());
  tr.run_stage(s.tasks[0]);
  const VectorMap before = tr.memory().prototypes();
  const double radius = tr.memory().radius();
  const StageResult r = tr.run_stage(s.tasks[1]);
  EXPECT_EQ(tr.model().head.num_nodes(), 16u);
  EXPECT_EQ(r.expansions, 1u);
  EXPECT_EQ(r.steps_before_expansion, 0u);
  EXPECT_GT(r.proto_batches, 0u);
  EXPECT_GT(r.hardness_rows, 0u);
  EXPECT_GT(r.kd_terms, 0u);
  for (const auto& [k, mu] : before) EXPECT_EQ(tr.memory().prototypes().at(k), mu);
  EXPECT_EQ(tr.memory().size(), 16u);
  EXPECT_EQ(tr.memory().radius(), radius);
}

TEST(Trainer, FineTuningDegeneracy) {
  const TaskStream s = tiny_stream(4, 1);
  TrainConfig c = tiny_config();
  c.weights.alpha = 0.0;
  c.weights.beta = 0.0;
  IncrementalTrainer tr(tiny_arch(), c);
  tr.run_stage(s.tasks[0]);
  const StageResult r = tr.run_stage(s.tasks[1]);
  EXPECT_EQ(r.proto_batches, 0u);
  EXPECT_EQ(r.hardness_rows, 0u);
  EXPECT_EQ(r.kd_terms, 0u);
}

TEST(Trainer, ProtocolErrors) {
  const TaskStream s = tiny_stream(4, 1);
  IncrementalTrainer tr(tiny_arch(), tiny_config());
  EXPECT_THROW(tr.run_stage(s.tasks[1]), ProtocolError);  // ids must continue from 0
  tr.run_stage(s.tasks[0]);
  EXPECT_THROW(tr.run_stage(s.tasks[0]), ProtocolError);  // overlap
}

TEST(Trainer, CheckpointPerStage) {
  const auto dir = std::filesystem::temp_directory_path() / "cilf_trainer_ckpt";
  std::filesystem::remove_all(dir);
  TrainConfig c = tiny_config();
  c.checkpoint_dir = dir;
  const TaskStream s = tiny_stream(4, 1);
  IncrementalTrainer tr(tiny_arch(), c);
  const StageResult r = tr.run_stage(s.tasks[0]);
  EXPECT_TRUE(std::filesystem::exists(r.checkpoint));
  std::filesystem::remove_all(dir);
}

TEST(Trainer, ImplicitAndCovarianceModesRun) {
  const TaskStream s = tiny_stream(4, 1);
  for (CovarianceMode mode : {CovarianceMode::Radius, CovarianceMode::Diagonal, CovarianceMode::Full}) {
    TrainConfig c = tiny_config();
    c.protoaug_mode = ProtoAugMode::Implicit;
    c.covariance_mode = mode;
    const RunRecord rec = run_sequence(s, tiny_arch(), c);
    EXPECT_EQ(rec.final_memory.mode(), mode);
    for (double l : rec.stages.back().loss_trace) EXPECT_TRUE(std::isfinite(l));
  }
}

TEST(RunSequence, SingleTaskIsPlainTraining) {
  const LabeledDataset ds = generate_glyphs(4, 10, 8, 0.2, 1);
  const TaskStream s = make_task_stream(ds, {StreamMode::Equal, 1, 0}, 2);
  const RunRecord rec = run_sequence(s, tiny_arch(), tiny_config());
  ASSERT_EQ(rec.rows.size(), 1u);
  EXPECT_EQ(rec.report.average_accuracy[0], rec.report.stage_accuracy[0]);
  EXPECT_FALSE(rec.report.forgetting[0].has_value());
  EXPECT_FALSE(rec.rows[0].acc_old_classes.has_value());
  EXPECT_EQ(rec.rows[0].n_seen_classes, 4u);
}

TEST(RunSequence, DeterministicAndLowerTriangular) {
  const TaskStream s = tiny_stream(8, 2);
  const RunRecord a = run_sequence(s, tiny_arch(), tiny_config());
  const RunRecord b = run_sequence(s, tiny_arch(), tiny_config());
  ASSERT_EQ(a.matrix.stages(), 3u);
  for (std::size_t m = 0; m < 3; ++m) {
    EXPECT_EQ(a.matrix.row(m).size(), m + 1);
    EXPECT_THROW(a.matrix.at(m, m + 1), IndexError);
  }
  auto strip = [](std::vector<MetricsRow> rows) {
    for (auto& r : rows) r.wall_seconds = 0.0;
    return format_metrics_csv(rows);
  };
  EXPECT_EQ(strip(a.rows), strip(b.rows));
  EXPECT_EQ(a.final_model.head.weight(), b.final_model.head.weight());
}

TEST(RunSequence, EvaluationAgreesWithStoredRows) {
  const TaskStream s = tiny_stream(4, 1);
  const RunRecord rec = run_sequence(s, tiny_arch(), tiny_config());
  const StageEvaluation e = evaluate_stage(rec.final_model, s, 2, true);
  EXPECT_EQ(e.acc_all_seen, rec.rows.back().acc_all_seen);
  EXPECT_EQ(e.task_accuracy, rec.matrix.row(1));
}
