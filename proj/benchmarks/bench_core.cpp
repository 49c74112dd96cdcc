#include <benchmark/benchmark.h>

#include "cilf/evaluation.hpp"
#include "cilf/losses.hpp"
#include "cilf/trainer.hpp"

using namespace cilf;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (auto& x : t.data()) x = rng.uniform() - 0.5;
  return t;
}

ArchSpec mlp_arch() {
  ArchSpec a;
  a.side = 16;
  return a;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
  for (auto _ : state) {
    Tape t;
    benchmark::DoNotOptimize(ops::matmul(t.constant(a), t.constant(b)).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

static void BM_Extract(benchmark::State& state) {
  Rng rng(2);
  ArchSpec arch = mlp_arch();
  if (state.range(0) == 1) arch.kind = ArchKind::SmallConv;
  const FeatureExtractor fx(arch, rng);
  const LabeledDataset ds = generate_glyphs(8, 8, 16, 0.5, 3);
  const Tensor batch = ds.all();
  for (auto _ : state) benchmark::DoNotOptimize(fx.extract(batch).data().data());
  state.SetItemsProcessed(state.iterations() * std::int64_t(ds.size()));
  state.SetLabel(arch_name(arch.kind));
}
BENCHMARK(BM_Extract)->Arg(0)->Arg(1);

static void BM_ImplicitLoss(benchmark::State& state) {
  const auto mode = static_cast<CovarianceMode>(state.range(0));
  const std::size_t d = 64, nodes = 64;
  Rng rng(4);
  ClassifierHead head(d, 4);
  head.expand(nodes / 4 + 4, rng);
  PrototypeMemory mem(d, mode);
  mem.set_radius(0.5);
  VectorMap protos, covs;
  for (std::size_t k = 0; k < nodes; ++k) {
    protos[k] = random_matrix(1, d, rng).values();
    if (mode == CovarianceMode::Diagonal) covs[k] = std::vector<double>(d, 0.25);
    if (mode == CovarianceMode::Full) {
      std::vector<double> s(d * d, 0.0);
      for (std::size_t j = 0; j < d; ++j) s[j * d + j] = 0.25;
      covs[k] = s;
    }
  }
  mem.commit(protos, covs);
  for (auto _ : state) {
    Tape t;
    Var loss = implicit_protoaug_loss(t, head, mem, 1.0);
    t.backward(loss);
  }
  state.SetLabel(covariance_name(mode));
}
BENCHMARK(BM_ImplicitLoss)->DenseRange(0, 2);

static void BM_TrainStep(benchmark::State& state) {
  const LabeledDataset ds = generate_glyphs(8, 16, 16, 0.7, 5);
  const TaskStream stream = make_task_stream(ds, {StreamMode::HalfThenEqual, 1, 0}, 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.lr_decay_epochs = {};
  for (auto _ : state) {
    IncrementalTrainer tr(mlp_arch(), cfg);
    tr.run_stage(stream.tasks[0]);
    benchmark::DoNotOptimize(tr.run_stage(stream.tasks[1]).optimizer_steps);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

static void BM_Ensemble(benchmark::State& state) {
  Rng rng(6);
  IncrementalModel model(mlp_arch(), kSstViews, rng);
  model.head.expand(16, rng);
  const LabeledDataset ds = generate_glyphs(16, 8, 16, 0.7, 7);
  const Tensor batch = ds.all();
  for (auto _ : state) benchmark::DoNotOptimize(predict_ensemble(model, batch).data());
  state.SetItemsProcessed(state.iterations() * std::int64_t(ds.size()));
}
BENCHMARK(BM_Ensemble);
BENCHMARK_MAIN();
