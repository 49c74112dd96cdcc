#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cilf/trainer.hpp"
#include "config.hpp"

namespace cilf::harness {

/// Worker count from CILF_THREADS (default: hardware concurrency, at least 1).
std::size_t worker_limit();

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Exceptions are
/// rethrown in index order after all workers finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

struct SeedOutcome {
  std::uint64_t seed = 0;
  RunRecord record;
  std::filesystem::path metrics_csv;
  std::vector<std::filesystem::path> checkpoints;
  /// Feature CSVs, SVG plots and corruption results.
  std::vector<std::filesystem::path> extras;
};

/// One seed of a training experiment, writing artifacts under `dir`.
SeedOutcome run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& dir);

struct TrainOutcome {
  std::vector<SeedOutcome> seeds;
  std::filesystem::path metrics_csv;
  std::filesystem::path manifest;
};

/// Every seed of `cfg`, then the merged metrics CSV and the manifest.
TrainOutcome train_experiment(const ExperimentConfig& cfg);

struct LadderRow {
  std::string name;
  TrainConfig train;
};

/// Baseline (KD only), +protoAug, +SST, +Hardness, +Ensemble.
std::vector<LadderRow> ablation_ladder(const TrainConfig& base);

struct AblationCell {
  std::string row;
  std::uint64_t seed = 0;
  double last_accuracy = 0.0;
  double average_accuracy = 0.0;
  std::optional<double> forgetting;
  std::optional<double> forgetting_clamped;
};

struct OrderingCheck {
  std::string description;
  bool passed = false;
};

struct AblationOutcome {
  std::vector<std::string> rows;
  std::vector<AblationCell> cells;  // row-major over (row, seed)
  std::vector<double> mean_last;    // per row
  std::vector<double> mean_average;
  std::vector<OrderingCheck> checks;
  std::filesystem::path csv;
};

/// Mean-over-seeds ordering checks of the ladder.
std::vector<OrderingCheck> check_ablation_ordering(const std::vector<double>& mean_last);

AblationOutcome run_ablation(const ExperimentConfig& cfg);

struct VerifyResult {
  std::size_t checked = 0;
  std::vector<std::string> problems;
  bool ok() const { return problems.empty(); }
};

/// Re-hashes every artifact listed in a manifest.
VerifyResult verify_manifest(const std::filesystem::path& manifest);

/// Rewrites `text` without the wall-clock column, for determinism comparisons.
std::string strip_wall_clock(const std::string& metrics_csv_text);

std::string engine_version();

}  // namespace cilf::harness
