#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "cilf/checkpoint.hpp"
#include "cilf/errors.hpp"
#include "cilf/evaluation.hpp"
#include "cilf/metrics_csv.hpp"
#include "harness/config.hpp"
#include "harness/experiments.hpp"
#include "harness/svg.hpp"

namespace fs = std::filesystem;
using namespace cilf;
using namespace cilf::harness;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kMissingFile = 2, kBadConfig = 3, kBadFormat = 4 };

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string ensemble;
  std::string protoaug;
  std::string covariance;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "experiment config file")->required();
  cmd->add_option("--seed", o.seed, "run a single seed instead of run.seeds");
  cmd->add_option("--out", o.out, "output directory (overrides output.dir)");
  cmd->add_option("--ensemble", o.ensemble, "multi-view ensemble evaluation")->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--protoaug", o.protoaug, "prototype augmentation form")
      ->check(CLI::IsMember({"explicit", "implicit"}));
  cmd->add_option("--covariance", o.covariance, "covariance summary")->check(CLI::IsMember({"radius", "diag", "full"}));
}

ExperimentConfig load_with_overrides(const Overrides& o) {
  ExperimentConfig cfg = load_config(o.config);
  if (o.seed) cfg.seeds = {*o.seed};
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (!o.ensemble.empty()) cfg.train.ensemble_eval = o.ensemble == "on";
  if (!o.protoaug.empty()) cfg.train.protoaug_mode = parse_protoaug(o.protoaug);
  if (!o.covariance.empty()) cfg.train.covariance_mode = parse_covariance(o.covariance);
  cfg.validate();
  return cfg;
}

int cmd_train(const Overrides& o) {
  const ExperimentConfig cfg = load_with_overrides(o);
  const TrainOutcome out = train_experiment(cfg);
  for (const auto& s : out.seeds) {
    std::printf("seed %llu: last accuracy %.4f, average accuracy %.4f\n", static_cast<unsigned long long>(s.seed),
                s.record.report.last_accuracy(), s.record.report.average_accuracy.back());
  }
  std::printf("metrics:  %s\nmanifest: %s\n", out.metrics_csv.string().c_str(), out.manifest.string().c_str());
  return kOk;
}

int cmd_ablate(const Overrides& o) {
  const ExperimentConfig cfg = load_with_overrides(o);
  const AblationOutcome out = run_ablation(cfg);
  std::printf("%-12s %10s %10s\n", "row", "avg_acc", "last_acc");
  for (std::size_t r = 0; r < out.rows.size(); ++r) {
    std::printf("%-12s %10.4f %10.4f\n", out.rows[r].c_str(), out.mean_average[r], out.mean_last[r]);
  }
  bool all = true;
  for (const auto& c : out.checks) {
    std::printf("%s %s\n", c.passed ? "PASS" : "FAIL", c.description.c_str());
    all = all && c.passed;
  }
  std::printf("comparison: %s\n", out.csv.string().c_str());
  return all ? kOk : kFailure;
}

int cmd_eval(const Overrides& o, const std::string& checkpoint_path, const std::string& csv_out) {
  const ExperimentConfig cfg = load_with_overrides(o);
  if (!fs::exists(checkpoint_path)) throw MissingFileError(checkpoint_path);
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  const std::uint64_t seed = cfg.seeds.front();
  const TaskStream stream = build_stream(cfg, seed);
  if (ck.stage == 0 || ck.stage > stream.tasks.size()) {
    throw ConfigError("checkpoint stage " + std::to_string(ck.stage) + " does not fit a stream of " +
                      std::to_string(stream.tasks.size()) + " tasks");
  }
  bool ensemble = cfg.train.ensemble_eval;
  if (ensemble && ck.model.head.views_per_class() != kSstViews) {
    throw ConfigError("--ensemble on needs a checkpoint trained with the rotation transformation");
  }
  const StageEvaluation eval = evaluate_stage(ck.model, stream, ck.stage, ensemble);

  std::printf("stage %zu, %s prediction\n", ck.stage, ensemble ? "ensemble" : "plain");
  for (std::size_t n = 0; n < eval.task_accuracy.size(); ++n) {
    std::printf("  task %zu accuracy %.4f\n", n + 1, eval.task_accuracy[n]);
  }
  std::printf("acc_all_seen %.6f\nECE %.6f\n", eval.acc_all_seen, eval.ece);

  std::vector<LabeledDataset> parts;
  for (std::size_t n = 0; n < ck.stage; ++n) parts.push_back(stream.tasks[n].test);
  const LabeledDataset seen = concat(parts);
  std::vector<std::size_t> classes(ck.model.head.num_classes());
  for (std::size_t c = 0; c < classes.size(); ++c) classes[c] = c;
  const auto ncm = ncm_predict(ck.model.extractor, class_prototypes(ck.memory, ck.model.head.views_per_class()),
                               classes, seen.all());
  std::printf("ncm_accuracy %.6f\n", accuracy(ncm, seen.labels));
  std::printf("memory_entries %zu\n", ck.memory.entry_count());

  for (const auto& kind : cfg.eval.corruptions) {
    const Corruption c = corruption_presets(kind).at(cfg.eval.corruption_severity - 1);
    const auto res = evaluate_under_corruption(ck.model, seen, std::span<const Corruption>(&c, 1), ensemble, seed);
    std::printf("corruption %s accuracy %.6f\n", res[1].name.c_str(), res[1].accuracy);
  }

  if (!csv_out.empty()) {
    MetricsRow row;
    row.run_id = cfg.name;
    row.seed = seed;
    row.stage = ck.stage;
    row.n_seen_classes = ck.model.head.num_classes();
    row.acc_all_seen = eval.acc_all_seen;
    row.acc_new_task = eval.acc_new_task;
    row.acc_old_classes = eval.acc_old_classes;
    row.ece = eval.ece;
    // Average accuracy and forgetting need earlier stages; a single checkpoint reports its own stage only.
    row.average_accuracy = eval.acc_all_seen;
    write_metrics_csv(csv_out, std::vector<MetricsRow>{row});
  }
  return kOk;
}

int cmd_plot(const std::string& input, const std::string& kind, const std::string& out, std::size_t stage) {
  if (!fs::exists(input)) throw MissingFileError(input);
  std::string svg;
  if (kind == "curve") {
    svg = render_curve(read_metrics_csv(input));
  } else if (kind == "scatter2d") {
    svg = render_scatter(read_feature_csv(input), stage);
  } else {
    svg = render_bars(read_bar_csv(input), "Accuracy under corruption");
  }
  write_text(out, svg);
  std::printf("wrote %s\n", out.c_str());
  return kOk;
}

int cmd_verify(const std::string& manifest) {
  const VerifyResult r = verify_manifest(manifest);
  for (const auto& p : r.problems) std::printf("%s\n", p.c_str());
  std::printf("%zu artifacts checked, %zu problems\n", r.checked, r.problems.size());
  return r.ok() ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-incremental learning engine: train, ablate, eval, plot, verify"};
  app.require_subcommand(1);

  Overrides train_o, ablate_o, eval_o;
  auto* train = app.add_subcommand("train", "train every seed of a config and write metrics, checkpoints, manifest");
  add_common(train, train_o);
  auto* ablate = app.add_subcommand("ablate", "run the five-row component ladder");
  add_common(ablate, ablate_o);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the config's task stream");
  add_common(eval, eval_o);
  std::string checkpoint, eval_csv;
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--csv", eval_csv, "also write a one-row metrics CSV");

  auto* plot = app.add_subcommand("plot", "render a CSV as SVG");
  std::string plot_in, plot_kind = "curve", plot_out;
  std::size_t plot_stage = 0;
  plot->add_option("--input", plot_in, "metrics, feature or corruption CSV")->required();
  plot->add_option("--kind", plot_kind, "plot kind")->check(CLI::IsMember({"curve", "scatter2d", "corruption_bars"}));
  plot->add_option("--out", plot_out, "SVG output path")->required();
  plot->add_option("--stage", plot_stage, "scatter2d: only this stage (0 = all)");

  auto* verify = app.add_subcommand("verify", "re-hash the artifacts listed in a manifest");
  std::string manifest;
  verify->add_option("manifest", manifest, "manifest.json")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(train_o);
    if (*ablate) return cmd_ablate(ablate_o);
    if (*eval) return cmd_eval(eval_o, checkpoint, eval_csv);
    if (*plot) return cmd_plot(plot_in, plot_kind, plot_out, plot_stage);
    if (*verify) return cmd_verify(manifest);
  } catch (const MissingFileError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kMissingFile;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kBadConfig;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kBadFormat;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
