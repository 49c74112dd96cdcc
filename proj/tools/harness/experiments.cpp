#include "experiments.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "cilf/errors.hpp"
#include "cilf/metrics_csv.hpp"
#include "svg.hpp"

#ifndef CILF_VERSION
#define CILF_VERSION "0.0.0"
#endif

namespace cilf::harness {
namespace fs = std::filesystem;
namespace {

LabeledDataset seen_test_union(const TaskStream& stream, std::size_t tasks) {
  std::vector<LabeledDataset> parts;
  for (std::size_t n = 0; n < tasks; ++n) parts.push_back(stream.tasks[n].test);
  return concat(parts);
}

std::string relative_path(const fs::path& p, const fs::path& base) { return fs::relative(p, base).generic_string(); }

}  // namespace

std::string engine_version() { return CILF_VERSION; }

std::size_t worker_limit() {
  if (const char* env = std::getenv("CILF_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(mu);
            if (next >= n) return;
            i = next++;
          }
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

SeedOutcome run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir) {
  fs::create_directories(dir);
  SeedOutcome out;
  out.seed = seed;
  const TaskStream stream = build_stream(cfg, seed);

  TrainConfig train = cfg.train;
  train.seed = seed;
  if (cfg.write_checkpoints) train.checkpoint_dir = dir / "checkpoints";

  RunOptions options;
  options.run_id = cfg.name;
  if (cfg.eval.export_features) {
    options.on_stage = [&](const IncrementalTrainer& trainer, const StageResult& result, const Task&) {
      const fs::path csv = dir / ("features_stage" + std::to_string(result.stage) + ".csv");
      export_features_2d(trainer.model().extractor, seen_test_union(stream, result.stage), result.stage, csv);
      const fs::path svg = dir / ("features_stage" + std::to_string(result.stage) + ".svg");
      write_text(svg, render_scatter(read_feature_csv(csv), result.stage));
      out.extras.push_back(csv);
      out.extras.push_back(svg);
    };
  }
  out.record = run_sequence(stream, cfg.arch, train, options);
  for (const auto& s : out.record.stages) {
    if (!s.checkpoint.empty()) out.checkpoints.emplace_back(s.checkpoint);
  }
  out.metrics_csv = dir / "metrics.csv";
  write_metrics_csv(out.metrics_csv, out.record.rows);

  if (!cfg.eval.corruptions.empty()) {
    std::vector<Corruption> kinds;
    for (const auto& k : cfg.eval.corruptions) kinds.push_back(corruption_presets(k).at(cfg.eval.corruption_severity - 1));
    const auto results = evaluate_under_corruption(out.record.final_model, seen_test_union(stream, stream.tasks.size()),
                                                   kinds, train.ensemble_eval, seed);
    std::vector<BarValue> bars;
    for (const auto& r : results) bars.push_back({r.name, r.accuracy});
    const fs::path csv = dir / "corruption.csv";
    const fs::path svg = dir / "corruption.svg";
    write_bar_csv(csv, bars);
    write_text(svg, render_bars(bars, "Accuracy under corruption (severity " +
                                          std::to_string(cfg.eval.corruption_severity) + ")"));
    out.extras.push_back(csv);
    out.extras.push_back(svg);
  }
  return out;
}

TrainOutcome train_experiment(const ExperimentConfig& cfg) {
  TrainOutcome out;
  out.seeds.resize(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), worker_limit(), [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    out.seeds[i] = run_seed(cfg, seed, cfg.output_dir / ("seed_" + std::to_string(seed)));
  });

  std::vector<MetricsRow> merged;
  for (const auto& s : out.seeds) merged.insert(merged.end(), s.record.rows.begin(), s.record.rows.end());
  sort_metrics(merged);
  out.metrics_csv = cfg.output_dir / "metrics.csv";
  write_metrics_csv(out.metrics_csv, merged);
  write_text(cfg.output_dir / "accuracy_curve.svg", render_curve(merged));

  nlohmann::ordered_json m;
  m["engine_version"] = engine_version();
  m["config_hash"] = cfg.hash;
  m["seeds"] = cfg.seeds;
  m["metrics_csv"] = relative_path(out.metrics_csv, cfg.output_dir);
  std::vector<fs::path> artifacts = {out.metrics_csv, cfg.output_dir / "accuracy_curve.svg"};
  m["runs"] = nlohmann::ordered_json::array();
  for (const auto& s : out.seeds) {
    nlohmann::ordered_json run;
    run["seed"] = s.seed;
    run["metrics_csv"] = relative_path(s.metrics_csv, cfg.output_dir);
    run["checkpoints"] = nlohmann::ordered_json::array();
    for (const auto& c : s.checkpoints) run["checkpoints"].push_back(relative_path(c, cfg.output_dir));
    m["runs"].push_back(run);
    artifacts.push_back(s.metrics_csv);
    artifacts.insert(artifacts.end(), s.checkpoints.begin(), s.checkpoints.end());
    artifacts.insert(artifacts.end(), s.extras.begin(), s.extras.end());
  }
  m["artifacts"] = nlohmann::ordered_json::array();
  for (const auto& a : artifacts) {
    nlohmann::ordered_json entry;
    entry["path"] = relative_path(a, cfg.output_dir);
    entry["sha256"] = sha256_file(a);
    m["artifacts"].push_back(entry);
  }
  out.manifest = cfg.output_dir / "manifest.json";
  write_text(out.manifest, m.dump(2) + "\n");
  return out;
}

std::vector<LadderRow> ablation_ladder(const TrainConfig& base) {
  std::vector<LadderRow> rows;
  TrainConfig t = base;
  t.weights.alpha = 0.0;
  t.sst_enabled = false;
  t.hardness_enabled = false;
  t.ensemble_eval = false;
  rows.push_back({"baseline_kd", t});
  t.weights.alpha = base.weights.alpha;
  rows.push_back({"protoaug", t});
  t.sst_enabled = true;
  rows.push_back({"sst", t});
  t.hardness_enabled = true;
  rows.push_back({"hardness", t});
  t.ensemble_eval = true;
  rows.push_back({"ensemble", t});
  return rows;
}

std::vector<OrderingCheck> check_ablation_ordering(const std::vector<double>& m) {
  if (m.size() != 5) throw ArgumentError("ordering check needs the five ladder rows");
  return {
      {"baseline_kd < protoaug", m[0] < m[1]},
      {"protoaug < sst", m[1] < m[2]},
      {"ensemble >= hardness", m[4] >= m[3]},
      {"baseline_kd < 0.5 * protoaug", m[0] < 0.5 * m[1]},
  };
}

AblationOutcome run_ablation(const ExperimentConfig& cfg) {
  const auto ladder = ablation_ladder(cfg.train);
  AblationOutcome out;
  for (const auto& r : ladder) out.rows.push_back(r.name);
  const std::size_t seeds = cfg.seeds.size();
  out.cells.resize(ladder.size() * seeds);

  std::vector<TaskStream> streams(seeds);
  for (std::size_t s = 0; s < seeds; ++s) streams[s] = build_stream(cfg, cfg.seeds[s]);

  parallel_for(out.cells.size(), worker_limit(), [&](std::size_t i) {
    const std::size_t row = i / seeds, s = i % seeds;
    TrainConfig train = ladder[row].train;
    train.seed = cfg.seeds[s];
    train.checkpoint_dir.clear();
    RunOptions opts;
    opts.run_id = ladder[row].name;
    const RunRecord rec = run_sequence(streams[s], cfg.arch, train, opts);
    AblationCell& c = out.cells[i];
    c.row = ladder[row].name;
    c.seed = cfg.seeds[s];
    c.last_accuracy = rec.report.last_accuracy();
    c.average_accuracy = rec.report.average_accuracy.back();
    c.forgetting = rec.report.forgetting.back();
    c.forgetting_clamped = rec.report.forgetting_clamped.back();
  });

  for (std::size_t row = 0; row < ladder.size(); ++row) {
    double last = 0.0, avg = 0.0;
    for (std::size_t s = 0; s < seeds; ++s) {
      last += out.cells[row * seeds + s].last_accuracy;
      avg += out.cells[row * seeds + s].average_accuracy;
    }
    out.mean_last.push_back(last / double(seeds));
    out.mean_average.push_back(avg / double(seeds));
  }
  out.checks = check_ablation_ordering(out.mean_last);

  std::ostringstream csv;
  csv << "row,kd,protoaug,sst,hardness,ensemble,seed,average_accuracy,last_accuracy,F_k,F_k_clamped\n";
  const auto flags = [&](std::size_t row) {
    const auto& t = ladder[row].train;
    std::ostringstream f;
    f << (t.weights.beta > 0) << ',' << (t.weights.alpha > 0) << ',' << t.sst_enabled << ',' << t.hardness_enabled
      << ',' << t.ensemble_eval;
    return f.str();
  };
  const auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  for (std::size_t row = 0; row < ladder.size(); ++row) {
    for (std::size_t s = 0; s < seeds; ++s) {
      const auto& c = out.cells[row * seeds + s];
      csv << c.row << ',' << flags(row) << ',' << c.seed << ',' << format_number(c.average_accuracy) << ','
          << format_number(c.last_accuracy) << ',' << opt(c.forgetting) << ',' << opt(c.forgetting_clamped) << '\n';
    }
    csv << ladder[row].name << ',' << flags(row) << ",mean," << format_number(out.mean_average[row]) << ','
        << format_number(out.mean_last[row]) << ",,\n";
  }
  out.csv = cfg.output_dir / "ablation.csv";
  write_text(out.csv, csv.str());

  std::ostringstream report;
  for (const auto& c : out.checks) report << (c.passed ? "PASS " : "FAIL ") << c.description << '\n';
  write_text(cfg.output_dir / "ablation_ordering.txt", report.str());
  return out;
}

VerifyResult verify_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw MissingFileError(manifest);
  nlohmann::json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
  if (!m.contains("artifacts") || !m["artifacts"].is_array()) throw FormatError(manifest.string() + ": no artifacts list");
  const fs::path base = manifest.parent_path();
  VerifyResult out;
  for (const auto& a : m["artifacts"]) {
    const fs::path p = base / a.at("path").get<std::string>();
    ++out.checked;
    if (!fs::exists(p)) {
      out.problems.push_back("missing: " + p.string());
    } else if (sha256_file(p) != a.at("sha256").get<std::string>()) {
      out.problems.push_back("hash mismatch: " + p.string());
    }
  }
  return out;
}

std::string strip_wall_clock(const std::string& text) {
  std::istringstream in(text);
  std::ostringstream out;
  std::string line;
  std::optional<std::size_t> column;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::string f;
    std::istringstream ls(line);
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (!column) {
      const auto it = std::find(fields.begin(), fields.end(), kWallClockColumn);
      column = it == fields.end() ? fields.size() : std::size_t(it - fields.begin());
    }
    for (std::size_t i = 0, w = 0; i < fields.size(); ++i) {
      if (i == *column) continue;
      out << (w++ ? "," : "") << fields[i];
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace cilf::harness
