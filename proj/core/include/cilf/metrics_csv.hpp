#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cilf {

/// One row per (run, stage).
struct MetricsRow {
  std::string run_id;
  std::uint64_t seed = 0;
  std::size_t stage = 0;  // 1-based
  std::size_t n_seen_classes = 0;
  double acc_all_seen = 0.0;
  double acc_new_task = 0.0;
  std::optional<double> acc_old_classes;
  double average_accuracy = 0.0;
  std::optional<double> forgetting;
  std::optional<double> forgetting_clamped;
  std::optional<double> ece;
  double wall_seconds = 0.0;
};

/// Column names in file order.
const std::vector<std::string>& metrics_columns();
/// Columns excluded from determinism comparisons.
inline constexpr const char* kWallClockColumn = "wall_seconds";

std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);
std::string format_metrics_csv(std::span<const MetricsRow> rows);

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows);
/// Throws FormatError when the header or a field does not fit the schema.
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

/// Orders rows by stage, then seed, then run id.
void sort_metrics(std::vector<MetricsRow>& rows);

/// Shortest text that parses back to the same double.
std::string format_number(double value);

}  // namespace cilf
