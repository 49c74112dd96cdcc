#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cilf/metrics_csv.hpp"

namespace cilf::harness {

struct FeaturePoint {
  double x = 0.0;
  double y = 0.0;
  std::size_t label = 0;
  std::size_t stage = 0;
};

struct BarValue {
  std::string name;
  double value = 0.0;
};

/// Accuracy-on-seen-classes vs stage, one polyline per (run_id, seed).
std::string render_curve(const std::vector<MetricsRow>& rows);
/// 2-D feature scatter coloured by label; `stage` 0 plots every stage.
std::string render_scatter(const std::vector<FeaturePoint>& points, std::size_t stage = 0);
/// Horizontal reference line at the first bar ("clean"), one bar per entry.
std::string render_bars(const std::vector<BarValue>& bars, const std::string& title);

/// Throws FormatError unless the header is feature_x,feature_y,label,stage.
std::vector<FeaturePoint> read_feature_csv(const std::filesystem::path& path);
/// Two columns: name,accuracy.
std::vector<BarValue> read_bar_csv(const std::filesystem::path& path);
void write_bar_csv(const std::filesystem::path& path, const std::vector<BarValue>& bars);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace cilf::harness
