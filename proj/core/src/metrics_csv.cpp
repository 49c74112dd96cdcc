#include "cilf/metrics_csv.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <tuple>

#include "cilf/errors.hpp"

namespace cilf {
namespace {

std::string opt(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

double parse_double(const std::string& s, const std::string& column, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw FormatError("metrics CSV line " + std::to_string(line) + ": column " + column + " is not a number: '" + s + "'");
  }
  return v;
}

std::uint64_t parse_uint(const std::string& s, const std::string& column, std::size_t line) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw FormatError("metrics CSV line " + std::to_string(line) + ": column " + column +
                      " is not a non-negative integer: '" + s + "'");
  }
  return v;
}

std::optional<double> parse_opt(const std::string& s, const std::string& column, std::size_t line) {
  if (s.empty()) return std::nullopt;
  return parse_double(s, column, line);
}

}  // namespace

std::string format_number(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {
      "run_id", "seed", "stage", "n_seen_classes", "acc_all_seen", "acc_new_task", "acc_old_classes",
      "A_t",    "F_k",  "F_k_clamped", "ECE", "wall_seconds"};
  return cols;
}

std::string metrics_header() {
  std::string out;
  for (const auto& c : metrics_columns()) {
    if (!out.empty()) out += ',';
    out += c;
  }
  return out;
}

std::string format_metrics_row(const MetricsRow& r) {
  if (r.run_id.find_first_of(",\n\"") != std::string::npos) {
    throw ArgumentError("run_id may not contain commas, quotes or newlines: " + r.run_id);
  }
  std::ostringstream out;
  out << r.run_id << ',' << r.seed << ',' << r.stage << ',' << r.n_seen_classes << ',' << format_number(r.acc_all_seen)
      << ',' << format_number(r.acc_new_task) << ',' << opt(r.acc_old_classes) << ','
      << format_number(r.average_accuracy) << ',' << opt(r.forgetting) << ',' << opt(r.forgetting_clamped) << ','
      << opt(r.ece) << ',' << format_number(r.wall_seconds);
  return out.str();
}

std::string format_metrics_csv(std::span<const MetricsRow> rows) {
  std::string out = metrics_header() + "\n";
  for (const auto& r : rows) out += format_metrics_row(r) + "\n";
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write metrics CSV " + path.string());
  out << format_metrics_csv(rows);
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != metrics_header()) {
    throw FormatError("metrics CSV header does not match the expected schema: " + metrics_header());
  }
  const auto& cols = metrics_columns();
  std::vector<MetricsRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != cols.size()) {
      throw FormatError("metrics CSV line " + std::to_string(line_no) + " has " + std::to_string(f.size()) +
                        " fields, expected " + std::to_string(cols.size()));
    }
    MetricsRow r;
    r.run_id = f[0];
    r.seed = parse_uint(f[1], cols[1], line_no);
    r.stage = parse_uint(f[2], cols[2], line_no);
    r.n_seen_classes = parse_uint(f[3], cols[3], line_no);
    r.acc_all_seen = parse_double(f[4], cols[4], line_no);
    r.acc_new_task = parse_double(f[5], cols[5], line_no);
    r.acc_old_classes = parse_opt(f[6], cols[6], line_no);
    r.average_accuracy = parse_double(f[7], cols[7], line_no);
    r.forgetting = parse_opt(f[8], cols[8], line_no);
    r.forgetting_clamped = parse_opt(f[9], cols[9], line_no);
    r.ece = parse_opt(f[10], cols[10], line_no);
    r.wall_seconds = parse_double(f[11], cols[11], line_no);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open metrics CSV " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_metrics_csv(buf.str());
}

void sort_metrics(std::vector<MetricsRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const MetricsRow& a, const MetricsRow& b) {
    return std::tie(a.stage, a.seed, a.run_id) < std::tie(b.stage, b.seed, b.run_id);
  });
}

}  // namespace cilf
