#include "svg.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "cilf/errors.hpp"

namespace cilf::harness {
namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 60.0;
constexpr double kRight = 20.0;
constexpr double kTop = 30.0;
constexpr double kBottom = 50.0;

const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
                                "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939", "#8c6d31", "#843c39",
                                "#7b4173", "#3182bd"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string color(std::size_t i) { return kPalette[i % (sizeof kPalette / sizeof kPalette[0])]; }

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;

  double px(double x) const { return kLeft + (x1 == x0 ? 0.5 : (x - x0) / (x1 - x0)) * (kWidth - kLeft - kRight); }
  double py(double y) const {
    return kHeight - kBottom - (y1 == y0 ? 0.5 : (y - y0) / (y1 - y0)) * (kHeight - kTop - kBottom);
  }
};

void open_svg(std::ostringstream& out, const std::string& title) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth) << "\" height=\"" << num(kHeight)
      << "\" viewBox=\"0 0 " << num(kWidth) << ' ' << num(kHeight) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << num(kWidth / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << escape(title)
      << "</text>\n";
}

void axes(std::ostringstream& out, const Frame& f, const std::string& xlabel, const std::string& ylabel,
          const std::vector<double>& xticks, const std::vector<double>& yticks) {
  out << "<g stroke=\"black\" fill=\"none\">\n";
  out << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kHeight - kBottom) << "\" x2=\"" << num(kWidth - kRight)
      << "\" y2=\"" << num(kHeight - kBottom) << "\"/>\n";
  out << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(kLeft) << "\" y2=\""
      << num(kHeight - kBottom) << "\"/>\n";
  out << "</g>\n<g fill=\"black\">\n";
  for (double t : xticks) {
    out << "<text x=\"" << num(f.px(t)) << "\" y=\"" << num(kHeight - kBottom + 16) << "\" text-anchor=\"middle\">"
        << num(t) << "</text>\n";
  }
  for (double t : yticks) {
    out << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(f.py(t) + 4) << "\" text-anchor=\"end\">" << num(t)
        << "</text>\n";
  }
  out << "<text x=\"" << num((kLeft + kWidth - kRight) / 2) << "\" y=\"" << num(kHeight - 12)
      << "\" text-anchor=\"middle\">" << escape(xlabel) << "</text>\n";
  out << "<text x=\"14\" y=\"" << num((kTop + kHeight - kBottom) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
      << num((kTop + kHeight - kBottom) / 2) << ")\">" << escape(ylabel) << "</text>\n";
  out << "</g>\n";
}

std::vector<double> linear_ticks(double lo, double hi, std::size_t n) {
  std::vector<double> out;
  if (hi == lo) return {lo};
  for (std::size_t i = 0; i <= n; ++i) out.push_back(lo + (hi - lo) * double(i) / double(n));
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_num(const std::string& s, const std::string& what, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw FormatError("line " + std::to_string(line) + ": " + what + " is not a number: '" + s + "'");
  }
  return v;
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

std::string render_curve(const std::vector<MetricsRow>& rows) {
  if (rows.empty()) throw FormatError("metrics CSV has no rows to plot");
  std::map<std::pair<std::string, std::uint64_t>, std::vector<std::pair<double, double>>> series;
  double max_stage = 1.0;
  for (const auto& r : rows) {
    series[{r.run_id, r.seed}].emplace_back(double(r.stage), r.acc_all_seen);
    max_stage = std::max(max_stage, double(r.stage));
  }
  const Frame f{1.0, max_stage, 0.0, 1.0};
  std::ostringstream out;
  open_svg(out, "Accuracy on all seen classes");
  std::vector<double> xticks;
  for (std::size_t s = 1; s <= std::size_t(max_stage); ++s) xticks.push_back(double(s));
  axes(out, f, "stage", "accuracy", xticks, linear_ticks(0.0, 1.0, 5));
  std::size_t i = 0;
  for (auto& [key, pts] : series) {
    std::sort(pts.begin(), pts.end());
    const std::string c = color(i);
    out << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
    for (std::size_t p = 0; p < pts.size(); ++p) {
      out << (p ? " " : "") << num(f.px(pts[p].first)) << ',' << num(f.py(pts[p].second));
    }
    out << "\"/>\n";
    for (const auto& [x, y] : pts) {
      out << "<circle cx=\"" << num(f.px(x)) << "\" cy=\"" << num(f.py(y)) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
    }
    out << "<text x=\"" << num(kWidth - kRight - 4) << "\" y=\"" << num(kTop + 14 * double(i + 1))
        << "\" text-anchor=\"end\" fill=\"" << c << "\">" << escape(key.first) << " seed " << key.second << "</text>\n";
    ++i;
  }
  out << "</svg>\n";
  return out.str();
}

std::string render_scatter(const std::vector<FeaturePoint>& points, std::size_t stage) {
  std::vector<FeaturePoint> sel;
  for (const auto& p : points) {
    if (stage == 0 || p.stage == stage) sel.push_back(p);
  }
  if (sel.empty()) throw FormatError("feature CSV has no points for the requested stage");
  Frame f{sel[0].x, sel[0].x, sel[0].y, sel[0].y};
  for (const auto& p : sel) {
    f.x0 = std::min(f.x0, p.x);
    f.x1 = std::max(f.x1, p.x);
    f.y0 = std::min(f.y0, p.y);
    f.y1 = std::max(f.y1, p.y);
  }
  std::ostringstream out;
  open_svg(out, stage == 0 ? "2-D features" : "2-D features after stage " + std::to_string(stage));
  axes(out, f, "feature x", "feature y", linear_ticks(f.x0, f.x1, 4), linear_ticks(f.y0, f.y1, 4));
  for (const auto& p : sel) {
    out << "<circle cx=\"" << num(f.px(p.x)) << "\" cy=\"" << num(f.py(p.y)) << "\" r=\"2\" fill=\"" << color(p.label)
        << "\" fill-opacity=\"0.7\"/>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string render_bars(const std::vector<BarValue>& bars, const std::string& title) {
  if (bars.empty()) throw FormatError("bar CSV has no rows");
  const Frame f{0.0, double(bars.size()), 0.0, 1.0};
  std::ostringstream out;
  open_svg(out, title);
  axes(out, f, "", "accuracy", {}, linear_ticks(0.0, 1.0, 5));
  const double slot = (kWidth - kLeft - kRight) / double(bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double v = std::clamp(bars[i].value, 0.0, 1.0);
    const double x = kLeft + slot * double(i) + slot * 0.15;
    out << "<rect x=\"" << num(x) << "\" y=\"" << num(f.py(v)) << "\" width=\"" << num(slot * 0.7) << "\" height=\""
        << num(f.py(0.0) - f.py(v)) << "\" fill=\"" << color(i) << "\"/>\n";
    out << "<text x=\"" << num(x + slot * 0.35) << "\" y=\"" << num(kHeight - kBottom + 16)
        << "\" text-anchor=\"middle\">" << escape(bars[i].name) << "</text>\n";
    out << "<text x=\"" << num(x + slot * 0.35) << "\" y=\"" << num(f.py(v) - 4) << "\" text-anchor=\"middle\">"
        << num(bars[i].value) << "</text>\n";
  }
  out << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(f.py(bars[0].value)) << "\" x2=\"" << num(kWidth - kRight)
      << "\" y2=\"" << num(f.py(bars[0].value)) << "\" stroke=\"black\" stroke-dasharray=\"4 3\"/>\n";
  out << "</svg>\n";
  return out.str();
}

std::vector<FeaturePoint> read_feature_csv(const std::filesystem::path& path) {
  std::istringstream in(read_all(path));
  std::string line;
  if (!std::getline(in, line) || line != "feature_x,feature_y,label,stage") {
    throw FormatError(path.string() + ": expected header feature_x,feature_y,label,stage");
  }
  std::vector<FeaturePoint> out;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 4) throw FormatError(path.string() + " line " + std::to_string(n) + ": expected 4 fields");
    out.push_back({parse_num(f[0], "feature_x", n), parse_num(f[1], "feature_y", n),
                   static_cast<std::size_t>(parse_num(f[2], "label", n)),
                   static_cast<std::size_t>(parse_num(f[3], "stage", n))});
  }
  return out;
}

std::vector<BarValue> read_bar_csv(const std::filesystem::path& path) {
  std::istringstream in(read_all(path));
  std::string line;
  if (!std::getline(in, line) || line != "name,accuracy") {
    throw FormatError(path.string() + ": expected header name,accuracy");
  }
  std::vector<BarValue> out;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 2) throw FormatError(path.string() + " line " + std::to_string(n) + ": expected 2 fields");
    out.push_back({f[0], parse_num(f[1], "accuracy", n)});
  }
  return out;
}

void write_bar_csv(const std::filesystem::path& path, const std::vector<BarValue>& bars) {
  std::ostringstream out;
  out << "name,accuracy\n";
  for (const auto& b : bars) out << b.name << ',' << format_number(b.value) << '\n';
  write_text(path, out.str());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

}  // namespace cilf::harness
