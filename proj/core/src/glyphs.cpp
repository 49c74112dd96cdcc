#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "cilf/dataset.hpp"
#include "cilf/errors.hpp"
#include "cilf/rng.hpp"

namespace cilf {
namespace {

// Segment in unit-square coordinates (x right, y down) with stroke thickness.
struct Stroke {
  double x0, y0, x1, y1, thickness;
};

using Glyph = std::vector<Stroke>;

// Every glyph breaks 4-fold rotational symmetry and no glyph coincides with a
// rotation of another; tests/unit/test_datasets.cpp checks both at 16×16.
const std::vector<Glyph>& alphabet() {
  static const std::vector<Glyph> glyphs = {
      // L-bars
      {{0.25, 0.15, 0.25, 0.85, 0.12}, {0.25, 0.85, 0.75, 0.85, 0.12}},
      {{0.70, 0.15, 0.70, 0.85, 0.10}, {0.70, 0.85, 0.30, 0.85, 0.10}, {0.30, 0.85, 0.30, 0.65, 0.10}},
      {{0.20, 0.20, 0.20, 0.80, 0.18}, {0.20, 0.20, 0.55, 0.20, 0.18}},
      {{0.20, 0.20, 0.20, 0.80, 0.10}, {0.40, 0.45, 0.40, 0.80, 0.10}, {0.20, 0.80, 0.80, 0.80, 0.10}},
      // T-junctions
      {{0.15, 0.20, 0.85, 0.20, 0.12}, {0.50, 0.20, 0.50, 0.85, 0.12}},
      {{0.20, 0.65, 0.80, 0.65, 0.10}, {0.35, 0.65, 0.35, 0.15, 0.10}},
      {{0.30, 0.15, 0.30, 0.85, 0.14}, {0.30, 0.50, 0.80, 0.50, 0.08}},
      {{0.25, 0.15, 0.25, 0.85, 0.10}, {0.25, 0.50, 0.75, 0.50, 0.10}, {0.75, 0.50, 0.75, 0.85, 0.10}},
      // F / E-like
      {{0.30, 0.15, 0.30, 0.85, 0.11}, {0.30, 0.15, 0.80, 0.15, 0.11}, {0.30, 0.50, 0.65, 0.50, 0.11}},
      {{0.60, 0.15, 0.60, 0.85, 0.10}, {0.15, 0.60, 0.85, 0.60, 0.10}, {0.15, 0.60, 0.60, 0.15, 0.10}},
      // diagonal strokes
      {{0.15, 0.85, 0.85, 0.15, 0.10}, {0.15, 0.85, 0.55, 0.85, 0.10}},
      {{0.20, 0.20, 0.80, 0.20, 0.10}, {0.80, 0.20, 0.20, 0.80, 0.10}, {0.20, 0.80, 0.50, 0.80, 0.10}},
      {{0.20, 0.80, 0.80, 0.20, 0.09}, {0.80, 0.20, 0.80, 0.55, 0.09}, {0.80, 0.20, 0.45, 0.20, 0.09}},
      {{0.20, 0.15, 0.50, 0.50, 0.10}, {0.80, 0.15, 0.50, 0.50, 0.10}, {0.50, 0.50, 0.50, 0.85, 0.10}},
      {{0.20, 0.20, 0.50, 0.80, 0.10}, {0.50, 0.80, 0.80, 0.20, 0.10}, {0.20, 0.20, 0.45, 0.20, 0.10}},
      {{0.25, 0.15, 0.25, 0.85, 0.10}, {0.25, 0.50, 0.75, 0.15, 0.10}, {0.25, 0.50, 0.75, 0.85, 0.10}},
      // steps, hooks and corners
      {{0.15, 0.30, 0.50, 0.30, 0.12}, {0.50, 0.30, 0.50, 0.80, 0.12}, {0.50, 0.80, 0.85, 0.80, 0.12}},
      {{0.30, 0.15, 0.30, 0.70, 0.11}, {0.30, 0.70, 0.60, 0.85, 0.11}, {0.60, 0.85, 0.80, 0.60, 0.11}},
      {{0.20, 0.20, 0.80, 0.20, 0.16}, {0.80, 0.20, 0.40, 0.85, 0.10}},
      {{0.15, 0.15, 0.45, 0.15, 0.10}, {0.45, 0.15, 0.45, 0.45, 0.10}, {0.55, 0.60, 0.85, 0.85, 0.14}},
      {{0.50, 0.15, 0.50, 0.85, 0.08}, {0.20, 0.30, 0.50, 0.30, 0.16}},
      {{0.15, 0.75, 0.85, 0.75, 0.10}, {0.15, 0.75, 0.15, 0.45, 0.10}, {0.60, 0.75, 0.60, 0.20, 0.10}},
  };
  return glyphs;
}

double segment_distance(double px, double py, const Stroke& s) {
  const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double cx = s.x0 + t * dx - px, cy = s.y0 + t * dy - py;
  return std::sqrt(cx * cx + cy * cy);
}

}  // namespace

std::size_t glyph_alphabet_size() { return alphabet().size(); }

std::vector<double> render_glyph(std::size_t id, std::size_t size) {
  if (id >= alphabet().size()) throw ConfigError("glyph id " + std::to_string(id) + " outside the alphabet");
  if (size < 8) throw ConfigError("glyph size must be at least 8, got " + std::to_string(size));
  std::vector<double> img(size * size, 0.0);
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      const double py = (double(i) + 0.5) / double(size);
      const double px = (double(j) + 0.5) / double(size);
      for (const auto& s : alphabet()[id]) {
        // Half-pixel floor keeps thin strokes visible at small sizes.
        const double half = std::max(0.5 * s.thickness, 0.5 / double(size));
        if (segment_distance(px, py, s) <= half) {
          img[i * size + j] = 1.0;
          break;
        }
      }
    }
  }
  return img;
}

LabeledDataset generate_glyphs(std::size_t num_classes, std::size_t samples_per_class, std::size_t size,
                               double noise_std, std::uint64_t seed) {
  if (num_classes == 0 || num_classes > glyph_alphabet_size()) {
    throw ConfigError("glyphs: num_classes must be in [1, " + std::to_string(glyph_alphabet_size()) + "], got " +
                      std::to_string(num_classes));
  }
  if (size < 8) throw ConfigError("glyphs: size must be at least 8, got " + std::to_string(size));
  if (samples_per_class == 0) throw ConfigError("glyphs: samples_per_class must be positive");
  if (!(noise_std >= 0.0)) throw ConfigError("glyphs: noise_std must be non-negative");

  LabeledDataset ds;
  ds.channels = 1;
  ds.height = size;
  ds.width = size;
  ds.num_classes = num_classes;
  ds.images.reserve(num_classes * samples_per_class * size * size);
  ds.labels.reserve(num_classes * samples_per_class);
  Rng rng = Rng::derive(seed, 0x61a9);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const auto clean = render_glyph(c, size);
    for (std::size_t s = 0; s < samples_per_class; ++s) {
      for (double p : clean) {
        const double v = noise_std > 0.0 ? p + noise_std * rng.normal() : p;
        ds.images.push_back(std::clamp(v, 0.0, 1.0));
      }
      ds.labels.push_back(c);
    }
  }
  return ds;
}

}  // namespace cilf
