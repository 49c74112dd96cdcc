#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cilf/tensor.hpp"

namespace cilf {

/// Images stored as N×C×H×W float64 in [0,1] plus class labels.
struct LabeledDataset {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> images;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t image_size() const noexcept { return channels * height * width; }
  std::span<const double> image(std::size_t i) const;
  std::span<double> image(std::size_t i);

  /// Samples at `indices` stacked into a [B×C×H×W] tensor.
  Tensor batch(std::span<const std::size_t> indices) const;
  /// Whole dataset as one tensor.
  Tensor all() const;
  LabeledDataset subset(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> class_histogram() const;

  /// Throws DimensionError/IndexError/ConfigError when the invariants fail.
  /// With `square`, also requires H == W.
  void validate(bool require_every_class, bool square) const;
};

/// Concatenates datasets with identical image geometry.
LabeledDataset concat(std::span<const LabeledDataset> parts);

// ---------------------------------------------------------------------------
// Rotation-based self-supervised transformation

/// Number of rotated views used by the transformation.
inline constexpr std::size_t kSstViews = 4;

/// Counter-clockwise rotation of a C×H×W image by `degrees` ∈ {0,90,180,270}.
Tensor rotate90(const Tensor& image, int degrees);
/// Span form: rotates `src` into `dst` by `quarter_turns` CCW quarter turns.
void rotate_into(std::span<const double> src, std::span<double> dst, std::size_t channels, std::size_t side,
                 std::size_t quarter_turns);
/// Rotates every image of a [B×C×S×S] tensor.
Tensor rotate_batch(const Tensor& batch, std::size_t quarter_turns);

/// Expanded labels y' = 4·y + view; data holds 4N samples, sample 4i+v is
/// source sample i rotated by v quarter turns.
struct SstDataset {
  LabeledDataset data;
  std::vector<std::uint8_t> view;
  std::size_t source_classes = 0;

  /// View-0 samples with labels mapped back to source classes.
  LabeledDataset project_view0() const;
};

inline std::size_t sst_label(std::size_t label, std::size_t view) { return kSstViews * label + view; }

SstDataset apply_sst(const LabeledDataset& split);

// ---------------------------------------------------------------------------
// Task streams

enum class StreamMode { HalfThenEqual, Equal, BaseThenEqual };

/// HalfThenEqual: k/2 base classes, then `tasks` equal phases.
/// Equal: `tasks` equal phases.
/// BaseThenEqual: `base_classes` base classes, then `tasks` equal phases.
struct StreamSpec {
  StreamMode mode = StreamMode::HalfThenEqual;
  std::size_t tasks = 1;
  std::size_t base_classes = 0;
};

/// Split sizes implied by a spec for k classes. Throws ConfigError when the
/// classes do not divide evenly.
std::vector<std::size_t> task_sizes(std::size_t num_classes, const StreamSpec& spec);

struct Task {
  /// Original dataset class ids in this task.
  std::vector<std::size_t> classes;
  /// Incremental id of the first class; the task owns ids [first_label, first_label + classes.size()).
  std::size_t first_label = 0;
  /// Splits relabelled to incremental ids.
  LabeledDataset train;
  LabeledDataset test;
};

/// Tasks with pairwise disjoint class sets. Class c of the source dataset is
/// relabelled to its position in `class_order`, so task t's classes occupy a
/// contiguous id range and the classifier grows append-only.
struct TaskStream {
  std::vector<std::size_t> class_order;
  std::vector<Task> tasks;
  std::size_t num_classes = 0;
};

/// Stratified per-class split, `train_fraction` of each class to train.
std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& ds, double train_fraction,
                                                           std::uint64_t seed);

TaskStream make_task_stream(const LabeledDataset& train, const LabeledDataset& test, const StreamSpec& spec,
                            std::uint64_t seed);
/// Splits `ds` 80/20 (stratified) first.
TaskStream make_task_stream(const LabeledDataset& ds, const StreamSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic glyphs

/// Size of the built-in glyph alphabet.
std::size_t glyph_alphabet_size();

/// Noiseless S×S rendering of glyph `id`.
std::vector<double> render_glyph(std::size_t id, std::size_t size);

/// Procedurally drawn, rotation-asymmetric glyphs with i.i.d. Gaussian pixel
/// noise (clamped to [0,1]). Labels are ordered class-major.
LabeledDataset generate_glyphs(std::size_t num_classes, std::size_t samples_per_class, std::size_t size,
                               double noise_std, std::uint64_t seed);

// ---------------------------------------------------------------------------
// IDX files

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads an images/labels IDX pair, scaling pixels to [0,1].
LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);
/// Writes a single-channel dataset as an IDX pair (pixels quantized to u8).
void write_idx(const LabeledDataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

// ---------------------------------------------------------------------------
// Corruptions

struct GaussianNoise {
  double sigma;
};
struct Brightness {
  double delta;
};
struct BoxBlur {
  std::size_t width;
};
using Corruption = std::variant<GaussianNoise, Brightness, BoxBlur>;

std::string corruption_name(const Corruption& c);

/// Copy of `split` with the corruption applied and pixels clamped to [0,1].
/// Ranges: sigma ∈ [0,1], delta ∈ [-1,1], width odd in [1,15].
LabeledDataset corrupt(const LabeledDataset& split, const Corruption& kind, std::uint64_t seed);

}  // namespace cilf
