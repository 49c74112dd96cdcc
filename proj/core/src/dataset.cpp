#include <algorithm>
#include <cmath>
#include <numeric>

#include "cilf/dataset.hpp"
#include "cilf/errors.hpp"
#include "cilf/rng.hpp"

namespace cilf {

std::span<const double> LabeledDataset::image(std::size_t i) const {
  return std::span<const double>(images).subspan(i * image_size(), image_size());
}

std::span<double> LabeledDataset::image(std::size_t i) {
  return std::span<double>(images).subspan(i * image_size(), image_size());
}

Tensor LabeledDataset::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw DimensionError("batch: empty index list");
  const std::size_t stride = image_size();
  std::vector<double> data(indices.size() * stride);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= size()) throw IndexError("batch: sample index " + std::to_string(indices[b]) + " out of range");
    auto src = image(indices[b]);
    std::copy(src.begin(), src.end(), data.begin() + std::ptrdiff_t(b * stride));
  }
  return Tensor({indices.size(), channels, height, width}, std::move(data));
}

Tensor LabeledDataset::all() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), 0);
  return batch(idx);
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.channels = channels;
  out.height = height;
  out.width = width;
  out.num_classes = num_classes;
  out.images.reserve(indices.size() * image_size());
  out.labels.reserve(indices.size());
  for (auto i : indices) {
    auto src = image(i);
    out.images.insert(out.images.end(), src.begin(), src.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

std::vector<std::size_t> LabeledDataset::class_histogram() const {
  std::vector<std::size_t> hist(num_classes, 0);
  for (auto y : labels) {
    if (y < num_classes) ++hist[y];
  }
  return hist;
}

void LabeledDataset::validate(bool require_every_class, bool square) const {
  if (channels == 0 || height == 0 || width == 0) throw DimensionError("dataset has an empty image geometry");
  if (images.size() != labels.size() * image_size()) {
    throw DimensionError("dataset holds " + std::to_string(images.size()) + " pixels for " +
                         std::to_string(labels.size()) + " labels of " + std::to_string(image_size()) + " pixels");
  }
  if (square && height != width) {
    throw DimensionError("images must be square, got " + std::to_string(height) + "x" + std::to_string(width));
  }
  for (auto y : labels) {
    if (y >= num_classes) throw IndexError("label " + std::to_string(y) + " >= num_classes " + std::to_string(num_classes));
  }
  if (require_every_class) {
    const auto hist = class_histogram();
    for (std::size_t c = 0; c < hist.size(); ++c) {
      if (hist[c] == 0) throw ConfigError("class " + std::to_string(c) + " has no samples");
    }
  }
}

LabeledDataset concat(std::span<const LabeledDataset> parts) {
  if (parts.empty()) throw DimensionError("concat: no datasets");
  LabeledDataset out;
  out.channels = parts[0].channels;
  out.height = parts[0].height;
  out.width = parts[0].width;
  for (const auto& p : parts) {
    if (p.channels != out.channels || p.height != out.height || p.width != out.width) {
      throw DimensionError("concat: image geometry mismatch");
    }
    out.images.insert(out.images.end(), p.images.begin(), p.images.end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    out.num_classes = std::max(out.num_classes, p.num_classes);
  }
  return out;
}

// ---------------------------------------------------------------------------

void rotate_into(std::span<const double> src, std::span<double> dst, std::size_t channels, std::size_t side,
                 std::size_t quarter_turns) {
  const std::size_t n = side;
  for (std::size_t c = 0; c < channels; ++c) {
    const double* in = src.data() + c * n * n;
    double* out = dst.data() + c * n * n;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double v = 0.0;
        switch (quarter_turns % 4) {
          case 0: v = in[i * n + j]; break;
          case 1: v = in[j * n + (n - 1 - i)]; break;
          case 2: v = in[(n - 1 - i) * n + (n - 1 - j)]; break;
          default: v = in[(n - 1 - j) * n + i]; break;
        }
        out[i * n + j] = v;
      }
    }
  }
}

namespace {

std::size_t quarter_turns_of(int degrees) {
  switch (degrees) {
    case 0: return 0;
    case 90: return 1;
    case 180: return 2;
    case 270: return 3;
    default: throw ArgumentError("rotation must be one of {0, 90, 180, 270}, got " + std::to_string(degrees));
  }
}

}  // namespace

Tensor rotate90(const Tensor& image, int degrees) {
  const std::size_t turns = quarter_turns_of(degrees);
  if (image.rank() != 3) throw DimensionError("rotate90 expects a C×H×W image, got " + shape_string(image.shape()));
  if (image.dim(1) != image.dim(2)) {
    throw DimensionError("rotate90 needs a square image, got " + shape_string(image.shape()));
  }
  Tensor out(image.shape());
  rotate_into(image.data(), out.data(), image.dim(0), image.dim(1), turns);
  return out;
}

Tensor rotate_batch(const Tensor& batch, std::size_t quarter_turns) {
  if (batch.rank() != 4 || batch.dim(2) != batch.dim(3)) {
    throw DimensionError("rotate_batch needs a [B×C×S×S] tensor, got " + shape_string(batch.shape()));
  }
  Tensor out(batch.shape());
  const std::size_t per = batch.size() / batch.dim(0);
  for (std::size_t b = 0; b < batch.dim(0); ++b) {
    rotate_into(batch.data().subspan(b * per, per), out.data().subspan(b * per, per), batch.dim(1), batch.dim(2),
                quarter_turns);
  }
  return out;
}

SstDataset apply_sst(const LabeledDataset& split) {
  if (split.height != split.width) {
    throw DimensionError("SST needs square images, got " + std::to_string(split.height) + "x" +
                         std::to_string(split.width));
  }
  SstDataset out;
  out.source_classes = split.num_classes;
  auto& d = out.data;
  d.channels = split.channels;
  d.height = split.height;
  d.width = split.width;
  d.num_classes = kSstViews * split.num_classes;
  d.images.resize(kSstViews * split.images.size());
  d.labels.resize(kSstViews * split.size());
  out.view.resize(kSstViews * split.size());
  const std::size_t stride = split.image_size();
  for (std::size_t i = 0; i < split.size(); ++i) {
    for (std::size_t v = 0; v < kSstViews; ++v) {
      const std::size_t o = kSstViews * i + v;
      rotate_into(split.image(i), std::span<double>(d.images).subspan(o * stride, stride), split.channels,
                  split.height, v);
      d.labels[o] = sst_label(split.labels[i], v);
      out.view[o] = std::uint8_t(v);
    }
  }
  return out;
}

LabeledDataset SstDataset::project_view0() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < view.size(); ++i) {
    if (view[i] == 0) idx.push_back(i);
  }
  LabeledDataset out = data.subset(idx);
  for (auto& y : out.labels) y /= kSstViews;
  out.num_classes = source_classes;
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> task_sizes(std::size_t num_classes, const StreamSpec& spec) {
  if (spec.tasks == 0) throw ConfigError("task stream needs at least one task");
  std::vector<std::size_t> sizes;
  std::size_t base = 0;
  switch (spec.mode) {
    case StreamMode::Equal:
      if (num_classes % spec.tasks != 0) {
        throw ConfigError("equal(" + std::to_string(spec.tasks) + "): " + std::to_string(num_classes) +
                          " classes do not divide evenly");
      }
      return std::vector<std::size_t>(spec.tasks, num_classes / spec.tasks);
    case StreamMode::HalfThenEqual:
      if (num_classes % 2 != 0) {
        throw ConfigError("half_then_equal: " + std::to_string(num_classes) + " classes cannot be halved");
      }
      base = num_classes / 2;
      break;
    case StreamMode::BaseThenEqual:
      base = spec.base_classes;
      if (base == 0 || base >= num_classes) {
        throw ConfigError("base_then_equal: base class count must be in [1, " + std::to_string(num_classes) + ")");
      }
      break;
  }
  const std::size_t rest = num_classes - base;
  if (rest % spec.tasks != 0) {
    throw ConfigError(std::to_string(rest) + " incremental classes do not divide into " + std::to_string(spec.tasks) +
                      " phases");
  }
  sizes.push_back(base);
  sizes.insert(sizes.end(), spec.tasks, rest / spec.tasks);
  return sizes;
}

std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& ds, double train_fraction,
                                                           std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ArgumentError("train fraction must be in (0, 1]");
  std::vector<std::vector<std::size_t>> per_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) per_class[ds.labels[i]].push_back(i);
  Rng rng = Rng::derive(seed, 0x5b117);
  std::vector<std::size_t> train_idx, test_idx;
  for (auto& members : per_class) {
    if (members.empty()) continue;
    rng.shuffle(std::span<std::size_t>(members));
    std::size_t n_train = std::size_t(std::llround(train_fraction * double(members.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, members.size());
    if (members.size() >= 2 && n_train == members.size() && train_fraction < 1.0) n_train = members.size() - 1;
    std::sort(members.begin(), members.begin() + std::ptrdiff_t(n_train));
    std::sort(members.begin() + std::ptrdiff_t(n_train), members.end());
    train_idx.insert(train_idx.end(), members.begin(), members.begin() + std::ptrdiff_t(n_train));
    test_idx.insert(test_idx.end(), members.begin() + std::ptrdiff_t(n_train), members.end());
  }
  return {ds.subset(train_idx), ds.subset(test_idx)};
}

TaskStream make_task_stream(const LabeledDataset& train, const LabeledDataset& test, const StreamSpec& spec,
                            std::uint64_t seed) {
  if (train.num_classes != test.num_classes) throw ConfigError("train/test class counts differ");
  const std::size_t k = train.num_classes;
  const auto sizes = task_sizes(k, spec);

  TaskStream stream;
  stream.num_classes = k;
  stream.class_order.resize(k);
  std::iota(stream.class_order.begin(), stream.class_order.end(), 0);
  Rng rng = Rng::derive(seed, 0xc1a55);
  rng.shuffle(std::span<std::size_t>(stream.class_order));

  std::vector<std::size_t> incremental_id(k);
  for (std::size_t pos = 0; pos < k; ++pos) incremental_id[stream.class_order[pos]] = pos;

  const auto select = [&](const LabeledDataset& ds, std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const std::size_t id = incremental_id[ds.labels[i]];
      if (id >= lo && id < hi) idx.push_back(i);
    }
    LabeledDataset out = ds.subset(idx);
    for (auto& y : out.labels) y = incremental_id[y];
    out.num_classes = hi;
    return out;
  };

  std::size_t offset = 0;
  for (auto n : sizes) {
    Task task;
    task.first_label = offset;
    task.classes.assign(stream.class_order.begin() + std::ptrdiff_t(offset),
                        stream.class_order.begin() + std::ptrdiff_t(offset + n));
    task.train = select(train, offset, offset + n);
    task.test = select(test, offset, offset + n);
    stream.tasks.push_back(std::move(task));
    offset += n;
  }
  return stream;
}

TaskStream make_task_stream(const LabeledDataset& ds, const StreamSpec& spec, std::uint64_t seed) {
  auto [train, test] = stratified_split(ds, 0.8, seed);
  return make_task_stream(train, test, spec, seed);
}

// ---------------------------------------------------------------------------

std::string corruption_name(const Corruption& c) {
  struct {
    std::string operator()(const GaussianNoise&) const { return "gaussian_noise"; }
    std::string operator()(const Brightness&) const { return "brightness"; }
    std::string operator()(const BoxBlur&) const { return "box_blur"; }
  } visitor;
  return std::visit(visitor, c);
}

LabeledDataset corrupt(const LabeledDataset& split, const Corruption& kind, std::uint64_t seed) {
  LabeledDataset out = split;
  if (const auto* noise = std::get_if<GaussianNoise>(&kind)) {
    if (!(noise->sigma >= 0.0 && noise->sigma <= 1.0)) throw ArgumentError("gaussian_noise sigma must be in [0, 1]");
    if (noise->sigma == 0.0) return out;
    Rng rng = Rng::derive(seed, 0x9015e);
    for (auto& p : out.images) p = std::clamp(p + noise->sigma * rng.normal(), 0.0, 1.0);
  } else if (const auto* bright = std::get_if<Brightness>(&kind)) {
    if (!(bright->delta >= -1.0 && bright->delta <= 1.0)) throw ArgumentError("brightness delta must be in [-1, 1]");
    for (auto& p : out.images) p = std::clamp(p + bright->delta, 0.0, 1.0);
  } else if (const auto* blur = std::get_if<BoxBlur>(&kind)) {
    const std::size_t w = blur->width;
    if (w == 0 || w % 2 == 0 || w > 15) throw ArgumentError("box_blur width must be odd in [1, 15]");
    if (w == 1) return out;
    const std::ptrdiff_t r = std::ptrdiff_t(w / 2);
    const std::ptrdiff_t H = std::ptrdiff_t(split.height), W = std::ptrdiff_t(split.width);
    for (std::size_t n = 0; n < split.size(); ++n) {
      for (std::size_t c = 0; c < split.channels; ++c) {
        const double* in = split.image(n).data() + c * split.height * split.width;
        double* dst = out.image(n).data() + c * split.height * split.width;
        for (std::ptrdiff_t i = 0; i < H; ++i) {
          for (std::ptrdiff_t j = 0; j < W; ++j) {
            double acc = 0.0;
            int count = 0;
            for (std::ptrdiff_t di = -r; di <= r; ++di) {
              for (std::ptrdiff_t dj = -r; dj <= r; ++dj) {
                const std::ptrdiff_t y = i + di, x = j + dj;
                if (y < 0 || y >= H || x < 0 || x >= W) continue;
                acc += in[y * W + x];
                ++count;
              }
            }
            dst[i * W + j] = std::clamp(acc / count, 0.0, 1.0);
          }
        }
      }
    }
  }
  return out;
}

}  // namespace cilf
