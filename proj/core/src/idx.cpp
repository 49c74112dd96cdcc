#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>

#include "cilf/dataset.hpp"
#include "cilf/errors.hpp"

namespace cilf {
namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open IDX file '" + path.string() + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset, const std::string& field,
                        const std::filesystem::path& path) {
  if (offset + 4 > buf.size()) {
    throw FormatError(path.string() + ": truncated header, missing " + field, std::int64_t(offset));
  }
  return (std::uint32_t(buf[offset]) << 24) | (std::uint32_t(buf[offset + 1]) << 16) |
         (std::uint32_t(buf[offset + 2]) << 8) | std::uint32_t(buf[offset + 3]);
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> bytes{char((v >> 24) & 0xff), char((v >> 16) & 0xff), char((v >> 8) & 0xff),
                                  char(v & 0xff)};
  out.write(bytes.data(), 4);
}

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  const std::uint32_t img_magic = read_be32(img, 0, "magic", images_path);
  if (img_magic != kIdxImageMagic) {
    throw FormatError(images_path.string() + ": bad magic in field 'magic' (expected 0x00000803)", 0);
  }
  const std::uint32_t count = read_be32(img, 4, "image count", images_path);
  const std::uint32_t rows = read_be32(img, 8, "rows", images_path);
  const std::uint32_t cols = read_be32(img, 12, "cols", images_path);
  if (rows == 0 || cols == 0) throw FormatError(images_path.string() + ": zero-sized field 'rows'/'cols'", 8);

  const std::uint32_t lab_magic = read_be32(lab, 0, "magic", labels_path);
  if (lab_magic != kIdxLabelMagic) {
    throw FormatError(labels_path.string() + ": bad magic in field 'magic' (expected 0x00000801)", 0);
  }
  const std::uint32_t label_count = read_be32(lab, 4, "label count", labels_path);
  if (label_count != count) {
    throw FormatError("field 'count' mismatch: " + std::to_string(count) + " images vs " +
                      std::to_string(label_count) + " labels");
  }

  const std::size_t pixels = std::size_t(rows) * cols;
  const std::size_t need_img = 16 + std::size_t(count) * pixels;
  if (img.size() < need_img) {
    throw FormatError(images_path.string() + ": truncated payload in field 'pixels' (" + std::to_string(img.size()) +
                          " of " + std::to_string(need_img) + " bytes)",
                      std::int64_t(img.size()));
  }
  if (lab.size() < 8 + std::size_t(count)) {
    throw FormatError(labels_path.string() + ": truncated payload in field 'labels' (" + std::to_string(lab.size()) +
                          " of " + std::to_string(8 + std::size_t(count)) + " bytes)",
                      std::int64_t(lab.size()));
  }

  LabeledDataset ds;
  ds.channels = 1;
  ds.height = rows;
  ds.width = cols;
  ds.images.resize(std::size_t(count) * pixels);
  for (std::size_t i = 0; i < ds.images.size(); ++i) ds.images[i] = double(img[16 + i]) / 255.0;
  ds.labels.resize(count);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = count == 0 ? 0 : max_label + 1;
  return ds;
}

void write_idx(const LabeledDataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  if (ds.channels != 1) throw DimensionError("IDX export supports single-channel images only");
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw FormatError("cannot open IDX output files for writing");
  write_be32(img, kIdxImageMagic);
  write_be32(img, std::uint32_t(ds.size()));
  write_be32(img, std::uint32_t(ds.height));
  write_be32(img, std::uint32_t(ds.width));
  for (double p : ds.images) {
    img.put(char(static_cast<unsigned char>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0))));
  }
  write_be32(lab, kIdxLabelMagic);
  write_be32(lab, std::uint32_t(ds.size()));
  for (auto y : ds.labels) {
    if (y > 255) throw IndexError("IDX labels are u8; got label " + std::to_string(y));
    lab.put(char(static_cast<unsigned char>(y)));
  }
}

}  // namespace cilf
