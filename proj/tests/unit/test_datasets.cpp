#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "cilf/dataset.hpp"
#include "cilf/errors.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace cilf;
using cilf::testing::random_dataset;
using cilf::testing::random_tensor;

TEST(Rotate90, TwoByTwoCases) {
  const Tensor img({1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(rotate90(img, 0), img);
  EXPECT_EQ(rotate90(img, 90), Tensor({1, 2, 2}, {2, 4, 1, 3}));
  EXPECT_EQ(rotate90(img, 180), Tensor({1, 2, 2}, {4, 3, 2, 1}));
  EXPECT_EQ(rotate90(img, 270), Tensor({1, 2, 2}, {3, 1, 4, 2}));
}

TEST(Rotate90, FourQuarterTurnsAreIdentity) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t s = 1 + rng.index(10), c = 1 + rng.index(3);
    const Tensor img = random_tensor({c, s, s}, rng);
    Tensor r = img;
    for (int i = 0; i < 4; ++i) r = rotate90(r, 90);
    EXPECT_EQ(r, img);
  }
}

TEST(Rotate90, Errors) {
  EXPECT_THROW(rotate90(Tensor({1, 2, 3}), 90), DimensionError);
  EXPECT_THROW(rotate90(Tensor({1, 2, 2}), 45), ArgumentError);
}

TEST(ApplySst, CountsAndLabels) {
  Rng rng(2);
  LabeledDataset ds = random_dataset(5, 2, 4, rng);
  const SstDataset sst = apply_sst(ds);
  EXPECT_EQ(sst.data.size(), 20u);
  EXPECT_EQ(sst.data.num_classes, 8u);
  for (auto y : sst.data.labels) EXPECT_LT(y, 8u);
  EXPECT_EQ(sst_label(3, 3), 15u);
}

TEST(ApplySst, HistogramIsFourFoldReplication) {
  Rng rng(3);
  LabeledDataset ds = random_dataset(23, 4, 3, rng);
  for (auto& y : ds.labels) y = rng.index(4);
  ds.labels[0] = 0, ds.labels[1] = 1, ds.labels[2] = 2, ds.labels[3] = 3;
  const SstDataset sst = apply_sst(ds);
  std::vector<std::size_t> expect(16, 0);
  for (auto y : ds.labels)
    for (std::size_t v = 0; v < 4; ++v) ++expect[4 * y + v];
  EXPECT_EQ(sst.data.class_histogram(), expect);
}

TEST(ApplySst, ViewZeroProjectionRecoversInput) {
  Rng rng(4);
  const LabeledDataset ds = random_dataset(12, 3, 5, rng, 2);
  const LabeledDataset back = apply_sst(ds).project_view0();
  EXPECT_EQ(back.images, ds.images);
  EXPECT_EQ(back.labels, ds.labels);
}

TEST(ApplySst, NonSquareRejected) {
  LabeledDataset ds;
  ds.height = 2;
  ds.width = 3;
  ds.num_classes = 1;
  ds.images.resize(6);
  ds.labels = {0};
  EXPECT_THROW(apply_sst(ds), DimensionError);
}

TEST(TaskStream, Sizes) {
  EXPECT_EQ(task_sizes(20, {StreamMode::HalfThenEqual, 5, 0}), (std::vector<std::size_t>{10, 2, 2, 2, 2, 2}));
  EXPECT_EQ(task_sizes(8, {StreamMode::Equal, 4, 0}), (std::vector<std::size_t>{2, 2, 2, 2}));
  EXPECT_EQ(task_sizes(10, {StreamMode::BaseThenEqual, 3, 4}), (std::vector<std::size_t>{4, 2, 2, 2}));
  EXPECT_THROW(task_sizes(10, {StreamMode::HalfThenEqual, 2, 0}), ConfigError);
  EXPECT_THROW(task_sizes(9, {StreamMode::Equal, 4, 0}), ConfigError);
  EXPECT_THROW(task_sizes(8, {StreamMode::Equal, 0, 0}), ConfigError);
}

TEST(TaskStream, PartitionAndDeterminism) {
  const LabeledDataset ds = generate_glyphs(8, 10, 8, 0.1, 1);
  const StreamSpec spec{StreamMode::HalfThenEqual, 2, 0};
  const TaskStream a = make_task_stream(ds, spec, 42);
  const TaskStream b = make_task_stream(ds, spec, 42);
  EXPECT_EQ(a.class_order, b.class_order);
  ASSERT_EQ(a.tasks.size(), 3u);
  std::set<std::size_t> all;
  std::size_t next = 0;
  for (const auto& t : a.tasks) {
    EXPECT_EQ(t.first_label, next);
    for (auto c : t.classes) EXPECT_TRUE(all.insert(c).second);
    for (auto y : t.train.labels) EXPECT_TRUE(y >= t.first_label && y < t.first_label + t.classes.size());
    for (auto y : t.test.labels) EXPECT_TRUE(y >= t.first_label && y < t.first_label + t.classes.size());
    EXPECT_EQ(t.train.size() + t.test.size(), 10 * t.classes.size());
    next += t.classes.size();
  }
  EXPECT_EQ(all.size(), 8u);
  EXPECT_EQ(*all.rbegin(), 7u);
}

TEST(TaskStream, RelabelKeepsImages) {
  const LabeledDataset ds = generate_glyphs(4, 5, 8, 0.0, 1);
  const TaskStream s = make_task_stream(ds, ds, {StreamMode::Equal, 2, 0}, 9);
  for (const auto& t : s.tasks) {
    for (std::size_t i = 0; i < t.train.size(); ++i) {
      const std::size_t original = s.class_order[t.train.labels[i]];
      const auto expect = render_glyph(original, 8);
      const auto got = t.train.image(i);
      EXPECT_TRUE(std::equal(got.begin(), got.end(), expect.begin()));
    }
  }
}

TEST(Glyphs, ShapesAndNoiselessIdentity) {
  const LabeledDataset ds = generate_glyphs(4, 10, 16, 0.0, 3);
  EXPECT_EQ(ds.size(), 40u);
  EXPECT_EQ(ds.channels, 1u);
  EXPECT_EQ(ds.height, 16u);
  EXPECT_EQ(ds.width, 16u);
  for (std::size_t i = 1; i < ds.size(); ++i) {
    if (ds.labels[i] != ds.labels[i - 1]) continue;
    const auto a = ds.image(i), b = ds.image(i - 1);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }
  for (double p : ds.images) EXPECT_TRUE(p >= 0.0 && p <= 1.0);
}

TEST(Glyphs, NoiselessPixelMeanIndependentOfSeed) {
  const auto mean = [](const LabeledDataset& ds) {
    return std::accumulate(ds.images.begin(), ds.images.end(), 0.0) / double(ds.images.size());
  };
  const LabeledDataset a = generate_glyphs(6, 3, 12, 0.0, 1);
  const LabeledDataset b = generate_glyphs(6, 3, 12, 0.0, 777);
  double direct = 0.0;
  for (std::size_t c = 0; c < 6; ++c) {
    const auto g = render_glyph(c, 12);
    direct += std::accumulate(g.begin(), g.end(), 0.0);
  }
  direct /= 6.0 * 144.0;
  EXPECT_EQ(mean(a), mean(b));
  EXPECT_NEAR(mean(a), direct, 1e-14);
}

TEST(Glyphs, DeterministicPerSeed) {
  EXPECT_EQ(generate_glyphs(3, 4, 8, 0.3, 5).images, generate_glyphs(3, 4, 8, 0.3, 5).images);
  EXPECT_NE(generate_glyphs(3, 4, 8, 0.3, 5).images, generate_glyphs(3, 4, 8, 0.3, 6).images);
}

// Every glyph differs from its own rotations and from every rotation of
// every other glyph, so the 4k rotated classes are all distinct.
TEST(Glyphs, DistinctUnderRotation) {
  const std::size_t n = glyph_alphabet_size(), s = 16;
  ASSERT_GE(n, 16u);
  std::vector<std::vector<std::vector<double>>> views(n);
  for (std::size_t g = 0; g < n; ++g) {
    const auto img = render_glyph(g, s);
    for (std::size_t q = 0; q < 4; ++q) {
      std::vector<double> r(s * s);
      rotate_into(img, r, 1, s, q);
      views[g].push_back(r);
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t q = 1; q < 4; ++q) EXPECT_NE(views[a][0], views[a][q]) << "glyph " << a << " quarter " << q;
    for (std::size_t b = a + 1; b < n; ++b)
      for (std::size_t q = 0; q < 4; ++q) EXPECT_NE(views[a][0], views[b][q]) << a << " vs " << b << " q" << q;
  }
}

TEST(Glyphs, Errors) {
  EXPECT_THROW(generate_glyphs(glyph_alphabet_size() + 1, 1, 16, 0.0, 1), ConfigError);
  EXPECT_THROW(generate_glyphs(2, 1, 7, 0.0, 1), ConfigError);
}

namespace {

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("cilf_ds_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                                                 ::testing::UnitTest::GetInstance()->current_test_info()->name())) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

std::vector<unsigned char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Idx, RoundTrip) {
  TempDir dir;
  LabeledDataset ds;
  ds.height = ds.width = 3;
  ds.num_classes = 3;
  for (int i = 0; i < 4 * 9; ++i) ds.images.push_back(double(i * 7 % 256) / 255.0);
  ds.labels = {0, 2, 1, 2};
  write_idx(ds, dir.path / "img", dir.path / "lab");
  const LabeledDataset back = load_idx(dir.path / "img", dir.path / "lab");
  EXPECT_EQ(back.size(), 4u);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.height, 3u);
  for (std::size_t i = 0; i < ds.images.size(); ++i) EXPECT_NEAR(back.images[i], ds.images[i], 1e-12);
}

TEST(Idx, BigEndianHeader) {
  TempDir dir;
  // 10 images of 1×1 written by hand.
  std::vector<unsigned char> img = {0, 0, 8, 3, 0, 0, 0, 0x0A, 0, 0, 0, 1, 0, 0, 0, 1};
  std::vector<unsigned char> lab = {0, 0, 8, 1, 0, 0, 0, 0x0A};
  for (int i = 0; i < 10; ++i) {
    img.push_back(static_cast<unsigned char>(i * 25));
    lab.push_back(static_cast<unsigned char>(i % 2));
  }
  write_bytes(dir.path / "img", img);
  write_bytes(dir.path / "lab", lab);
  const LabeledDataset ds = load_idx(dir.path / "img", dir.path / "lab");
  EXPECT_EQ(ds.size(), 10u);
  EXPECT_DOUBLE_EQ(ds.images[4], 100.0 / 255.0);

  const auto written = [&] {
    write_idx(ds, dir.path / "img2", dir.path / "lab2");
    return read_bytes(dir.path / "img2");
  }();
  EXPECT_EQ(std::vector<unsigned char>(written.begin(), written.begin() + 16),
            std::vector<unsigned char>(img.begin(), img.begin() + 16));
}

TEST(Idx, FormatErrorsNameTheField) {
  TempDir dir;
  LabeledDataset ds;
  ds.height = ds.width = 2;
  ds.num_classes = 2;
  ds.images = std::vector<double>(8, 0.5);
  ds.labels = {0, 1};
  write_idx(ds, dir.path / "img", dir.path / "lab");
  const auto img = read_bytes(dir.path / "img");
  const auto lab = read_bytes(dir.path / "lab");

  const auto expect_error = [&](const std::vector<unsigned char>& i, const std::vector<unsigned char>& l,
                                const std::string& field) {
    write_bytes(dir.path / "i", i);
    write_bytes(dir.path / "l", l);
    try {
      load_idx(dir.path / "i", dir.path / "l");
      ADD_FAILURE() << "expected a format error naming " << field;
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  auto bad_magic = img;
  bad_magic[3] = 0x01;
  expect_error(bad_magic, lab, "magic");
  expect_error(std::vector<unsigned char>(img.begin(), img.end() - 1), lab, "pixels");
  auto more_labels = lab;
  more_labels[7] = 3;
  more_labels.push_back(0);
  expect_error(img, more_labels, "count");
  expect_error(std::vector<unsigned char>(img.begin(), img.begin() + 6), lab, "image count");
}

TEST(Corrupt, IdentityCases) {
  Rng rng(7);
  const LabeledDataset ds = random_dataset(6, 2, 5, rng);
  EXPECT_EQ(corrupt(ds, GaussianNoise{0.0}, 1).images, ds.images);
  EXPECT_EQ(corrupt(ds, Brightness{0.0}, 1).images, ds.images);
  EXPECT_EQ(corrupt(ds, BoxBlur{1}, 1).images, ds.images);
  EXPECT_EQ(corrupt(ds, GaussianNoise{0.2}, 1).labels, ds.labels);
}

TEST(Corrupt, BrightnessClamps) {
  LabeledDataset ds;
  ds.height = ds.width = 1;
  ds.num_classes = 1;
  ds.images = {0.95};
  ds.labels = {0};
  EXPECT_DOUBLE_EQ(corrupt(ds, Brightness{0.2}, 1).images[0], 1.0);
}

TEST(Corrupt, NoiseStandardDeviation) {
  LabeledDataset ds;
  ds.height = ds.width = 50;
  ds.num_classes = 1;
  ds.images = std::vector<double>(40 * 2500, 0.5);
  ds.labels = std::vector<std::size_t>(40, 0);
  const LabeledDataset c = corrupt(ds, GaussianNoise{0.1}, 3);
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const double d = c.images[i] - ds.images[i];
    s += d;
    s2 += d * d;
  }
  const double n = double(ds.images.size());
  const double sd = std::sqrt(s2 / n - (s / n) * (s / n));
  EXPECT_NEAR(sd, 0.1, 0.005);
  EXPECT_EQ(c.images, corrupt(ds, GaussianNoise{0.1}, 3).images);
}

TEST(Corrupt, BoxBlurAveragesNeighbourhood) {
  LabeledDataset ds;
  ds.height = ds.width = 3;
  ds.num_classes = 1;
  ds.images = {0, 0, 0, 0, 0.9, 0, 0, 0, 0};
  ds.labels = {0};
  const LabeledDataset c = corrupt(ds, BoxBlur{3}, 1);
  EXPECT_NEAR(c.images[4], 0.1, 1e-15);
}

TEST(Corrupt, RangeErrors) {
  Rng rng(8);
  const LabeledDataset ds = random_dataset(2, 1, 3, rng);
  EXPECT_THROW(corrupt(ds, GaussianNoise{1.5}, 1), ArgumentError);
  EXPECT_THROW(corrupt(ds, Brightness{-2.0}, 1), ArgumentError);
  EXPECT_THROW(corrupt(ds, BoxBlur{4}, 1), ArgumentError);
}
