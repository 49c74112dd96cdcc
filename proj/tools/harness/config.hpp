#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cilf/dataset.hpp"
#include "cilf/model.hpp"
#include "cilf/trainer.hpp"

namespace cilf::harness {

/// Parsed `[section]` / `key = value` text; keys are "section.key".
struct ConfigText {
  std::map<std::string, std::string> values;
  std::map<std::string, std::size_t> lines;
};

/// Throws ConfigError with the line number on malformed lines or duplicates.
ConfigText parse_config_text(const std::string& text);

/// SHA-256 (hex) of the sorted `section.key=value` lines; independent of key order.
std::string config_hash(const ConfigText& cfg);

enum class DatasetSource { Glyphs, Idx };

struct DatasetSpec {
  DatasetSource source = DatasetSource::Glyphs;
  std::size_t classes = 16;
  std::size_t samples_per_class = 200;
  std::size_t size = 16;
  double noise = 0.7;
  std::uint64_t seed = 7;
  std::filesystem::path train_images, train_labels, test_images, test_labels;
};

struct EvalOptions {
  std::vector<std::string> corruptions;
  std::size_t corruption_severity = 1;
  bool export_features = false;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetSpec dataset;
  StreamSpec stream;
  ArchSpec arch;
  TrainConfig train;
  EvalOptions eval;
  std::filesystem::path output_dir = "out";
  bool write_checkpoints = true;
  std::vector<std::uint64_t> seeds = {1};
  std::string hash;

  /// Cross-field checks; throws ConfigError naming the field.
  void validate() const;
};

/// Builds and validates a config. Unknown sections or keys are rejected.
ExperimentConfig load_config_text(const std::string& text);
/// Throws MissingFileError if `path` does not exist.
ExperimentConfig load_config(const std::filesystem::path& path);

/// A required input file is absent.
class MissingFileError : public std::runtime_error {
 public:
  explicit MissingFileError(const std::filesystem::path& path)
      : std::runtime_error("file not found: " + path.string()), path_(path) {}
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

/// Loads (or generates) the dataset and builds the task stream for `seed`.
TaskStream build_stream(const ExperimentConfig& cfg, std::uint64_t seed);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace cilf::harness
