#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cilf {

/// Tensor or array shapes that do not fit together.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A scalar argument outside its documented domain.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Class label or node id outside the valid range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Invalid experiment or dataset configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A required state (snapshot, prototypes, ...) is missing.
class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Task stream violates the incremental protocol (e.g. class overlap).
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed binary or text file. Carries the byte offset when known.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what, std::int64_t offset = -1)
      : std::runtime_error(offset >= 0 ? what + " (at byte offset " + std::to_string(offset) + ")" : what),
        offset_(offset) {}

  std::int64_t offset() const noexcept { return offset_; }

 private:
  std::int64_t offset_;
};

/// Training diverged. `checkpoint` names the last good checkpoint, if one was written.
class AbortedRunError : public std::runtime_error {
 public:
  AbortedRunError(const std::string& what, std::string checkpoint)
      : std::runtime_error(what), checkpoint_(std::move(checkpoint)) {}

  const std::string& checkpoint() const noexcept { return checkpoint_; }

 private:
  std::string checkpoint_;
};

}  // namespace cilf
