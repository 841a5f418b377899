#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace rvsl {

/// Operand shapes violate an operation's shape rule.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A configuration value is unknown, mistyped or out of range. `key()` is the
/// dotted path of the offending entry (e.g. "train.margin").
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& reason)
      : std::invalid_argument(key + ": " + reason), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Probe/gallery splits that break the one-hazy-probe-per-identity protocol.
class ProtocolError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or unreadable files (checkpoints, manifests, images).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rvsl
