#pragma once

#include <stdexcept>
#include <string>

namespace glteleop {

/// Invalid configuration value (scaling factors, model files, calibration).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or non-finite runtime input (device readings, targets).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A message that is well framed but semantically invalid for the receiver.
class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(const std::string& what, std::string kind = {})
      : std::runtime_error(what), kind_(std::move(kind)) {}

  /// Payload kind string that triggered the error, when known.
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// Truncated or oversized frame.
class FramingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Peer speaks a different schema version.
class NegotiationError : public std::runtime_error {
 public:
  NegotiationError(const std::string& what, int remote_version)
      : std::runtime_error(what), remote_version_(remote_version) {}

  int remote_version() const noexcept { return remote_version_; }

 private:
  int remote_version_;
};

/// Scenario or log text that cannot be parsed; carries the offending location.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::string field, int line = 0)
      : std::runtime_error(what), field_(std::move(field)), line_(line) {}

  const std::string& field() const noexcept { return field_; }
  int line() const noexcept { return line_; }

 private:
  std::string field_;
  int line_;
};

}  // namespace glteleop
