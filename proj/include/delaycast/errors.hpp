#ifndef DELAYCAST_ERRORS_HPP
#define DELAYCAST_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace delaycast {

// Bad or out-of-range configuration, including CSV column maps that do not
// match the file header. Maps to process exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A required upstream artifact (checkpoint, input file) does not exist.
// Maps to process exit code 2.
class MissingArtifactError : public std::runtime_error {
 public:
  explicit MissingArtifactError(const std::string& msg) : std::runtime_error(msg) {}
};

// Anything else that stops a run: I/O failures, empty inputs, degenerate
// calibration subsets. Maps to process exit code 3.
class RuntimeFailure : public std::runtime_error {
 public:
  explicit RuntimeFailure(const std::string& msg) : std::runtime_error(msg) {}
};

class CalibrationError : public RuntimeFailure {
 public:
  explicit CalibrationError(const std::string& msg) : RuntimeFailure(msg) {}
};

}  // namespace delaycast

#endif  // DELAYCAST_ERRORS_HPP
