#ifndef STNET_CORE_ERRORS_HPP
#define STNET_CORE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace stnet {

/// Bad or inconsistent user configuration. CLI exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

/// A required input artifact (dataset, checkpoint, manifest) is absent. CLI exit code 3.
struct MissingDependencyError : std::runtime_error {
  explicit MissingDependencyError(const std::string& m) : std::runtime_error(m) {}
};

/// Non-finite values reached the optimizer or a metric. CLI exit code 4.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace stnet

#endif
