#pragma once

#include <stdexcept>
#include <string>

namespace stungage {

/// Base for every error raised by the engine. `module()` names the pipeline
/// stage that raised it so the CLI can attribute failures.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& what)
      : std::runtime_error(module + ": " + what), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class StreamError : public Error {
 public:
  explicit StreamError(const std::string& what) : Error("stream-ingest", what) {}
};

/// Raised when a linear system has no unique solution (coincident image
/// points, coplanar model, ...).
class DegenerateError : public Error {
 public:
  explicit DegenerateError(const std::string& what) : Error("gaze-analysis", what) {}
};

/// Fewer samples than a statistic needs.
class InsufficientDataError : public Error {
 public:
  explicit InsufficientDataError(const std::string& what) : Error("gaze-analysis", what) {}
};

}  // namespace stungage
