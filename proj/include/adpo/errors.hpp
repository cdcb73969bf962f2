#pragma once

#include <stdexcept>
#include <string>

namespace adpo {

// Bad input files, malformed configs, unusable arguments. CLI exit code 2.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Missing pipeline prerequisites (e.g. a required checkpoint). CLI exit code 3.
struct PreconditionError : std::runtime_error {
  explicit PreconditionError(const std::string& what) : std::runtime_error(what) {}
};

// Failures inside an analysis stage. CLI exit code 4.
struct AnalysisError : std::runtime_error {
  explicit AnalysisError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace adpo
