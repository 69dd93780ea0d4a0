#pragma once

#include <stdexcept>
#include <string>

namespace recon {

// Caller passed something unusable: bad shapes, missing normals, unreadable
// files, malformed flags. CLI maps this family to exit code 1.
class invalid_input : public std::runtime_error {
 public:
  explicit invalid_input(const std::string& msg) : std::runtime_error(msg) {}
};

// The computation itself failed: degenerate normalization, diverged training.
// CLI maps this family to exit code 2.
class runtime_failure : public std::runtime_error {
 public:
  explicit runtime_failure(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace recon
