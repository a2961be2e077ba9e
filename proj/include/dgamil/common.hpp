// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>

namespace dgamil {

// Exit code 2 in the CLI.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed file on disk (bad magic, truncated payload, ...).
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input that is structurally valid but unusable (all-zero volume, constant
// volume under z-score, ...).
struct DegenerateInputError : std::runtime_error {
  explicit DegenerateInputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Exit code 3 in the CLI.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-fatal diagnostics (single-node graphs, K=1 bags, ...). Tests swap the
// handler to assert that a warning fired.
inline std::function<void(const std::string&)>& warn_handler() {
  static std::function<void(const std::string&)> h = [](const std::string& msg) {
    std::cerr << "[dgamil] warning: " << msg << "\n";
  };
  return h;
}

inline void warn(const std::string& msg) { warn_handler()(msg); }

}  // namespace dgamil
