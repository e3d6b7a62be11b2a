#pragma once

#include <stdexcept>
#include <string>

namespace dmm {

// Malformed user input: bad files, bad flags, violated data contracts.
// The CLI maps this to exit code 2; anything else reaching main is an
// internal error (exit 1).
struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dmm
