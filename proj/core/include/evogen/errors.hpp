#pragma once

#include <stdexcept>
#include <string>

namespace evogen {

// Raised for malformed external inputs (alignment files, containers,
// checkpoints).  API misuse (shape mismatches, bad arguments) raises
// std::invalid_argument instead, so callers can tell the two apart.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace evogen
