#pragma once

#include <cstdint>
#include <string>

#include "evogen/params.hpp"

namespace evogen {

// Binary parameter container.  Layout (all integers little-endian):
//   magic "EVGCKPT\0" | u32 version | u64 config_digest | u32 entry count |
//   per entry: u32 path length | path bytes | u32 ndim | u64 dims... |
//              f64 payload (row-major)
// Values are stored at full double precision so a round trip reproduces
// inference outputs bit for bit.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ParamStore& params,
                     std::uint64_t config_digest);

// Loads into a fresh store.  Throws DataError on a bad magic, an unsupported
// version, or (when expected_digest != 0) a digest mismatch.
ParamStore load_checkpoint(const std::string& path, std::uint64_t expected_digest,
                           std::uint64_t* stored_digest = nullptr);

}  // namespace evogen
