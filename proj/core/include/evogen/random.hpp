#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace evogen {

// Counter-based pseudo-random stream.  A stream is identified by a name; the
// n-th draw from a stream with a given name is the same on every platform and
// in every run.  Streams are cheap values: forking a child stream derives a
// new name-keyed stream without consuming state from the parent, so adding a
// consumer somewhere never shifts the draws seen elsewhere.
class SeedStream {
 public:
  explicit SeedStream(std::string_view name);
  SeedStream(std::string_view name, std::uint64_t salt);

  // Child stream named "<parent>/<child>"; parent state is untouched.
  SeedStream fork(std::string_view child) const;
  SeedStream fork(std::string_view child, std::uint64_t index) const;

  const std::string& name() const { return name_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1); 53-bit resolution, never exactly 0 is not guaranteed
  // but uniform_open() below avoids 0 for log() consumers.
  double uniform();
  // Uniform on (0, 1].
  double uniform_open();
  // Uniform integer in [0, n); n must be positive.  Multiply-shift mapping,
  // deterministic across platforms.
  std::uint64_t uniform_int(std::uint64_t n);
  // Standard normal via the Box-Muller transform.  Draws are consumed in
  // pairs; the scalar form discards the second value of the pair so that the
  // counter advances identically whether callers take one value or two.
  double normal();
  void fill_normal(std::span<double> out);
  void fill_uniform(std::span<double> out);

 private:
  std::string name_;
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

// Stable 64-bit FNV-1a, used for stream keys and config digests.
std::uint64_t fnv1a64(std::string_view text);

}  // namespace evogen
