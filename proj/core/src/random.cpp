#include "evogen/random.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace evogen {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// SplitMix64 finalizer: a well-mixed bijection on 64-bit words.
std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

SeedStream::SeedStream(std::string_view name) : name_(name), key_(fnv1a64(name)) {}

SeedStream::SeedStream(std::string_view name, std::uint64_t salt)
    : SeedStream(std::string(name) + "#" + std::to_string(salt)) {}

SeedStream SeedStream::fork(std::string_view child) const {
  return SeedStream(name_ + "/" + std::string(child));
}

SeedStream SeedStream::fork(std::string_view child, std::uint64_t index) const {
  return SeedStream(name_ + "/" + std::string(child) + "." + std::to_string(index));
}

std::uint64_t SeedStream::next_u64() {
  const std::uint64_t z = mix64(key_ + kGolden * ++counter_);
  return z;
}

double SeedStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeedStream::uniform_open() {
  return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

std::uint64_t SeedStream::uniform_int(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
  const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
  return static_cast<std::uint64_t>(wide >> 64);
}

double SeedStream::normal() {
  const double u1 = uniform_open();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void SeedStream::fill_normal(std::span<double> out) {
  for (std::size_t i = 0; i + 1 < out.size(); i += 2) {
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    out[i] = r * std::cos(2.0 * std::numbers::pi * u2);
    out[i + 1] = r * std::sin(2.0 * std::numbers::pi * u2);
  }
  if (out.size() % 2 != 0) out.back() = normal();
}

void SeedStream::fill_uniform(std::span<double> out) {
  for (double& v : out) v = uniform();
}

}  // namespace evogen
