#include "evogen/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "evogen/errors.hpp"

namespace evogen {

namespace {

constexpr char kMagic[8] = {'E', 'V', 'G', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params,
                     std::uint64_t config_digest) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot open for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(os, kCheckpointVersion);
  write_pod<std::uint64_t>(os, config_digest);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape().size()));
    for (std::int64_t d : t.shape()) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw DataError("checkpoint: write failed: " + path);
}

ParamStore load_checkpoint(const std::string& path, std::uint64_t expected_digest,
                           std::uint64_t* stored_digest) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported format version " + std::to_string(version));
  const auto digest = read_pod<std::uint64_t>(is);
  if (stored_digest) *stored_digest = digest;
  if (expected_digest != 0 && digest != expected_digest)
    throw DataError("checkpoint: config digest mismatch (file was written for a "
                    "different model configuration)");
  const auto count = read_pod<std::uint32_t>(is);
  ParamStore store;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw DataError("checkpoint: truncated file");
    const auto ndim = read_pod<std::uint32_t>(is);
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<std::int64_t>(read_pod<std::uint64_t>(is));
    const std::int64_t n = shape_numel(shape);
    std::vector<double> values(static_cast<std::size_t>(n));
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw DataError("checkpoint: truncated payload for " + name);
    store.add(name, Tensor::param(std::move(shape), std::move(values)));
  }
  return store;
}

}  // namespace evogen
