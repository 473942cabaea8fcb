#include "evogen/featurize.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "evogen/errors.hpp"

namespace evogen {

namespace {

constexpr std::string_view kAlphabet = "ACDEFGHIKLMNPQRSTVWYX-";
constexpr double kBinEdges[5] = {0.2, 0.35, 0.5, 0.65, 0.8};

}  // namespace

int token_id(char symbol) {
  const auto pos = kAlphabet.find(symbol);
  if (pos == std::string_view::npos)
    throw std::invalid_argument(std::string("token_id: unknown symbol '") + symbol + "'");
  return static_cast<int>(pos);
}

char token_symbol(int id) {
  if (id < 0 || id >= kVocabSize) throw std::invalid_argument("token_symbol: id out of range");
  return kAlphabet[id];
}

double deletion_transform(int count) {
  if (count < 0) throw std::invalid_argument("deletion_transform: negative count");
  return (2.0 / std::numbers::pi) * std::atan(static_cast<double>(count) / 3.0);
}

int discretize_deletion(double value) {
  int bin = 0;
  while (bin < kDeletionBins - 1 && value >= kBinEdges[bin]) ++bin;
  return bin;
}

double deletion_bin_center(int bin) {
  if (bin < 0 || bin >= kDeletionBins) throw std::invalid_argument("deletion bin out of range");
  // Midpoints of {[0,0.2), [0.2,0.35), ..., [0.8,0.95)}: the top edge mirrors
  // the bottom bin's span so every center sits strictly inside [0, 1).
  const double lo = bin == 0 ? 0.0 : kBinEdges[bin - 1];
  const double hi = bin == kDeletionBins - 1 ? 0.95 : kBinEdges[bin];
  return 0.5 * (lo + hi);
}

int deletion_bin_count(int bin) {
  const double c = deletion_bin_center(bin);
  return static_cast<int>(std::llround(3.0 * std::tan(std::numbers::pi * c / 2.0)));
}

TokenGrid tokenize(const Msa& msa) {
  std::vector<int> all(msa.depth());
  std::iota(all.begin(), all.end(), 0);
  return tokenize_rows(msa, all);
}

TokenGrid tokenize_rows(const Msa& msa, const std::vector<int>& row_indices) {
  if (msa.rows.empty()) throw std::invalid_argument("tokenize: empty alignment");
  TokenGrid grid;
  grid.rows = static_cast<int>(row_indices.size());
  grid.length = msa.length();
  grid.tokens.reserve(static_cast<std::size_t>(grid.rows) * grid.length);
  grid.del_raw.reserve(grid.tokens.capacity());
  grid.del_value.reserve(grid.tokens.capacity());
  for (int r : row_indices) {
    const AlignedRow& row = msa.rows.at(r);
    if (static_cast<int>(row.symbols.size()) != grid.length)
      throw std::invalid_argument("tokenize: ragged alignment row");
    for (int c = 0; c < grid.length; ++c) {
      grid.tokens.push_back(token_id(row.symbols[c]));
      grid.del_raw.push_back(row.deletions[c]);
      grid.del_value.push_back(deletion_transform(row.deletions[c]));
    }
  }
  return grid;
}

ContextTargetSplit split_context_target(int depth, double r_ctx, std::uint64_t seed) {
  if (depth < 1) throw std::invalid_argument("split_context_target: empty alignment");
  if (r_ctx < 0.0 || r_ctx > 1.0)
    throw std::invalid_argument("split_context_target: r_ctx must be in [0, 1]");
  // floor(r * N) with a nudge so exact products (0.7 * 10 == 7) do not land
  // one short due to binary rounding.
  int want = static_cast<int>(std::floor(r_ctx * depth + 1e-9));
  want = std::max(1, std::min(want, depth));

  ContextTargetSplit split;
  std::vector<int> rest(depth - 1);
  std::iota(rest.begin(), rest.end(), 1);
  SeedStream stream("split", seed);
  // Partial Fisher-Yates: the first (want - 1) entries become the draw.
  for (int i = 0; i < want - 1; ++i) {
    const auto j = i + static_cast<int>(stream.uniform_int(rest.size() - i));
    std::swap(rest[i], rest[j]);
  }
  split.context.assign(rest.begin(), rest.begin() + (want - 1));
  split.context.push_back(0);
  std::sort(split.context.begin(), split.context.end());
  split.targets.assign(rest.begin() + (want - 1), rest.end());
  std::sort(split.targets.begin(), split.targets.end());
  return split;
}

std::vector<AlignedRow> detokenize(const OutputLogits& out, DetokenizeMode mode,
                                   SeedStream* stream) {
  if (mode == DetokenizeMode::kSample && stream == nullptr)
    throw std::invalid_argument("detokenize: sampling requires a seed stream");
  const int rows = out.rows();
  const int length = out.length();
  if (out.aa.dim(2) != kVocabSize || out.del.dim(2) != kDeletionBins ||
      out.del.dim(0) != rows || out.del.dim(1) != length)
    throw std::invalid_argument("detokenize: malformed logits");

  auto pick = [&](std::span<const double> logits, std::int64_t base, int n) -> int {
    if (mode == DetokenizeMode::kArgmax) {
      int arg = 0;
      double best = logits[base];
      for (int t = 1; t < n; ++t)
        if (logits[base + t] > best) {
          best = logits[base + t];
          arg = t;
        }
      return arg;
    }
    // Categorical sample via inverse CDF over the softmax distribution.
    double mx = logits[base];
    for (int t = 1; t < n; ++t) mx = std::max(mx, logits[base + t]);
    double z = 0.0;
    for (int t = 0; t < n; ++t) z += std::exp(logits[base + t] - mx);
    double u = stream->uniform() * z;
    for (int t = 0; t < n; ++t) {
      u -= std::exp(logits[base + t] - mx);
      if (u <= 0.0) return t;
    }
    return n - 1;
  };

  std::span<const double> aa = out.aa.data();
  std::span<const double> del = out.del.data();
  std::vector<AlignedRow> result(rows);
  for (int r = 0; r < rows; ++r) {
    AlignedRow& row = result[r];
    row.header = "generated_" + std::to_string(r);
    row.symbols.resize(length);
    row.deletions.resize(length);
    for (int c = 0; c < length; ++c) {
      const std::int64_t cell = static_cast<std::int64_t>(r) * length + c;
      row.symbols[c] = token_symbol(pick(aa, cell * kVocabSize, kVocabSize));
      row.deletions[c] = deletion_bin_count(pick(del, cell * kDeletionBins, kDeletionBins));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Feature container
// ---------------------------------------------------------------------------

namespace {

constexpr char kFeatureMagic[8] = {'E', 'V', 'G', 'F', 'E', 'A', 'T', '\0'};

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
  if (!is) throw DataError("feature container: truncated file");
  return v;
}

}  // namespace

FeatureGrid features_from_grid(const TokenGrid& grid, const std::string& query) {
  FeatureGrid out;
  out.rows = grid.rows;
  out.length = grid.length;
  out.query = query;
  out.probs.assign(static_cast<std::size_t>(grid.rows) * grid.length * kVocabSize, 0.0f);
  for (std::size_t i = 0; i < grid.tokens.size(); ++i)
    out.probs[i * kVocabSize + grid.tokens[i]] = 1.0f;
  return out;
}

void export_features(const FeatureGrid& grid, const std::string& path) {
  if (grid.probs.size() !=
      static_cast<std::size_t>(grid.rows) * grid.length * kVocabSize)
    throw std::invalid_argument("export_features: payload size mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("feature container: cannot open for writing: " + path);
  os.write(kFeatureMagic, sizeof(kFeatureMagic));
  write_pod<std::uint32_t>(os, kFeatureVersion);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(grid.rows));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(grid.length));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(grid.query.size()));
  os.write(grid.query.data(), static_cast<std::streamsize>(grid.query.size()));
  os.write(reinterpret_cast<const char*>(grid.probs.data()),
           static_cast<std::streamsize>(grid.probs.size() * sizeof(float)));
  if (!os) throw DataError("feature container: write failed: " + path);
}

FeatureGrid import_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("feature container: cannot open: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kFeatureMagic, sizeof(kFeatureMagic)) != 0)
    throw DataError("feature container: bad magic in " + path);
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kFeatureVersion)
    throw DataError("feature container: unsupported version " + std::to_string(version));
  FeatureGrid grid;
  grid.rows = static_cast<int>(read_pod<std::uint32_t>(is));
  grid.length = static_cast<int>(read_pod<std::uint32_t>(is));
  const auto qlen = read_pod<std::uint32_t>(is);
  grid.query.resize(qlen);
  is.read(grid.query.data(), qlen);
  if (!is) throw DataError("feature container: truncated query");
  const std::size_t n = static_cast<std::size_t>(grid.rows) * grid.length * kVocabSize;
  grid.probs.resize(n);
  is.read(reinterpret_cast<char*>(grid.probs.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  if (!is) throw DataError("feature container: truncated payload");
  return grid;
}

}  // namespace evogen
