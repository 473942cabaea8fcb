#pragma once

// Shared helpers for the test executables: a random alignment builder and a
// deliberately naive reimplementation of the curation pipeline used as an
// oracle.  Everything here follows the documented behavior only, with no
// shortcuts shared with the production code.

#include <algorithm>
#include <string>
#include <vector>

#include "evogen/msa.hpp"
#include "evogen/random.hpp"
#include "evogen/trim.hpp"

namespace testsupport {

inline const std::string kResidues = "ACDEFGHIKLMNPQRSTVWY";

// Random alignment with a planted mix of near-query, far, and gap-heavy rows
// so depth filters and diversity selection all get exercised.
inline evogen::Msa random_msa(evogen::SeedStream& s, int depth, int length) {
  evogen::Msa msa;
  evogen::AlignedRow q;
  q.header = "query";
  for (int c = 0; c < length; ++c)
    q.symbols.push_back(kResidues[s.uniform_int(kResidues.size())]);
  q.deletions.assign(static_cast<std::size_t>(length), 0);
  msa.rows.push_back(q);
  for (int r = 1; r < depth; ++r) {
    evogen::AlignedRow row;
    row.header = "row" + std::to_string(r);
    row.symbols = q.symbols;
    row.deletions.assign(static_cast<std::size_t>(length), 0);
    const int mode = static_cast<int>(s.uniform_int(3));
    for (int c = 0; c < length; ++c) {
      const double u = s.uniform();
      if (mode == 0) {  // close to the query, few edits
        if (u < 0.15) row.symbols[static_cast<std::size_t>(c)] =
            kResidues[s.uniform_int(kResidues.size())];
      } else if (mode == 1) {  // far from the query
        if (u < 0.8) row.symbols[static_cast<std::size_t>(c)] =
            kResidues[s.uniform_int(kResidues.size())];
      } else {  // gap heavy
        if (u < 0.5) row.symbols[static_cast<std::size_t>(c)] = '-';
        else if (u < 0.7) row.symbols[static_cast<std::size_t>(c)] =
            kResidues[s.uniform_int(kResidues.size())];
      }
      if (s.uniform() < 0.05)
        row.deletions[static_cast<std::size_t>(c)] = 1 + static_cast<int>(s.uniform_int(4));
    }
    msa.rows.push_back(std::move(row));
  }
  return msa;
}

// --- naive curation oracle -----------------------------------------------------

inline double oracle_identity(const evogen::AlignedRow& row,
                              const evogen::AlignedRow& other) {
  int match = 0;
  for (std::size_t c = 0; c < row.symbols.size(); ++c)
    if (row.symbols[c] == other.symbols[c] && row.symbols[c] != '-') ++match;
  return static_cast<double>(match) / static_cast<double>(row.symbols.size());
}

inline double oracle_coverage(const evogen::AlignedRow& row) {
  int covered = 0;
  for (char c : row.symbols)
    if (c != '-') ++covered;
  return static_cast<double>(covered) / static_cast<double>(row.symbols.size());
}

inline int oracle_hamming(const evogen::AlignedRow& a, const evogen::AlignedRow& b) {
  int d = 0;
  for (std::size_t c = 0; c < a.symbols.size(); ++c)
    if (a.symbols[c] != b.symbols[c]) ++d;
  return d;
}

inline evogen::Msa oracle_primary_filter(const evogen::Msa& msa,
                                         const evogen::TrimConfig& cfg) {
  evogen::Msa out;
  out.rows.push_back(msa.rows[0]);
  for (std::size_t r = 1; r < msa.rows.size(); ++r) {
    const evogen::AlignedRow& row = msa.rows[r];
    if (oracle_coverage(row) < cfg.cov_min) continue;
    const double id = oracle_identity(row, msa.rows[0]);
    if (id < cfg.ident_min || id > cfg.ident_max) continue;
    out.rows.push_back(row);
  }
  return out;
}

inline evogen::Msa oracle_greedy(const evogen::Msa& msa, int n_max,
                                 double ident_max) {
  std::vector<char> admitted(msa.rows.size(), 0);
  admitted[0] = 1;
  evogen::Msa out;
  out.rows.push_back(msa.rows[0]);
  while (static_cast<int>(out.rows.size()) < n_max) {
    int best = -1, best_d = 0;
    for (std::size_t i = 1; i < msa.rows.size(); ++i) {
      if (admitted[i]) continue;
      bool ok = true;
      for (const evogen::AlignedRow& kept : out.rows)
        if (oracle_identity(msa.rows[i], kept) > ident_max) {
          ok = false;
          break;
        }
      if (!ok) continue;
      const int d = oracle_hamming(msa.rows[i], msa.rows[0]);
      if (best < 0 || d < best_d) {  // strict < keeps the smallest index on ties
        best = static_cast<int>(i);
        best_d = d;
      }
    }
    if (best < 0) break;
    admitted[static_cast<std::size_t>(best)] = 1;
    out.rows.push_back(msa.rows[static_cast<std::size_t>(best)]);
  }
  return out;
}

inline evogen::Msa oracle_trim(const evogen::Msa& msa, const evogen::TrimConfig& cfg) {
  if (msa.depth() <= cfg.n_max) return msa;
  const evogen::Msa filtered = oracle_primary_filter(msa, cfg);
  if (filtered.depth() <= cfg.n_max) return filtered;
  return oracle_greedy(filtered, cfg.n_max, cfg.ident_max);
}

}  // namespace testsupport
