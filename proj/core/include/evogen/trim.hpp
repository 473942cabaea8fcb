#pragma once

#include "evogen/msa.hpp"

namespace evogen {

struct TrimConfig {
  int n_max = 128;          // pool cap after selection
  double cov_min = 0.5;     // rows covering less than this fraction are dropped
  double ident_max = 0.9;   // rows more similar to the query than this are dropped
  double ident_min = 0.2;   // rows less similar to the query than this are dropped
};

// Per-row filters against the query, order-preserving; the query row is always
// kept.  A row survives when coverage >= cov_min and
// ident_min <= identity <= ident_max (both bounds strict on removal).
Msa primary_filter(const Msa& msa, const TrimConfig& cfg = {});

// Greedy diversity selection.  Starting from {query}, repeatedly admits the
// not-yet-admitted row that (a) has identity <= ident_max to every row already
// in the pool and (b) is closest to the query by Hamming distance (ties break
// toward the smaller original row index).  Stops at n_max rows or when no row
// is admissible.  Output rows appear in admission order, query first.
Msa greedy_select(const Msa& msa, int n_max, double ident_max = 0.9);

// Full pipeline: alignments at or under the cap pass through unchanged;
// otherwise primary_filter runs, and greedy_select only if the result still
// exceeds the cap.
Msa trim(const Msa& msa, const TrimConfig& cfg = {});

}  // namespace evogen
