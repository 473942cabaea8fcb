#include "evogen/trim.hpp"

#include <stdexcept>

namespace evogen {

Msa primary_filter(const Msa& msa, const TrimConfig& cfg) {
  if (msa.rows.empty()) throw std::invalid_argument("primary_filter: empty alignment");
  Msa out;
  out.rows.push_back(msa.rows[0]);
  for (int i = 1; i < msa.depth(); ++i) {
    const AlignedRow& row = msa.rows[i];
    if (coverage(row) < cfg.cov_min) continue;
    const double ident = sequence_identity(row, msa.query());
    if (ident > cfg.ident_max || ident < cfg.ident_min) continue;
    out.rows.push_back(row);
  }
  return out;
}

Msa greedy_select(const Msa& msa, int n_max, double ident_max) {
  if (msa.rows.empty()) throw std::invalid_argument("greedy_select: empty alignment");
  if (n_max < 1) throw std::invalid_argument("greedy_select: n_max must be >= 1");

  Msa pool;
  pool.rows.push_back(msa.rows[0]);
  std::vector<bool> taken(msa.rows.size(), false);
  taken[0] = true;

  // Distance to the query never changes; compute it once.
  std::vector<int> dist(msa.rows.size(), 0);
  for (std::size_t i = 1; i < msa.rows.size(); ++i)
    dist[i] = hamming_distance(msa.rows[i], msa.query());

  while (pool.depth() < n_max) {
    int best = -1;
    for (std::size_t i = 1; i < msa.rows.size(); ++i) {
      if (taken[i]) continue;
      bool admissible = true;
      for (const AlignedRow& member : pool.rows) {
        if (sequence_identity(msa.rows[i], member) > ident_max) {
          admissible = false;
          break;
        }
      }
      if (!admissible) continue;
      if (best < 0 || dist[i] < dist[best]) best = static_cast<int>(i);
    }
    if (best < 0) break;  // nothing admissible left
    taken[best] = true;
    pool.rows.push_back(msa.rows[best]);
  }
  return pool;
}

Msa trim(const Msa& msa, const TrimConfig& cfg) {
  if (msa.depth() <= cfg.n_max) return msa;
  Msa filtered = primary_filter(msa, cfg);
  if (filtered.depth() <= cfg.n_max) return filtered;
  return greedy_select(filtered, cfg.n_max, cfg.ident_max);
}

}  // namespace evogen
