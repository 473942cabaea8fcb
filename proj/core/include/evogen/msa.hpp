#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace evogen {

// One aligned row: `symbols` has exactly the alignment length, drawn from the
// 20 canonical residue letters, 'X' (any rare residue), and '-'.
// `deletions[i]` counts the residues inserted immediately before aligned
// position i relative to the query (the a3m lowercase run preceding it).
struct AlignedRow {
  std::string header;      // free text after '>' on the record line, kept opaque
  std::string symbols;
  std::vector<int> deletions;

  bool operator==(const AlignedRow&) const = default;
};

// Query-anchored alignment.  Row 0 is the query: gap-free with all-zero
// deletion counts.  All rows share one length.
struct Msa {
  std::vector<AlignedRow> rows;

  bool operator==(const Msa&) const = default;

  int depth() const { return static_cast<int>(rows.size()); }
  int length() const { return rows.empty() ? 0 : static_cast<int>(rows[0].symbols.size()); }
  const AlignedRow& query() const { return rows.at(0); }
};

// Any residue letter outside the canonical 20 (B, Z, U, O, J, ...) maps to 'X'.
char canonical_symbol(char aa);
bool is_canonical_or_rare(char aa);

// Parses a3m/fasta text.  Lowercase letters are insertions: they are removed
// from the alignment and counted into the deletion count of the next aligned
// position ('.' is skipped without counting).  Rare residues become 'X'.
// Throws DataError on: empty input, a first record with gaps, rows whose
// aligned length differs from the query, or characters outside the alphabet.
Msa parse_a3m(const std::string& text);
Msa parse_a3m_file(const std::string& path);

// Inverse of parse_a3m up to insertion residue identity: deletion counts are
// emitted as runs of lowercase placeholder residues, so parse(write(m)) == m
// even though the original inserted letters are not retained by the model.
std::string write_a3m(const Msa& msa);
void write_a3m_file(const Msa& msa, const std::string& path);

// Fraction of positions where `row` matches `other` with a non-gap symbol;
// the denominator is the full alignment length, so gaps count as mismatches.
double sequence_identity(const AlignedRow& row, const AlignedRow& other);

// Fraction of non-gap positions.
double coverage(const AlignedRow& row);

// Positions where the two rows differ; a gap is an ordinary symbol here.
int hamming_distance(const AlignedRow& a, const AlignedRow& b);

}  // namespace evogen
