#include "evogen/msa.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "evogen/errors.hpp"

namespace evogen {

namespace {

constexpr std::string_view kCanonical = "ACDEFGHIKLMNPQRSTVWY";

}  // namespace

bool is_canonical_or_rare(char aa) {
  return aa >= 'A' && aa <= 'Z';
}

char canonical_symbol(char aa) {
  if (kCanonical.find(aa) != std::string_view::npos) return aa;
  if (is_canonical_or_rare(aa)) return 'X';
  throw DataError(std::string("not a residue letter: '") + aa + "'");
}

namespace {

AlignedRow finish_row(const std::string& header, const std::string& raw, int record_index) {
  AlignedRow row;
  row.header = header;
  int pending = 0;  // insertions seen since the last aligned position
  for (char c : raw) {
    if (c == '.') continue;  // insert-state gap: no residue, nothing to count
    if (c == '-') {
      row.symbols.push_back('-');
      row.deletions.push_back(pending);
      pending = 0;
    } else if (c >= 'a' && c <= 'z') {
      ++pending;  // insertion residue, attributed to the next aligned position
    } else if (c >= 'A' && c <= 'Z') {
      row.symbols.push_back(canonical_symbol(c));
      row.deletions.push_back(pending);
      pending = 0;
    } else {
      throw DataError("record " + std::to_string(record_index) + " ('" + header +
                      "'): illegal character '" + std::string(1, c) + "'");
    }
  }
  // Insertions after the final aligned position have no anchor; drop them.
  return row;
}

}  // namespace

Msa parse_a3m(const std::string& text) {
  Msa msa;
  std::istringstream is(text);
  std::string line, header, seq;
  bool in_record = false;
  auto flush = [&] {
    if (!in_record) return;
    msa.rows.push_back(finish_row(header, seq, msa.depth()));
    seq.clear();
  };
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '>') {
      flush();
      header = line.substr(1);
      in_record = true;
    } else {
      if (!in_record) throw DataError("alignment text must start with a '>' record line");
      for (char c : line)
        if (!std::isspace(static_cast<unsigned char>(c))) seq.push_back(c);
    }
  }
  flush();
  if (msa.rows.empty()) throw DataError("alignment contains no records");

  const AlignedRow& q = msa.rows[0];
  if (q.symbols.find('-') != std::string::npos)
    throw DataError("query row must be gap-free");
  for (int d : q.deletions)
    if (d != 0) throw DataError("query row must not contain insertions");
  for (int i = 1; i < msa.depth(); ++i) {
    if (msa.rows[i].symbols.size() != q.symbols.size())
      throw DataError("record " + std::to_string(i) + " ('" + msa.rows[i].header +
                      "'): aligned length " + std::to_string(msa.rows[i].symbols.size()) +
                      " differs from query length " + std::to_string(q.symbols.size()));
  }
  return msa;
}

Msa parse_a3m_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open alignment file: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_a3m(buf.str());
}

std::string write_a3m(const Msa& msa) {
  if (msa.rows.empty()) throw std::invalid_argument("write_a3m: empty alignment");
  std::string out;
  for (const AlignedRow& row : msa.rows) {
    out.push_back('>');
    out += row.header;
    out.push_back('\n');
    for (std::size_t i = 0; i < row.symbols.size(); ++i) {
      // Placeholder residues for insertions; the count is what round-trips.
      out.append(static_cast<std::size_t>(row.deletions[i]), 'x');
      out.push_back(row.symbols[i]);
    }
    out.push_back('\n');
  }
  return out;
}

void write_a3m_file(const Msa& msa, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open alignment file for writing: " + path);
  os << write_a3m(msa);
  if (!os) throw DataError("failed writing alignment file: " + path);
}

double sequence_identity(const AlignedRow& row, const AlignedRow& other) {
  if (row.symbols.size() != other.symbols.size())
    throw std::invalid_argument("sequence_identity: length mismatch");
  if (row.symbols.empty()) return 0.0;
  int matches = 0;
  for (std::size_t i = 0; i < row.symbols.size(); ++i)
    if (row.symbols[i] == other.symbols[i] && row.symbols[i] != '-') ++matches;
  return static_cast<double>(matches) / static_cast<double>(row.symbols.size());
}

double coverage(const AlignedRow& row) {
  if (row.symbols.empty()) return 0.0;
  int covered = 0;
  for (char c : row.symbols)
    if (c != '-') ++covered;
  return static_cast<double>(covered) / static_cast<double>(row.symbols.size());
}

int hamming_distance(const AlignedRow& a, const AlignedRow& b) {
  if (a.symbols.size() != b.symbols.size())
    throw std::invalid_argument("hamming_distance: length mismatch");
  int d = 0;
  for (std::size_t i = 0; i < a.symbols.size(); ++i)
    if (a.symbols[i] != b.symbols[i]) ++d;
  return d;
}

}  // namespace evogen
