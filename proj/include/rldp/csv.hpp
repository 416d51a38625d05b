#pragma once

#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace rldp::csv {

/// 17 significant digits: doubles survive a text round trip bit-exactly.
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_row(std::ostream& os, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) os << ',';
    os << cells[i];
  }
  os << '\n';
}

inline void append(std::vector<std::string>& cells, std::span<const double> values) {
  for (double v : values) cells.push_back(num(v));
}

inline std::vector<std::string> indexed_header(const std::string& prefix, std::size_t d) {
  std::vector<std::string> h;
  for (std::size_t i = 1; i <= d; ++i) h.push_back(prefix + std::to_string(i));
  return h;
}

}  // namespace rldp::csv
