#include "transfernet/csv.hpp"

#include <cmath>
#include <cstdio>

namespace transfernet {

std::string format_number(double v) {
  if (v == 0.0) return "0";  // avoid "-0"
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string cell(double v) { return format_number(v); }
std::string cell(long v) { return std::to_string(v); }
std::string cell(int v) { return std::to_string(v); }

CsvWriter::CsvWriter(const std::string& path) : out_(path, std::ios::binary) {
  if (!out_) throw std::runtime_error("cannot open output file: " + path);
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  for (size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    out_ << cells[i];
  }
  out_ << '\n';
}

void CsvWriter::close() { out_.close(); }

}  // namespace transfernet
