#pragma once
// Deterministic CSV emission: '.' decimal separator, no grouping, LF line
// terminators, fixed shortest-round-trip numeric formatting.

#include <fstream>
#include <string>
#include <vector>

namespace transfernet {

std::string format_number(double v);

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path);
  void row(const std::vector<std::string>& cells);
  void close();

 private:
  std::ofstream out_;
};

std::string cell(double v);
inline std::string cell(const std::string& s) { return s; }
inline std::string cell(const char* s) { return s; }
std::string cell(long v);
std::string cell(int v);

}  // namespace transfernet
