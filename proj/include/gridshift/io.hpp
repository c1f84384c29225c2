#pragma once

// Deterministic text output: fixed six-decimal numbers and minimal CSV writing.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gridshift/error.hpp"

namespace gridshift {

/// Six decimals, never "-0.000000".
inline std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s(buf);
  if (s == "-0.000000") s = "0.000000";
  return s;
}

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

  CsvWriter& row(const std::vector<std::string>& cells) {
    rows_.push_back(cells);
    return *this;
  }

  std::string str() const {
    std::string out = join(header_);
    for (const auto& r : rows_) out += join(r);
    return out;
  }

  std::size_t size() const { return rows_.size(); }

 private:
  static std::string join(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) line += ',';
      line += cells[i];
    }
    return line + "\n";
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
  out << text;
}

}  // namespace gridshift
