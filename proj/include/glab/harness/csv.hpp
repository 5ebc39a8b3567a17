#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace glab::harness {

using Cell = std::variant<std::string, double, std::int64_t, bool>;

// Doubles at 17 significant digits; strings quoted only when needed.
std::string format_cell(const Cell& cell);

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  // throws ParameterError on a width mismatch
  void add_row(std::vector<Cell> row);

  const std::vector<std::string>& header() const { return header_; }
  std::size_t rows() const { return rows_.size(); }
  std::string str() const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<Cell>> rows_;
};

// temp file + rename in the same directory; IoError on failure
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace glab::harness
