#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dreg {

/// Shortest decimal that round-trips to the same double; "nan", "inf", "-inf"
/// for non-finite values.
std::string format_number(double v);

/// In-memory CSV table written in one go.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  CsvTable& row(std::vector<std::string> cells);
  const std::vector<std::string>& header() const { return header_; }
  std::size_t rows() const { return rows_.size(); }
  std::string text() const;

  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace dreg
