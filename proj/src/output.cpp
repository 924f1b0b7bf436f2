#include "dreg/output.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "dreg/error.hpp"

namespace dreg {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw Error("format_number: conversion failed");
  return std::string(buf, end);
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {
  if (header_.empty()) throw Error("CSV table needs at least one column");
}

CsvTable& CsvTable::row(std::vector<std::string> cells) {
  if (cells.size() != header_.size())
    throw Error("CSV row has " + std::to_string(cells.size()) + " cells, expected " +
                std::to_string(header_.size()));
  for (const auto& c : cells)
    if (c.find_first_of(",\"\n") != std::string::npos)
      throw Error("CSV cell needs quoting: '" + c + "'");
  rows_.push_back(std::move(cells));
  return *this;
}

std::string CsvTable::text() const {
  std::string out;
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  return out;
}

void CsvTable::write(const std::filesystem::path& path) const { write_file_atomic(path, text()); }

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error("write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error("cannot move " + tmp.string() + " into place");
  }
}

}  // namespace dreg
