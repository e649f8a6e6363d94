#include "rkbf/csv.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "rkbf/errors.hpp"

namespace rkbf {

CsvWriter::CsvWriter(std::vector<std::string> header) : n_cols_(header.size()) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) body_ += ',';
    body_ += header[i];
  }
  body_ += '\n';
}

void CsvWriter::begin_row() {
  in_row_ = true;
  row_cols_ = 0;
}

void CsvWriter::add(double v) { add(format_double(v)); }

void CsvWriter::add(std::int64_t v) { add(std::to_string(v)); }

void CsvWriter::add(const std::string& v) {
  if (row_cols_) body_ += ',';
  body_ += v;
  ++row_cols_;
}

void CsvWriter::add_empty() {
  if (row_cols_) body_ += ',';
  ++row_cols_;
}

void CsvWriter::end_row() {
  if (row_cols_ != n_cols_)
    fail(ErrorCode::IoError, "csv row has " + std::to_string(row_cols_) + " cells, expected " +
                                 std::to_string(n_cols_));
  body_ += '\n';
  in_row_ = false;
}

void CsvWriter::write(const std::string& path) const { write_file_atomic(path, body_); }

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) fail(ErrorCode::IoError, "write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    fail(ErrorCode::IoError, "rename to " + target.string() + " failed");
  }
}

}  // namespace rkbf
