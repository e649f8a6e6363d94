#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <vector>

namespace rkbf {

// Shortest decimal form that parses back to the identical double.
// Locale-independent, '.' decimal separator.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Row-buffered CSV writer. The file is assembled in memory and published
// with write-then-rename, so a failed run never leaves a partial file.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);

  void begin_row();
  void add(double v);
  void add(std::int64_t v);
  void add(const std::string& v);
  void add_empty();
  void end_row();

  // Atomically writes the accumulated table to `path`.
  void write(const std::string& path) const;

  const std::string& content() const { return body_; }

 private:
  std::size_t n_cols_ = 0;
  std::size_t row_cols_ = 0;
  bool in_row_ = false;
  std::string body_;
};

// Atomic replacement of `path` with `content` (temp file + rename).
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace rkbf
