#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace prime::csv {

struct Record {
  std::size_t line = 0;  // 1-based line where the record starts
  std::vector<std::string> fields;
};

/// RFC 4180 reader: comma separated, double-quoted fields may contain commas,
/// doubled quotes and newlines. Accepts LF or CRLF and a leading UTF-8 BOM.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::optional<Record> next();

 private:
  std::istream& in_;
  std::size_t line_ = 1;
  bool first_ = true;
};

std::vector<Record> read_all(std::istream& in);

/// Quotes a field only when it needs it.
std::string escape(std::string_view field);
void write_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace prime::csv
