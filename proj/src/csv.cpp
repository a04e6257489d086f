#include "prime/csv.hpp"

#include "prime/error.hpp"

namespace prime::csv {

std::optional<Record> Reader::next() {
  Record rec;
  rec.line = line_;
  std::string field;
  bool in_quotes = false;
  bool any = false;
  int c;
  if (first_) {
    first_ = false;
    if (in_.peek() == 0xEF) {
      char bom[3];
      in_.read(bom, 3);
      if (!(static_cast<unsigned char>(bom[1]) == 0xBB && static_cast<unsigned char>(bom[2]) == 0xBF)) {
        throw DataError("invalid byte sequence at start of file");
      }
    }
  }
  while ((c = in_.get()) != std::char_traits<char>::eof()) {
    any = true;
    const char ch = static_cast<char>(c);
    if (in_quotes) {
      if (ch == '"') {
        if (in_.peek() == '"') {
          in_.get();
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        if (ch == '\n') ++line_;
        field.push_back(ch);
      }
      continue;
    }
    if (ch == '"') {
      in_quotes = true;
    } else if (ch == ',') {
      rec.fields.push_back(std::move(field));
      field.clear();
    } else if (ch == '\r') {
      if (in_.peek() == '\n') continue;
      field.push_back(ch);
    } else if (ch == '\n') {
      ++line_;
      rec.fields.push_back(std::move(field));
      return rec;
    } else {
      field.push_back(ch);
    }
  }
  if (in_quotes) throw DataError("unterminated quoted field starting on line " + std::to_string(rec.line));
  if (!any) return std::nullopt;
  rec.fields.push_back(std::move(field));
  return rec;
}

std::vector<Record> read_all(std::istream& in) {
  Reader reader(in);
  std::vector<Record> out;
  while (auto rec = reader.next()) {
    // Skip blank lines.
    if (rec->fields.size() == 1 && rec->fields[0].empty()) continue;
    out.push_back(std::move(*rec));
  }
  return out;
}

std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void write_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << escape(fields[i]);
  }
  out << '\n';
}

}  // namespace prime::csv
