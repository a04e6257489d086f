#include "prime/common.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <numeric>

#include "prime/error.hpp"

namespace prime {

long YearRange::days() const {
  if (empty()) return 0;
  using namespace std::chrono;
  const sys_days start{year{first} / January / 1};
  const sys_days end{year{last + 1} / January / 1};
  return (end - start).count();
}

std::string YearRange::label() const {
  if (first == last) return std::to_string(first);
  return std::to_string(first) + "-" + std::to_string(last);
}

namespace {

int parse_year(std::string_view text) {
  int value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ValidationError("years", "invalid year '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace

YearRange parse_year_range(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    const int y = parse_year(text);
    return {y, y};
  }
  YearRange r{parse_year(text.substr(0, colon)), parse_year(text.substr(colon + 1))};
  if (r.empty()) throw ValidationError("years", "empty year range '" + std::string(text) + "'");
  return r;
}

std::string_view to_string(Target t) {
  switch (t) {
    case Target::vulnerability: return "vulnerability";
    case Target::adaptability: return "adaptability";
    case Target::resilience: return "resilience";
  }
  return "?";
}

Target parse_target(std::string_view name) {
  for (Target t : kAllTargets) {
    if (to_string(t) == name) return t;
  }
  throw ValidationError("targets", "unknown target '" + std::string(name) + "'");
}

std::string format_double(double value) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

std::vector<std::string> split_list(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto pos = text.find(sep, start);
    if (pos == std::string_view::npos) pos = text.size();
    auto item = text.substr(start, pos - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) out.emplace_back(item);
    start = pos + 1;
  }
  return out;
}

double order_free_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  return std::accumulate(terms.begin(), terms.end(), 0.0);
}

}  // namespace prime
