#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace prime {

/// Inclusive range of calendar years.
struct YearRange {
  int first = 0;
  int last = -1;

  bool empty() const noexcept { return last < first; }
  bool contains(int year) const noexcept { return year >= first && year <= last; }
  int size() const noexcept { return empty() ? 0 : last - first + 1; }
  /// Calendar days from Jan 1 of `first` through Dec 31 of `last`.
  long days() const;
  std::string label() const;

  auto operator<=>(const YearRange&) const = default;
};

/// Parses "A:B" (or a single year "A").
YearRange parse_year_range(std::string_view text);

struct RegionYear {
  std::string region;
  int year = 0;

  auto operator<=>(const RegionYear&) const = default;
};

enum class Target { vulnerability, adaptability, resilience };

inline constexpr Target kAllTargets[] = {Target::vulnerability, Target::adaptability,
                                         Target::resilience};

std::string_view to_string(Target t);
Target parse_target(std::string_view name);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

std::vector<std::string> split_list(std::string_view text, char sep = ',');

/// Sum of `terms` after sorting; the result does not depend on input order.
double order_free_sum(std::vector<double> terms);

/// Runs fn(i) for i in [0, n) over up to `threads` workers. Each index is
/// processed exactly once; callers write results to per-index slots.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn);

}  // namespace prime

#include "prime/detail/parallel.hpp"
