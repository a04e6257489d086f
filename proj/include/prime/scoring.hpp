#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prime/common.hpp"
#include "prime/error.hpp"
#include "prime/ingest.hpp"

namespace prime {

/// Hazard-type constants shared by every event of that type in a study window.
struct HazardTypeStats {
  std::size_t count = 0;
  double likelihood = 0.0;  // events per calendar day of the window
  double weightage = 0.0;   // mean of damage_per_capita / duration_days over the events
};

using HazardStatsMap = std::map<std::string, HazardTypeStats>;
using RegionYearValues = std::map<RegionYear, double>;

/// Events outside `window` are ignored.
HazardStatsMap compute_hazard_stats(std::span<const HazardEvent> events, YearRange window);

/// Sum over each region-year's events of duration * likelihood * weightage.
/// Throws DataError for a hazard type missing from `stats`.
RegionYearValues compute_threat(std::span<const HazardEvent> events, const HazardStatsMap& stats);

/// Sum of per-capita damage over each region-year's events.
RegionYearValues compute_damage(std::span<const HazardEvent> events);

/// Population change from year-1 to year+1, relative to year-1. Empty when
/// either population year is missing.
std::optional<double> compute_recovery(const PopulationPanel& pop, const std::string& region, int year);

struct RecoveryTable {
  RegionYearValues rates;
  std::vector<RegionYear> incomplete;
};

RecoveryTable compute_recovery_table(const PopulationPanel& pop, const std::vector<RegionYear>& keys);

/// (x - min) / (max - min); every value maps to 0 when max == min.
std::vector<double> min_max_normalize(std::span<const double> values);

template <typename Key>
std::map<Key, double> min_max_normalize(const std::map<Key, double>& values) {
  if (values.empty()) throw ValidationError("cannot normalize an empty set of values");
  std::vector<double> v;
  v.reserve(values.size());
  for (const auto& [k, x] : values) v.push_back(x);
  const auto scaled = min_max_normalize(v);
  std::map<Key, double> out;
  std::size_t i = 0;
  for (const auto& [k, x] : values) out.emplace_hint(out.end(), k, scaled[i++]);
  return out;
}

enum class Aggregation { per_year, whole_window };

std::string_view to_string(Aggregation a);
Aggregation parse_aggregation(std::string_view text);

struct ScoreOptions {
  Aggregation aggregation = Aggregation::per_year;
  /// Per-year mode only: normalize all years together instead of year by year.
  bool pooled = false;
  /// Label for whole-window rows; derived from the keys when absent.
  std::optional<YearRange> window;
};

struct RegionYearScores {
  std::string region_code;
  int year = 0;        // score year; first window year in whole-window mode
  std::string period;  // "2017" or "2000-2020"
  double threat_raw = 0.0;
  double damage_raw = 0.0;
  double recovery_raw = 0.0;
  double threat_norm = 0.0;
  double damage_norm = 0.0;
  double recovery_norm = 0.0;
  double vulnerability = 0.0;
  double adaptability = 0.0;
  double resilience = 0.0;

  double score(Target t) const;
};

/// The three maps must share one key set (DataError lists the difference).
/// Output is sorted by period then region.
std::vector<RegionYearScores> compute_scores(const RegionYearValues& threat, const RegionYearValues& damage,
                                             const RegionYearValues& recovery, const ScoreOptions& options = {});

struct ScoreClassification {
  std::map<std::string, int> classes;  // key -> 1..n_classes
  std::vector<double> boundaries;      // n_classes + 1 quantiles, q0 = min, qn = max
  std::vector<std::string> warnings;
};

/// Linear-interpolation quantile (numpy's default) of sorted data.
double empirical_quantile(std::span<const double> sorted, double p);

/// Class k holds values in (q_{(k-1)/n}, q_{k/n}]; class 1 also holds the
/// minimum. Values equal to a boundary take the lower class.
ScoreClassification quantile_classify(const std::map<std::string, double>& values, int n_classes = 4);

struct ScoreClasses {
  int vulnerability = 0;
  int adaptability = 0;
  int resilience = 0;
};

/// Classes for every score row, computed within each period.
std::vector<ScoreClasses> classify_scores(std::span<const RegionYearScores> scores,
                                          std::vector<std::string>* warnings = nullptr);

struct ScoringRun {
  HazardStatsMap stats;
  std::vector<RegionYearScores> scores;
  std::vector<RegionYear> incomplete;  // region-years without both population years
};

/// Full score computation for events already filtered to `window`.
ScoringRun score_events(std::span<const HazardEvent> events, const PopulationPanel& pop, YearRange window,
                        const ScoreOptions& options = {});

}  // namespace prime
