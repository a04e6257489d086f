#pragma once

#include <chrono>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prime/common.hpp"

namespace prime {

// ---------------------------------------------------------------------------
// Hazard events
// ---------------------------------------------------------------------------

struct HazardEvent {
  std::string region_code;
  std::string hazard_type;
  int year = 0;
  double damage_per_capita = 0.0;  // constant-dollar, already divided by population
  double duration_days = 0.0;
  std::optional<std::chrono::year_month_day> date;

  bool operator==(const HazardEvent&) const = default;
};

/// Column names and validation rules for a hazard-event table. The defaults
/// describe the processed SHELDUS export; other sources only need a mapping.
struct HazardSchema {
  std::string region_column = "UniqueCode";
  std::string hazard_column = "Disaster";
  std::string year_column = "Year";
  std::string damage_column = "DamageRIM";
  std::string duration_column = "Duration (days)";
  std::string date_column = "Date";  // optional in input
  std::string region_pattern = "[0-9]{5}";
  std::optional<YearRange> study_years;
};

struct RowRejection {
  std::size_t line = 0;
  std::string reason;
};

struct LoadReport {
  std::size_t rows_in = 0;
  std::vector<RowRejection> rejections;
};

struct HazardTable {
  std::vector<HazardEvent> events;
  LoadReport report;
};

/// Rows that fail validation are rejected and reported; only a missing
/// required column aborts the load (SchemaError).
HazardTable read_hazard_events(std::istream& in, const HazardSchema& schema = {});
HazardTable load_hazard_events(const std::filesystem::path& path, const HazardSchema& schema = {});

/// Writes events in the same format read_hazard_events accepts. The date
/// column is emitted only when at least one event carries a date.
void write_hazard_events(std::ostream& out, std::span<const HazardEvent> events,
                         const HazardSchema& schema = {});

// ---------------------------------------------------------------------------
// Population panel
// ---------------------------------------------------------------------------

class PopulationPanel {
 public:
  /// Throws DataError on a nonpositive count or a duplicate key.
  void insert(const std::string& region, int year, long long population);
  std::optional<long long> find(const std::string& region, int year) const;
  std::size_t size() const noexcept { return entries_.size(); }
  const std::map<RegionYear, long long>& entries() const noexcept { return entries_; }

 private:
  std::map<RegionYear, long long> entries_;
};

PopulationPanel read_population(std::istream& in);
PopulationPanel load_population(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Socioeconomic panel
// ---------------------------------------------------------------------------

/// Default indicator set (US Census derived), in canonical column order.
const std::vector<std::string>& default_indicators();

class SocioPanel {
 public:
  SocioPanel() = default;
  explicit SocioPanel(std::vector<std::string> indicators) : indicators_(std::move(indicators)) {}

  const std::vector<std::string>& indicators() const noexcept { return indicators_; }
  /// Missing cells are NaN. Throws DataError on duplicate keys or a width mismatch.
  void insert(const std::string& region, int year, std::vector<double> values);
  const std::vector<double>* find(const std::string& region, int year) const;
  const std::map<RegionYear, std::vector<double>>& rows() const noexcept { return rows_; }
  std::vector<std::string> regions() const;
  std::size_t size() const noexcept { return rows_.size(); }

 private:
  std::vector<std::string> indicators_;
  std::map<RegionYear, std::vector<double>> rows_;
};

/// Columns after the region and year columns become indicators in file order.
SocioPanel read_socio_panel(std::istream& in);
SocioPanel load_socio_panel(const std::filesystem::path& path);

struct InterpolationOptions {
  double span = 0.75;  // fraction of a series' observations in each local fit
  bool clamp = true;   // keep filled values inside the observed range
};

struct InterpolationResult {
  SocioPanel panel;
  std::vector<std::string> excluded_regions;
  std::vector<std::string> notes;
};

/// Fills every (region, year) in `years` for every indicator by local linear
/// (tricube-weighted) trend fits over that region's yearly series. Observed
/// values pass through untouched. Regions with an indicator observed in fewer
/// than two years are excluded and noted.
InterpolationResult interpolate_socio_panel(const SocioPanel& panel, YearRange years,
                                            const InterpolationOptions& options = {});

/// Local linear fit at `at` over the support (x, y). x must be strictly increasing
/// with at least two points.
double loess_at(std::span<const double> x, std::span<const double> y, double at, double span);

// ---------------------------------------------------------------------------
// Region geometry
// ---------------------------------------------------------------------------

struct RegionGeometry {
  std::string name;
  nlohmann::json geometry;  // RFC 7946 Polygon or MultiPolygon
};

using GeometryMap = std::map<std::string, RegionGeometry>;

/// Features are keyed by their `UniqueCode` property; the display name comes
/// from `name` (or `NAME`) and falls back to the code.
GeometryMap parse_geometry(const nlohmann::json& collection);
GeometryMap load_geometry(const std::filesystem::path& path);

}  // namespace prime
