#include "prime/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

#include "prime/csv.hpp"
#include "prime/error.hpp"

namespace prime {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_real(std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  if (text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

template <typename Int>
std::optional<Int> parse_integer(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  Int value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

std::optional<std::chrono::year_month_day> parse_date(std::string_view text) {
  text = trim(text);
  if (text.size() < 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  auto y = parse_integer<int>(text.substr(0, 4));
  auto m = parse_integer<unsigned>(text.substr(5, 2));
  auto d = parse_integer<unsigned>(text.substr(8, 2));
  // Accept a trailing time component (YYYY-MM-DDTHH:MM:SS...).
  if (text.size() > 10 && text[10] != 'T' && text[10] != ' ') return std::nullopt;
  if (!y || !m || !d) return std::nullopt;
  std::chrono::year_month_day ymd{std::chrono::year{*y}, std::chrono::month{*m}, std::chrono::day{*d}};
  if (!ymd.ok()) return std::nullopt;
  return ymd;
}

std::string format_date(const std::chrono::year_month_day& d) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(d.year()),
                static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
  return buf;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return in;
}

/// Maps required column names to their positions in the header.
class Header {
 public:
  explicit Header(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      index_.emplace(std::string(trim(fields[i])), i);
    }
    width_ = fields.size();
  }

  std::size_t require(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw SchemaError("missing required column '" + name + "'");
    return it->second;
  }

  std::optional<std::size_t> optional(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t width() const { return width_; }

 private:
  std::map<std::string, std::size_t> index_;
  std::size_t width_ = 0;
};

std::string key_text(const std::string& region, int year) {
  return region + "/" + std::to_string(year);
}

}  // namespace

// ---------------------------------------------------------------------------

HazardTable read_hazard_events(std::istream& in, const HazardSchema& schema) {
  auto records = csv::read_all(in);
  if (records.empty()) throw SchemaError("hazard table has no header");

  const Header header(records.front().fields);
  const auto c_region = header.require(schema.region_column);
  const auto c_hazard = header.require(schema.hazard_column);
  const auto c_year = header.require(schema.year_column);
  const auto c_damage = header.require(schema.damage_column);
  const auto c_duration = header.require(schema.duration_column);
  const auto c_date = header.optional(schema.date_column);
  const std::regex region_re(schema.region_pattern);

  HazardTable table;
  auto reject = [&](const csv::Record& rec, std::string reason) {
    table.report.rejections.push_back({rec.line, std::move(reason)});
  };

  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    ++table.report.rows_in;
    if (rec.fields.size() != header.width()) {
      reject(rec, "expected " + std::to_string(header.width()) + " fields, found " +
                      std::to_string(rec.fields.size()));
      continue;
    }
    HazardEvent ev;
    ev.region_code = std::string(trim(rec.fields[c_region]));
    if (!std::regex_match(ev.region_code, region_re)) {
      reject(rec, "invalid region code '" + ev.region_code + "'");
      continue;
    }
    ev.hazard_type = std::string(trim(rec.fields[c_hazard]));
    if (ev.hazard_type.empty()) {
      reject(rec, "empty hazard type");
      continue;
    }
    auto year = parse_integer<int>(rec.fields[c_year]);
    if (!year) {
      reject(rec, "unparseable numeric cell in column '" + schema.year_column + "'");
      continue;
    }
    ev.year = *year;
    if (schema.study_years && !schema.study_years->contains(ev.year)) {
      reject(rec, "year out of bounds");
      continue;
    }
    auto damage = parse_real(rec.fields[c_damage]);
    if (!damage) {
      reject(rec, "unparseable numeric cell in column '" + schema.damage_column + "'");
      continue;
    }
    if (*damage < 0.0) {
      reject(rec, "negative damage");
      continue;
    }
    ev.damage_per_capita = *damage;
    auto duration = parse_real(rec.fields[c_duration]);
    if (!duration) {
      reject(rec, "unparseable numeric cell in column '" + schema.duration_column + "'");
      continue;
    }
    if (*duration <= 0.0) {
      reject(rec, "nonpositive duration");
      continue;
    }
    ev.duration_days = *duration;
    if (c_date && !trim(rec.fields[*c_date]).empty()) {
      ev.date = parse_date(rec.fields[*c_date]);
      if (!ev.date) {
        reject(rec, "invalid date '" + rec.fields[*c_date] + "'");
        continue;
      }
    }
    table.events.push_back(std::move(ev));
  }
  return table;
}

HazardTable load_hazard_events(const std::filesystem::path& path, const HazardSchema& schema) {
  auto in = open_input(path);
  return read_hazard_events(in, schema);
}

void write_hazard_events(std::ostream& out, std::span<const HazardEvent> events,
                         const HazardSchema& schema) {
  const bool with_date = std::any_of(events.begin(), events.end(),
                                     [](const HazardEvent& e) { return e.date.has_value(); });
  std::vector<std::string> header{schema.region_column, schema.hazard_column, schema.year_column,
                                  schema.damage_column, schema.duration_column};
  if (with_date) header.push_back(schema.date_column);
  csv::write_row(out, header);
  for (const auto& e : events) {
    std::vector<std::string> row{e.region_code, e.hazard_type, std::to_string(e.year),
                                 format_double(e.damage_per_capita), format_double(e.duration_days)};
    if (with_date) row.push_back(e.date ? format_date(*e.date) : std::string{});
    csv::write_row(out, row);
  }
}

// ---------------------------------------------------------------------------

void PopulationPanel::insert(const std::string& region, int year, long long population) {
  if (population <= 0) {
    throw DataError("nonpositive population for " + key_text(region, year));
  }
  auto [it, inserted] = entries_.emplace(RegionYear{region, year}, population);
  if (!inserted) throw DataError("duplicate population entry " + key_text(region, year));
}

std::optional<long long> PopulationPanel::find(const std::string& region, int year) const {
  auto it = entries_.find(RegionYear{region, year});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

PopulationPanel read_population(std::istream& in) {
  auto records = csv::read_all(in);
  if (records.empty()) throw SchemaError("population table has no header");
  const Header header(records.front().fields);
  const auto c_region = header.require("UniqueCode");
  const auto c_year = header.require("Year");
  const auto c_pop = header.require("Population");

  PopulationPanel panel;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& f = records[r].fields;
    const std::string where = "population line " + std::to_string(records[r].line);
    if (f.size() != header.width()) throw DataError(where + ": wrong field count");
    auto year = parse_integer<int>(f[c_year]);
    auto pop = parse_integer<long long>(f[c_pop]);
    if (!pop) {
      // Tolerate integral values written in floating-point form.
      if (auto real = parse_real(f[c_pop]); real && *real == std::floor(*real)) {
        pop = static_cast<long long>(*real);
      }
    }
    if (!year || !pop) throw DataError(where + ": unparseable numeric cell");
    panel.insert(std::string(trim(f[c_region])), *year, *pop);
  }
  return panel;
}

PopulationPanel load_population(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_population(in);
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& default_indicators() {
  static const std::vector<std::string> names{
      "pct_under_5",          "pct_over_65",          "avg_household_size",
      "rural_farm_population", "pct_female_workforce", "pct_single_households",
      "pct_no_high_school",   "median_rent",          "median_household_income",
      "pct_below_poverty",    "pct_employed",         "owner_occupied_units",
      "pct_renter_occupied",  "pct_mobile_homes",     "housing_density",
      "households_with_vehicle", "households_no_fuel", "households_no_plumbing",
      "same_house_1yr",       "hospitals",            "emergency_personnel",
  };
  return names;
}

void SocioPanel::insert(const std::string& region, int year, std::vector<double> values) {
  if (values.size() != indicators_.size()) {
    throw DataError("socioeconomic row " + key_text(region, year) + " has " +
                    std::to_string(values.size()) + " values, expected " +
                    std::to_string(indicators_.size()));
  }
  auto [it, inserted] = rows_.emplace(RegionYear{region, year}, std::move(values));
  if (!inserted) throw DataError("duplicate socioeconomic entry " + key_text(region, year));
}

const std::vector<double>* SocioPanel::find(const std::string& region, int year) const {
  auto it = rows_.find(RegionYear{region, year});
  return it == rows_.end() ? nullptr : &it->second;
}

std::vector<std::string> SocioPanel::regions() const {
  std::vector<std::string> out;
  for (const auto& [key, _] : rows_) {
    if (out.empty() || out.back() != key.region) out.push_back(key.region);
  }
  return out;
}

SocioPanel read_socio_panel(std::istream& in) {
  auto records = csv::read_all(in);
  if (records.empty()) throw SchemaError("socioeconomic table has no header");
  const auto& head = records.front().fields;
  const Header header(head);
  const auto c_region = header.require("UniqueCode");
  const auto c_year = header.require("Year");

  std::vector<std::size_t> cols;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < head.size(); ++i) {
    if (i == c_region || i == c_year) continue;
    cols.push_back(i);
    names.emplace_back(trim(head[i]));
  }
  if (names.empty()) throw SchemaError("socioeconomic table has no indicator columns");

  SocioPanel panel(names);
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& f = records[r].fields;
    const std::string where = "socioeconomic line " + std::to_string(records[r].line);
    if (f.size() != header.width()) throw DataError(where + ": wrong field count");
    auto year = parse_integer<int>(f[c_year]);
    if (!year) throw DataError(where + ": unparseable year");
    std::vector<double> values;
    values.reserve(cols.size());
    for (auto c : cols) {
      if (trim(f[c]).empty() || trim(f[c]) == "NA") {
        values.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      auto v = parse_real(f[c]);
      if (!v) throw DataError(where + ": unparseable value in column '" + head[c] + "'");
      values.push_back(*v);
    }
    panel.insert(std::string(trim(f[c_region])), *year, std::move(values));
  }
  return panel;
}

SocioPanel load_socio_panel(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_socio_panel(in);
}

// ---------------------------------------------------------------------------

double loess_at(std::span<const double> x, std::span<const double> y, double at, double span) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw NumericalError("local fit needs at least two support points");
  if (!(span > 0.0 && span <= 1.0)) throw ValidationError("span", "loess span must lie in (0, 1]");

  const std::size_t q =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(span * static_cast<double>(n))), 2, n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(x[a] - at) < std::abs(x[b] - at);
  });
  // Widened by one grid step so the q-th neighbour keeps a positive weight.
  const double h = std::abs(x[order[q - 1]] - at) + 1.0;

  double s0 = 0, s1 = 0, s2 = 0, t0 = 0, t1 = 0;
  for (std::size_t k = 0; k < q; ++k) {
    const std::size_t i = order[k];
    const double u = x[i] - at;
    const double r = std::abs(u) / h;
    const double w = std::pow(1.0 - r * r * r, 3);
    s0 += w;
    s1 += w * u;
    s2 += w * u * u;
    t0 += w * y[i];
    t1 += w * u * y[i];
  }
  const double det = s0 * s2 - s1 * s1;
  if (std::abs(det) <= 1e-12 * s0 * s2) return t0 / s0;
  return (s2 * t0 - s1 * t1) / det;
}

InterpolationResult interpolate_socio_panel(const SocioPanel& panel, YearRange years,
                                            const InterpolationOptions& options) {
  if (years.empty()) throw ValidationError("years", "empty interpolation range");
  const auto& names = panel.indicators();
  const std::size_t p = names.size();

  InterpolationResult result{SocioPanel(names), {}, {}};

  // Group rows by region (map iteration is already region-major, year-sorted).
  std::map<std::string, std::vector<std::pair<int, const std::vector<double>*>>> by_region;
  for (const auto& [key, values] : panel.rows()) by_region[key.region].emplace_back(key.year, &values);

  for (const auto& [region, series] : by_region) {
    std::vector<std::vector<double>> xs(p), ys(p);
    for (const auto& [year, values] : series) {
      for (std::size_t j = 0; j < p; ++j) {
        if (std::isfinite((*values)[j])) {
          xs[j].push_back(year);
          ys[j].push_back((*values)[j]);
        }
      }
    }
    std::string short_series;
    for (std::size_t j = 0; j < p && short_series.empty(); ++j) {
      if (xs[j].size() < 2) short_series = names[j];
    }
    if (!short_series.empty()) {
      result.excluded_regions.push_back(region);
      result.notes.push_back("region " + region + " excluded: indicator '" + short_series +
                             "' observed in fewer than 2 years");
      continue;
    }

    std::vector<double> lo(p), hi(p);
    for (std::size_t j = 0; j < p; ++j) {
      auto [mn, mx] = std::minmax_element(ys[j].begin(), ys[j].end());
      lo[j] = *mn;
      hi[j] = *mx;
    }

    for (int year = years.first; year <= years.last; ++year) {
      const auto* observed = panel.find(region, year);
      std::vector<double> row(p);
      for (std::size_t j = 0; j < p; ++j) {
        if (observed && std::isfinite((*observed)[j])) {
          row[j] = (*observed)[j];
          continue;
        }
        double v = loess_at(xs[j], ys[j], year, options.span);
        if (options.clamp) v = std::clamp(v, lo[j], hi[j]);
        row[j] = v;
      }
      result.panel.insert(region, year, std::move(row));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

GeometryMap parse_geometry(const nlohmann::json& collection) {
  if (!collection.is_object() || collection.value("type", "") != "FeatureCollection" ||
      !collection.contains("features") || !collection["features"].is_array()) {
    throw DataError("geometry file is not a FeatureCollection");
  }
  GeometryMap out;
  for (const auto& feature : collection["features"]) {
    const auto& props = feature.value("properties", nlohmann::json::object());
    if (!props.is_object() || !props.contains("UniqueCode")) {
      throw DataError("geometry feature without a UniqueCode property");
    }
    const auto& code_json = props["UniqueCode"];
    const std::string code = code_json.is_string() ? code_json.get<std::string>() : code_json.dump();
    const auto& geom = feature.value("geometry", nlohmann::json());
    const std::string type = geom.is_object() ? geom.value("type", "") : "";
    if (type != "Polygon" && type != "MultiPolygon") {
      throw DataError("geometry for region " + code + " is not a Polygon or MultiPolygon");
    }
    std::string name = code;
    for (const char* key : {"name", "NAME"}) {
      if (props.contains(key) && props[key].is_string()) {
        name = props[key].get<std::string>();
        break;
      }
    }
    if (!out.emplace(code, RegionGeometry{name, geom}).second) {
      throw DataError("duplicate geometry for region " + code);
    }
  }
  return out;
}

GeometryMap load_geometry(const std::filesystem::path& path) {
  auto in = open_input(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("geometry file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_geometry(doc);
}

}  // namespace prime
