#include "prime/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <fmt/format.h>

#include "prime/csv.hpp"
#include "prime/error.hpp"
#include "prime/rng.hpp"

namespace prime {

namespace {

struct IndicatorScale {
  double mean;
  double sd;
};

// Rough national magnitudes, in default_indicators() order.
constexpr IndicatorScale kScales[] = {
    {6.0, 1.0},        {17.0, 4.0},     {2.5, 0.3},     {3000.0, 900.0}, {47.0, 3.0},    {28.0, 4.0},
    {13.0, 5.0},       {800.0, 200.0},  {55000.0, 12000.0}, {15.0, 5.0}, {58.0, 6.0},    {15000.0, 4000.0},
    {30.0, 8.0},       {12.0, 5.0},     {120.0, 40.0},  {16000.0, 4200.0}, {2.0, 0.6},   {0.5, 0.15},
    {85.0, 4.0},       {3.0, 1.0},      {150.0, 45.0},
};

const char* const kHazards[] = {"Flood", "Hurricane/Tropical Storm", "Severe Storm/Thunder Storm", "Tornado",
                                "Winter Weather"};
constexpr double kHazardBase[] = {40.0, 120.0, 15.0, 60.0, 10.0};

std::size_t index_of(const std::vector<std::string>& names, const char* name) {
  return static_cast<std::size_t>(std::find(names.begin(), names.end(), name) - names.begin());
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.regions == 0 || spec.regions > 49999) throw ValidationError("regions", "region count must be 1..49999");
  if (spec.years.size() < 3) throw ValidationError("years", "the synthetic window needs at least 3 years");
  const auto& names = default_indicators();
  const std::size_t p = names.size();
  const std::size_t own = index_of(names, "owner_occupied_units");
  const std::size_t vehicle = index_of(names, "households_with_vehicle");
  const std::size_t age = index_of(names, "pct_over_65");
  const std::size_t rent = index_of(names, "median_rent");
  const std::size_t mobile = index_of(names, "pct_mobile_homes");

  Rng rng(spec.seed);
  SyntheticData out;
  out.socio = SocioPanel(names);
  nlohmann::json features = nlohmann::json::array();

  const int first = spec.years.first;
  const int last = spec.years.last;
  std::vector<std::string> codes;
  for (std::size_t r = 0; r < spec.regions; ++r) codes.push_back(fmt::format("{:05d}", 10001 + 2 * r));

  for (const auto& code : codes) {
    std::vector<double> region_effect(p);
    for (auto& a : region_effect) a = 0.3 * rng.normal();
    const double free_effect = 0.3 * rng.normal();
    for (int year = first; year <= last; ++year) {
      std::vector<double> u(p);
      for (std::size_t j = 0; j < p; ++j) u[j] = region_effect[j] + 0.954 * rng.normal();
      const double free = free_effect + 0.954 * rng.normal();
      u[vehicle] = 0.95 * u[own] + 0.312 * free;
      if ((year - first) % 10 == 5) continue;  // unobserved year
      std::vector<double> row(p);
      for (std::size_t j = 0; j < p; ++j) row[j] = kScales[j].mean + kScales[j].sd * u[j];
      out.socio.insert(code, year, std::move(row));
    }
  }

  // Outcomes are driven by the panel the pipeline will see, gaps included.
  const auto filled = interpolate_socio_panel(out.socio, spec.years).panel;
  auto latent = [&](const std::string& code, std::size_t j, int year) {
    const auto* row = filled.find(code, std::clamp(year, first, last));
    return ((*row)[j] - kScales[j].mean) / kScales[j].sd;
  };

  for (std::size_t r = 0; r < codes.size(); ++r) {
    const auto& code = codes[r];

    // Two interleaved population chains so each year's rate is set exactly.
    std::map<int, double> pop;
    pop[first - 1] = std::round(rng.uniform(2e5, 8e5));
    pop[first] = std::round(pop[first - 1] * rng.uniform(0.99, 1.01));
    for (int year = first; year <= last; ++year) {
      const double rate = 0.01 + 0.012 * latent(code, rent, year - 1) - 0.012 * latent(code, age, year - 1) +
                          rng.uniform(-0.002, 0.002);
      pop[year + 1] = std::round(pop[year - 1] * (1.0 + rate));
    }
    for (const auto& [year, count] : pop) out.population.insert(code, year, static_cast<long long>(count));

    for (int year = first; year <= last; ++year) {
      const auto n_events = 1 + rng.below(3);
      const double exposure =
          spec.mobile_home_damage ? std::max(0.1, 1.0 + 0.3 * latent(code, mobile, year - 1)) : 1.0;
      for (std::uint64_t k = 0; k < n_events; ++k) {
        const auto type = rng.below(std::size(kHazards));
        HazardEvent e;
        e.region_code = code;
        e.hazard_type = kHazards[type];
        e.year = year;
        e.duration_days = 1.0 + 0.5 * static_cast<double>(rng.below(19));
        e.damage_per_capita = std::round(kHazardBase[type] * rng.uniform(0.5, 1.5) * exposure * 100.0) / 100.0;
        const auto month = static_cast<unsigned>(1 + rng.below(12));
        const auto day = static_cast<unsigned>(1 + rng.below(28));
        e.date = std::chrono::year_month_day{std::chrono::year{year}, std::chrono::month{month},
                                             std::chrono::day{day}};
        out.events.push_back(std::move(e));
      }
    }

    const double x = -100.0 + 0.5 * static_cast<double>(r % 20);
    const double y = 30.0 + 0.5 * static_cast<double>(r / 20);
    features.push_back({{"type", "Feature"},
                        {"properties", {{"UniqueCode", code}, {"name", fmt::format("Synthetic County {}", r + 1)}}},
                        {"geometry",
                         {{"type", "Polygon"},
                          {"coordinates",
                           {{{x, y}, {x + 0.5, y}, {x + 0.5, y + 0.5}, {x, y + 0.5}, {x, y}}}}}}});
  }
  out.geometry = {{"type", "FeatureCollection"}, {"features", std::move(features)}};
  return out;
}

void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("hazards.csv");
    write_hazard_events(f, data.events);
  }
  {
    auto f = open("population.csv");
    csv::write_row(f, {"UniqueCode", "Year", "Population"});
    for (const auto& [key, count] : data.population.entries()) {
      csv::write_row(f, {key.region, std::to_string(key.year), std::to_string(count)});
    }
  }
  {
    auto f = open("socio.csv");
    std::vector<std::string> header{"UniqueCode", "Year"};
    header.insert(header.end(), data.socio.indicators().begin(), data.socio.indicators().end());
    csv::write_row(f, header);
    for (const auto& [key, values] : data.socio.rows()) {
      std::vector<std::string> row{key.region, std::to_string(key.year)};
      for (double v : values) row.push_back(format_double(v));
      csv::write_row(f, row);
    }
  }
  {
    auto f = open("geometry.geojson");
    f << data.geometry.dump() << "\n";
  }
}

}  // namespace prime
