#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "prime/common.hpp"
#include "prime/ingest.hpp"

namespace prime {

/// Generating model for the bundled fixture.
///
/// Indicators are standardized draws u = region effect N(0, 0.3^2) + year noise
/// N(0, 0.954^2), written as mean + sd * u, independent across indicators
/// except households_with_vehicle = 0.95 * owner_occupied_units + 0.312 * (own
/// draw). Years first+5 and first+15 are left out of the panel so they must be
/// interpolated.
///
/// Outcomes read the interpolated panel at y - 1 (standardized back to u):
///   recovery rate = 0.01 + 0.012 * median_rent - 0.012 * pct_over_65 + U(-0.002, 0.002)
///   pop[y + 1] = round(pop[y - 1] * (1 + rate)), two interleaved chains
///   damage per event = base(type) * U(0.5, 1.5) * max(0.1, 1 + 0.3 * pct_mobile_homes)
/// Event counts (1-3 per region-year), types and durations are pure noise.
struct SyntheticSpec {
  std::size_t regions = 200;
  YearRange years{2000, 2020};
  std::uint64_t seed = 7;
  bool mobile_home_damage = true;
};

struct SyntheticData {
  std::vector<HazardEvent> events;
  PopulationPanel population;
  SocioPanel socio;  // observed years only
  nlohmann::json geometry;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec = {});

/// hazards.csv, population.csv, socio.csv, geometry.geojson
void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir);

}  // namespace prime
