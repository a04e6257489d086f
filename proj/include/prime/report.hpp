#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "prime/causal.hpp"
#include "prime/features.hpp"
#include "prime/ingest.hpp"
#include "prime/models.hpp"
#include "prime/scoring.hpp"

namespace prime {

inline constexpr std::string_view kVersion = "1.0.0";

/// Output files keyed by path relative to the bundle root.
using Bundle = std::map<std::string, std::string>;

/// Pretty-printed JSON with a trailing newline.
std::string dump_json(const nlohmann::ordered_json& j);

std::string scores_csv(std::span<const RegionYearScores> scores, std::span<const ScoreClasses> classes);

/// Four colors, class 1 first.
const std::array<std::string, 4>& class_colors(Target layer);

struct GeoLayers {
  std::map<Target, nlohmann::ordered_json> layers;
  std::vector<std::string> missing;  // scored regions without geometry
};

/// One FeatureCollection per score kind. Expects one score row per region.
/// Throws DataError when no scored region has a geometry.
GeoLayers export_geolayers(std::span<const RegionYearScores> scores, std::span<const ScoreClasses> classes,
                           const GeometryMap& geometry);

std::string correlation_csv(const CorrelationMatrix& corr);
nlohmann::ordered_json correlation_json(const CorrelationMatrix& corr);

/// {removed: [{name, reason, trigger, r}], retained: [...]}
nlohmann::ordered_json pruning_json(const AlignedDataset& pruned);

nlohmann::ordered_json metrics_json(const SuiteReport& suite);
/// Plain-text table grouped by target, rendered from metrics_json output.
std::string metrics_text(const nlohmann::ordered_json& metrics);
/// Number format used in metrics_text.
std::string format_metric(double value);

/// Explanation items sorted by decreasing |value|.
nlohmann::ordered_json explanation_json(const TrainedModel& model, Target target);

/// Parents and arc counts per target, or {"status": "not run"}.
nlohmann::ordered_json causal_json(std::span<const CausalReport> reports, bool run);

std::string sha256_hex(std::string_view data);

/// Adds manifest.json: `base` plus the SHA-256 of every other bundle file and
/// the creation timestamp.
void add_manifest(Bundle& bundle, nlohmann::ordered_json base, const std::string& created);

void write_bundle(const Bundle& bundle, const std::filesystem::path& dir);

}  // namespace prime
