#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prime/causal.hpp"
#include "prime/features.hpp"
#include "prime/ingest.hpp"
#include "prime/models.hpp"
#include "prime/report.hpp"
#include "prime/scoring.hpp"

namespace prime {

struct DataPaths {
  std::filesystem::path hazards;
  std::filesystem::path population;
  std::filesystem::path socio;
  std::optional<std::filesystem::path> geometry;

  /// hazards.csv, population.csv, socio.csv and (if present) geometry.geojson.
  static DataPaths in_directory(const std::filesystem::path& dir);
};

/// Immutable input snapshot shared by every stage.
struct Datasets {
  DataPaths paths;
  HazardTable hazards;
  PopulationPanel population;
  SocioPanel socio;
  GeometryMap geometry;
  std::map<std::string, std::string> digests;  // input role -> SHA-256 of file bytes
  YearRange coverage;                          // event years present
  std::vector<std::string> hazard_types;       // sorted
};

Datasets load_datasets(const DataPaths& paths, const HazardSchema& schema = {});

struct FilterParams {
  YearRange years;
  std::vector<std::string> hazard_types;     // empty = all
  std::vector<std::string> region_prefixes;  // empty = all
  std::vector<std::string> regions;          // empty = all
  std::string damage_note;
  Aggregation aggregation = Aggregation::per_year;
  bool pooled = false;
  int lag = 1;
  InterpolationOptions interpolation;
};

/// Throws ValidationError naming the offending field.
FilterParams filter_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const FilterParams& p);

struct ScoreStage {
  FilterParams params;
  std::size_t events_used = 0;
  ScoringRun run;                             // selected aggregation
  std::vector<ScoreClasses> classes;          // parallel to run.scores
  std::vector<RegionYearScores> map_scores;   // whole-window, one row per region
  std::vector<ScoreClasses> map_classes;
  AlignedDataset dataset;                     // lagged, scaled, unpruned
  std::vector<std::string> notes;
};

/// Filters events, scores them, fills the socioeconomic panel and builds the
/// scaled modeling dataset.
ScoreStage run_score_stage(const Datasets& data, const FilterParams& params);

nlohmann::ordered_json score_summary(const ScoreStage& stage);

struct PruneParams {
  enum class Mode { threshold, manual };
  Mode mode = Mode::threshold;
  double threshold = 0.7;
  std::vector<std::string> names;

  PruneOptions options() const;
};

PruneParams prune_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const PruneParams& p);

AlignedDataset run_prune_stage(const ScoreStage& stage, const PruneParams& params);

struct TrainParams {
  std::vector<Family> families{std::begin(kAllFamilies), std::end(kAllFamilies)};
  std::vector<Target> targets{std::begin(kAllTargets), std::end(kAllTargets)};
  SplitSpec split;
  bool run_causal = false;
  BootstrapOptions causal;
  unsigned threads = 0;  // 0 = hardware concurrency; never changes results
};

TrainParams train_from_json(const nlohmann::json& j);
/// Result-relevant fields only (thread count is left out).
nlohmann::ordered_json to_json(const TrainParams& p);

struct TrainStage {
  SuiteReport suite;
  std::vector<CausalReport> causal;
};

TrainStage run_train_stage(const AlignedDataset& data, const TrainParams& params);

/// Every output file for a completed workflow. `prune` is empty when the
/// pruning step was skipped; `train` is empty before training.
Bundle build_bundle(const Datasets& data, const ScoreStage& scores, const std::optional<PruneParams>& prune,
                    const AlignedDataset& model_data, const TrainParams* train_params, const TrainStage* train,
                    const std::string& created);

/// Score files and map layers only.
Bundle score_files(const ScoreStage& scores, const Datasets& data);

/// ISO-8601 UTC timestamp of the current time.
std::string utc_timestamp();

unsigned resolve_threads(unsigned requested);

}  // namespace prime
