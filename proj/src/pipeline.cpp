#include "prime/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "prime/error.hpp"

namespace prime {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

DataPaths DataPaths::in_directory(const fs::path& dir) {
  DataPaths p{dir / "hazards.csv", dir / "population.csv", dir / "socio.csv", std::nullopt};
  if (fs::exists(dir / "geometry.geojson")) p.geometry = dir / "geometry.geojson";
  return p;
}

namespace {

std::string file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Datasets load_datasets(const DataPaths& paths, const HazardSchema& schema) {
  Datasets d;
  d.paths = paths;
  const auto hazards = file_bytes(paths.hazards);
  const auto population = file_bytes(paths.population);
  const auto socio = file_bytes(paths.socio);
  d.digests["hazards"] = sha256_hex(hazards);
  d.digests["population"] = sha256_hex(population);
  d.digests["socio"] = sha256_hex(socio);
  {
    std::istringstream in(hazards);
    d.hazards = read_hazard_events(in, schema);
  }
  {
    std::istringstream in(population);
    d.population = read_population(in);
  }
  {
    std::istringstream in(socio);
    d.socio = read_socio_panel(in);
  }
  if (paths.geometry) {
    const auto geo = file_bytes(*paths.geometry);
    d.digests["geometry"] = sha256_hex(geo);
    try {
      d.geometry = parse_geometry(nlohmann::json::parse(geo));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("geometry file is not valid JSON: " + std::string(e.what()));
    }
  }
  std::set<std::string> types;
  for (const auto& e : d.hazards.events) {
    types.insert(e.hazard_type);
    if (d.coverage.empty()) {
      d.coverage = {e.year, e.year};
    } else {
      d.coverage.first = std::min(d.coverage.first, e.year);
      d.coverage.last = std::max(d.coverage.last, e.year);
    }
  }
  d.hazard_types.assign(types.begin(), types.end());
  return d;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> string_list(const nlohmann::json& j, const char* field) {
  if (j.is_string()) return split_list(j.get<std::string>());
  if (!j.is_array()) throw ValidationError(field, std::string(field) + " must be a list of strings");
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw ValidationError(field, std::string(field) + " must be a list of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

double number_field(const nlohmann::json& j, const char* field) {
  if (!j.is_number()) throw ValidationError(field, std::string(field) + " must be a number");
  return j.get<double>();
}

bool bool_field(const nlohmann::json& j, const char* field) {
  if (!j.is_boolean()) throw ValidationError(field, std::string(field) + " must be true or false");
  return j.get<bool>();
}

long long integer_field(const nlohmann::json& j, const char* field) {
  if (!j.is_number_integer()) throw ValidationError(field, std::string(field) + " must be an integer");
  return j.get<long long>();
}

void require_object(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("body", "request body must be a JSON object");
}

}  // namespace

FilterParams filter_from_json(const nlohmann::json& j) {
  require_object(j);
  FilterParams p;
  if (!j.contains("years")) throw ValidationError("years", "years is required");
  const auto& y = j.at("years");
  if (y.is_string()) {
    p.years = parse_year_range(y.get<std::string>());
  } else if (y.is_array() && y.size() == 2 && y[0].is_number_integer() && y[1].is_number_integer()) {
    p.years = {y[0].get<int>(), y[1].get<int>()};
  } else if (y.is_object() && y.contains("first") && y.contains("last")) {
    p.years = {static_cast<int>(integer_field(y.at("first"), "years")),
               static_cast<int>(integer_field(y.at("last"), "years"))};
  } else {
    throw ValidationError("years", "years must be \"A:B\", [A, B] or {first, last}");
  }
  if (p.years.empty()) throw ValidationError("years", "year range " + p.years.label() + " is empty");
  if (j.contains("hazard_types")) p.hazard_types = string_list(j.at("hazard_types"), "hazard_types");
  if (j.contains("region_prefixes")) p.region_prefixes = string_list(j.at("region_prefixes"), "region_prefixes");
  if (j.contains("regions")) p.regions = string_list(j.at("regions"), "regions");
  if (j.contains("damage_note")) {
    if (!j.at("damage_note").is_string()) throw ValidationError("damage_note", "damage_note must be text");
    p.damage_note = j.at("damage_note").get<std::string>();
  }
  if (j.contains("aggregation")) {
    if (!j.at("aggregation").is_string()) throw ValidationError("aggregation", "aggregation must be text");
    p.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
  }
  if (j.contains("pooled")) p.pooled = bool_field(j.at("pooled"), "pooled");
  if (j.contains("lag")) {
    const auto lag = integer_field(j.at("lag"), "lag");
    if (lag < 0 || lag > 50) throw ValidationError("lag", "lag must lie in [0, 50]");
    p.lag = static_cast<int>(lag);
  }
  if (j.contains("span")) {
    p.interpolation.span = number_field(j.at("span"), "span");
    if (!(p.interpolation.span > 0.0 && p.interpolation.span <= 1.0)) {
      throw ValidationError("span", "span must lie in (0, 1]");
    }
  }
  if (j.contains("clamp")) p.interpolation.clamp = bool_field(j.at("clamp"), "clamp");
  return p;
}

ojson to_json(const FilterParams& p) {
  return ojson{{"years", fmt::format("{}:{}", p.years.first, p.years.last)},
               {"hazard_types", p.hazard_types},
               {"region_prefixes", p.region_prefixes},
               {"regions", p.regions},
               {"damage_note", p.damage_note},
               {"aggregation", std::string(to_string(p.aggregation))},
               {"pooled", p.pooled},
               {"lag", p.lag},
               {"span", p.interpolation.span},
               {"clamp", p.interpolation.clamp}};
}

namespace {

bool region_selected(const FilterParams& p, const std::string& region) {
  if (!p.regions.empty() && std::find(p.regions.begin(), p.regions.end(), region) == p.regions.end()) return false;
  if (p.region_prefixes.empty()) return true;
  return std::any_of(p.region_prefixes.begin(), p.region_prefixes.end(),
                     [&](const std::string& prefix) { return region.starts_with(prefix); });
}

YearRange socio_span(const SocioPanel& socio) {
  YearRange span;
  for (const auto& [key, _] : socio.rows()) {
    if (span.empty()) {
      span = {key.year, key.year};
    } else {
      span.first = std::min(span.first, key.year);
      span.last = std::max(span.last, key.year);
    }
  }
  return span;
}

}  // namespace

ScoreStage run_score_stage(const Datasets& data, const FilterParams& params) {
  if (params.years.empty()) throw ValidationError("years", "year range is empty");
  if (data.coverage.empty()) throw DataError("the hazard file holds no usable events");
  if (params.years.first < data.coverage.first || params.years.last > data.coverage.last) {
    throw ValidationError("years", "year range " + params.years.label() + " lies outside the data coverage " +
                                       data.coverage.label());
  }
  for (const auto& t : params.hazard_types) {
    if (!std::binary_search(data.hazard_types.begin(), data.hazard_types.end(), t)) {
      throw ValidationError("hazard_types", "unknown hazard type '" + t + "'");
    }
  }

  ScoreStage stage;
  stage.params = params;
  std::vector<HazardEvent> events;
  for (const auto& e : data.hazards.events) {
    if (!params.years.contains(e.year)) continue;
    if (!params.hazard_types.empty() &&
        std::find(params.hazard_types.begin(), params.hazard_types.end(), e.hazard_type) == params.hazard_types.end()) {
      continue;
    }
    if (!region_selected(params, e.region_code)) continue;
    events.push_back(e);
  }
  if (events.empty()) throw ValidationError("years", "no hazard events match the filter");
  stage.events_used = events.size();

  ScoreOptions options{params.aggregation, params.pooled, params.years};
  stage.run = score_events(events, data.population, params.years, options);
  if (stage.run.scores.empty()) {
    throw DataError("no region-year has the population data needed for a recovery rate");
  }
  std::vector<std::string> warnings;
  stage.classes = classify_scores(stage.run.scores, &warnings);
  if (!stage.run.incomplete.empty()) {
    stage.notes.push_back(fmt::format("{} region-years lack population for year-1 or year+1 and were excluded",
                                      stage.run.incomplete.size()));
  }

  if (params.aggregation == Aggregation::whole_window) {
    stage.map_scores = stage.run.scores;
    stage.map_classes = stage.classes;
  } else {
    const auto window = score_events(events, data.population, params.years,
                                     {Aggregation::whole_window, false, params.years});
    stage.map_scores = window.scores;
    stage.map_classes = classify_scores(stage.map_scores, &warnings);
  }
  for (auto& w : warnings) stage.notes.push_back(std::move(w));

  const YearRange observed = socio_span(data.socio);
  YearRange fill{std::max(params.years.first - params.lag, observed.first),
                 std::min(params.years.last, observed.last)};
  if (fill.empty()) throw DataError("the socioeconomic panel does not cover " + params.years.label());
  auto filled = interpolate_socio_panel(data.socio, fill, params.interpolation);
  for (auto& n : filled.notes) stage.notes.push_back(std::move(n));

  stage.dataset = scale_features(align(stage.run.scores, filled.panel, params.lag));
  stage.dataset.warnings.push_back(
      "feature scaling parameters are computed on the full dataset before the train/test split, so test rows "
      "influence the scaling");
  return stage;
}

ojson score_summary(const ScoreStage& stage) {
  ojson stats = ojson::object();
  for (Target t : kAllTargets) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    std::vector<double> values;
    for (const auto& s : stage.run.scores) {
      values.push_back(s.score(t));
      lo = std::min(lo, s.score(t));
      hi = std::max(hi, s.score(t));
    }
    const double mean = order_free_sum(values) / static_cast<double>(values.size());
    stats[std::string(to_string(t))] = {{"min", lo}, {"max", hi}, {"mean", mean}};
  }
  ojson hazards = ojson::object();
  for (const auto& [type, h] : stage.run.stats) {
    hazards[type] = {{"count", h.count}, {"likelihood", h.likelihood}, {"weightage", h.weightage}};
  }
  std::set<std::string> regions;
  for (const auto& s : stage.run.scores) regions.insert(s.region_code);
  return ojson{{"events", stage.events_used},
               {"rows", stage.run.scores.size()},
               {"regions", regions.size()},
               {"incomplete", stage.run.incomplete.size()},
               {"aligned_rows", stage.dataset.rows()},
               {"dropped_rows", stage.dataset.dropped_rows.size()},
               {"scores", std::move(stats)},
               {"hazards", std::move(hazards)},
               {"notes", stage.notes}};
}

// ---------------------------------------------------------------------------

PruneOptions PruneParams::options() const {
  if (mode == Mode::manual) return PruneOptions{1.0, names};
  return PruneOptions{threshold, names};
}

PruneParams prune_from_json(const nlohmann::json& j) {
  require_object(j);
  PruneParams p;
  if (j.contains("mode")) {
    const auto& m = j.at("mode");
    if (m == "manual") {
      p.mode = PruneParams::Mode::manual;
    } else if (m == "threshold") {
      p.mode = PruneParams::Mode::threshold;
    } else {
      throw ValidationError("mode", "mode must be \"manual\" or \"threshold\"");
    }
  }
  if (j.contains("threshold")) {
    p.threshold = number_field(j.at("threshold"), "threshold");
    if (!(p.threshold > 0.0 && p.threshold <= 1.0)) throw ValidationError("threshold", "threshold must lie in (0, 1]");
  }
  if (j.contains("names")) p.names = string_list(j.at("names"), "names");
  if (p.mode == PruneParams::Mode::manual && p.names.empty()) {
    throw ValidationError("names", "manual pruning needs at least one variable name");
  }
  return p;
}

ojson to_json(const PruneParams& p) {
  ojson j{{"mode", p.mode == PruneParams::Mode::manual ? "manual" : "threshold"}};
  j["threshold"] = p.mode == PruneParams::Mode::manual ? ojson(nullptr) : ojson(p.threshold);
  j["names"] = p.names;
  return j;
}

AlignedDataset run_prune_stage(const ScoreStage& stage, const PruneParams& params) {
  return prune_collinear(stage.dataset, params.options());
}

// ---------------------------------------------------------------------------

TrainParams train_from_json(const nlohmann::json& j) {
  require_object(j);
  TrainParams p;
  auto all = [](const nlohmann::json& v) { return v.is_string() && v.get<std::string>() == "all"; };
  if (j.contains("families") && !all(j.at("families"))) {
    p.families.clear();
    for (const auto& name : string_list(j.at("families"), "families")) p.families.push_back(parse_family(name));
    if (p.families.empty()) throw ValidationError("families", "at least one model family is required");
  }
  if (j.contains("targets") && !all(j.at("targets"))) {
    p.targets.clear();
    for (const auto& name : string_list(j.at("targets"), "targets")) p.targets.push_back(parse_target(name));
    if (p.targets.empty()) throw ValidationError("targets", "at least one target is required");
  }
  if (j.contains("split_fraction")) {
    p.split.train_fraction = number_field(j.at("split_fraction"), "split_fraction");
  }
  if (!(p.split.train_fraction > 0.0 && p.split.train_fraction < 1.0)) {
    throw ValidationError("split_fraction", "split_fraction must lie strictly between 0 and 1");
  }
  if (j.contains("seed")) {
    const auto seed = integer_field(j.at("seed"), "seed");
    if (seed < 0) throw ValidationError("seed", "seed must be nonnegative");
    p.split.seed = static_cast<std::uint64_t>(seed);
  }
  p.causal.seed = p.split.seed;
  if (j.contains("run_causal")) p.run_causal = bool_field(j.at("run_causal"), "run_causal");
  if (j.contains("causal")) {
    const auto& c = j.at("causal");
    require_object(c);
    if (c.contains("replicates")) {
      const auto b = integer_field(c.at("replicates"), "causal.replicates");
      if (b < 1) throw ValidationError("causal.replicates", "replicates must be >= 1");
      p.causal.replicates = static_cast<int>(b);
    }
    if (c.contains("subsample_fraction")) {
      p.causal.subsample_fraction = number_field(c.at("subsample_fraction"), "causal.subsample_fraction");
      if (!(p.causal.subsample_fraction > 0.0 && p.causal.subsample_fraction <= 1.0)) {
        throw ValidationError("causal.subsample_fraction", "subsample_fraction must lie in (0, 1]");
      }
    }
    if (c.contains("alpha")) {
      p.causal.alpha = number_field(c.at("alpha"), "causal.alpha");
      if (!(p.causal.alpha > 0.0 && p.causal.alpha < 1.0)) {
        throw ValidationError("causal.alpha", "alpha must lie in (0, 1)");
      }
    }
    if (c.contains("threshold")) {
      p.causal.threshold = number_field(c.at("threshold"), "causal.threshold");
      if (!(p.causal.threshold > 0.0 && p.causal.threshold <= 1.0)) {
        throw ValidationError("causal.threshold", "threshold must lie in (0, 1]");
      }
    }
    if (c.contains("max_depth")) {
      const auto d = integer_field(c.at("max_depth"), "causal.max_depth");
      if (d < 0) throw ValidationError("causal.max_depth", "max_depth must be >= 0");
      p.causal.max_depth = static_cast<int>(d);
    }
    if (c.contains("seed")) {
      const auto s = integer_field(c.at("seed"), "causal.seed");
      if (s < 0) throw ValidationError("causal.seed", "seed must be nonnegative");
      p.causal.seed = static_cast<std::uint64_t>(s);
    }
  }
  if (j.contains("threads")) {
    const auto t = integer_field(j.at("threads"), "threads");
    if (t < 0) throw ValidationError("threads", "threads must be >= 0");
    p.threads = static_cast<unsigned>(t);
  }
  return p;
}

ojson to_json(const TrainParams& p) {
  ojson families = ojson::array();
  for (auto f : p.families) families.push_back(std::string(to_string(f)));
  ojson targets = ojson::array();
  for (auto t : p.targets) targets.push_back(std::string(to_string(t)));
  ojson j{{"families", std::move(families)},
          {"targets", std::move(targets)},
          {"split_fraction", p.split.train_fraction},
          {"seed", p.split.seed},
          {"run_causal", p.run_causal}};
  if (p.run_causal) {
    j["causal"] = {{"replicates", p.causal.replicates},
                   {"subsample_fraction", p.causal.subsample_fraction},
                   {"alpha", p.causal.alpha},
                   {"threshold", p.causal.threshold},
                   {"max_depth", p.causal.max_depth},
                   {"seed", p.causal.seed}};
  }
  return j;
}

unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

TrainStage run_train_stage(const AlignedDataset& data, const TrainParams& params) {
  if (!(params.split.train_fraction > 0.0 && params.split.train_fraction < 1.0)) {
    throw ValidationError("split_fraction", "split_fraction must lie strictly between 0 and 1");
  }
  if (data.cols() == 0) throw DataError("no feature columns remain after pruning");
  const unsigned threads = resolve_threads(params.threads);
  std::vector<ModelSpec> specs;
  for (auto f : params.families) specs.push_back(default_spec(f, params.split.seed));

  TrainStage stage;
  stage.suite = run_model_suite(data, specs, params.split, params.targets, threads);
  if (params.run_causal) {
    BootstrapOptions opts = params.causal;
    opts.threads = threads;
    for (auto t : params.targets) stage.causal.push_back(learn_causal_structure(data, t, opts));
  }
  return stage;
}

// ---------------------------------------------------------------------------

Bundle score_files(const ScoreStage& scores, const Datasets& data) {
  Bundle b;
  b["scores.csv"] = scores_csv(scores.run.scores, scores.classes);
  if (!data.geometry.empty()) {
    const auto layers = export_geolayers(scores.map_scores, scores.map_classes, data.geometry);
    for (const auto& [t, doc] : layers.layers) b["layers/" + std::string(to_string(t)) + ".geojson"] = dump_json(doc);
    b["layers/missing_geometry.json"] = dump_json(ojson{{"missing", layers.missing}});
  }
  return b;
}

Bundle build_bundle(const Datasets& data, const ScoreStage& scores, const std::optional<PruneParams>& prune,
                    const AlignedDataset& model_data, const TrainParams* train_params, const TrainStage* train,
                    const std::string& created) {
  Bundle b = score_files(scores, data);
  const auto corr = correlation_matrix(scores.dataset);
  b["correlation.csv"] = correlation_csv(corr);
  b["correlation.json"] = dump_json(correlation_json(corr));

  ojson pruning = pruning_json(model_data);
  pruning["status"] = prune ? "complete" : "not run";
  pruning["parameters"] = prune ? to_json(*prune) : ojson(nullptr);
  b["pruning.json"] = dump_json(pruning);

  ojson hyper = ojson::array();
  if (train) {
    const auto metrics = metrics_json(train->suite);
    b["metrics.json"] = dump_json(metrics);
    b["metrics.txt"] = metrics_text(metrics);
    for (const auto& row : train->suite.rows) {
      if (!row.model) continue;
      b["explanations/" + std::string(to_string(row.target)) + "_" + std::string(to_string(row.family)) + ".json"] =
          dump_json(explanation_json(*row.model, row.target));
      hyper.push_back(ojson{{"target", std::string(to_string(row.target))},
                            {"family", std::string(to_string(row.family))},
                            {"params", hyperparams_json(row.family, row.model->params)}});
    }
    for (const auto& rep : train->causal) {
      const std::string name(to_string(rep.target));
      b["dag/" + name + ".json"] = dump_json(dag_json(rep.dag));
      b["dag/" + name + ".dot"] = dag_dot(rep.dag, name);
    }
    b["causal.json"] = dump_json(causal_json(train->causal, train_params && train_params->run_causal));
  }

  ojson inputs = ojson::object();
  auto input = [&](const char* role, const fs::path& path) {
    inputs[role] = {{"file", path.filename().string()}, {"sha256", data.digests.at(role)}};
  };
  input("hazards", data.paths.hazards);
  input("population", data.paths.population);
  input("socio", data.paths.socio);
  if (data.paths.geometry) input("geometry", *data.paths.geometry);

  ojson manifest{{"tool", "prime"},
                 {"version", std::string(kVersion)},
                 {"inputs", std::move(inputs)},
                 {"filter", to_json(scores.params)},
                 {"pruning", prune ? to_json(*prune) : ojson(nullptr)},
                 {"column_order", model_data.input_columns},
                 {"training", train_params ? to_json(*train_params) : ojson(nullptr)}};
  if (train_params) {
    manifest["seeds"] = {{"split", train_params->split.seed},
                         {"cross_validation", train_params->split.seed},
                         {"causal", train_params->run_causal ? ojson(train_params->causal.seed) : ojson(nullptr)}};
  }
  manifest["hyperparameters"] = std::move(hyper);
  manifest["notes"] = model_data.warnings;
  add_manifest(b, std::move(manifest), created);
  return b;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace prime
