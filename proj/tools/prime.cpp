// prime: command-line front end for the resilience workflow.
//
// Steps persist their parameters in <out>/.prime/state.json, so
//   prime ingest --data DIR --out OUT
//   prime score --years 2001:2020 --out OUT
//   prime corr --out OUT
//   prime prune --threshold 0.7 --out OUT
//   prime train --families linear,rf --targets all --split 0.8 --seed 42 --out OUT
// can run as separate invocations. Every step recomputes from the inputs.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "prime/error.hpp"
#include "prime/pipeline.hpp"
#include "prime/service.hpp"
#include "prime/synthetic.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitData = 3;
constexpr int kExitInternal = 4;

struct DataOptions {
  std::string data_dir;
  std::string hazards;
  std::string population;
  std::string socio;
  std::string geometry;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--data", data_dir, "Directory with hazards.csv, population.csv, socio.csv, geometry.geojson");
    cmd->add_option("--hazards", hazards, "Hazard event CSV");
    cmd->add_option("--population", population, "Population CSV");
    cmd->add_option("--socio", socio, "Socioeconomic CSV");
    cmd->add_option("--geometry", geometry, "Region geometry (GeoJSON)");
  }

  bool given() const { return !data_dir.empty() || !hazards.empty() || !population.empty() || !socio.empty(); }

  prime::DataPaths resolve() const {
    prime::DataPaths p;
    if (!data_dir.empty()) p = prime::DataPaths::in_directory(data_dir);
    if (!hazards.empty()) p.hazards = hazards;
    if (!population.empty()) p.population = population;
    if (!socio.empty()) p.socio = socio;
    if (!geometry.empty()) p.geometry = geometry;
    if (p.hazards.empty() || p.population.empty() || p.socio.empty()) {
      throw prime::ValidationError("data", "hazard, population and socioeconomic files are all required");
    }
    return p;
  }
};

ojson paths_json(const prime::DataPaths& p) {
  auto abs = [](const fs::path& x) { return fs::absolute(x).lexically_normal().string(); };
  ojson j{{"hazards", abs(p.hazards)}, {"population", abs(p.population)}, {"socio", abs(p.socio)}};
  j["geometry"] = p.geometry ? ojson(abs(*p.geometry)) : ojson(nullptr);
  return j;
}

prime::DataPaths paths_from_json(const nlohmann::json& j) {
  prime::DataPaths p{j.at("hazards").get<std::string>(), j.at("population").get<std::string>(),
                     j.at("socio").get<std::string>(), std::nullopt};
  if (!j.at("geometry").is_null()) p.geometry = j.at("geometry").get<std::string>();
  return p;
}

class StateFile {
 public:
  explicit StateFile(fs::path out) : out_(std::move(out)), path_(out_ / ".prime" / "state.json") {
    if (fs::exists(path_)) {
      std::ifstream in(path_);
      state_ = nlohmann::json::parse(in);
    } else {
      state_ = nlohmann::json::object();
    }
  }

  nlohmann::json& operator[](const char* key) { return state_[key]; }
  bool has(const char* key) const { return state_.contains(key) && !state_.at(key).is_null(); }
  const nlohmann::json& at(const char* key) const { return state_.at(key); }
  void erase(const char* key) { state_.erase(key); }

  void save() const {
    fs::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::trunc);
    out << state_.dump(2) << "\n";
  }

  const fs::path& out() const { return out_; }

 private:
  fs::path out_;
  fs::path path_;
  nlohmann::json state_;
};

prime::DataPaths data_paths(const DataOptions& opts, StateFile& state) {
  if (opts.given()) {
    auto p = opts.resolve();
    state["data"] = paths_json(p);
    return p;
  }
  if (!state.has("data")) {
    throw prime::ValidationError("data", "no input files: pass --data or run `prime ingest` with this --out first");
  }
  return paths_from_json(state.at("data"));
}

prime::ScoreStage scored_stage(const prime::Datasets& data, const StateFile& state) {
  if (!state.has("filter")) throw prime::ValidationError("years", "run `prime score --years A:B` first");
  return prime::run_score_stage(data, prime::filter_from_json(state.at("filter")));
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

prime::Service* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Resilience inference: hazard scoring, regression suite and causal structure"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(prime::kVersion));

  std::string out_dir = "prime-out";
  DataOptions data_opts;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Load and validate input files");
  data_opts.add_to(ingest);
  ingest->add_option("--out", out_dir, "Output directory");

  // score
  std::string years, hazard_types, regions, prefixes, aggregation = "per_year", damage_note;
  bool pooled = false;
  double span = 0.75;
  auto* score = app.add_subcommand("score", "Filter events and compute vulnerability, adaptability and resilience");
  data_opts.add_to(score);
  score->add_option("--years", years, "Study window A:B")->required();
  score->add_option("--hazard-types", hazard_types, "Comma-separated hazard types (default all)");
  score->add_option("--regions", regions, "Comma-separated region codes");
  score->add_option("--region-prefixes", prefixes, "Comma-separated region code prefixes");
  score->add_option("--aggregation", aggregation, "per_year or whole_window");
  score->add_flag("--pooled", pooled, "Normalize all years together in per-year mode");
  score->add_option("--span", span, "Interpolation span in (0, 1]");
  score->add_option("--damage-note", damage_note, "Free-text note on the damage measure");
  score->add_option("--out", out_dir, "Output directory");

  // corr
  auto* corr = app.add_subcommand("corr", "Correlation matrix of the lagged indicators");
  corr->add_option("--out", out_dir, "Output directory");

  // prune
  std::optional<double> threshold;
  std::string drop;
  auto* prune = app.add_subcommand("prune", "Remove collinear or chosen indicators");
  auto* threshold_opt = prune->add_option("--threshold", threshold, "Drop columns with |r| above this");
  prune->add_option("--drop", drop, "Comma-separated indicators to remove")->excludes(threshold_opt);
  prune->add_option("--out", out_dir, "Output directory");

  // train
  std::string families = "all", targets = "all";
  double split = 0.8;
  std::uint64_t seed = 42;
  bool causal = false;
  int replicates = 100;
  unsigned threads = 0;
  auto* train = app.add_subcommand("train", "Tune, fit and evaluate the model suite");
  train->add_option("--families", families, "Comma-separated families or 'all'");
  train->add_option("--targets", targets, "Comma-separated targets or 'all'");
  train->add_option("--split", split, "Training fraction");
  train->add_option("--seed", seed, "Seed for the split, folds, forests and bootstrap");
  train->add_flag("--causal", causal, "Learn bootstrap PC-stable structures");
  train->add_option("--replicates", replicates, "Bootstrap replicates for --causal");
  train->add_option("--threads", threads, "Worker threads (0 = all cores)");
  train->add_option("--out", out_dir, "Output directory");

  // serve
  int port = 8080;
  std::string host = "127.0.0.1", static_dir;
  double ttl_hours = 24.0;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  data_opts.add_to(serve);
  serve->add_option("--port", port, "Port");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--static", static_dir, "Workbench bundle directory served at /");
  serve->add_option("--ttl-hours", ttl_hours, "Session lifetime in hours");
  serve->add_option("--threads", threads, "Training threads (0 = all cores)");

  // synth
  std::uint64_t synth_seed = 7;
  std::size_t synth_regions = 200;
  auto* synth = app.add_subcommand("synth", "Write the synthetic fixture dataset");
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--regions", synth_regions, "Number of regions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (synth->parsed()) {
      prime::SyntheticSpec spec;
      spec.seed = synth_seed;
      spec.regions = synth_regions;
      prime::write_synthetic(prime::generate_synthetic(spec), out_dir);
      fmt::print("wrote synthetic dataset to {}\n", out_dir);
      return 0;
    }

    if (serve->parsed()) {
      const auto paths = data_opts.resolve();
      auto data = std::make_shared<const prime::Datasets>(prime::load_datasets(paths));
      prime::ServiceOptions options;
      options.session_ttl = std::chrono::seconds(static_cast<long long>(ttl_hours * 3600.0));
      if (!static_dir.empty()) options.static_dir = static_dir;
      options.threads = threads;
      prime::Service service(data, options);
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      fmt::print("serving on http://{}:{}\n", host, port);
      std::fflush(stdout);
      if (!service.serve(host, port)) throw std::runtime_error(fmt::format("cannot listen on {}:{}", host, port));
      g_service = nullptr;
      return 0;
    }

    StateFile state(out_dir);

    if (ingest->parsed()) {
      const auto paths = data_opts.resolve();
      const auto data = prime::load_datasets(paths);
      state["data"] = paths_json(paths);
      state.erase("filter");
      state.erase("prune");
      state.save();
      ojson rejections = ojson::array();
      for (const auto& r : data.hazards.report.rejections) rejections.push_back(ojson{{"line", r.line}, {"reason", r.reason}});
      ojson report{{"hazards",
                    ojson{{"rows_in", data.hazards.report.rows_in},
                     {"events", data.hazards.events.size()},
                     {"rejections", std::move(rejections)},
                     {"coverage", data.coverage.empty() ? ojson(nullptr) : ojson(data.coverage.label())},
                     {"hazard_types", data.hazard_types}}},
                   {"population", ojson{{"entries", data.population.size()}}},
                   {"socio", ojson{{"rows", data.socio.size()}, {"indicators", data.socio.indicators()}}},
                   {"geometry", ojson{{"regions", data.geometry.size()}}},
                   {"digests", ojson(data.digests)}};
      write_file(fs::path(out_dir) / "ingest.json", prime::dump_json(report));
      fmt::print("hazard rows: {} read, {} accepted, {} rejected\n", data.hazards.report.rows_in,
                 data.hazards.events.size(), data.hazards.report.rejections.size());
      fmt::print("population entries: {}\nsocioeconomic rows: {} ({} indicators)\ngeometries: {}\n",
                 data.population.size(), data.socio.size(), data.socio.indicators().size(), data.geometry.size());
      return 0;
    }

    const auto data = prime::load_datasets(data_paths(data_opts, state));

    if (score->parsed()) {
      nlohmann::json filter{{"years", years}, {"aggregation", aggregation}, {"pooled", pooled}, {"span", span}};
      if (!hazard_types.empty()) filter["hazard_types"] = hazard_types;
      if (!regions.empty()) filter["regions"] = regions;
      if (!prefixes.empty()) filter["region_prefixes"] = prefixes;
      if (!damage_note.empty()) filter["damage_note"] = damage_note;
      const auto params = prime::filter_from_json(filter);
      const auto stage = prime::run_score_stage(data, params);
      state["filter"] = prime::to_json(params);
      state.erase("prune");
      state.save();
      auto files = prime::score_files(stage, data);
      files["score_summary.json"] = prime::dump_json(prime::score_summary(stage));
      prime::write_bundle(files, out_dir);
      fmt::print("scored {} rows over {} ({} events); {} aligned modeling rows\n", stage.run.scores.size(),
                 params.years.label(), stage.events_used, stage.dataset.rows());
      for (const auto& n : stage.notes) fmt::print("note: {}\n", n);
      return 0;
    }

    const auto stage = scored_stage(data, state);

    if (corr->parsed()) {
      const auto matrix = prime::correlation_matrix(stage.dataset);
      write_file(fs::path(out_dir) / "correlation.csv", prime::correlation_csv(matrix));
      write_file(fs::path(out_dir) / "correlation.json", prime::dump_json(prime::correlation_json(matrix)));
      std::vector<std::tuple<double, std::string, std::string>> pairs;
      for (std::size_t i = 0; i < matrix.names.size(); ++i) {
        for (std::size_t j = i + 1; j < matrix.names.size(); ++j) {
          pairs.emplace_back(std::abs(matrix.r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))),
                             matrix.names[i], matrix.names[j]);
        }
      }
      std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
      fmt::print("{} indicators; strongest pairs:\n", matrix.names.size());
      for (std::size_t k = 0; k < std::min<std::size_t>(5, pairs.size()); ++k) {
        fmt::print("  {:.3f}  {} / {}\n", std::get<0>(pairs[k]), std::get<1>(pairs[k]), std::get<2>(pairs[k]));
      }
      return 0;
    }

    if (prune->parsed()) {
      nlohmann::json request = nlohmann::json::object();
      if (!drop.empty()) {
        request["mode"] = "manual";
        request["names"] = drop;
      } else {
        request["mode"] = "threshold";
        request["threshold"] = threshold.value_or(0.7);
      }
      const auto params = prime::prune_from_json(request);
      const auto pruned = prime::run_prune_stage(stage, params);
      state["prune"] = prime::to_json(params);
      state.save();
      auto report = prime::pruning_json(pruned);
      report["parameters"] = prime::to_json(params);
      write_file(fs::path(out_dir) / "pruning.json", prime::dump_json(report));
      for (const auto& p : pruned.pruned) {
        if (p.reason == "correlation") {
          fmt::print("removed {} (|r| = {:.3f} with {})\n", p.name, std::abs(p.r), p.trigger);
        } else {
          fmt::print("removed {} ({})\n", p.name, p.reason);
        }
      }
      fmt::print("{} indicators retained\n", pruned.cols());
      return 0;
    }

    if (train->parsed()) {
      std::optional<prime::PruneParams> prune_params;
      if (state.has("prune")) prune_params = prime::prune_from_json(state.at("prune"));
      const auto model_data = prune_params ? prime::run_prune_stage(stage, *prune_params) : stage.dataset;
      nlohmann::json request{{"families", families},
                             {"targets", targets},
                             {"split_fraction", split},
                             {"seed", seed},
                             {"run_causal", causal},
                             {"threads", threads}};
      if (causal) request["causal"] = {{"replicates", replicates}};
      const auto params = prime::train_from_json(request);
      const auto trained = prime::run_train_stage(model_data, params);
      const auto bundle =
          prime::build_bundle(data, stage, prune_params, model_data, &params, &trained, prime::utc_timestamp());
      prime::write_bundle(bundle, out_dir);
      std::cout << bundle.at("metrics.txt");
      for (const auto& row : trained.suite.rows) {
        if (!row.error.empty()) {
          fmt::print(stderr, "{} / {}: {}\n", prime::to_string(row.target), prime::to_string(row.family), row.error);
        }
      }
      return 0;
    }
  } catch (const prime::ValidationError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitValidation;
  } catch (const prime::DataError& e) {
    fmt::print(stderr, "data error: {}\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    fmt::print(stderr, "internal error: {}\n", e.what());
    return kExitInternal;
  }
  return kExitInternal;
}
