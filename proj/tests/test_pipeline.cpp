#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>

#include "doctest.h"
#include "oracles.hpp"
#include "prime/error.hpp"
#include "prime/pipeline.hpp"

using namespace prime;
namespace fs = std::filesystem;

namespace {

const Datasets& fixture() {
  static const Datasets data = load_datasets(DataPaths::in_directory(PRIME_FIXTURE_DIR));
  return data;
}

const ScoreStage& fixture_scores() {
  static const ScoreStage stage = run_score_stage(fixture(), filter_from_json({{"years", "2001:2020"}}));
  return stage;
}

template <typename Fn>
std::string validation_field(Fn&& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    return e.field();
  }
  return "<none>";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / fmt::format("prime-test-{}-{}", name, ::getpid());
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const auto cmd = fmt::format("\"{}\" {} >/dev/null 2>&1", PRIME_CLI, args);
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("filter parameters are validated field by field") {
  using nlohmann::json;
  CHECK(validation_field([] { filter_from_json(json::object()); }) == "years");
  CHECK(validation_field([] { filter_from_json({{"years", "2020:2000"}}); }) == "years");
  CHECK(validation_field([] { filter_from_json({{"years", 5}}); }) == "years");
  CHECK(validation_field([] { filter_from_json({{"years", "2000:2001"}, {"span", 0.0}}); }) == "span");
  CHECK(validation_field([] { filter_from_json({{"years", "2000:2001"}, {"pooled", "yes"}}); }) == "pooled");
  CHECK(validation_field([] { filter_from_json({{"years", "2000:2001"}, {"hazard_types", 3}}); }) ==
        "hazard_types");
  CHECK(validation_field([] { filter_from_json(json::array()); }) == "body");

  const auto a = filter_from_json({{"years", json::array({2001, 2010})}, {"hazard_types", "Flooding,Hail"}});
  CHECK(a.years.first == 2001);
  CHECK(a.years.last == 2010);
  CHECK(a.hazard_types == std::vector<std::string>{"Flooding", "Hail"});
  const auto b = filter_from_json(nlohmann::json::parse(to_json(a).dump()));
  CHECK(to_json(b) == to_json(a));
}

TEST_CASE("score stage rejects filters outside the data") {
  CHECK(validation_field([] { run_score_stage(fixture(), filter_from_json({{"years", "1980:1990"}})); }) ==
        "years");
  CHECK(validation_field([] {
          run_score_stage(fixture(), filter_from_json({{"years", "2001:2010"}, {"hazard_types", "Meteor"}}));
        }) == "hazard_types");
  CHECK(validation_field([] {
          run_score_stage(fixture(), filter_from_json({{"years", "2001:2010"}, {"regions", "99999"}}));
        }) == "years");
}

TEST_CASE("score stage on the fixture") {
  const auto& data = fixture();
  CHECK(data.geometry.size() == 200);
  CHECK(data.coverage.first == 2000);
  CHECK(data.coverage.last == 2020);
  const auto& s = fixture_scores();
  CHECK(s.run.scores.size() == s.classes.size());
  CHECK(s.map_scores.size() == 200);
  CHECK(s.dataset.rows() > 3000);
  CHECK(s.dataset.cols() == data.socio.indicators().size());
  for (const auto& r : s.run.scores) {
    CHECK(std::abs(r.resilience - (r.recovery_norm - 2 * r.damage_norm + r.threat_norm)) <= 1e-12);
  }
  const auto summary = score_summary(s);
  CHECK(summary["rows"] == s.run.scores.size());
  CHECK(summary["regions"] == 200);

  const auto files = score_files(s, data);
  CHECK(files.contains("scores.csv"));
  for (const char* layer : {"vulnerability", "adaptability", "resilience"}) {
    const auto path = fmt::format("layers/{}.geojson", layer);
    REQUIRE(files.contains(path));
    const auto doc = nlohmann::json::parse(files.at(path));
    CHECK(doc["features"].size() == 200);
    CHECK(oracle::rfc7946_problems(doc).empty());
  }
}

TEST_CASE("prune parameters and stage") {
  using nlohmann::json;
  CHECK(validation_field([] { prune_from_json({{"threshold", 1.5}}); }) == "threshold");
  CHECK(validation_field([] { prune_from_json({{"mode", "manual"}}); }) == "names");
  CHECK(validation_field([] { prune_from_json({{"mode", "other"}}); }) == "mode");

  const auto& s = fixture_scores();
  const auto pruned = run_prune_stage(s, prune_from_json({{"threshold", 0.7}}));
  CHECK(pruned.features == prune_collinear(s.dataset, {0.7, {}}).features);
  REQUIRE(pruned.pruned.size() == 1);
  CHECK(pruned.pruned[0].name == "households_with_vehicle");
  CHECK(pruned.pruned[0].trigger == "owner_occupied_units");

  const auto manual = run_prune_stage(s, prune_from_json({{"mode", "manual"}, {"names", {"median_rent"}}}));
  CHECK(manual.cols() == s.dataset.cols() - 1);
  CHECK(manual.column("median_rent") < 0);
  CHECK(validation_field([&] { run_prune_stage(s, prune_from_json({{"mode", "manual"}, {"names", {"nope"}}})); }) ==
        "names");
}

TEST_CASE("train parameters") {
  using nlohmann::json;
  CHECK(validation_field([] { train_from_json({{"split_fraction", 1.5}}); }) == "split_fraction");
  CHECK(validation_field([] { train_from_json({{"split_fraction", 0}}); }) == "split_fraction");
  CHECK(validation_field([] { train_from_json({{"seed", -1}}); }) == "seed");
  CHECK(validation_field([] { train_from_json({{"families", json::array()}}); }) == "families");
  CHECK(validation_field([] { train_from_json({{"causal", {{"replicates", 0}}}}); }) == "causal.replicates");
  CHECK_THROWS_AS(train_from_json({{"families", {"svm"}}}), ValidationError);

  const auto p = train_from_json({{"families", "all"}, {"targets", {"resilience"}}, {"seed", 7}, {"threads", 3}});
  CHECK(p.families.size() == 6);
  CHECK(p.targets == std::vector<Target>{Target::resilience});
  CHECK(p.causal.seed == 7);
  const auto q = train_from_json({{"families", "all"}, {"targets", {"resilience"}}, {"seed", 7}, {"threads", 1}});
  CHECK(to_json(p) == to_json(q));
}

TEST_CASE("bundle on the fixture is complete and deterministic") {
  const auto& data = fixture();
  const auto& s = fixture_scores();
  const PruneParams prune;
  const auto model_data = run_prune_stage(s, prune);
  const auto params =
      train_from_json({{"families", {"linear", "lasso"}}, {"targets", "all"}, {"run_causal", true},
                       {"causal", {{"replicates", 4}}}});
  const auto trained = run_train_stage(model_data, params);
  const auto a = build_bundle(data, s, prune, model_data, &params, &trained, "2024-01-01T00:00:00Z");
  const auto b = build_bundle(data, s, prune, model_data, &params, &trained, "2024-01-01T00:00:00Z");
  CHECK(a == b);
  for (const char* f : {"scores.csv", "layers/vulnerability.geojson", "layers/adaptability.geojson",
                        "layers/resilience.geojson", "correlation.csv", "correlation.json", "pruning.json",
                        "metrics.json", "metrics.txt", "explanations/resilience_linear.json",
                        "explanations/vulnerability_lasso.json", "dag/resilience.json", "dag/resilience.dot",
                        "causal.json", "manifest.json"}) {
    CHECK_MESSAGE(a.contains(f), f);
  }
  const auto manifest = nlohmann::json::parse(a.at("manifest.json"));
  CHECK(manifest["inputs"]["hazards"]["sha256"] == data.digests.at("hazards"));
  CHECK(manifest["seeds"]["split"] == 42);
  for (const auto& [path, digest] : manifest["outputs"].items()) CHECK(digest == sha256_hex(a.at(path)));

  // A rerun with more threads changes nothing.
  auto threaded = params;
  threaded.threads = 4;
  const auto again = run_train_stage(model_data, threaded);
  const auto c = build_bundle(data, s, prune, model_data, &params, &again, "2024-01-01T00:00:00Z");
  CHECK(c.at("metrics.json") == a.at("metrics.json"));
  CHECK(c.at("causal.json") == a.at("causal.json"));
}

TEST_CASE("command line steps and exit codes") {
  const auto out = scratch("cli");
  const auto o = out.string();
  CHECK(run_cli(fmt::format("ingest --data \"{}\" --out \"{}\"", PRIME_FIXTURE_DIR, o)) == 0);
  CHECK(fs::exists(out / "ingest.json"));
  CHECK(run_cli(fmt::format("corr --out \"{}\"", o)) == 2);  // no filter yet
  CHECK(run_cli(fmt::format("score --years 1980:1990 --out \"{}\"", o)) == 2);
  CHECK(run_cli(fmt::format("score --years 2001:2020 --out \"{}\"", o)) == 0);
  CHECK(fs::exists(out / "layers" / "resilience.geojson"));
  CHECK(run_cli(fmt::format("corr --out \"{}\"", o)) == 0);
  CHECK(run_cli(fmt::format("prune --threshold 0.7 --out \"{}\"", o)) == 0);
  const auto pruning = nlohmann::json::parse(slurp(out / "pruning.json"));
  CHECK(pruning["removed"][0]["name"] == "households_with_vehicle");
  CHECK(run_cli(fmt::format("train --families linear --targets resilience --split 1.5 --out \"{}\"", o)) == 2);
  CHECK(run_cli(fmt::format("train --families linear --targets resilience --out \"{}\"", o)) == 0);
  CHECK(fs::exists(out / "metrics.txt"));
  CHECK(fs::exists(out / "manifest.json"));
  CHECK(run_cli("no-such-command") == 2);
  CHECK(run_cli(fmt::format("ingest --data \"{}\" --out \"{}\"", (out / "missing").string(), o)) == 3);
  fs::remove_all(out);
}
