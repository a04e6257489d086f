#include "prime/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "prime/csv.hpp"
#include "prime/error.hpp"

namespace prime {

using ojson = nlohmann::ordered_json;

std::string dump_json(const ojson& j) { return j.dump(2) + "\n"; }

std::string scores_csv(std::span<const RegionYearScores> scores, std::span<const ScoreClasses> classes) {
  if (scores.size() != classes.size()) throw ValidationError("score and class counts differ");
  std::ostringstream out;
  const bool windowed = std::any_of(scores.begin(), scores.end(),
                                    [](const RegionYearScores& s) { return s.period.find('-') != std::string::npos; });
  csv::write_row(out, {"region_code", windowed ? "window" : "year", "threat_raw", "damage_raw", "recovery_raw", "threat_norm",
                       "damage_norm", "recovery_norm", "vulnerability", "adaptability", "resilience", "v_class",
                       "a_class", "r_class"});
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& s = scores[i];
    const auto& c = classes[i];
    csv::write_row(out, {s.region_code, s.period, format_double(s.threat_raw), format_double(s.damage_raw),
                         format_double(s.recovery_raw), format_double(s.threat_norm), format_double(s.damage_norm),
                         format_double(s.recovery_norm), format_double(s.vulnerability),
                         format_double(s.adaptability), format_double(s.resilience),
                         std::to_string(c.vulnerability), std::to_string(c.adaptability),
                         std::to_string(c.resilience)});
  }
  return out.str();
}

const std::array<std::string, 4>& class_colors(Target layer) {
  // Diverging blue/red ramp; vulnerability runs blue (low) to red (high),
  // the other two the opposite way.
  static const std::array<std::string, 4> blue_to_red{"#2c7bb6", "#abd9e9", "#fdae61", "#d7191c"};
  static const std::array<std::string, 4> red_to_blue{"#d7191c", "#fdae61", "#abd9e9", "#2c7bb6"};
  return layer == Target::vulnerability ? blue_to_red : red_to_blue;
}

namespace {

int class_of(const ScoreClasses& c, Target t) {
  switch (t) {
    case Target::vulnerability: return c.vulnerability;
    case Target::adaptability: return c.adaptability;
    case Target::resilience: return c.resilience;
  }
  return 0;
}

ojson class_legend(std::span<const RegionYearScores> scores, std::span<const ScoreClasses> classes, Target t) {
  const auto& colors = class_colors(t);
  ojson legend = ojson::array();
  for (int k = 1; k <= 4; ++k) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    std::size_t count = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (class_of(classes[i], t) != k) continue;
      lo = std::min(lo, scores[i].score(t));
      hi = std::max(hi, scores[i].score(t));
      ++count;
    }
    ojson entry{{"class", k}, {"color", colors[k - 1]}, {"count", count}};
    entry["min"] = count ? ojson(lo) : ojson(nullptr);
    entry["max"] = count ? ojson(hi) : ojson(nullptr);
    legend.push_back(std::move(entry));
  }
  return legend;
}

}  // namespace

GeoLayers export_geolayers(std::span<const RegionYearScores> scores, std::span<const ScoreClasses> classes,
                           const GeometryMap& geometry) {
  if (scores.size() != classes.size()) throw ValidationError("score and class counts differ");
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a].region_code < scores[b].region_code; });
  for (std::size_t k = 1; k < order.size(); ++k) {
    if (scores[order[k]].region_code == scores[order[k - 1]].region_code) {
      throw ValidationError("map layers need one score row per region; '" + scores[order[k]].region_code +
                            "' appears more than once");
    }
  }

  GeoLayers out;
  std::vector<std::size_t> mapped;
  for (auto i : order) {
    if (geometry.contains(scores[i].region_code)) {
      mapped.push_back(i);
    } else {
      out.missing.push_back(scores[i].region_code);
    }
  }
  if (mapped.empty()) throw DataError("no scored region has a geometry");

  const std::string period = scores.empty() ? std::string{} : scores[order.front()].period;
  for (Target t : kAllTargets) {
    const auto& colors = class_colors(t);
    ojson features = ojson::array();
    for (auto i : mapped) {
      const auto& s = scores[i];
      const auto& c = classes[i];
      const auto& g = geometry.at(s.region_code);
      const int k = class_of(c, t);
      ojson props{{"UniqueCode", s.region_code},
                  {"name", g.name},
                  {"period", s.period},
                  {"resilience", s.resilience},
                  {"adaptability", s.adaptability},
                  {"vulnerability", s.vulnerability},
                  {"r_class", c.resilience},
                  {"a_class", c.adaptability},
                  {"v_class", c.vulnerability},
                  {"class", k},
                  {"color", colors[static_cast<std::size_t>(std::clamp(k, 1, 4) - 1)]}};
      features.push_back(ojson{{"type", "Feature"},
                               {"id", s.region_code},
                               {"geometry", ojson::parse(g.geometry.dump())},
                               {"properties", std::move(props)}});
    }
    ojson layer{{"type", "FeatureCollection"},
                {"name", std::string(to_string(t))},
                {"layer", {{"kind", std::string(to_string(t))},
                           {"period", period},
                           {"visible", false},
                           {"classes", class_legend(scores, classes, t)}}},
                {"features", std::move(features)}};
    out.layers.emplace(t, std::move(layer));
  }
  return out;
}

std::string correlation_csv(const CorrelationMatrix& corr) {
  std::ostringstream out;
  std::vector<std::string> header{""};
  header.insert(header.end(), corr.names.begin(), corr.names.end());
  csv::write_row(out, header);
  for (std::size_t i = 0; i < corr.names.size(); ++i) {
    std::vector<std::string> row{corr.names[i]};
    for (std::size_t j = 0; j < corr.names.size(); ++j) {
      row.push_back(format_double(corr.r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
    }
    csv::write_row(out, row);
  }
  return out.str();
}

ojson correlation_json(const CorrelationMatrix& corr) {
  ojson matrix = ojson::array();
  for (Eigen::Index i = 0; i < corr.r.rows(); ++i) {
    ojson row = ojson::array();
    for (Eigen::Index j = 0; j < corr.r.cols(); ++j) row.push_back(corr.r(i, j));
    matrix.push_back(std::move(row));
  }
  return ojson{{"method", "pearson"},
               {"names", corr.names},
               {"matrix", std::move(matrix)},
               {"dropped", corr.dropped},
               {"warnings", corr.warnings}};
}

ojson pruning_json(const AlignedDataset& pruned) {
  ojson removed = ojson::array();
  for (const auto& p : pruned.pruned) {
    ojson item{{"name", p.name}, {"reason", p.reason}};
    item["trigger"] = p.trigger.empty() ? ojson(nullptr) : ojson(p.trigger);
    item["r"] = p.reason == "correlation" ? ojson(p.r) : ojson(nullptr);
    removed.push_back(std::move(item));
  }
  return ojson{{"column_order", pruned.input_columns}, {"removed", std::move(removed)},
               {"retained", pruned.feature_names}};
}

namespace {

ojson metric_or_null(const std::optional<Metrics>& m, double Metrics::*field) {
  return m ? ojson(m.value().*field) : ojson(nullptr);
}

}  // namespace

ojson metrics_json(const SuiteReport& suite) {
  ojson groups = ojson::array();
  std::vector<Target> seen;
  for (const auto& row : suite.rows) {
    if (std::find(seen.begin(), seen.end(), row.target) == seen.end()) seen.push_back(row.target);
  }
  for (Target t : seen) {
    ojson rows = ojson::array();
    for (const auto& row : suite.rows) {
      if (row.target != t) continue;
      ojson r{{"family", std::string(to_string(row.family))},
              {"model", std::string(display_name(row.family))},
              {"mse", metric_or_null(row.metrics, &Metrics::mse)},
              {"rmse", metric_or_null(row.metrics, &Metrics::rmse)},
              {"mae", metric_or_null(row.metrics, &Metrics::mae)}};
      if (row.tuning) {
        r["hyperparameters"] = hyperparams_json(row.family, row.tuning->best);
        ojson cv = ojson::array();
        for (const auto& c : row.tuning->table) {
          ojson entry{{"params", hyperparams_json(row.family, c.params)}};
          entry["mean_mae"] = std::isfinite(c.mean_mae) ? ojson(c.mean_mae) : ojson(nullptr);
          if (!c.error.empty()) entry["error"] = c.error;
          cv.push_back(std::move(entry));
        }
        r["cv"] = std::move(cv);
      }
      if (!row.error.empty()) r["error"] = row.error;
      if (row.family == Family::gradient_boosted_trees) {
        r["note"] = "least-squares gradient boosting without second-order or regularization terms";
      }
      rows.push_back(std::move(r));
    }
    groups.push_back(ojson{{"target", std::string(to_string(t))}, {"rows", std::move(rows)}});
  }
  return ojson{{"split", {{"train_fraction", suite.split.train_fraction},
                          {"seed", suite.split.seed},
                          {"n_train", suite.n_train},
                          {"n_test", suite.n_test}}},
               {"features", suite.feature_names},
               {"targets", std::move(groups)}};
}

std::string format_metric(double value) { return fmt::format("{:.5g}", value); }

std::string metrics_text(const ojson& metrics) {
  std::size_t width = std::string_view("Model").size();
  for (const auto& g : metrics.at("targets")) {
    for (const auto& r : g.at("rows")) width = std::max(width, r.at("model").get<std::string>().size());
  }
  auto cell = [](const ojson& v) { return v.is_number() ? format_metric(v.get<double>()) : std::string("n/a"); };

  std::string out = "Machine learning model performance\n";
  for (const auto& g : metrics.at("targets")) {
    std::string name = g.at("target").get<std::string>();
    name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
    out += fmt::format("\n{}\n", name);
    out += fmt::format("{:<{}} | MSE | RMSE | MAE\n", "Model", width);
    for (const auto& r : g.at("rows")) {
      out += fmt::format("{:<{}} | {} | {} | {}\n", r.at("model").get<std::string>(), width, cell(r.at("mse")),
                         cell(r.at("rmse")), cell(r.at("mae")));
    }
  }
  return out;
}

ojson explanation_json(const TrainedModel& model, Target target) {
  auto items = model.explanation();
  std::stable_sort(items.begin(), items.end(), [](const ExplanationItem& a, const ExplanationItem& b) {
    const double x = std::abs(a.value), y = std::abs(b.value);
    if (x != y) return x > y;
    return a.feature < b.feature;
  });
  ojson list = ojson::array();
  for (const auto& it : items) list.push_back(ojson{{"feature", it.feature}, {"value", it.value}, {"kind", it.kind}});
  ojson out{{"target", std::string(to_string(target))},
            {"family", std::string(to_string(model.family))},
            {"model", std::string(display_name(model.family))},
            {"kind", is_white_box(model.family) ? "coefficient" : "importance"},
            {"items", std::move(list)}};
  if (const auto* lin = std::get_if<LinearFit>(&model.fit)) out["intercept"] = lin->intercept;
  return out;
}

ojson causal_json(std::span<const CausalReport> reports, bool run) {
  if (!run) return ojson{{"status", "not run"}};
  ojson targets = ojson::array();
  for (const auto& rep : reports) {
    ojson parents = ojson::array();
    for (const auto& p : rep.parents) {
      parents.push_back(ojson{{"name", p.name},
                              {"coefficient", p.coefficient},
                              {"sign", p.coefficient > 0 ? "+" : (p.coefficient < 0 ? "-" : "0")}});
    }
    targets.push_back(ojson{{"target", std::string(to_string(rep.target))},
                            {"arcs", rep.dag.arcs.size()},
                            {"undirected", rep.dag.undirected.size()},
                            {"parents", std::move(parents)},
                            {"log", rep.log}});
  }
  return ojson{{"status", "complete"}, {"targets", std::move(targets)}};
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

void add_manifest(Bundle& bundle, ojson base, const std::string& created) {
  bundle.erase("manifest.json");
  ojson files = ojson::object();
  for (const auto& [path, content] : bundle) files[path] = sha256_hex(content);
  base["outputs"] = std::move(files);
  base["created"] = created;
  bundle["manifest.json"] = dump_json(base);
}

void write_bundle(const Bundle& bundle, const std::filesystem::path& dir) {
  for (const auto& [rel, content] : bundle) {
    const auto path = dir / rel;
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
  }
}

}  // namespace prime
