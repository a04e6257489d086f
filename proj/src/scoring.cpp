#include "prime/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace prime {

HazardStatsMap compute_hazard_stats(std::span<const HazardEvent> events, YearRange window) {
  if (window.empty()) throw ValidationError("years", "study window is empty");
  const double total_days = static_cast<double>(window.days());

  std::map<std::string, std::vector<double>> per_day;
  for (const auto& e : events) {
    if (!window.contains(e.year)) continue;
    per_day[e.hazard_type].push_back(e.damage_per_capita / e.duration_days);
  }
  HazardStatsMap stats;
  for (auto& [type, rates] : per_day) {
    HazardTypeStats s;
    s.count = rates.size();
    s.likelihood = static_cast<double>(s.count) / total_days;
    s.weightage = order_free_sum(std::move(rates)) / static_cast<double>(s.count);
    stats.emplace(type, s);
  }
  return stats;
}

namespace {

RegionYearValues sum_terms(std::map<RegionYear, std::vector<double>> terms) {
  RegionYearValues out;
  for (auto& [key, t] : terms) out.emplace_hint(out.end(), key, order_free_sum(std::move(t)));
  return out;
}

}  // namespace

RegionYearValues compute_threat(std::span<const HazardEvent> events, const HazardStatsMap& stats) {
  std::map<RegionYear, std::vector<double>> terms;
  for (const auto& e : events) {
    auto it = stats.find(e.hazard_type);
    if (it == stats.end()) throw DataError("no hazard statistics for type '" + e.hazard_type + "'");
    terms[{e.region_code, e.year}].push_back(e.duration_days * it->second.likelihood * it->second.weightage);
  }
  return sum_terms(std::move(terms));
}

RegionYearValues compute_damage(std::span<const HazardEvent> events) {
  std::map<RegionYear, std::vector<double>> terms;
  for (const auto& e : events) terms[{e.region_code, e.year}].push_back(e.damage_per_capita);
  return sum_terms(std::move(terms));
}

std::optional<double> compute_recovery(const PopulationPanel& pop, const std::string& region, int year) {
  const auto initial = pop.find(region, year - 1);
  const auto final_pop = pop.find(region, year + 1);
  if (!initial || !final_pop) return std::nullopt;
  return static_cast<double>(*final_pop - *initial) / static_cast<double>(*initial);
}

RecoveryTable compute_recovery_table(const PopulationPanel& pop, const std::vector<RegionYear>& keys) {
  RecoveryTable table;
  for (const auto& key : keys) {
    if (auto r = compute_recovery(pop, key.region, key.year)) {
      table.rates.emplace(key, *r);
    } else {
      table.incomplete.push_back(key);
    }
  }
  return table;
}

std::vector<double> min_max_normalize(std::span<const double> values) {
  if (values.empty()) throw ValidationError("cannot normalize an empty set of values");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn, hi = *mx;
  std::vector<double> out(values.size(), 0.0);
  if (hi == lo) return out;
  const double range = hi - lo;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = values[i] == hi ? 1.0 : (values[i] - lo) / range;
  }
  return out;
}

std::string_view to_string(Aggregation a) {
  return a == Aggregation::per_year ? "per_year" : "whole_window";
}

Aggregation parse_aggregation(std::string_view text) {
  if (text == "per_year" || text == "per-year" || text == "yearly") return Aggregation::per_year;
  if (text == "whole_window" || text == "whole-window" || text == "window") return Aggregation::whole_window;
  throw ValidationError("aggregation", "unknown aggregation '" + std::string(text) + "'");
}

double RegionYearScores::score(Target t) const {
  switch (t) {
    case Target::vulnerability: return vulnerability;
    case Target::adaptability: return adaptability;
    case Target::resilience: return resilience;
  }
  return 0.0;
}

namespace {

void check_key_sets(const RegionYearValues& a, const RegionYearValues& b, const char* a_name,
                    const char* b_name) {
  std::vector<std::string> diff;
  auto describe = [](const RegionYear& k, const char* only) {
    return k.region + "/" + std::to_string(k.year) + " (only in " + only + ")";
  };
  for (const auto& [k, _] : a) {
    if (!b.count(k)) diff.push_back(describe(k, a_name));
  }
  for (const auto& [k, _] : b) {
    if (!a.count(k)) diff.push_back(describe(k, b_name));
  }
  if (diff.empty()) return;
  std::string msg = "score inputs disagree on region-years:";
  for (std::size_t i = 0; i < diff.size() && i < 20; ++i) msg += " " + diff[i];
  if (diff.size() > 20) msg += " ... (" + std::to_string(diff.size()) + " total)";
  throw DataError(msg);
}

struct RawRow {
  std::string region;
  int year;
  std::string period;
  double threat, damage, recovery;
};

void normalize_group(std::vector<RawRow>& raw, std::size_t begin, std::size_t end,
                     std::vector<RegionYearScores>& out) {
  std::vector<double> t, d, r;
  for (std::size_t i = begin; i < end; ++i) {
    t.push_back(raw[i].threat);
    d.push_back(raw[i].damage);
    r.push_back(raw[i].recovery);
  }
  const auto tn = min_max_normalize(t), dn = min_max_normalize(d), rn = min_max_normalize(r);
  for (std::size_t i = begin; i < end; ++i) {
    const std::size_t k = i - begin;
    RegionYearScores s;
    s.region_code = raw[i].region;
    s.year = raw[i].year;
    s.period = raw[i].period;
    s.threat_raw = raw[i].threat;
    s.damage_raw = raw[i].damage;
    s.recovery_raw = raw[i].recovery;
    s.threat_norm = tn[k];
    s.damage_norm = dn[k];
    s.recovery_norm = rn[k];
    s.vulnerability = s.damage_norm - s.threat_norm;
    s.adaptability = s.recovery_norm - s.damage_norm;
    s.resilience = s.adaptability - s.vulnerability;
    out.push_back(std::move(s));
  }
}

}  // namespace

std::vector<RegionYearScores> compute_scores(const RegionYearValues& threat, const RegionYearValues& damage,
                                             const RegionYearValues& recovery, const ScoreOptions& options) {
  check_key_sets(threat, damage, "threat", "damage");
  check_key_sets(threat, recovery, "threat", "recovery");
  if (threat.empty()) throw DataError("no region-years to score");

  std::vector<RawRow> raw;
  if (options.aggregation == Aggregation::whole_window) {
    YearRange window;
    if (options.window) {
      window = *options.window;
    } else {
      window = {threat.begin()->first.year, threat.begin()->first.year};
      for (const auto& [k, _] : threat) {
        window.first = std::min(window.first, k.year);
        window.last = std::max(window.last, k.year);
      }
    }
    std::map<std::string, std::vector<double>> t, d, r;
    for (const auto& [k, v] : threat) {
      t[k.region].push_back(v);
      d[k.region].push_back(damage.at(k));
      r[k.region].push_back(recovery.at(k));
    }
    for (auto& [region, tv] : t) {
      auto& rv = r[region];
      const double n = static_cast<double>(rv.size());
      raw.push_back({region, window.first, window.label(), order_free_sum(std::move(tv)),
                     order_free_sum(std::move(d[region])), order_free_sum(std::move(rv)) / n});
    }
  } else {
    for (const auto& [k, v] : threat) {
      raw.push_back({k.region, k.year, std::to_string(k.year), v, damage.at(k), recovery.at(k)});
    }
    if (!options.pooled) {
      std::stable_sort(raw.begin(), raw.end(),
                       [](const RawRow& a, const RawRow& b) { return a.year < b.year; });
    }
  }

  std::vector<RegionYearScores> out;
  out.reserve(raw.size());
  const bool grouped = options.aggregation == Aggregation::per_year && !options.pooled;
  std::size_t begin = 0;
  while (begin < raw.size()) {
    std::size_t end = begin + 1;
    if (grouped) {
      while (end < raw.size() && raw[end].year == raw[begin].year) ++end;
    } else {
      end = raw.size();
    }
    normalize_group(raw, begin, end, out);
    begin = end;
  }
  std::stable_sort(out.begin(), out.end(), [](const RegionYearScores& a, const RegionYearScores& b) {
    return std::tie(a.year, a.region_code) < std::tie(b.year, b.region_code);
  });
  return out;
}

double empirical_quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw ValidationError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

ScoreClassification quantile_classify(const std::map<std::string, double>& values, int n_classes) {
  if (values.empty()) throw ValidationError("cannot classify an empty set of scores");
  if (n_classes < 1) throw ValidationError("n_classes", "class count must be positive");

  std::vector<double> sorted;
  for (const auto& [_, v] : values) sorted.push_back(v);
  std::sort(sorted.begin(), sorted.end());

  ScoreClassification out;
  for (int k = 0; k <= n_classes; ++k) {
    out.boundaries.push_back(empirical_quantile(sorted, static_cast<double>(k) / n_classes));
  }
  const auto distinct = std::unique(sorted.begin(), sorted.end()) - sorted.begin();
  if (distinct < n_classes) {
    out.warnings.push_back("only " + std::to_string(distinct) + " distinct value(s) for " +
                           std::to_string(n_classes) + " classes; some classes are degenerate");
  }
  for (const auto& [key, v] : values) {
    int cls = n_classes;
    for (int k = 1; k <= n_classes; ++k) {
      if (v <= out.boundaries[k]) {
        cls = k;
        break;
      }
    }
    out.classes.emplace(key, cls);
  }
  return out;
}

std::vector<ScoreClasses> classify_scores(std::span<const RegionYearScores> scores,
                                          std::vector<std::string>* warnings) {
  std::vector<ScoreClasses> out(scores.size());
  std::map<std::string, std::vector<std::size_t>> by_period;
  for (std::size_t i = 0; i < scores.size(); ++i) by_period[scores[i].period].push_back(i);

  for (const auto& [period, rows] : by_period) {
    for (Target t : kAllTargets) {
      std::map<std::string, double> values;
      for (auto i : rows) values[scores[i].region_code] = scores[i].score(t);
      auto cls = quantile_classify(values);
      if (warnings) {
        for (const auto& w : cls.warnings) {
          warnings->push_back(std::string(to_string(t)) + " " + period + ": " + w);
        }
      }
      for (auto i : rows) {
        const int c = cls.classes.at(scores[i].region_code);
        switch (t) {
          case Target::vulnerability: out[i].vulnerability = c; break;
          case Target::adaptability: out[i].adaptability = c; break;
          case Target::resilience: out[i].resilience = c; break;
        }
      }
    }
  }
  return out;
}

ScoringRun score_events(std::span<const HazardEvent> events, const PopulationPanel& pop, YearRange window,
                        const ScoreOptions& options) {
  std::vector<HazardEvent> in_window;
  for (const auto& e : events) {
    if (window.contains(e.year)) in_window.push_back(e);
  }
  ScoringRun run;
  run.stats = compute_hazard_stats(in_window, window);
  auto threat = compute_threat(in_window, run.stats);
  auto damage = compute_damage(in_window);

  std::vector<RegionYear> keys;
  for (const auto& [k, _] : threat) keys.push_back(k);
  auto recovery = compute_recovery_table(pop, keys);
  run.incomplete = recovery.incomplete;
  for (const auto& k : recovery.incomplete) {
    threat.erase(k);
    damage.erase(k);
  }
  if (threat.empty()) throw DataError("no region-year has complete population data for recovery");

  ScoreOptions opts = options;
  if (!opts.window) opts.window = window;
  run.scores = compute_scores(threat, damage, recovery.rates, opts);
  return run;
}

}  // namespace prime
