#include "prime/features.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "prime/error.hpp"
#include "prime/rng.hpp"

namespace prime {

std::ptrdiff_t AlignedDataset::column(const std::string& name) const {
  auto it = std::find(feature_names.begin(), feature_names.end(), name);
  return it == feature_names.end() ? -1 : it - feature_names.begin();
}

AlignedDataset align(std::span<const RegionYearScores> scores, const SocioPanel& socio, int lag) {
  AlignedDataset out;
  out.lag = lag;
  out.feature_names = socio.indicators();
  out.input_columns = out.feature_names;
  const auto p = static_cast<Eigen::Index>(out.feature_names.size());

  std::vector<const RegionYearScores*> ordered;
  for (const auto& s : scores) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) {
    return std::tie(a->region_code, a->year) < std::tie(b->region_code, b->year);
  });

  std::vector<std::pair<const RegionYearScores*, const std::vector<double>*>> matched;
  for (const auto* s : ordered) {
    const auto* row = socio.find(s->region_code, s->year - lag);
    const bool complete =
        row && std::all_of(row->begin(), row->end(), [](double v) { return std::isfinite(v); });
    if (!complete) {
      out.dropped_rows.push_back(s->region_code + "/" + std::to_string(s->year) +
                                 ": no complete socioeconomic row for " + std::to_string(s->year - lag));
      continue;
    }
    matched.emplace_back(s, row);
  }
  if (matched.empty()) throw DataError("no alignable rows");

  const auto n = static_cast<Eigen::Index>(matched.size());
  out.features.resize(n, p);
  out.targets.resize(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& [s, row] = matched[i];
    out.keys.push_back({s->region_code, s->year});
    for (Eigen::Index j = 0; j < p; ++j) out.features(i, j) = (*row)[j];
    for (Target t : kAllTargets) out.targets(i, static_cast<int>(t)) = s->score(t);
  }
  return out;
}

double pearson(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y) {
  const Eigen::VectorXd dx = x.array() - x.mean();
  const Eigen::VectorXd dy = y.array() - y.mean();
  const double sxx = dx.squaredNorm(), syy = dy.squaredNorm();
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return std::clamp(dx.dot(dy) / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

bool constant_column(const Eigen::MatrixXd& m, Eigen::Index j) {
  return m.rows() == 0 || m.col(j).minCoeff() == m.col(j).maxCoeff();
}

AlignedDataset keep_columns(const AlignedDataset& data, const std::vector<Eigen::Index>& keep) {
  AlignedDataset out = data;
  out.feature_names.clear();
  out.features.resize(data.features.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.feature_names.push_back(data.feature_names[keep[k]]);
    out.features.col(static_cast<Eigen::Index>(k)) = data.features.col(keep[k]);
  }
  if (!data.scaling.empty()) {
    out.scaling.clear();
    for (auto j : keep) out.scaling.push_back(data.scaling[j]);
  }
  return out;
}

}  // namespace

CorrelationMatrix correlation_matrix(const AlignedDataset& data) {
  if (data.rows() < 2) throw DataError("correlation needs at least 2 rows");
  CorrelationMatrix out;
  std::vector<Eigen::Index> cols;
  for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(data.cols()); ++j) {
    if (constant_column(data.features, j)) {
      out.dropped.push_back(data.feature_names[j]);
      out.warnings.push_back("column '" + data.feature_names[j] + "' has zero variance and was left out");
    } else {
      cols.push_back(j);
      out.names.push_back(data.feature_names[j]);
    }
  }
  const auto m = static_cast<Eigen::Index>(cols.size());
  out.r = Eigen::MatrixXd::Identity(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = a + 1; b < m; ++b) {
      const double r = pearson(data.features.col(cols[a]), data.features.col(cols[b]));
      out.r(a, b) = r;
      out.r(b, a) = r;
    }
  }
  return out;
}

AlignedDataset prune_collinear(const AlignedDataset& data, const PruneOptions& options) {
  if (!(options.threshold > 0.0 && options.threshold <= 1.0)) {
    throw ValidationError("threshold", "threshold must lie in (0, 1]");
  }
  std::set<std::string> manual;
  for (const auto& name : options.manual_removals) {
    if (data.column(name) < 0) throw ValidationError("names", "unknown variable '" + name + "'");
    manual.insert(name);
  }

  std::vector<PrunedVariable> removed;
  std::vector<Eigen::Index> candidates;
  for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(data.cols()); ++j) {
    const auto& name = data.feature_names[j];
    if (manual.count(name)) {
      removed.push_back({name, "manual", "", 0.0});
    } else if (constant_column(data.features, j)) {
      removed.push_back({name, "zero variance", "", 0.0});
    } else {
      candidates.push_back(j);
    }
  }

  std::vector<Eigen::Index> retained;
  for (auto j : candidates) {
    bool keep = true;
    for (auto i : retained) {
      const double r = pearson(data.features.col(i), data.features.col(j));
      if (std::abs(r) > options.threshold) {
        removed.push_back({data.feature_names[j], "correlation", data.feature_names[i], r});
        keep = false;
        break;
      }
    }
    if (keep) retained.push_back(j);
  }

  AlignedDataset out = keep_columns(data, retained);
  for (auto& p : removed) out.pruned.push_back(std::move(p));
  return out;
}

AlignedDataset scale_features(const AlignedDataset& data) {
  AlignedDataset out = data;
  out.scaling.clear();
  for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(data.cols()); ++j) {
    std::vector<double> col(data.features.col(j).begin(), data.features.col(j).end());
    ScalingParam param{data.feature_names[j], 0.0, 0.0};
    if (!col.empty()) {
      param.min = *std::min_element(col.begin(), col.end());
      param.max = *std::max_element(col.begin(), col.end());
      if (param.min == param.max) {
        out.warnings.push_back("column '" + param.name + "' is constant; scaled to 0");
      }
      const auto scaled = min_max_normalize(col);
      for (Eigen::Index i = 0; i < data.features.rows(); ++i) out.features(i, j) = scaled[i];
    }
    out.scaling.push_back(param);
  }
  return out;
}

SplitIndices split_rows(std::size_t n, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw ValidationError("split_fraction", "train fraction must lie in (0, 1)");
  }
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
  if (n < 2 || n_train == 0 || n_train >= n) {
    throw ValidationError("split_fraction", "split of " + std::to_string(n) + " rows at fraction " +
                                                format_double(spec.train_fraction) + " leaves one side empty");
  }
  auto order = shuffled_indices(n, spec.seed);
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

AlignedDataset take_rows(const AlignedDataset& data, std::span<const std::size_t> rows) {
  AlignedDataset out = data;
  const auto n = static_cast<Eigen::Index>(rows.size());
  out.keys.clear();
  out.features.resize(n, data.features.cols());
  out.targets.resize(n, data.targets.cols());
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto i = static_cast<Eigen::Index>(rows[k]);
    out.keys.push_back(data.keys[rows[k]]);
    out.features.row(k) = data.features.row(i);
    out.targets.row(k) = data.targets.row(i);
  }
  return out;
}

}  // namespace prime
