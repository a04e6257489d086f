#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prime/common.hpp"
#include "prime/ingest.hpp"
#include "prime/scoring.hpp"

namespace prime {

struct PrunedVariable {
  std::string name;
  std::string reason;   // "manual", "correlation" or "zero variance"
  std::string trigger;  // retained column that caused a correlation removal
  double r = 0.0;

  bool operator==(const PrunedVariable&) const = default;
};

struct ScalingParam {
  std::string name;
  double min = 0.0;
  double max = 0.0;
};

/// Lagged socioeconomic features joined to score targets, one row per
/// (region, score year).
struct AlignedDataset {
  std::vector<std::string> feature_names;
  std::vector<RegionYear> keys;
  Eigen::MatrixXd features;  // rows x feature_names
  Eigen::MatrixXd targets;   // rows x 3, columns in kAllTargets order
  int lag = 1;

  std::vector<std::string> input_columns;  // column order before any pruning
  std::vector<ScalingParam> scaling;       // filled by scale_features
  std::vector<PrunedVariable> pruned;
  std::vector<std::string> dropped_rows;
  std::vector<std::string> warnings;

  std::size_t rows() const noexcept { return keys.size(); }
  std::size_t cols() const noexcept { return feature_names.size(); }
  Eigen::VectorXd target(Target t) const { return targets.col(static_cast<int>(t)); }
  std::ptrdiff_t column(const std::string& name) const;
};

/// Joins each score row (region, year) to socioeconomic year - lag. Rows
/// without complete lagged features are dropped and listed.
AlignedDataset align(std::span<const RegionYearScores> scores, const SocioPanel& socio, int lag = 1);

double pearson(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y);

struct CorrelationMatrix {
  std::vector<std::string> names;
  Eigen::MatrixXd r;
  std::vector<std::string> dropped;  // zero-variance columns left out
  std::vector<std::string> warnings;
};

/// Pearson correlation between feature columns. Needs at least two rows.
CorrelationMatrix correlation_matrix(const AlignedDataset& data);

struct PruneOptions {
  double threshold = 0.7;
  std::vector<std::string> manual_removals;
};

/// Manual removals first, then constant columns, then a single pass in column
/// order that drops a column when |r| exceeds the threshold against any
/// earlier retained column.
AlignedDataset prune_collinear(const AlignedDataset& data, const PruneOptions& options = {});

/// Min-max scales every feature column to [0, 1]; targets are left untouched.
AlignedDataset scale_features(const AlignedDataset& data);

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 42;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded row-level split: |train| = round(fraction * n). Both sides sorted.
SplitIndices split_rows(std::size_t n, const SplitSpec& spec);

/// Rows of `data` at `rows`, in that order.
AlignedDataset take_rows(const AlignedDataset& data, std::span<const std::size_t> rows);

}  // namespace prime
