#include <cmath>
#include <limits>

#include "prime/error.hpp"
#include "prime/models.hpp"
#include "prime/rng.hpp"

namespace prime {

std::vector<std::vector<std::size_t>> kfold_indices(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("cv_folds", "cross-validation needs at least 2 folds");
  if (n < static_cast<std::size_t>(k)) {
    throw ValidationError("cv_folds", std::to_string(k) + " folds over " + std::to_string(n) +
                                          " rows would leave a fold empty");
  }
  const auto order = shuffled_indices(n, seed);
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  const double width = static_cast<double>(n) / k;
  for (int f = 0; f < k; ++f) {
    const auto a = static_cast<std::size_t>(std::llround(f * width));
    const auto b = static_cast<std::size_t>(std::llround((f + 1) * width));
    folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(a), order.begin() + static_cast<std::ptrdiff_t>(b));
    std::sort(folds[f].begin(), folds[f].end());
    if (folds[f].empty()) throw ValidationError("cv_folds", "empty cross-validation fold");
  }
  return folds;
}

namespace {

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(idx[k]));
  return out;
}

Eigen::VectorXd rows_of(const Eigen::VectorXd& v, const std::vector<std::size_t>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(static_cast<Eigen::Index>(idx[k]));
  return out;
}

}  // namespace

TuneResult tune(const ModelSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y, unsigned threads) {
  if (spec.grid.empty()) throw ValidationError("grid", "hyperparameter grid is empty");
  const auto n = static_cast<std::size_t>(x.rows());
  const auto folds = kfold_indices(n, spec.cv_folds, spec.seed);

  std::vector<std::vector<std::size_t>> train_sets;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<bool> held(n, false);
    for (auto i : folds[f]) held[i] = true;
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < n; ++i) {
      if (!held[i]) train.push_back(i);
    }
    train_sets.push_back(std::move(train));
  }

  TuneResult result;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < spec.grid.size(); ++g) {
    CvRow row;
    row.params = spec.grid[g];
    try {
      double total = 0.0;
      for (std::size_t f = 0; f < folds.size(); ++f) {
        const auto model = fit_model(spec.family, rows_of(x, train_sets[f]), rows_of(y, train_sets[f]),
                                     row.params, spec.seed, threads);
        const auto m = evaluate(model, rows_of(x, folds[f]), rows_of(y, folds[f]));
        row.fold_mae.push_back(m.mae);
        total += m.mae;
      }
      row.mean_mae = total / static_cast<double>(folds.size());
    } catch (const std::exception& e) {
      row.fold_mae.clear();
      row.mean_mae = std::numeric_limits<double>::infinity();
      row.error = e.what();
    }
    if (row.mean_mae < best) {
      best = row.mean_mae;
      result.best_index = g;
    }
    result.table.push_back(std::move(row));
  }
  if (!std::isfinite(best)) {
    throw NumericalError("every grid point failed for " + std::string(to_string(spec.family)) + ": " +
                         result.table.front().error);
  }
  result.best = spec.grid[result.best_index];
  return result;
}

SuiteReport run_model_suite(const AlignedDataset& data, const std::vector<ModelSpec>& specs, const SplitSpec& split,
                            const std::vector<Target>& targets, unsigned threads) {
  const auto parts = split_rows(data.rows(), split);
  const auto train = take_rows(data, parts.train);
  const auto test = take_rows(data, parts.test);

  SuiteReport report;
  report.split = split;
  report.n_train = parts.train.size();
  report.n_test = parts.test.size();
  report.feature_names = data.feature_names;

  for (Target target : targets) {
    const Eigen::VectorXd y_train = train.target(target);
    const Eigen::VectorXd y_test = test.target(target);
    for (const auto& spec : specs) {
      SuiteRow row;
      row.target = target;
      row.family = spec.family;
      try {
        row.tuning = tune(spec, train.features, y_train, threads);
        row.model = fit_model(spec.family, train.features, y_train, row.tuning->best, spec.seed, threads,
                              data.feature_names);
        row.model->params = row.tuning->best;
        row.metrics = evaluate(*row.model, test.features, y_test);
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

}  // namespace prime
