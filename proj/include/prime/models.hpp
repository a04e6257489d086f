#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "prime/common.hpp"
#include "prime/features.hpp"

namespace prime {

enum class Family { linear, ridge, lasso, polynomial, random_forest, gradient_boosted_trees };

inline constexpr Family kAllFamilies[] = {Family::linear,     Family::ridge,         Family::lasso,
                                          Family::polynomial, Family::random_forest, Family::gradient_boosted_trees};

std::string_view to_string(Family f);
/// Row label used in metric tables, e.g. "Linear Regression".
std::string_view display_name(Family f);
/// Accepts the canonical names plus short aliases (rf, gbt, poly, ols).
Family parse_family(std::string_view name);
/// White-box families report coefficients, grey-box families importances.
bool is_white_box(Family f);

/// Union of the tunable settings of every family; each family reads its own.
struct Hyperparams {
  double alpha = 0.0;            // ridge, lasso
  int degree = 1;                // polynomial
  int n_trees = 100;             // forest, boosting
  std::optional<int> max_depth;  // forest, boosting; empty = grow until pure
  int min_leaf = 1;              // forest, boosting
  int features_per_split = 0;    // forest; 0 = max(1, p / 3)
  bool bootstrap = true;         // forest
  double learning_rate = 0.1;    // boosting

  bool operator==(const Hyperparams&) const = default;
};

nlohmann::ordered_json hyperparams_json(Family f, const Hyperparams& h);

struct ModelSpec {
  Family family = Family::linear;
  std::vector<Hyperparams> grid;
  int cv_folds = 5;
  std::uint64_t seed = 42;
};

/// Built-in search grid for a family.
ModelSpec default_spec(Family f, std::uint64_t seed = 42);

struct LinearFit {
  Eigen::VectorXd coefficients;
  double intercept = 0.0;
  int degree = 1;  // > 1 when fitted on polynomial terms
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // x <= threshold goes left
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
};

struct TreeEnsemble {
  std::vector<Tree> trees;
  double base = 0.0;       // boosting: initial constant
  double shrinkage = 1.0;  // boosting: learning rate
  bool average = false;    // forest: mean of trees instead of a sum
};

struct ExplanationItem {
  std::string feature;
  double value = 0.0;
  std::string kind;  // "coefficient" or "importance"
};

struct TrainedModel {
  Family family = Family::linear;
  Hyperparams params;
  std::vector<std::string> feature_names;  // input columns
  std::vector<std::string> term_names;     // model terms (polynomial expansion) or feature_names
  std::variant<LinearFit, TreeEnsemble> fit;
  Eigen::VectorXd importances;          // tree families; sums to 1
  std::vector<double> stage_train_mse;  // boosting: training MSE after each stage, [0] = base

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
  std::vector<ExplanationItem> explanation() const;
};

struct Metrics {
  double mse = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
};

Metrics compute_metrics(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth);
Metrics evaluate(const TrainedModel& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

// Linear families. Features are used as given (no re-standardization); the
// intercept is never penalized.

/// Ordinary least squares. Throws NumericalError when n <= p or the design is
/// rank deficient (the message names the dependent columns).
TrainedModel fit_linear(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<std::string> names = {});

/// Minimizes ||y - Xb - c||^2 + alpha ||b||^2.
TrainedModel fit_ridge(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double alpha,
                       std::vector<std::string> names = {});

struct LassoOptions {
  double tolerance = 1e-7;  // on the largest coefficient change in a sweep
  int max_iter = 10000;
};

/// Coordinate descent on (1/2n)||y - Xb - c||^2 + alpha ||b||_1.
TrainedModel fit_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double alpha,
                       std::vector<std::string> names = {}, const LassoOptions& options = {});

/// Smallest alpha for which the lasso solution is all zeros: max |X^T (y - ybar)| / n.
double lasso_critical_alpha(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

/// All monomials of degree 1..degree in graded lexicographic order
/// (x1, x2, x1^2, x1*x2, x2^2, ...).
Eigen::MatrixXd polynomial_features(const Eigen::MatrixXd& x, int degree);
std::vector<std::string> polynomial_term_names(const std::vector<std::string>& names, int degree);

TrainedModel fit_polynomial(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int degree,
                            std::vector<std::string> names = {});

// Tree families. Results depend only on (data, params, seed), never on `threads`.

TrainedModel fit_random_forest(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Hyperparams& params,
                               std::uint64_t seed, unsigned threads = 1, std::vector<std::string> names = {});

/// Least-squares gradient boosting: F0 = mean(y), then each stage adds
/// learning_rate times a depth-limited regression tree fitted to the residuals.
TrainedModel fit_gbt(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Hyperparams& params,
                     std::uint64_t seed, unsigned threads = 1, std::vector<std::string> names = {});

TrainedModel fit_model(Family family, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                       const Hyperparams& params, std::uint64_t seed, unsigned threads = 1,
                       std::vector<std::string> names = {});

// Model selection.

/// Seeded k-fold partition of 0..n-1; each fold sorted.
std::vector<std::vector<std::size_t>> kfold_indices(std::size_t n, int k, std::uint64_t seed);

struct CvRow {
  Hyperparams params;
  std::vector<double> fold_mae;
  double mean_mae = 0.0;  // +inf when the grid point failed to fit
  std::string error;
};

struct TuneResult {
  Hyperparams best;
  std::size_t best_index = 0;
  std::vector<CvRow> table;
};

/// Grid search by mean cross-validated MAE; ties go to the earliest grid point.
TuneResult tune(const ModelSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y, unsigned threads = 1);

struct SuiteRow {
  Target target = Target::resilience;
  Family family = Family::linear;
  std::optional<TuneResult> tuning;
  std::optional<TrainedModel> model;
  std::optional<Metrics> metrics;
  std::string error;
};

struct SuiteReport {
  SplitSpec split;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::vector<std::string> feature_names;
  std::vector<SuiteRow> rows;  // grouped by target, then in spec order
};

/// Tune on the training split, refit the chosen settings on the whole
/// training split, evaluate on the held-out rows. One split serves all families.
SuiteReport run_model_suite(const AlignedDataset& data, const std::vector<ModelSpec>& specs, const SplitSpec& split,
                            const std::vector<Target>& targets, unsigned threads = 1);

}  // namespace prime
