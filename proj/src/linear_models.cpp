#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "prime/error.hpp"
#include "prime/models.hpp"

namespace prime {

std::string_view to_string(Family f) {
  switch (f) {
    case Family::linear: return "linear";
    case Family::ridge: return "ridge";
    case Family::lasso: return "lasso";
    case Family::polynomial: return "polynomial";
    case Family::random_forest: return "random_forest";
    case Family::gradient_boosted_trees: return "gradient_boosted_trees";
  }
  return "?";
}

std::string_view display_name(Family f) {
  switch (f) {
    case Family::linear: return "Linear Regression";
    case Family::ridge: return "Ridge Regression";
    case Family::lasso: return "Lasso Regression";
    case Family::polynomial: return "Polynomial Regression";
    case Family::random_forest: return "Random Forest Regression";
    case Family::gradient_boosted_trees: return "Gradient Boosted Trees Regression";
  }
  return "?";
}

Family parse_family(std::string_view name) {
  for (Family f : kAllFamilies) {
    if (to_string(f) == name) return f;
  }
  if (name == "ols") return Family::linear;
  if (name == "poly") return Family::polynomial;
  if (name == "rf" || name == "forest") return Family::random_forest;
  if (name == "gbt" || name == "xgboost" || name == "boosting") return Family::gradient_boosted_trees;
  throw ValidationError("families", "unknown model family '" + std::string(name) + "'");
}

bool is_white_box(Family f) {
  return f != Family::random_forest && f != Family::gradient_boosted_trees;
}

nlohmann::ordered_json hyperparams_json(Family f, const Hyperparams& h) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  auto depth = [&]() -> nlohmann::ordered_json {
    if (h.max_depth) return *h.max_depth;
    return nullptr;
  };
  switch (f) {
    case Family::linear: break;
    case Family::ridge:
    case Family::lasso: j["alpha"] = h.alpha; break;
    case Family::polynomial: j["degree"] = h.degree; break;
    case Family::random_forest:
      j["n_trees"] = h.n_trees;
      j["max_depth"] = depth();
      j["min_leaf"] = h.min_leaf;
      j["features_per_split"] = h.features_per_split;
      j["bootstrap"] = h.bootstrap;
      break;
    case Family::gradient_boosted_trees:
      j["n_trees"] = h.n_trees;
      j["learning_rate"] = h.learning_rate;
      j["max_depth"] = depth();
      j["min_leaf"] = h.min_leaf;
      break;
  }
  return j;
}

ModelSpec default_spec(Family f, std::uint64_t seed) {
  ModelSpec spec{f, {}, 5, seed};
  switch (f) {
    case Family::linear: spec.grid.push_back({}); break;
    case Family::ridge:
    case Family::lasso:
      for (double a : {1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
        Hyperparams h;
        h.alpha = a;
        spec.grid.push_back(h);
      }
      break;
    case Family::polynomial:
      for (int d : {1, 2, 3}) {
        Hyperparams h;
        h.degree = d;
        spec.grid.push_back(h);
      }
      break;
    case Family::random_forest:
      for (int trees : {100, 300}) {
        for (std::optional<int> depth : {std::optional<int>{}, std::optional<int>{10}}) {
          for (int leaf : {1, 5}) {
            Hyperparams h;
            h.n_trees = trees;
            h.max_depth = depth;
            h.min_leaf = leaf;
            spec.grid.push_back(h);
          }
        }
      }
      break;
    case Family::gradient_boosted_trees:
      for (int trees : {100, 300}) {
        for (double rate : {0.05, 0.1}) {
          for (int depth : {2, 3}) {
            Hyperparams h;
            h.n_trees = trees;
            h.learning_rate = rate;
            h.max_depth = depth;
            spec.grid.push_back(h);
          }
        }
      }
      break;
  }
  return spec;
}

Eigen::VectorXd TrainedModel::predict(const Eigen::MatrixXd& x) const {
  if (x.cols() != static_cast<Eigen::Index>(feature_names.size())) {
    throw ValidationError("model expects " + std::to_string(feature_names.size()) + " features, got " +
                          std::to_string(x.cols()));
  }
  if (const auto* lin = std::get_if<LinearFit>(&fit)) {
    if (lin->degree == 1) return (x * lin->coefficients).array() + lin->intercept;
    return (polynomial_features(x, lin->degree) * lin->coefficients).array() + lin->intercept;
  }
  const auto& ens = std::get<TreeEnsemble>(fit);
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (ens.average) {
      double sum = 0.0;
      for (const auto& tree : ens.trees) sum += tree.predict(x.row(i));
      out(i) = sum / static_cast<double>(ens.trees.size());
    } else {
      // Same accumulation order as training, stage by stage.
      double f = ens.base;
      for (const auto& tree : ens.trees) f += ens.shrinkage * tree.predict(x.row(i));
      out(i) = f;
    }
  }
  return out;
}

std::vector<ExplanationItem> TrainedModel::explanation() const {
  std::vector<ExplanationItem> out;
  if (const auto* lin = std::get_if<LinearFit>(&fit)) {
    for (Eigen::Index j = 0; j < lin->coefficients.size(); ++j) {
      out.push_back({term_names[j], lin->coefficients(j), "coefficient"});
    }
  } else {
    for (Eigen::Index j = 0; j < importances.size(); ++j) {
      out.push_back({feature_names[j], importances(j), "importance"});
    }
  }
  return out;
}

Metrics compute_metrics(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth) {
  if (predicted.size() != truth.size() || truth.size() == 0) {
    throw ValidationError("metrics need equally sized, nonempty prediction and truth vectors");
  }
  const Eigen::ArrayXd r = (predicted - truth).array();
  Metrics m;
  m.mse = r.square().mean();
  m.rmse = std::sqrt(m.mse);
  m.mae = r.abs().mean();
  return m;
}

Metrics evaluate(const TrainedModel& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  return compute_metrics(model.predict(x), y);
}

namespace {

std::vector<std::string> default_names(std::vector<std::string> names, Eigen::Index p) {
  if (names.empty()) {
    for (Eigen::Index j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
  }
  if (static_cast<Eigen::Index>(names.size()) != p) {
    throw ValidationError("feature name count does not match the design matrix");
  }
  return names;
}

void check_shapes(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  if (x.rows() != y.size()) throw ValidationError("design matrix and target differ in length");
  if (x.rows() == 0) throw ValidationError("no training rows");
}

struct Centered {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  Eigen::RowVectorXd x_mean;
  double y_mean;
};

Centered center(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  Centered c;
  c.x_mean = x.colwise().mean();
  c.y_mean = y.mean();
  c.x = x.rowwise() - c.x_mean;
  c.y = y.array() - c.y_mean;
  return c;
}

TrainedModel linear_model(Family family, Eigen::VectorXd beta, const Centered& c, std::vector<std::string> names,
                          std::vector<std::string> terms, int degree) {
  TrainedModel m;
  m.family = family;
  m.feature_names = std::move(names);
  m.term_names = std::move(terms);
  LinearFit fit;
  fit.intercept = c.y_mean - c.x_mean.dot(beta);
  fit.coefficients = std::move(beta);
  fit.degree = degree;
  m.fit = std::move(fit);
  return m;
}

Eigen::VectorXd ols_coefficients(const Centered& c, const std::vector<std::string>& terms) {
  const auto n = c.x.rows(), p = c.x.cols();
  if (n <= p) {
    throw NumericalError("least squares needs more rows than features (" + std::to_string(n) +
                         " rows, " + std::to_string(p) + " features)");
  }
  if (p == 0) return Eigen::VectorXd(0);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(c.x);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) {
    std::string cols;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index k = qr.rank(); k < p; ++k) {
      if (!cols.empty()) cols += ", ";
      cols += terms[perm(k)];
    }
    throw NumericalError("design matrix is rank deficient; linearly dependent column(s): " + cols);
  }
  return qr.solve(c.y);
}

}  // namespace

TrainedModel fit_linear(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<std::string> names) {
  check_shapes(x, y);
  names = default_names(std::move(names), x.cols());
  const auto c = center(x, y);
  auto beta = ols_coefficients(c, names);
  auto terms = names;
  return linear_model(Family::linear, std::move(beta), c, std::move(names), std::move(terms), 1);
}

TrainedModel fit_ridge(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double alpha,
                       std::vector<std::string> names) {
  check_shapes(x, y);
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ValidationError("alpha", "ridge alpha must be >= 0");
  names = default_names(std::move(names), x.cols());
  const auto c = center(x, y);
  const auto p = x.cols();
  Eigen::MatrixXd gram = c.x.transpose() * c.x;
  gram.diagonal().array() += alpha;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  Eigen::VectorXd beta = ldlt.solve(c.x.transpose() * c.y);
  if (ldlt.info() != Eigen::Success || !beta.allFinite() || (p > 0 && ldlt.vectorD().minCoeff() <= 0.0)) {
    throw NumericalError("ridge system is singular at alpha = " + format_double(alpha));
  }
  auto terms = names;
  auto model = linear_model(Family::ridge, std::move(beta), c, std::move(names), std::move(terms), 1);
  model.params.alpha = alpha;
  return model;
}

double lasso_critical_alpha(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  check_shapes(x, y);
  // Same per-column products as the first coordinate sweep, so the fit at
  // this alpha soft-thresholds every coefficient to exactly zero.
  const auto c = center(x, y);
  const auto n = static_cast<double>(x.rows());
  double best = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) best = std::max(best, std::abs(c.x.col(j).dot(c.y) / n));
  return best;
}

TrainedModel fit_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double alpha,
                       std::vector<std::string> names, const LassoOptions& options) {
  check_shapes(x, y);
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ValidationError("alpha", "lasso alpha must be >= 0");
  names = default_names(std::move(names), x.cols());
  const auto c = center(x, y);
  const auto n = static_cast<double>(x.rows());
  const auto p = x.cols();

  Eigen::VectorXd col_sq = c.x.colwise().squaredNorm().transpose() / n;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd resid = c.y;

  auto soft = [](double z, double g) { return z > g ? z - g : (z < -g ? z + g : 0.0); };

  bool converged = false;
  int iter = 0;
  for (; iter < options.max_iter && !converged; ++iter) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (col_sq(j) == 0.0) continue;
      const double rho = c.x.col(j).dot(resid) / n + col_sq(j) * beta(j);
      const double updated = soft(rho, alpha) / col_sq(j);
      const double delta = updated - beta(j);
      if (delta != 0.0) {
        resid.noalias() -= delta * c.x.col(j);
        max_change = std::max(max_change, std::abs(delta));
        beta(j) = updated;
      }
    }
    converged = max_change < options.tolerance;
  }
  if (!converged) {
    // Duality gap of the final iterate, for diagnosis.
    const double primal = resid.squaredNorm() / (2.0 * n) + alpha * beta.lpNorm<1>();
    const double corr = p ? (c.x.transpose() * resid).cwiseAbs().maxCoeff() / n : 0.0;
    const double scale = corr > alpha ? alpha / corr : 1.0;
    const Eigen::VectorXd nu = resid * (scale / n);
    const double dual = nu.dot(c.y) - 0.5 * n * nu.squaredNorm();
    throw NumericalError(fmt::format("lasso did not converge in {} sweeps at alpha = {}; duality gap {:.3e}",
                                     options.max_iter, alpha, primal - dual));
  }
  auto terms = names;
  auto model = linear_model(Family::lasso, std::move(beta), c, std::move(names), std::move(terms), 1);
  model.params.alpha = alpha;
  return model;
}

namespace {

// Index tuples i1 <= i2 <= ... <= ik for k = 1..degree, graded lexicographic.
std::vector<std::vector<int>> monomials(int p, int degree) {
  std::vector<std::vector<int>> out;
  for (int k = 1; k <= degree; ++k) {
    std::vector<int> idx(k, 0);
    while (true) {
      out.push_back(idx);
      int pos = k - 1;
      while (pos >= 0 && idx[pos] == p - 1) --pos;
      if (pos < 0) break;
      ++idx[pos];
      for (int q = pos + 1; q < k; ++q) idx[q] = idx[pos];
    }
  }
  return out;
}

}  // namespace

Eigen::MatrixXd polynomial_features(const Eigen::MatrixXd& x, int degree) {
  if (degree < 1) throw ValidationError("degree", "polynomial degree must be >= 1");
  if (degree == 1) return x;
  const auto terms = monomials(static_cast<int>(x.cols()), degree);
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(terms.size()));
  for (std::size_t t = 0; t < terms.size(); ++t) {
    Eigen::VectorXd col = Eigen::VectorXd::Ones(x.rows());
    for (int j : terms[t]) col.array() *= x.col(j).array();
    out.col(static_cast<Eigen::Index>(t)) = col;
  }
  return out;
}

std::vector<std::string> polynomial_term_names(const std::vector<std::string>& names, int degree) {
  if (degree == 1) return names;
  std::vector<std::string> out;
  for (const auto& idx : monomials(static_cast<int>(names.size()), degree)) {
    std::string term;
    std::size_t i = 0;
    while (i < idx.size()) {
      std::size_t run = i;
      while (run < idx.size() && idx[run] == idx[i]) ++run;
      if (!term.empty()) term += "*";
      term += names[idx[i]];
      if (run - i > 1) term += "^" + std::to_string(run - i);
      i = run;
    }
    out.push_back(std::move(term));
  }
  return out;
}

TrainedModel fit_polynomial(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int degree,
                            std::vector<std::string> names) {
  check_shapes(x, y);
  names = default_names(std::move(names), x.cols());
  auto terms = polynomial_term_names(names, degree);
  const auto c = center(polynomial_features(x, degree), y);
  auto beta = ols_coefficients(c, terms);
  auto model = linear_model(Family::polynomial, std::move(beta), c, std::move(names), std::move(terms), degree);
  model.params.degree = degree;
  return model;
}

TrainedModel fit_model(Family family, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                       const Hyperparams& params, std::uint64_t seed, unsigned threads,
                       std::vector<std::string> names) {
  switch (family) {
    case Family::linear: return fit_linear(x, y, std::move(names));
    case Family::ridge: return fit_ridge(x, y, params.alpha, std::move(names));
    case Family::lasso: return fit_lasso(x, y, params.alpha, std::move(names));
    case Family::polynomial: return fit_polynomial(x, y, params.degree, std::move(names));
    case Family::random_forest: return fit_random_forest(x, y, params, seed, threads, std::move(names));
    case Family::gradient_boosted_trees: return fit_gbt(x, y, params, seed, threads, std::move(names));
  }
  throw ValidationError("families", "unknown model family");
}

}  // namespace prime
