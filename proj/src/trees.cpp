#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "prime/error.hpp"
#include "prime/models.hpp"
#include "prime/rng.hpp"

namespace prime {

double Tree::predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  int node = 0;
  while (nodes[node].feature >= 0) {
    const auto& n = nodes[node];
    node = x(n.feature) <= n.threshold ? n.left : n.right;
  }
  return nodes[node].value;
}

namespace {

struct TreeSettings {
  std::optional<int> max_depth;
  int min_leaf = 1;
  int features_per_split = 0;  // features sampled per node; >= p means all, in index order
  unsigned threads = 1;        // split search parallelism inside one node
};

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
  std::size_t left_count = 0;
};

/// CART regression tree grown by SSE reduction. Ties in gain keep the lowest
/// feature index, then the lowest threshold.
class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const TreeSettings& settings, Rng* rng,
              Eigen::VectorXd& importance)
      : x_(x), y_(y), settings_(settings), rng_(rng), importance_(importance) {}

  Tree build(std::vector<std::size_t> samples) {
    tree_.nodes.clear();
    grow(samples, 0);
    return std::move(tree_);
  }

 private:
  int grow(std::vector<std::size_t>& samples, int depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    tree_.nodes[id].value = leaf_value(samples);

    const std::size_t m = samples.size();
    const bool depth_left = !settings_.max_depth || depth < *settings_.max_depth;
    if (!depth_left || m < 2 * static_cast<std::size_t>(settings_.min_leaf) || pure(samples)) return id;

    const Split best = find_split(samples);
    if (best.feature < 0) return id;

    importance_(best.feature) += best.gain;
    std::vector<std::size_t> left, right;
    left.reserve(best.left_count);
    right.reserve(m - best.left_count);
    for (auto i : samples) (x_(i, best.feature) <= best.threshold ? left : right).push_back(i);
    samples.clear();
    samples.shrink_to_fit();

    tree_.nodes[id].feature = best.feature;
    tree_.nodes[id].threshold = best.threshold;
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    tree_.nodes[id].left = l;
    tree_.nodes[id].right = r;
    return id;
  }

  double leaf_value(const std::vector<std::size_t>& s) const {
    if (pure(s)) return y_(s.front());
    double sum = 0.0;
    for (auto i : s) sum += y_(i);
    return sum / static_cast<double>(s.size());
  }

  bool pure(const std::vector<std::size_t>& s) const {
    const double first = y_(s.front());
    return std::all_of(s.begin(), s.end(), [&](std::size_t i) { return y_(i) == first; });
  }

  std::vector<int> candidate_features() {
    const int p = static_cast<int>(x_.cols());
    std::vector<int> feats(p);
    std::iota(feats.begin(), feats.end(), 0);
    const int k = settings_.features_per_split;
    if (rng_ && k > 0 && k < p) {
      // Partial Fisher-Yates: the first k entries are a uniform sample.
      for (int i = 0; i < k; ++i) {
        const auto j = i + static_cast<int>(rng_->below(static_cast<std::uint64_t>(p - i)));
        std::swap(feats[i], feats[j]);
      }
      feats.resize(k);
      std::sort(feats.begin(), feats.end());
    }
    return feats;
  }

  Split best_for_feature(const std::vector<std::size_t>& samples, int f) const {
    const std::size_t m = samples.size();
    std::vector<std::pair<double, double>> xy(m);
    for (std::size_t k = 0; k < m; ++k) xy[k] = {x_(samples[k], f), y_(samples[k])};
    std::sort(xy.begin(), xy.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

    double total = 0.0;
    for (const auto& [_, v] : xy) total += v;
    const double parent = total * total / static_cast<double>(m);

    Split best;
    const auto min_leaf = static_cast<std::size_t>(settings_.min_leaf);
    double left_sum = 0.0;
    for (std::size_t k = 1; k < m; ++k) {
      left_sum += xy[k - 1].second;
      if (k < min_leaf || m - k < min_leaf) continue;
      if (!(xy[k - 1].first < xy[k].first)) continue;
      const double right_sum = total - left_sum;
      const double gain = left_sum * left_sum / static_cast<double>(k) +
                          right_sum * right_sum / static_cast<double>(m - k) - parent;
      if (gain > best.gain) {
        best.gain = gain;
        best.feature = f;
        best.left_count = k;
        double mid = 0.5 * (xy[k - 1].first + xy[k].first);
        if (!(mid < xy[k].first)) mid = xy[k - 1].first;
        best.threshold = mid;
      }
    }
    return best;
  }

  Split find_split(const std::vector<std::size_t>& samples) {
    const auto feats = candidate_features();
    std::vector<Split> per_feature(feats.size());
    const unsigned threads = samples.size() >= 512 ? settings_.threads : 1;
    parallel_for(feats.size(), threads,
                 [&](std::size_t k) { per_feature[k] = best_for_feature(samples, feats[k]); });
    Split best;
    for (const auto& s : per_feature) {
      if (s.feature >= 0 && s.gain > best.gain) best = s;
    }
    return best;
  }

  const Eigen::MatrixXd& x_;
  const Eigen::VectorXd& y_;
  TreeSettings settings_;
  Rng* rng_;
  Eigen::VectorXd& importance_;
  Tree tree_;
};

void check_tree_inputs(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Hyperparams& params) {
  if (x.rows() != y.size() || x.rows() == 0) throw ValidationError("tree models need matching, nonempty data");
  if (params.n_trees < 1) throw ValidationError("n_trees", "n_trees must be >= 1");
  if (params.min_leaf < 1) throw ValidationError("min_leaf", "min_leaf must be >= 1");
  if (params.min_leaf >= x.rows()) {
    throw ValidationError("min_leaf", "min_leaf (" + std::to_string(params.min_leaf) +
                                          ") must be smaller than the number of training rows (" +
                                          std::to_string(x.rows()) + ")");
  }
  if (params.max_depth && *params.max_depth < 0) throw ValidationError("max_depth", "max_depth must be >= 0");
}

std::vector<std::string> names_or_default(std::vector<std::string> names, Eigen::Index p) {
  if (names.empty()) {
    for (Eigen::Index j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
  }
  if (static_cast<Eigen::Index>(names.size()) != p) {
    throw ValidationError("feature name count does not match the design matrix");
  }
  return names;
}

Eigen::VectorXd normalized(const Eigen::VectorXd& raw) {
  const double total = raw.sum();
  if (!(total > 0.0)) {
    // No split anywhere: nothing distinguishes the features.
    return Eigen::VectorXd::Constant(raw.size(), raw.size() ? 1.0 / static_cast<double>(raw.size()) : 0.0);
  }
  return raw / total;
}

}  // namespace

TrainedModel fit_random_forest(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Hyperparams& params,
                               std::uint64_t seed, unsigned threads, std::vector<std::string> names) {
  check_tree_inputs(x, y, params);
  names = names_or_default(std::move(names), x.cols());
  const auto n = static_cast<std::size_t>(x.rows());
  const auto p = x.cols();

  TreeSettings settings;
  settings.max_depth = params.max_depth;
  settings.min_leaf = params.min_leaf;
  settings.features_per_split = params.features_per_split > 0
                                    ? params.features_per_split
                                    : std::max(1, static_cast<int>(std::lround(static_cast<double>(p) / 3.0)));

  const auto n_trees = static_cast<std::size_t>(params.n_trees);
  std::vector<Tree> trees(n_trees);
  std::vector<Eigen::VectorXd> tree_importance(n_trees, Eigen::VectorXd::Zero(p));

  parallel_for(n_trees, threads, [&](std::size_t t) {
    Rng rng(mix_seed(seed, t));
    std::vector<std::size_t> samples(n);
    if (params.bootstrap) {
      for (auto& s : samples) s = rng.below(n);
    } else {
      std::iota(samples.begin(), samples.end(), std::size_t{0});
    }
    TreeBuilder builder(x, y, settings, &rng, tree_importance[t]);
    trees[t] = builder.build(std::move(samples));
  });

  Eigen::VectorXd importance = Eigen::VectorXd::Zero(p);
  for (const auto& imp : tree_importance) importance += imp;

  TrainedModel model;
  model.family = Family::random_forest;
  model.params = params;
  model.feature_names = names;
  model.term_names = std::move(names);
  TreeEnsemble ens;
  ens.trees = std::move(trees);
  ens.average = true;
  model.fit = std::move(ens);
  model.importances = normalized(importance);
  return model;
}

TrainedModel fit_gbt(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Hyperparams& params,
                     std::uint64_t /*seed*/, unsigned threads, std::vector<std::string> names) {
  check_tree_inputs(x, y, params);
  if (!(params.learning_rate > 0.0 && params.learning_rate <= 1.0)) {
    throw ValidationError("learning_rate", "learning_rate must lie in (0, 1]");
  }
  names = names_or_default(std::move(names), x.cols());
  const auto n = static_cast<std::size_t>(x.rows());
  const auto p = x.cols();

  TreeSettings settings;
  settings.max_depth = params.max_depth;
  settings.min_leaf = params.min_leaf;
  settings.features_per_split = static_cast<int>(p);
  settings.threads = threads;

  TreeEnsemble ens;
  ens.base = y.mean();
  ens.shrinkage = params.learning_rate;

  Eigen::VectorXd current = Eigen::VectorXd::Constant(y.size(), ens.base);
  Eigen::VectorXd importance = Eigen::VectorXd::Zero(p);
  std::vector<double> stage_mse{(y - current).squaredNorm() / static_cast<double>(n)};

  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (int stage = 0; stage < params.n_trees; ++stage) {
    const Eigen::VectorXd residual = y - current;
    TreeBuilder builder(x, residual, settings, nullptr, importance);
    Tree tree = builder.build(all);
    for (Eigen::Index i = 0; i < x.rows(); ++i) current(i) += ens.shrinkage * tree.predict(x.row(i));
    ens.trees.push_back(std::move(tree));
    stage_mse.push_back((y - current).squaredNorm() / static_cast<double>(n));
  }

  TrainedModel model;
  model.family = Family::gradient_boosted_trees;
  model.params = params;
  model.feature_names = names;
  model.term_names = std::move(names);
  model.fit = std::move(ens);
  model.importances = normalized(importance);
  model.stage_train_mse = std::move(stage_mse);
  return model;
}

}  // namespace prime
