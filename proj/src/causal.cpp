#include "prime/causal.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <numeric>
#include <sstream>
#include <tuple>

#include <fmt/format.h>

#include "prime/error.hpp"
#include "prime/models.hpp"
#include "prime/rng.hpp"

namespace prime {

namespace {

Eigen::MatrixXd correlation_of(const Eigen::MatrixXd& data) {
  const Eigen::MatrixXd centered = data.rowwise() - data.colwise().mean();
  const Eigen::VectorXd sd = centered.colwise().norm().transpose();
  Eigen::MatrixXd corr = centered.transpose() * centered;
  for (Eigen::Index i = 0; i < corr.rows(); ++i) {
    for (Eigen::Index j = 0; j < corr.cols(); ++j) {
      const double d = sd(i) * sd(j);
      corr(i, j) = d > 0.0 ? std::clamp(corr(i, j) / d, -1.0, 1.0) : 0.0;
    }
    corr(i, i) = 1.0;
  }
  return corr;
}

}  // namespace

CiResult ci_test_from_correlation(const Eigen::MatrixXd& corr, std::size_t n, int x, int y, std::span<const int> s,
                                  double alpha) {
  if (n <= s.size() + 3) {
    throw ValidationError("Fisher z test needs more than |S| + 3 rows (" + std::to_string(n) + " rows, |S| = " +
                          std::to_string(s.size()) + ")");
  }
  CiResult out;
  double rho;
  if (s.empty()) {
    rho = corr(x, y);
  } else {
    std::vector<int> idx{x, y};
    idx.insert(idx.end(), s.begin(), s.end());
    const auto k = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd sub(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
      for (Eigen::Index b = 0; b < k; ++b) sub(a, b) = corr(idx[a], idx[b]);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sub);
    if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() <= 1e-10) {
      out.skipped = true;
      out.p_value = 0.0;
      return out;
    }
    const Eigen::MatrixXd prec = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
                                 eig.eigenvectors().transpose();
    rho = -prec(0, 1) / std::sqrt(prec(0, 0) * prec(1, 1));
  }
  rho = std::clamp(rho, -1.0, 1.0);
  out.partial_correlation = rho;
  if (std::abs(rho) >= 1.0) {
    out.statistic = std::numeric_limits<double>::infinity();
    out.p_value = 0.0;
  } else {
    const double z = 0.5 * std::log((1.0 + rho) / (1.0 - rho));
    out.statistic = z * std::sqrt(static_cast<double>(n - s.size() - 3));
    out.p_value = std::erfc(std::abs(out.statistic) / std::sqrt(2.0));
  }
  out.independent = out.p_value > alpha;
  return out;
}

CiResult ci_test(const Eigen::MatrixXd& data, int x, int y, std::span<const int> s, double alpha) {
  const auto v = static_cast<int>(data.cols());
  auto in_range = [v](int i) { return i >= 0 && i < v; };
  if (!in_range(x) || !in_range(y) || x == y ||
      !std::all_of(s.begin(), s.end(), [&](int i) { return in_range(i) && i != x && i != y; })) {
    throw ValidationError("invalid variables for a conditional independence test");
  }
  std::vector<int> cols{x, y};
  cols.insert(cols.end(), s.begin(), s.end());
  Eigen::MatrixXd sub(data.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = data.col(cols[k]);
  std::vector<int> cond(s.size());
  std::iota(cond.begin(), cond.end(), 2);
  return ci_test_from_correlation(correlation_of(sub), static_cast<std::size_t>(data.rows()), 0, 1, cond, alpha);
}

// ---------------------------------------------------------------------------

bool Dag::acyclic() const {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < nodes.size(); ++i) index[nodes[i]] = i;
  std::vector<std::vector<std::size_t>> out(nodes.size());
  std::vector<int> indegree(nodes.size(), 0);
  for (const auto& a : arcs) {
    out[index.at(a.from)].push_back(index.at(a.to));
    ++indegree[index.at(a.to)];
  }
  std::vector<std::size_t> ready;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (indegree[i] == 0) ready.push_back(i);
  }
  std::size_t seen = 0;
  while (!ready.empty()) {
    const auto u = ready.back();
    ready.pop_back();
    ++seen;
    for (auto w : out[u]) {
      if (--indegree[w] == 0) ready.push_back(w);
    }
  }
  return seen == nodes.size();
}

std::vector<std::string> Dag::parents(const std::string& node) const {
  std::vector<std::string> out;
  for (const auto& a : arcs) {
    if (a.to == node) out.push_back(a.from);
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> Dag::skeleton() const {
  std::vector<std::pair<std::string, std::string>> out;
  auto add = [&](const std::string& a, const std::string& b) { out.emplace_back(std::min(a, b), std::max(a, b)); };
  for (const auto& a : arcs) add(a.from, a.to);
  for (const auto& e : undirected) add(e.a, e.b);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---------------------------------------------------------------------------

namespace {

/// Partially directed graph: mark(i, j) && mark(j, i) is an undirected edge,
/// mark(i, j) alone is i -> j.
class Pdag {
 public:
  explicit Pdag(int v) : v_(v), mark_(static_cast<std::size_t>(v * v), 0) {}

  int size() const { return v_; }
  bool has(int i, int j) const { return mark_[i * v_ + j] != 0; }
  bool adjacent(int i, int j) const { return has(i, j) || has(j, i); }
  bool undirected(int i, int j) const { return has(i, j) && has(j, i); }
  bool directed(int i, int j) const { return has(i, j) && !has(j, i); }
  void set_undirected(int i, int j) { mark_[i * v_ + j] = mark_[j * v_ + i] = 1; }
  void remove(int i, int j) { mark_[i * v_ + j] = mark_[j * v_ + i] = 0; }
  void orient(int i, int j) { mark_[j * v_ + i] = 0; }

 private:
  int v_;
  std::vector<char> mark_;
};

// Calls fn(subset) for every size-k subset of `items` in lexicographic order
// until fn returns true.
template <typename Fn>
bool for_each_subset(const std::vector<int>& items, std::size_t k, Fn&& fn) {
  if (k > items.size()) return false;
  std::vector<std::size_t> pos(k);
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  std::vector<int> subset(k);
  while (true) {
    for (std::size_t i = 0; i < k; ++i) subset[i] = items[pos[i]];
    if (fn(subset)) return true;
    std::size_t i = k;
    while (i > 0 && pos[i - 1] == items.size() - k + (i - 1)) --i;
    if (i == 0) return false;
    ++pos[i - 1];
    for (std::size_t j = i; j < k; ++j) pos[j] = pos[j - 1] + 1;
  }
}

bool apply_meek_rules(Pdag& g) {
  const int v = g.size();
  bool changed = false;
  for (int a = 0; a < v; ++a) {
    for (int b = 0; b < v; ++b) {
      if (a == b || !g.undirected(a, b)) continue;
      bool orient = false;
      for (int c = 0; c < v && !orient; ++c) {
        if (c == a || c == b) continue;
        // R1: c -> a - b, c and b nonadjacent  =>  a -> b
        if (g.directed(c, a) && !g.adjacent(c, b)) orient = true;
        // R2: a -> c -> b  =>  a -> b
        else if (g.directed(a, c) && g.directed(c, b)) orient = true;
      }
      // R3: a - c -> b, a - d -> b, c and d nonadjacent  =>  a -> b
      for (int c = 0; c < v && !orient; ++c) {
        if (c == a || c == b || !g.undirected(a, c) || !g.directed(c, b)) continue;
        for (int d = c + 1; d < v && !orient; ++d) {
          if (d == a || d == b || !g.undirected(a, d) || !g.directed(d, b)) continue;
          if (!g.adjacent(c, d)) orient = true;
        }
      }
      // R4: a - c -> d -> b, c and b nonadjacent, a adjacent to d  =>  a -> b
      for (int c = 0; c < v && !orient; ++c) {
        if (c == a || c == b || !g.undirected(a, c) || g.adjacent(c, b)) continue;
        for (int d = 0; d < v && !orient; ++d) {
          if (d == a || d == b || d == c) continue;
          if (g.directed(c, d) && g.directed(d, b) && g.adjacent(a, d)) orient = true;
        }
      }
      if (orient) {
        g.orient(a, b);
        changed = true;
      }
    }
  }
  return changed;
}

/// Demotes the weakest arc of each remaining cycle to an undirected edge.
void break_cycles(Dag& dag, std::vector<std::string>& log) {
  while (!dag.acyclic()) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < dag.nodes.size(); ++i) index[dag.nodes[i]] = i;
    const std::size_t v = dag.nodes.size();
    std::vector<std::vector<std::size_t>> out(v);  // arc indices by tail
    for (std::size_t k = 0; k < dag.arcs.size(); ++k) out[index.at(dag.arcs[k].from)].push_back(k);

    // Depth-first search for one cycle, collecting its arcs.
    std::vector<int> state(v, 0);
    std::vector<std::size_t> stack_arcs;
    std::vector<std::size_t> cycle;
    std::function<bool(std::size_t)> dfs = [&](std::size_t u) -> bool {
      state[u] = 1;
      for (auto k : out[u]) {
        const auto w = index.at(dag.arcs[k].to);
        stack_arcs.push_back(k);
        if (state[w] == 1) {
          auto it = std::find_if(stack_arcs.begin(), stack_arcs.end(),
                                 [&](std::size_t a) { return index.at(dag.arcs[a].from) == w; });
          cycle.assign(it, stack_arcs.end());
          return true;
        }
        if (state[w] == 0 && dfs(w)) return true;
        stack_arcs.pop_back();
      }
      state[u] = 2;
      return false;
    };
    for (std::size_t u = 0; u < v && cycle.empty(); ++u) {
      if (state[u] == 0) dfs(u);
    }
    if (cycle.empty()) break;
    auto weakest = *std::min_element(cycle.begin(), cycle.end(), [&](std::size_t a, std::size_t b) {
      const auto& x = dag.arcs[a];
      const auto& y = dag.arcs[b];
      return std::tie(x.confidence, x.from, x.to) < std::tie(y.confidence, y.from, y.to);
    });
    const Arc arc = dag.arcs[weakest];
    log.push_back(fmt::format("cycle broken: arc {} -> {} (confidence {}) demoted to undirected", arc.from, arc.to,
                              arc.confidence));
    dag.arcs.erase(dag.arcs.begin() + static_cast<std::ptrdiff_t>(weakest));
    dag.undirected.push_back({std::min(arc.from, arc.to), std::max(arc.from, arc.to), arc.confidence});
  }
}

}  // namespace

PcResult pc_stable(const Eigen::MatrixXd& data, const std::vector<std::string>& names, const PcOptions& options) {
  const int v = static_cast<int>(data.cols());
  if (v < 2) throw ValidationError("structure learning needs at least 2 variables");
  if (static_cast<int>(names.size()) != v) throw ValidationError("variable name count does not match the data");
  const auto n = static_cast<std::size_t>(data.rows());
  const Eigen::MatrixXd corr = correlation_of(data);

  PcResult result;
  Pdag g(v);
  for (int i = 0; i < v; ++i) {
    for (int j = i + 1; j < v; ++j) g.set_undirected(i, j);
  }

  for (int depth = 0; depth <= options.max_depth; ++depth) {
    std::vector<std::vector<int>> frozen(static_cast<std::size_t>(v));
    for (int i = 0; i < v; ++i) {
      for (int j = 0; j < v; ++j) {
        if (i != j && g.adjacent(i, j)) frozen[i].push_back(j);
      }
    }
    if (n <= static_cast<std::size_t>(depth) + 3) {
      result.log.push_back(fmt::format("stopped before depth {}: {} rows are too few for the test", depth, n));
      break;
    }
    bool testable = false;
    for (int x = 0; x < v; ++x) {
      for (int y : frozen[x]) {
        if (!g.adjacent(x, y)) continue;
        std::vector<int> candidates;
        for (int z : frozen[x]) {
          if (z != y) candidates.push_back(z);
        }
        if (candidates.size() < static_cast<std::size_t>(depth)) continue;
        testable = true;
        for_each_subset(candidates, static_cast<std::size_t>(depth), [&](const std::vector<int>& s) {
          const auto r = ci_test_from_correlation(corr, n, x, y, s, options.alpha);
          result.tests.push_back({x, y, s, r.p_value, r.independent, r.skipped});
          if (r.skipped) {
            result.log.push_back(fmt::format("singular conditioning set for {} - {}; edge kept", names[x], names[y]));
            return false;
          }
          if (!r.independent) return false;
          g.remove(x, y);
          result.sepsets[{std::min(x, y), std::max(x, y)}] = s;
          return true;
        });
      }
    }
    if (!testable) break;
  }

  // Unshielded colliders x -> z <- y when z is not in sepset(x, y).
  for (int z = 0; z < v; ++z) {
    for (int x = 0; x < v; ++x) {
      if (x == z || !g.adjacent(x, z)) continue;
      for (int y = x + 1; y < v; ++y) {
        if (y == z || !g.adjacent(y, z) || g.adjacent(x, y)) continue;
        auto it = result.sepsets.find({x, y});
        if (it == result.sepsets.end()) continue;  // adjacency removed only by a skipped test path
        if (std::find(it->second.begin(), it->second.end(), z) != it->second.end()) continue;
        for (int tail : {x, y}) {
          if (g.directed(z, tail)) {
            result.log.push_back(fmt::format("conflicting collider at {}: kept {} -> {}", names[z], names[z],
                                             names[tail]));
          } else {
            g.orient(tail, z);
          }
        }
      }
    }
  }
  while (apply_meek_rules(g)) {
  }

  result.dag.nodes = names;
  for (int i = 0; i < v; ++i) {
    for (int j = 0; j < v; ++j) {
      if (g.directed(i, j)) result.dag.arcs.push_back({names[i], names[j], 1.0, std::nullopt});
      if (i < j && g.undirected(i, j)) result.dag.undirected.push_back({names[i], names[j], 1.0});
    }
  }
  break_cycles(result.dag, result.log);
  return result;
}

BootstrapResult bootstrap_learn(const Eigen::MatrixXd& data, const std::vector<std::string>& names,
                                const BootstrapOptions& options) {
  if (options.replicates < 1) throw ValidationError("replicates", "bootstrap needs at least one replicate");
  if (!(options.subsample_fraction > 0.0 && options.subsample_fraction <= 1.0)) {
    throw ValidationError("subsample_fraction", "subsample fraction must lie in (0, 1]");
  }
  const auto n = static_cast<std::size_t>(data.rows());
  const auto m = static_cast<std::size_t>(std::llround(options.subsample_fraction * static_cast<double>(n)));
  if (m == 0) throw ValidationError("subsample_fraction", "subsample would be empty");
  const auto v = static_cast<int>(names.size());
  const auto reps = static_cast<std::size_t>(options.replicates);

  std::vector<PcResult> runs(reps);
  parallel_for(reps, options.threads, [&](std::size_t b) {
    auto order = shuffled_indices(n, mix_seed(options.seed, b));
    order.resize(m);
    std::sort(order.begin(), order.end());
    Eigen::MatrixXd sample(static_cast<Eigen::Index>(m), data.cols());
    for (std::size_t k = 0; k < m; ++k) sample.row(static_cast<Eigen::Index>(k)) = data.row(static_cast<Eigen::Index>(order[k]));
    runs[b] = pc_stable(sample, names, {options.alpha, options.max_depth});
  });

  std::map<std::string, int> index;
  for (int i = 0; i < v; ++i) index[names[i]] = i;
  std::vector<std::vector<int>> arc_count(v, std::vector<int>(v, 0));
  std::vector<std::vector<int>> undirected_count(v, std::vector<int>(v, 0));
  BootstrapResult result;
  for (std::size_t b = 0; b < reps; ++b) {
    for (const auto& a : runs[b].dag.arcs) ++arc_count[index.at(a.from)][index.at(a.to)];
    for (const auto& e : runs[b].dag.undirected) {
      const int i = index.at(e.a), j = index.at(e.b);
      ++undirected_count[std::min(i, j)][std::max(i, j)];
    }
  }
  // Identical messages from different replicates collapse into one line with a count.
  std::vector<std::string> order;
  std::map<std::string, std::size_t> seen;
  for (std::size_t b = 0; b < reps; ++b) {
    std::set<std::string> once;
    for (const auto& line : runs[b].log) {
      if (!once.insert(line).second) continue;
      if (seen[line]++ == 0) order.push_back(line);
    }
  }
  for (const auto& line : order) {
    result.log.push_back(fmt::format("{} ({} of {} replicates)", line, seen[line], reps));
  }

  const double total = static_cast<double>(reps);
  result.dag.nodes = names;
  for (int i = 0; i < v; ++i) {
    for (int j = i + 1; j < v; ++j) {
      const double forward = arc_count[i][j] / total;
      const double backward = arc_count[j][i] / total;
      const bool keep_forward = forward >= options.threshold && forward > 0.0;
      const bool keep_backward = backward >= options.threshold && backward > 0.0;
      if (keep_forward && keep_backward && forward == backward) {
        result.dag.undirected.push_back({names[i], names[j], forward});
        result.log.push_back(fmt::format("direction tie between {} and {}; left undirected", names[i], names[j]));
      } else if (keep_forward && (!keep_backward || forward > backward)) {
        result.dag.arcs.push_back({names[i], names[j], forward, std::nullopt});
      } else if (keep_backward) {
        result.dag.arcs.push_back({names[j], names[i], backward, std::nullopt});
      } else {
        const double present = (arc_count[i][j] + arc_count[j][i] + undirected_count[i][j]) / total;
        if (present >= options.threshold && present > 0.0) {
          result.dag.undirected.push_back({names[i], names[j], present});
        }
      }
    }
  }
  // Arcs in node order of (from, to) for stable output.
  std::sort(result.dag.arcs.begin(), result.dag.arcs.end(), [&](const Arc& a, const Arc& b) {
    return std::pair(index.at(a.from), index.at(a.to)) < std::pair(index.at(b.from), index.at(b.to));
  });
  break_cycles(result.dag, result.log);
  return result;
}

std::vector<ParentEffect> extract_parents(const Dag& dag, const std::string& score_node, const Eigen::MatrixXd& data,
                                          const std::vector<std::string>& names) {
  auto column = [&](const std::string& name) {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ValidationError("unknown variable '" + name + "'");
    return static_cast<Eigen::Index>(it - names.begin());
  };
  const auto parents = dag.parents(score_node);
  if (parents.empty()) return {};
  const Eigen::VectorXd y = data.col(column(score_node));
  Eigen::MatrixXd x(data.rows(), static_cast<Eigen::Index>(parents.size()));
  for (std::size_t k = 0; k < parents.size(); ++k) x.col(static_cast<Eigen::Index>(k)) = data.col(column(parents[k]));
  const auto model = fit_linear(x, y, parents);
  const auto& fit = std::get<LinearFit>(model.fit);
  std::vector<ParentEffect> out;
  for (std::size_t k = 0; k < parents.size(); ++k) out.push_back({parents[k], fit.coefficients(static_cast<Eigen::Index>(k))});
  return out;
}

CausalReport learn_causal_structure(const AlignedDataset& data, Target target, const BootstrapOptions& options) {
  std::vector<std::string> names = data.feature_names;
  const std::string score(to_string(target));
  names.push_back(score);
  Eigen::MatrixXd matrix(data.features.rows(), data.features.cols() + 1);
  matrix << data.features, data.target(target);

  CausalReport report;
  report.target = target;
  auto learned = bootstrap_learn(matrix, names, options);
  report.dag = std::move(learned.dag);
  report.log = std::move(learned.log);
  report.parents = extract_parents(report.dag, score, matrix, names);
  for (auto& arc : report.dag.arcs) {
    if (arc.to != score) continue;
    for (const auto& p : report.parents) {
      if (p.name == arc.from) arc.coefficient = p.coefficient;
    }
  }
  return report;
}

nlohmann::ordered_json dag_json(const Dag& dag) {
  nlohmann::ordered_json j;
  j["nodes"] = dag.nodes;
  j["arcs"] = nlohmann::ordered_json::array();
  for (const auto& a : dag.arcs) {
    nlohmann::ordered_json arc{{"from", a.from}, {"to", a.to}, {"confidence", a.confidence}};
    if (a.coefficient) {
      arc["coefficient"] = *a.coefficient;
      arc["sign"] = *a.coefficient > 0 ? "+" : (*a.coefficient < 0 ? "-" : "0");
    }
    j["arcs"].push_back(std::move(arc));
  }
  j["undirected"] = nlohmann::ordered_json::array();
  for (const auto& e : dag.undirected) {
    j["undirected"].push_back({{"a", e.a}, {"b", e.b}, {"confidence", e.confidence}});
  }
  return j;
}

std::string dag_dot(const Dag& dag, const std::string& highlight) {
  std::ostringstream out;
  out << "digraph G {\n  rankdir=LR;\n  node [shape=box];\n";
  for (const auto& n : dag.nodes) {
    out << "  \"" << n << "\"";
    if (n == highlight) out << " [style=filled, fillcolor=\"#fdd49e\"]";
    out << ";\n";
  }
  for (const auto& a : dag.arcs) {
    out << "  \"" << a.from << "\" -> \"" << a.to << "\" [label=\"" << fmt::format("{:.2f}", a.confidence) << "\"";
    if (a.to == highlight) out << ", penwidth=2";
    out << "];\n";
  }
  for (const auto& e : dag.undirected) {
    out << "  \"" << e.a << "\" -> \"" << e.b << "\" [dir=none, label=\"" << fmt::format("{:.2f}", e.confidence)
        << "\"];\n";
  }
  out << "}\n";
  return out.str();
}

}  // namespace prime
