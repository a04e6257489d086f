#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "prime/common.hpp"
#include "prime/features.hpp"

namespace prime {

struct CiResult {
  double partial_correlation = 0.0;
  double statistic = 0.0;  // Fisher z scaled by sqrt(n - |S| - 3)
  double p_value = 1.0;
  bool independent = false;
  bool skipped = false;  // singular conditioning set; treated as dependent
};

/// Fisher-z test of x _||_ y | S on the columns of `data`. Requires
/// rows > |S| + 3.
CiResult ci_test(const Eigen::MatrixXd& data, int x, int y, std::span<const int> s, double alpha = 0.05);

/// Same test from a precomputed correlation matrix over `n` observations.
CiResult ci_test_from_correlation(const Eigen::MatrixXd& corr, std::size_t n, int x, int y, std::span<const int> s,
                                  double alpha);

struct Arc {
  std::string from;
  std::string to;
  double confidence = 1.0;
  std::optional<double> coefficient;  // set for arcs into a score node

  bool operator==(const Arc&) const = default;
};

struct UndirectedEdge {
  std::string a;
  std::string b;
  double confidence = 1.0;

  bool operator==(const UndirectedEdge&) const = default;
};

struct Dag {
  std::vector<std::string> nodes;
  std::vector<Arc> arcs;
  std::vector<UndirectedEdge> undirected;

  bool operator==(const Dag&) const = default;

  /// True when the directed arcs admit a topological order.
  bool acyclic() const;
  /// Tails of arcs into `node`, in arc order.
  std::vector<std::string> parents(const std::string& node) const;
  /// Unordered adjacency pairs (directed or not), each as (min, max) by name.
  std::vector<std::pair<std::string, std::string>> skeleton() const;
};

struct CiTestRecord {
  int x = 0;
  int y = 0;
  std::vector<int> conditioning;
  double p_value = 1.0;
  bool independent = false;
  bool skipped = false;
};

struct PcOptions {
  double alpha = 0.05;
  int max_depth = 3;  // largest conditioning set size
};

struct PcResult {
  Dag dag;
  std::map<std::pair<int, int>, std::vector<int>> sepsets;  // key (min, max)
  std::vector<CiTestRecord> tests;
  std::vector<std::string> log;
};

/// PC-stable: adjacency sets are frozen at the start of each depth level, then
/// v-structures and Meek rules 1-4 orient what they can. Edges left
/// unoriented are reported in Dag::undirected.
PcResult pc_stable(const Eigen::MatrixXd& data, const std::vector<std::string>& names, const PcOptions& options = {});

struct BootstrapOptions {
  int replicates = 100;
  double subsample_fraction = 0.9;  // drawn without replacement
  double alpha = 0.05;
  int max_depth = 3;
  std::uint64_t seed = 42;
  double threshold = 0.5;
  unsigned threads = 1;
};

struct BootstrapResult {
  Dag dag;
  std::vector<std::string> log;
};

/// Runs pc_stable on seeded subsamples. Arc confidence is the fraction of
/// replicates containing the directed arc; arcs at or above the threshold are
/// kept, opposite arcs resolved by confidence (ties become undirected), and
/// any surviving cycle broken by demoting its weakest arc.
BootstrapResult bootstrap_learn(const Eigen::MatrixXd& data, const std::vector<std::string>& names,
                                const BootstrapOptions& options = {});

struct ParentEffect {
  std::string name;
  double coefficient = 0.0;
};

/// Parents of `score_node` with coefficients from a least-squares fit of the
/// score on those parents alone.
std::vector<ParentEffect> extract_parents(const Dag& dag, const std::string& score_node, const Eigen::MatrixXd& data,
                                          const std::vector<std::string>& names);

struct CausalReport {
  Target target = Target::resilience;
  Dag dag;
  std::vector<ParentEffect> parents;
  std::vector<std::string> log;
};

/// Structure over the dataset's features plus one score column.
CausalReport learn_causal_structure(const AlignedDataset& data, Target target, const BootstrapOptions& options = {});

nlohmann::ordered_json dag_json(const Dag& dag);
/// Graphviz text; `highlight` (the score node) is drawn filled, its parent arcs bold.
std::string dag_dot(const Dag& dag, const std::string& highlight = {});

}  // namespace prime
