#include <algorithm>
#include <numeric>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "prime/causal.hpp"
#include "prime/error.hpp"

using namespace prime;

namespace {

const std::vector<std::string> kXyz{"x", "y", "z"};

std::set<std::pair<std::string, std::string>> skeleton_set(const Dag& d) {
  auto s = d.skeleton();
  return {s.begin(), s.end()};
}

bool has_arc(const Dag& d, const std::string& from, const std::string& to) {
  return std::any_of(d.arcs.begin(), d.arcs.end(), [&](const Arc& a) { return a.from == from && a.to == to; });
}

const Arc* find_arc(const Dag& d, const std::string& from, const std::string& to) {
  for (const auto& a : d.arcs) {
    if (a.from == from && a.to == to) return &a;
  }
  return nullptr;
}

/// Reorders columns by `perm` and returns the matching names.
std::pair<Eigen::MatrixXd, std::vector<std::string>> permuted(const Eigen::MatrixXd& d,
                                                              const std::vector<std::string>& names,
                                                              const std::vector<int>& perm) {
  Eigen::MatrixXd out(d.rows(), d.cols());
  std::vector<std::string> n;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    out.col(static_cast<Eigen::Index>(k)) = d.col(perm[k]);
    n.push_back(names[static_cast<std::size_t>(perm[k])]);
  }
  return {out, n};
}

}  // namespace

TEST_CASE("identical columns are dependent") {
  auto d = oracle::sample_independent(50, 2, 1);
  d.col(1) = d.col(0);
  const auto r = ci_test(d, 0, 1, {}, 1e-12);
  CHECK(r.partial_correlation == doctest::Approx(1.0));
  CHECK_FALSE(r.independent);
  CHECK(r.p_value == 0.0);
}

TEST_CASE("test size is calibrated on independent normals") {
  int accepted = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto d = oracle::sample_independent(1000, 2, seed);
    if (ci_test(d, 0, 1, {}, 0.05).independent) ++accepted;
  }
  CHECK(accepted >= 90);
}

TEST_CASE("conditioning on a collider induces dependence") {
  const auto d = oracle::sample_collider(2000, 5);
  const auto marginal = ci_test(d, 0, 1, {});
  CHECK(marginal.independent);
  const int z[] = {2};
  const auto given = ci_test(d, 0, 1, z);
  CHECK_FALSE(given.independent);
  CHECK(given.partial_correlation < -0.5);
  const double expected = oracle::partial1(oracle::column_pearson(d, 0, 1), oracle::column_pearson(d, 0, 2),
                                           oracle::column_pearson(d, 1, 2));
  CHECK(given.partial_correlation == doctest::Approx(expected).epsilon(1e-10));
  CHECK(given.p_value == doctest::Approx(oracle::fisher_p(expected, 2000, 1)).epsilon(1e-9));
}

TEST_CASE("CI test preconditions") {
  const auto d = oracle::sample_independent(5, 4, 1);
  const int two[] = {2, 3};
  CHECK_THROWS_AS(ci_test(d, 0, 1, two), ValidationError);  // 5 rows <= 2 + 3
  CHECK_THROWS_AS(ci_test(d, 0, 0, {}), ValidationError);
  CHECK_THROWS_AS(ci_test(d, 0, 7, {}), ValidationError);

  auto s = oracle::sample_independent(40, 4, 2);
  s.col(3) = s.col(2);  // singular conditioning set
  const auto r = ci_test(s, 0, 1, two);
  CHECK(r.skipped);
  CHECK_FALSE(r.independent);
}

TEST_CASE("independent variables give an empty graph") {
  const auto d = oracle::sample_independent(2000, 3, 17);
  const auto r = pc_stable(d, kXyz);
  CHECK(r.dag.arcs.empty());
  CHECK(r.dag.undirected.empty());
}

TEST_CASE("collider is recovered with its v-structure") {
  const auto d = oracle::sample_collider(2000, 3);
  const auto r = pc_stable(d, kXyz);
  CHECK(skeleton_set(r.dag) == std::set<std::pair<std::string, std::string>>{{"x", "z"}, {"y", "z"}});
  CHECK(has_arc(r.dag, "x", "z"));
  CHECK(has_arc(r.dag, "y", "z"));
  CHECK(r.dag.undirected.empty());
  CHECK(r.sepsets.at({0, 1}).empty());
  CHECK(r.dag.parents("z") == std::vector<std::string>{"x", "y"});
}

TEST_CASE("chain keeps its skeleton and has no v-structure") {
  const auto d = oracle::sample_chain(2000, 3);
  const auto r = pc_stable(d, kXyz);
  CHECK(skeleton_set(r.dag) == std::set<std::pair<std::string, std::string>>{{"x", "y"}, {"y", "z"}});
  CHECK(r.dag.arcs.empty());
  CHECK(r.sepsets.at({0, 2}) == std::vector<int>{1});
}

TEST_CASE("Meek rule 1 orients away from a collider") {
  // x -> z <- y, z -> w: the v-structure forces z -> w.
  std::mt19937_64 gen(8);
  std::normal_distribution<double> g;
  Eigen::MatrixXd d(3000, 4);
  for (int i = 0; i < 3000; ++i) {
    d(i, 0) = g(gen);
    d(i, 1) = g(gen);
    d(i, 2) = 0.7 * d(i, 0) + 0.7 * d(i, 1) + 0.5 * g(gen);
    d(i, 3) = 0.8 * d(i, 2) + 0.6 * g(gen);
  }
  const auto r = pc_stable(d, {"x", "y", "z", "w"});
  CHECK(has_arc(r.dag, "x", "z"));
  CHECK(has_arc(r.dag, "y", "z"));
  CHECK(has_arc(r.dag, "z", "w"));
  CHECK(r.dag.undirected.empty());
  CHECK(r.dag.acyclic());
}

TEST_CASE("skeleton does not depend on variable order") {
  std::mt19937_64 gen(12);
  std::normal_distribution<double> g;
  Eigen::MatrixXd wide(1500, 6);
  for (int i = 0; i < 1500; ++i) {
    wide(i, 0) = g(gen);
    wide(i, 1) = g(gen);
    wide(i, 2) = 0.6 * wide(i, 0) - 0.5 * wide(i, 1) + 0.6 * g(gen);
    wide(i, 3) = 0.7 * wide(i, 2) + 0.7 * g(gen);
    wide(i, 4) = 0.5 * wide(i, 3) + 0.4 * wide(i, 0) + 0.7 * g(gen);
    wide(i, 5) = g(gen);
  }
  const std::vector<std::pair<Eigen::MatrixXd, std::vector<std::string>>> fixtures{
      {oracle::sample_collider(2000, 3), kXyz},
      {oracle::sample_chain(2000, 3), kXyz},
      {oracle::sample_independent(2000, 3, 17), kXyz},
      {wide, {"a", "b", "c", "d", "e", "f"}}};
  for (const auto& [data, names] : fixtures) {
    const auto base = skeleton_set(pc_stable(data, names).dag);
    std::vector<int> perm(names.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 pg(99);
    for (int k = 0; k < 6; ++k) {
      std::shuffle(perm.begin(), perm.end(), pg);
      const auto [pd, pn] = permuted(data, names, perm);
      CHECK(skeleton_set(pc_stable(pd, pn).dag) == base);
    }
  }
}

TEST_CASE("performed tests match brute-force CI evaluation") {
  const auto d = oracle::sample_collider(2000, 3);
  const auto r = pc_stable(d, kXyz, {0.05, 1});
  const auto ref = oracle::pc_skeleton_depth1(d, 0.05);

  std::set<std::pair<int, int>> got;
  for (const auto& [a, b] : r.dag.skeleton()) {
    const int i = static_cast<int>(std::find(kXyz.begin(), kXyz.end(), a) - kXyz.begin());
    const int j = static_cast<int>(std::find(kXyz.begin(), kXyz.end(), b) - kXyz.begin());
    got.insert({std::min(i, j), std::max(i, j)});
  }
  CHECK(got == ref.edges);
  CHECK(r.sepsets == ref.sepsets);

  // Every pair gets a marginal test; every order-1 test recorded agrees
  // with the recursion formula.
  std::set<std::pair<int, int>> marginal;
  for (const auto& t : r.tests) {
    const double rxy = oracle::column_pearson(d, t.x, t.y);
    double rho = rxy;
    if (t.conditioning.size() == 1) {
      const int z = t.conditioning[0];
      rho = oracle::partial1(rxy, oracle::column_pearson(d, t.x, z), oracle::column_pearson(d, t.y, z));
    } else {
      marginal.insert({std::min(t.x, t.y), std::max(t.x, t.y)});
    }
    CHECK(t.p_value == doctest::Approx(oracle::fisher_p(rho, 2000, t.conditioning.size())).epsilon(1e-9));
    CHECK(t.independent == (t.p_value > 0.05));
  }
  CHECK(marginal.size() == 3);
}

TEST_CASE("bootstrap with one replicate over all rows equals a single run") {
  const auto d = oracle::sample_collider(500, 4);
  BootstrapOptions o;
  o.replicates = 1;
  o.subsample_fraction = 1.0;
  const auto b = bootstrap_learn(d, kXyz, o);
  const auto p = pc_stable(d, kXyz);
  CHECK(skeleton_set(b.dag) == skeleton_set(p.dag));
  CHECK(b.dag.arcs.size() == p.dag.arcs.size());
  for (const auto& a : b.dag.arcs) {
    CHECK(a.confidence == 1.0);
    CHECK(has_arc(p.dag, a.from, a.to));
  }
}

TEST_CASE("bootstrap recovers collider arcs with high confidence") {
  const auto d = oracle::sample_collider(2000, 3);
  BootstrapOptions o;
  o.replicates = 50;
  o.seed = 42;
  const auto b = bootstrap_learn(d, kXyz, o);
  const auto* xz = find_arc(b.dag, "x", "z");
  const auto* yz = find_arc(b.dag, "y", "z");
  REQUIRE(xz != nullptr);
  REQUIRE(yz != nullptr);
  CHECK(xz->confidence >= 0.8);
  CHECK(yz->confidence >= 0.8);
  CHECK(b.dag.acyclic());
  for (const auto& a : b.dag.arcs) {
    CHECK(a.confidence > 0.0);
    CHECK(a.confidence <= 1.0);
    CHECK(a.confidence >= o.threshold);
  }
}

TEST_CASE("bootstrap is deterministic and thread independent") {
  const auto d = oracle::sample_chain(800, 6);
  BootstrapOptions o;
  o.replicates = 20;
  const auto a = bootstrap_learn(d, kXyz, o);
  const auto b = bootstrap_learn(d, kXyz, o);
  o.threads = 4;
  const auto c = bootstrap_learn(d, kXyz, o);
  CHECK(a.dag == b.dag);
  CHECK(a.dag == c.dag);
  CHECK(a.log == c.log);

  BootstrapOptions bad;
  bad.replicates = 0;
  CHECK_THROWS_AS(bootstrap_learn(d, kXyz, bad), ValidationError);
  bad.replicates = 1;
  bad.subsample_fraction = 1.5;
  CHECK_THROWS_AS(bootstrap_learn(d, kXyz, bad), ValidationError);
}

TEST_CASE("bootstrap output is always acyclic with disjoint arc and edge sets") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> g;
    Eigen::MatrixXd d(300, 7);
    for (int i = 0; i < 300; ++i) {
      for (int j = 0; j < 7; ++j) d(i, j) = g(gen) + (j > 1 ? 0.4 * d(i, j - 1) + 0.3 * d(i, j - 2) : 0.0);
    }
    BootstrapOptions o;
    o.replicates = 15;
    o.seed = seed;
    const auto b = bootstrap_learn(d, {"a", "b", "c", "d", "e", "f", "g"}, o);
    CHECK(b.dag.acyclic());
    for (const auto& a : b.dag.arcs) {
      CHECK(a.from != a.to);
      for (const auto& e : b.dag.undirected) {
        CHECK_FALSE(((e.a == a.from && e.b == a.to) || (e.a == a.to && e.b == a.from)));
      }
    }
  }
}

TEST_CASE("parent extraction") {
  Dag dag;
  dag.nodes = {"A", "B", "C", "R"};
  dag.arcs = {{"A", "R", 1.0, {}}, {"B", "R", 1.0, {}}, {"C", "A", 1.0, {}}};
  CHECK(dag.parents("R") == std::vector<std::string>{"A", "B"});

  std::mt19937_64 gen(2);
  std::normal_distribution<double> g;
  Eigen::MatrixXd d(500, 4);
  for (int i = 0; i < 500; ++i) {
    d(i, 2) = g(gen);
    d(i, 0) = 0.5 * d(i, 2) + g(gen);
    d(i, 1) = g(gen);
    d(i, 3) = 2 * d(i, 0) - d(i, 1) + 0.1 * g(gen);
  }
  const auto parents = extract_parents(dag, "R", d, dag.nodes);
  REQUIRE(parents.size() == 2);
  CHECK(parents[0].name == "A");
  CHECK(parents[0].coefficient > 0);
  CHECK(parents[0].coefficient == doctest::Approx(2.0).epsilon(0.05));
  CHECK(parents[1].coefficient < 0);

  Dag empty;
  empty.nodes = dag.nodes;
  CHECK(extract_parents(empty, "R", d, dag.nodes).empty());
}

TEST_CASE("learning over an aligned dataset adds the score node") {
  std::mt19937_64 gen(4);
  std::normal_distribution<double> g;
  AlignedDataset data;
  data.feature_names = {"f0", "f1", "f2"};
  data.features.resize(1000, 3);
  data.targets.resize(1000, 3);
  for (int i = 0; i < 1000; ++i) {
    for (int j = 0; j < 3; ++j) data.features(i, j) = g(gen);
    data.targets(i, 2) = data.features(i, 0) - data.features(i, 1) + 0.5 * g(gen);
    data.targets(i, 0) = g(gen);
    data.targets(i, 1) = g(gen);
    data.keys.push_back({std::to_string(i), 2000});
  }
  BootstrapOptions o;
  o.replicates = 10;
  const auto report = learn_causal_structure(data, Target::resilience, o);
  CHECK(report.dag.nodes.back() == "resilience");
  REQUIRE(report.parents.size() == 2);
  CHECK(report.parents[0].name == "f0");
  CHECK(report.parents[0].coefficient > 0);
  CHECK(report.parents[1].name == "f1");
  CHECK(report.parents[1].coefficient < 0);
  for (const auto& a : report.dag.arcs) CHECK(a.coefficient.has_value() == (a.to == "resilience"));
}

TEST_CASE("DAG exports") {
  Dag dag;
  dag.nodes = {"A", "B", "R"};
  dag.arcs = {{"A", "R", 0.9, -1.5}};
  dag.undirected = {{"A", "B", 0.6}};
  const auto j = dag_json(dag);
  CHECK(j["nodes"].size() == 3);
  CHECK(j["arcs"][0]["from"] == "A");
  CHECK(j["arcs"][0]["confidence"] == 0.9);
  CHECK(j["arcs"][0]["sign"] == "-");
  CHECK(j["undirected"][0]["b"] == "B");
  const auto dot = dag_dot(dag, "R");
  CHECK(dot.rfind("digraph", 0) == 0);
  CHECK(dot.find("\"A\" -> \"R\"") != std::string::npos);
  CHECK(dot.find("dir=none") != std::string::npos);
  CHECK(dot.find("filled") != std::string::npos);
}
