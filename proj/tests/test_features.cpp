#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <Eigen/QR>

#include "doctest.h"
#include "oracles.hpp"
#include "prime/error.hpp"
#include "prime/features.hpp"

using namespace prime;

namespace {

AlignedDataset make_dataset(std::vector<std::string> names, const Eigen::MatrixXd& x) {
  AlignedDataset d;
  d.feature_names = std::move(names);
  d.input_columns = d.feature_names;
  d.features = x;
  d.targets = Eigen::MatrixXd::Zero(x.rows(), 3);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    d.keys.push_back({std::to_string(10001 + i), 2017});
    d.targets(i, 2) = static_cast<double>(i);
  }
  return d;
}

/// n x k matrix with centered, orthonormal columns: exact zero correlations.
Eigen::MatrixXd orthonormal_columns(int n, int k, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> g;
  Eigen::MatrixXd m(n, k);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) m(i, j) = g(gen);
  m.rowwise() -= m.colwise().mean();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  return qr.householderQ() * Eigen::MatrixXd::Identity(n, k);
}

RegionYearScores score_row(std::string region, int year, double r) {
  RegionYearScores s;
  s.region_code = std::move(region);
  s.year = year;
  s.period = std::to_string(year);
  s.resilience = r;
  return s;
}

std::vector<std::string> retained(const AlignedDataset& d) { return d.feature_names; }

}  // namespace

TEST_CASE("alignment uses the previous socioeconomic year") {
  SocioPanel socio({"a", "b"});
  socio.insert("48041", 2016, {1, 2});
  socio.insert("48041", 2017, {3, 4});
  const std::vector<RegionYearScores> scores{score_row("48041", 2017, 0.5)};
  const auto d = align(scores, socio);
  REQUIRE(d.rows() == 1);
  CHECK(d.features(0, 0) == 1.0);
  CHECK(d.features(0, 1) == 2.0);
  CHECK(d.target(Target::resilience)(0) == 0.5);
  CHECK(d.lag == 1);
}

TEST_CASE("rows without the lag year are dropped and named") {
  SocioPanel socio({"a"});
  socio.insert("48041", 2017, {1});
  socio.insert("48043", 2016, {1});
  const std::vector<RegionYearScores> scores{score_row("48041", 2017, 0), score_row("48043", 2017, 0)};
  const auto d = align(scores, socio);
  CHECK(d.rows() == 1);
  REQUIRE(d.dropped_rows.size() == 1);
  CHECK(d.dropped_rows[0].find("48041/2017") != std::string::npos);

  const std::vector<RegionYearScores> none{score_row("48041", 2017, 0)};
  SocioPanel empty({"a"});
  try {
    align(none, empty);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()) == "no alignable rows");
  }
}

TEST_CASE("3 regions x 2 years with full coverage align to 6 rows") {
  SocioPanel socio({"a"});
  std::vector<RegionYearScores> scores;
  for (const char* r : {"48041", "48043", "48045"}) {
    for (int y : {2016, 2017, 2018}) socio.insert(r, y, {static_cast<double>(y)});
    for (int y : {2017, 2018}) scores.push_back(score_row(r, y, 0));
  }
  CHECK(align(scores, socio).rows() == 6);
}

TEST_CASE("socio insertion order never changes the aligned dataset") {
  std::vector<std::tuple<std::string, int, double>> rows;
  std::vector<RegionYearScores> scores;
  for (int r = 0; r < 5; ++r) {
    for (int y = 2010; y <= 2015; ++y) rows.emplace_back(std::to_string(48001 + r), y, r * 100.0 + y);
    for (int y = 2011; y <= 2015; ++y) scores.push_back(score_row(std::to_string(48001 + r), y, r + y));
  }
  auto build = [&](std::uint64_t seed) {
    auto shuffled = rows;
    std::mt19937_64 gen(seed);
    std::shuffle(shuffled.begin(), shuffled.end(), gen);
    SocioPanel socio({"a"});
    for (const auto& [r, y, v] : shuffled) socio.insert(r, y, {v});
    return align(scores, socio);
  };
  const auto a = build(1);
  for (std::uint64_t seed = 2; seed < 8; ++seed) {
    const auto b = build(seed);
    CHECK(a.keys == b.keys);
    CHECK(a.features == b.features);
    CHECK(a.targets == b.targets);
  }
}

TEST_CASE("correlation matrix examples") {
  Eigen::MatrixXd x(4, 4);
  x.col(0) << 1, 2, 3, 4;
  x.col(1) = 2 * x.col(0).array() + 3;
  x.col(2) = -x.col(0);
  x.col(3) << 1, 3, 2, 4;
  const auto c = correlation_matrix(make_dataset({"A", "B", "C", "D"}, x));
  CHECK(c.r(0, 1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(c.r(0, 2) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(c.r(0, 3) == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(oracle::pearson({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(0.8).epsilon(1e-14));
  for (int i = 0; i < 4; ++i) {
    CHECK(c.r(i, i) == 1.0);
    for (int j = 0; j < 4; ++j) {
      CHECK(c.r(i, j) == c.r(j, i));
      CHECK(std::abs(c.r(i, j)) <= 1.0);
    }
  }
}

TEST_CASE("correlation drops constant columns and needs two rows") {
  Eigen::MatrixXd x(3, 2);
  x << 1, 5, 2, 5, 4, 5;
  const auto c = correlation_matrix(make_dataset({"A", "K"}, x));
  CHECK(c.names == std::vector<std::string>{"A"});
  CHECK(c.dropped == std::vector<std::string>{"K"});
  CHECK(c.warnings.size() == 1);
  CHECK_THROWS_AS(correlation_matrix(make_dataset({"A"}, Eigen::MatrixXd::Ones(1, 1))), DataError);
}

TEST_CASE("correlation matches the oracle on random data") {
  std::mt19937_64 gen(4);
  std::normal_distribution<double> g;
  Eigen::MatrixXd x(50, 6);
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 6; ++j) x(i, j) = g(gen) + (j > 0 ? 0.5 * x(i, j - 1) : 0.0);
  const auto c = correlation_matrix(make_dataset({"a", "b", "c", "d", "e", "f"}, x));
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) {
      std::vector<double> a(x.col(i).data(), x.col(i).data() + 50), b(x.col(j).data(), x.col(j).data() + 50);
      CHECK(c.r(i, j) == doctest::Approx(oracle::pearson(a, b)).epsilon(1e-12));
    }
  }
}

TEST_CASE("pruning removes a column correlated with an earlier retained one") {
  const auto e = orthonormal_columns(200, 3, 1);
  Eigen::MatrixXd x(200, 3);
  x.col(0) = e.col(0);
  x.col(1) = 0.9 * e.col(0) + std::sqrt(1 - 0.81) * e.col(1);
  x.col(2) = e.col(2);
  const auto d = make_dataset({"A", "B", "C"}, x);
  const auto p = prune_collinear(d, {0.7, {}});
  CHECK(retained(p) == std::vector<std::string>{"A", "C"});
  REQUIRE(p.pruned.size() == 1);
  CHECK(p.pruned[0].name == "B");
  CHECK(p.pruned[0].reason == "correlation");
  CHECK(p.pruned[0].trigger == "A");
  CHECK(p.pruned[0].r == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(p.input_columns == std::vector<std::string>{"A", "B", "C"});

  CHECK(retained(prune_collinear(d, {1.0, {}})) == std::vector<std::string>{"A", "B", "C"});
}

TEST_CASE("pruning compares only against retained columns") {
  // r(A,B) = 0.8, r(B,C) = 0.8, r(A,C) = 0.3, built from orthonormal parts.
  const auto e = orthonormal_columns(300, 3, 2);
  const double b = (0.8 - 0.8 * 0.3) / 0.6;
  const double c = std::sqrt(1 - 0.09 - b * b);
  Eigen::MatrixXd x(300, 3);
  x.col(0) = e.col(0);
  x.col(1) = 0.8 * e.col(0) + 0.6 * e.col(1);
  x.col(2) = 0.3 * e.col(0) + b * e.col(1) + c * e.col(2);
  const auto d = make_dataset({"A", "B", "C"}, x);
  const auto r = correlation_matrix(d).r;
  CHECK(r(0, 1) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(r(1, 2) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(r(0, 2) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(retained(prune_collinear(d, {0.7, {}})) == std::vector<std::string>{"A", "C"});
}

TEST_CASE("negative correlation prunes just like positive") {
  const auto e = orthonormal_columns(100, 2, 3);
  Eigen::MatrixXd x(100, 2);
  x.col(0) = e.col(0);
  x.col(1) = -0.95 * e.col(0) + std::sqrt(1 - 0.9025) * e.col(1);
  CHECK(retained(prune_collinear(make_dataset({"A", "B"}, x), {})) == std::vector<std::string>{"A"});
}

TEST_CASE("manual removals apply first, unknown names fail") {
  const auto e = orthonormal_columns(100, 3, 4);
  Eigen::MatrixXd x(100, 3);
  x.col(0) = e.col(0);
  x.col(1) = 0.9 * e.col(0) + std::sqrt(0.19) * e.col(1);
  x.col(2) = e.col(2);
  const auto d = make_dataset({"A", "B", "C"}, x);
  // Dropping A by hand lets B survive the correlation pass.
  const auto p = prune_collinear(d, {0.7, {"A"}});
  CHECK(retained(p) == std::vector<std::string>{"B", "C"});
  CHECK(p.pruned[0] == PrunedVariable{"A", "manual", "", 0.0});
  CHECK_THROWS_AS(prune_collinear(d, {0.7, {"Z"}}), ValidationError);
  CHECK_THROWS_AS(prune_collinear(d, {0.0, {}}), ValidationError);
  CHECK_THROWS_AS(prune_collinear(d, {1.5, {}}), ValidationError);
}

TEST_CASE("pruning is idempotent and leaves retained pairs under the threshold") {
  std::mt19937_64 gen(8);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd x(80, 8);
    for (int i = 0; i < 80; ++i) {
      for (int j = 0; j < 8; ++j) x(i, j) = g(gen) + (j > 0 ? (trial % 3) * 0.7 * x(i, j - 1) : 0.0);
    }
    const auto d = make_dataset({"a", "b", "c", "d", "e", "f", "g", "h"}, x);
    for (double threshold : {0.3, 0.5, 0.7, 0.9}) {
      const auto once = prune_collinear(d, {threshold, {}});
      const auto twice = prune_collinear(once, {threshold, {}});
      CHECK(retained(once) == retained(twice));
      const auto r = correlation_matrix(once).r;
      for (Eigen::Index i = 0; i < r.rows(); ++i)
        for (Eigen::Index j = 0; j < i; ++j) CHECK(std::abs(r(i, j)) <= threshold);
    }
  }
}

TEST_CASE("scaling maps features to [0,1] and keeps the parameters") {
  Eigen::MatrixXd x(3, 2);
  x << -1, 7, 0, 7, 3, 7;
  auto d = make_dataset({"A", "K"}, x);
  d.targets(1, 0) = 42;
  const auto s = scale_features(d);
  CHECK(s.features(0, 0) == 0.0);
  CHECK(s.features(1, 0) == 0.25);
  CHECK(s.features(2, 0) == 1.0);
  CHECK(s.features.col(1).isZero());
  CHECK(s.targets == d.targets);
  REQUIRE(s.scaling.size() == 2);
  CHECK(s.scaling[0].min == -1.0);
  CHECK(s.scaling[0].max == 3.0);
  CHECK(s.warnings.size() == 1);
}

TEST_CASE("row split partitions and is seeded") {
  const auto s = split_rows(10, {0.8, 42});
  CHECK(s.train.size() == 8);
  CHECK(s.test.size() == 2);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 10);
  CHECK(std::is_sorted(s.train.begin(), s.train.end()));
  CHECK(std::is_sorted(s.test.begin(), s.test.end()));

  const auto again = split_rows(10, {0.8, 42});
  CHECK(again.train == s.train);

  CHECK(split_rows(7, {0.5, 1}).train.size() == 4);  // round half away from zero
  CHECK_THROWS_AS(split_rows(10, {1.0, 1}), ValidationError);
  CHECK_THROWS_AS(split_rows(10, {0.0, 1}), ValidationError);
  CHECK_THROWS_AS(split_rows(2, {0.1, 1}), ValidationError);
}

TEST_CASE("seeds 1 and 2 give different, pinned partitions of 100 rows") {
  const auto a = split_rows(100, {0.8, 1});
  const auto b = split_rows(100, {0.8, 2});
  CHECK(a.test != b.test);
  CHECK(a.test == std::vector<std::size_t>{3, 4, 24, 28, 32, 38, 41, 42, 47, 49,
                                           54, 56, 60, 63, 67, 74, 76, 77, 78, 84});
  CHECK(b.test == std::vector<std::size_t>{1, 3, 11, 22, 25, 27, 28, 34, 36, 48,
                                           51, 58, 59, 60, 62, 72, 76, 77, 92, 98});
}

TEST_CASE("take_rows keeps the requested order") {
  Eigen::MatrixXd x(4, 1);
  x << 10, 11, 12, 13;
  const auto d = make_dataset({"A"}, x);
  const std::size_t rows[] = {3, 0};
  const auto t = take_rows(d, rows);
  CHECK(t.rows() == 2);
  CHECK(t.features(0, 0) == 13);
  CHECK(t.keys[1] == d.keys[0]);
}
