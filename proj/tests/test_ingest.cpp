#include <cmath>
#include <cstring>
#include <sstream>

#include <fmt/format.h>

#include "doctest.h"
#include "prime/csv.hpp"
#include "prime/error.hpp"
#include "prime/ingest.hpp"
#include "prime/rng.hpp"

using namespace prime;

namespace {

const char* kHeader = "UniqueCode,Disaster,Year,DamageRIM,Duration (days)\n";

HazardTable read_text(const std::string& text, const HazardSchema& schema = {}) {
  std::istringstream in(text);
  return read_hazard_events(in, schema);
}

SocioPanel one_series(std::vector<std::pair<int, double>> points) {
  SocioPanel panel({"x"});
  for (auto [year, v] : points) panel.insert("48041", year, {v});
  return panel;
}

}  // namespace

TEST_CASE("csv reader handles quoting, embedded newlines, CRLF and BOM") {
  std::istringstream in("\xEF\xBB\xBF" "a,\"b,c\",\"say \"\"hi\"\"\"\r\n\"multi\nline\",2,3\n");
  const auto rows = csv::read_all(in);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].fields == std::vector<std::string>{"a", "b,c", "say \"hi\""});
  CHECK(rows[1].fields[0] == "multi\nline");
  CHECK(rows[1].line == 2);
  CHECK(csv::escape("plain") == "plain");
  CHECK(csv::escape("a,b") == "\"a,b\"");
  CHECK(csv::escape("q\"") == "\"q\"\"\"");
}

TEST_CASE("a documented hazard row loads as one event") {
  const auto t = read_text(std::string(kHeader) + "48041,Flood,2017,12.5,3\n");
  REQUIRE(t.events.size() == 1);
  const auto& e = t.events[0];
  CHECK(e.region_code == "48041");
  CHECK(e.hazard_type == "Flood");
  CHECK(e.year == 2017);
  CHECK(e.damage_per_capita == 12.5);
  CHECK(e.duration_days == 3.0);
  CHECK_FALSE(e.date.has_value());
  CHECK(t.report.rejections.empty());
}

TEST_CASE("header-only hazard file gives no events and no rejections") {
  const auto t = read_text(kHeader);
  CHECK(t.events.empty());
  CHECK(t.report.rejections.empty());
  CHECK(t.report.rows_in == 0);
}

TEST_CASE("zero duration is rejected with a reason") {
  const auto t = read_text(std::string(kHeader) + "48041,Flood,2017,12.5,0\n");
  CHECK(t.events.empty());
  REQUIRE(t.report.rejections.size() == 1);
  CHECK(t.report.rejections[0].reason == "nonpositive duration");
  CHECK(t.report.rejections[0].line == 2);
}

TEST_CASE("bad hazard rows are rejected, never fatal") {
  const auto t = read_text(std::string(kHeader) +
                           "48041,Flood,2017,abc,3\n"
                           "4804,Flood,2017,1,3\n"
                           "48041,Flood,2017,-1,3\n"
                           "48041,,2017,1,3\n"
                           "48041,Flood,20x7,1,3\n"
                           "48041,Flood,2017,1\n"
                           "48041,Tornado,2018,0,0.5\n");
  CHECK(t.events.size() == 1);
  CHECK(t.report.rejections.size() == 6);
  CHECK(t.report.rows_in == t.events.size() + t.report.rejections.size());
  CHECK(t.report.rejections[0].reason.find("unparseable numeric cell") != std::string::npos);
  CHECK(t.report.rejections[1].reason.find("invalid region code") != std::string::npos);
  CHECK(t.report.rejections[2].reason == "negative damage");
}

TEST_CASE("missing required column is a schema error naming it") {
  try {
    read_text("UniqueCode,Disaster,Year,DamageRIM\n48041,Flood,2017,1\n");
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("Duration (days)") != std::string::npos);
  }
}

TEST_CASE("column mapping and study bounds come from the schema") {
  HazardSchema schema;
  schema.region_column = "fips";
  schema.hazard_column = "kind";
  schema.year_column = "yr";
  schema.damage_column = "loss";
  schema.duration_column = "days";
  schema.study_years = YearRange{2000, 2010};
  const auto t = read_text("fips,kind,yr,loss,days\n48041,Flood,2005,1,1\n48041,Flood,2015,1,1\n", schema);
  CHECK(t.events.size() == 1);
  REQUIRE(t.report.rejections.size() == 1);
  CHECK(t.report.rejections[0].reason == "year out of bounds");
}

TEST_CASE("rows_in always equals events plus rejections (randomized)") {
  Rng rng(11);
  const char* cells[] = {"1", "0", "-2", "x", "3.5", ""};
  for (int trial = 0; trial < 50; ++trial) {
    std::string text = kHeader;
    const auto rows = rng.below(20);
    for (std::uint64_t r = 0; r < rows; ++r) {
      text += "48041,Flood,2017," + std::string(cells[rng.below(6)]) + "," + cells[rng.below(6)] + "\n";
    }
    const auto t = read_text(text);
    CHECK(t.report.rows_in == rows);
    CHECK(t.report.rows_in == t.events.size() + t.report.rejections.size());
  }
}

TEST_CASE("write then read round-trips the event list") {
  Rng rng(3);
  std::vector<HazardEvent> events;
  const char* types[] = {"Flood", "Hurricane/Tropical Storm", "Winter, Ice \"storm\""};
  for (int i = 0; i < 200; ++i) {
    HazardEvent e;
    e.region_code = fmt::format("{:05d}", rng.below(99999));
    e.hazard_type = types[rng.below(3)];
    e.year = 1990 + static_cast<int>(rng.below(30));
    e.damage_per_capita = rng.uniform() * 1000.0;
    e.duration_days = 0.1 + rng.uniform() * 20.0;
    if (i % 3 == 0) {
      e.date = std::chrono::year_month_day{std::chrono::year{e.year}, std::chrono::month{1 + static_cast<unsigned>(rng.below(12))},
                                           std::chrono::day{1 + static_cast<unsigned>(rng.below(28))}};
    }
    events.push_back(e);
  }
  std::stringstream buf;
  write_hazard_events(buf, events);
  const auto back = read_hazard_events(buf);
  CHECK(back.report.rejections.empty());
  CHECK(back.events == events);

  // Without any dates the optional column is left out and still round-trips.
  for (auto& e : events) e.date.reset();
  std::stringstream plain;
  write_hazard_events(plain, events);
  CHECK(plain.str().rfind(kHeader, 0) == 0);
  CHECK(read_hazard_events(plain).events == events);
}

TEST_CASE("population panel loads and validates") {
  std::istringstream ok("UniqueCode,Year,Population\n48041,2016,1000\n48041,2018,1100\n");
  const auto pop = read_population(ok);
  CHECK(pop.size() == 2);
  CHECK(pop.find("48041", 2018) == 1100);
  CHECK_FALSE(pop.find("48041", 2017).has_value());

  std::istringstream dup("UniqueCode,Year,Population\n48041,2016,1000\n48041,2016,1200\n");
  try {
    read_population(dup);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("48041/2016") != std::string::npos);
  }

  std::istringstream neg("UniqueCode,Year,Population\n48041,2016,-5\n");
  try {
    read_population(neg);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("nonpositive population") != std::string::npos);
  }
}

TEST_CASE("socio panel keeps every extra column as an indicator") {
  std::istringstream in("UniqueCode,Year,pct_over_65,my_custom_index\n48041,2016,14.5,3\n48041,2017,,4\n");
  const auto panel = read_socio_panel(in);
  CHECK(panel.indicators() == std::vector<std::string>{"pct_over_65", "my_custom_index"});
  CHECK(panel.size() == 2);
  CHECK(std::isnan((*panel.find("48041", 2017))[0]));
  CHECK(default_indicators().size() == 21);
}

TEST_CASE("interpolation passes observed values through") {
  const auto panel = one_series({{2000, 10}, {2010, 20}, {2020, 30}});
  const auto out = interpolate_socio_panel(panel, {2000, 2020}).panel;
  CHECK(out.size() == 21);
  CHECK((*out.find("48041", 2010))[0] == 20.0);
  CHECK((*out.find("48041", 2000))[0] == 10.0);
}

TEST_CASE("constant series interpolates to the constant") {
  const auto out = interpolate_socio_panel(one_series({{2000, 10}, {2020, 10}}), {2000, 2020}).panel;
  for (int y = 2000; y <= 2020; ++y) CHECK((*out.find("48041", y))[0] == 10.0);
}

TEST_CASE("two support points reduce to the chord") {
  const double xs[] = {2010, 2020};
  const double ys[] = {0, 10};
  // Hand weighted least squares: both points sit 5 years from 2015, so their
  // tricube weights are equal and the fit is the line through them.
  CHECK(loess_at(xs, ys, 2015, 0.75) == doctest::Approx(5.0).epsilon(1e-12));
  const auto out = interpolate_socio_panel(one_series({{2010, 0}, {2020, 10}}), {2010, 2020}).panel;
  CHECK(std::abs((*out.find("48041", 2015))[0] - 5.0) <= 1e-9);
}

TEST_CASE("loess reproduces a straight line exactly and validates inputs") {
  std::vector<double> x, y;
  for (int i = 0; i < 8; ++i) {
    x.push_back(2000 + 3 * i);
    y.push_back(4.0 - 0.5 * x.back());
  }
  for (double at : {2001.0, 2010.0, 2020.5}) CHECK(loess_at(x, y, at, 0.5) == doctest::Approx(4.0 - 0.5 * at));
  const double one[] = {1};
  CHECK_THROWS_AS(loess_at(one, one, 1, 0.75), NumericalError);
  CHECK_THROWS_AS(loess_at(x, y, 2001, 0.0), ValidationError);
  CHECK_THROWS_AS(loess_at(x, y, 2001, 1.5), ValidationError);
}

TEST_CASE("clamped interpolation stays inside the observed range") {
  Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<std::pair<int, double>> pts;
    double v = rng.uniform(-5, 5);
    for (int year = 2000; year <= 2020; year += 1 + static_cast<int>(rng.below(5))) {
      v += rng.uniform(0, 3);  // monotone
      pts.emplace_back(year, v);
    }
    if (pts.size() < 2) continue;
    const auto out = interpolate_socio_panel(one_series(pts), {1995, 2025}).panel;
    for (int y = 1995; y <= 2025; ++y) {
      const double got = (*out.find("48041", y))[0];
      CHECK(got >= pts.front().second);
      CHECK(got <= pts.back().second);
    }
  }
}

TEST_CASE("short series exclude the region and record it") {
  SocioPanel panel({"a", "b"});
  panel.insert("48041", 2000, {1, 2});
  panel.insert("48041", 2010, {1, NAN});
  panel.insert("48043", 2000, {1, 2});
  panel.insert("48043", 2010, {3, 4});
  const auto r = interpolate_socio_panel(panel, {2000, 2010});
  CHECK(r.excluded_regions == std::vector<std::string>{"48041"});
  REQUIRE(r.notes.size() == 1);
  CHECK(r.notes[0].find("'b'") != std::string::npos);
  CHECK(r.panel.regions() == std::vector<std::string>{"48043"});
  for (const auto& [key, row] : r.panel.rows()) {
    for (double x : row) CHECK(std::isfinite(x));
  }
}

TEST_CASE("interpolation passes fixture observations through bit-for-bit") {
  const auto socio = load_socio_panel(std::string(PRIME_FIXTURE_DIR) + "/socio.csv");
  const auto filled = interpolate_socio_panel(socio, {1999, 2020}).panel;
  std::size_t compared = 0;
  for (const auto& [key, values] : socio.rows()) {
    const auto* out = filled.find(key.region, key.year);
    REQUIRE(out != nullptr);
    for (std::size_t j = 0; j < values.size(); ++j) {
      CHECK(std::memcmp(&values[j], &(*out)[j], sizeof(double)) == 0);
      ++compared;
    }
  }
  CHECK(compared > 40000);
}

TEST_CASE("geometry is keyed by UniqueCode with name fallback") {
  const auto doc = nlohmann::json::parse(R"({"type":"FeatureCollection","features":[
    {"type":"Feature","properties":{"UniqueCode":"48041","name":"Brazos"},
     "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,0]]]}},
    {"type":"Feature","properties":{"UniqueCode":"48043"},
     "geometry":{"type":"MultiPolygon","coordinates":[[[[0,0],[1,0],[1,1],[0,0]]]]}}]})");
  const auto g = parse_geometry(doc);
  CHECK(g.size() == 2);
  CHECK(g.at("48041").name == "Brazos");
  CHECK(g.at("48043").name == "48043");
  CHECK_THROWS_AS(parse_geometry(nlohmann::json::parse(R"({"type":"Feature"})")), DataError);
}
