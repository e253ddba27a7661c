#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "resflow/errors.hpp"
#include "resflow/metrics.hpp"
#include "resflow/rng.hpp"

using namespace resflow;
using namespace resflow::metrics;

namespace {

// Reference NSE in extended precision via the expanded sums of squares.
double reference_nse(const std::vector<double>& p, const std::vector<double>& o) {
  long double so = 0, soo = 0, err = 0;
  for (std::size_t i = 0; i < o.size(); ++i) {
    so += o[i];
    soo += static_cast<long double>(o[i]) * o[i];
    const long double d = static_cast<long double>(p[i]) - o[i];
    err += d * d;
  }
  const long double n = static_cast<long double>(o.size());
  return static_cast<double>(1.0L - err / (soo - so * so / n));
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

PooledSeries toy_series() {
  PooledSeries s({"A", "B"}, 2);
  for (int t = 0; t < 5; ++t) {
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t k = 0; k < 2; ++k) {
        const double obs = 10.0 + t * (1.0 + static_cast<double>(r)) + static_cast<double>(k);
        s.add(r, k, obs + (t % 2 ? 0.5 : -0.5) * static_cast<double>(k + r), obs);
      }
    }
  }
  return s;
}

}  // namespace

TEST(Nse, HandExamples) {
  std::vector<double> y{1, 2, 3}, yhat{1, 2, 5};
  EXPECT_EQ(nse(yhat, y), -1.0);
  EXPECT_EQ(nse(y, y), 1.0);
  std::vector<double> mean(3, 2.0);
  EXPECT_EQ(nse(mean, y), 0.0);
}

TEST(Nse, MatchesReferenceOnRandomSeries) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = 2 + rng.below(200);
    std::vector<double> o(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      o[i] = rng.uniform(0.0, 500.0);
      p[i] = o[i] + rng.normal(0.0, 50.0);
    }
    const double ref = reference_nse(p, o);
    EXPECT_LE(std::abs(nse(p, o) - ref), 1e-10 * std::max(1.0, std::abs(ref)));
  }
}

TEST(Nse, ShiftInvariant) {
  std::vector<double> o{3, 1, 4, 1, 5, 9, 2, 6}, p{2, 1, 5, 2, 4, 8, 3, 6};
  std::vector<double> o2 = o, p2 = p;
  for (auto& v : o2) v += 16.0;
  for (auto& v : p2) v += 16.0;
  EXPECT_EQ(nse(p, o), nse(p2, o2));
}

TEST(Nse, ConstantObservationsAreAnError) {
  std::vector<double> o(4, 7.0), p{1, 2, 3, 4};
  EXPECT_THROW(nse(p, o), UndefinedVarianceError);
  EXPECT_THROW(nse(std::vector<double>{1.0}, std::vector<double>{1.0}), std::invalid_argument);
  EXPECT_THROW(nse(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(Categorize, CaptionBands) {
  EXPECT_EQ(categorize(0.76), Category::very_good);
  EXPECT_EQ(categorize(0.75), Category::good);
  EXPECT_EQ(categorize(0.70), Category::good);
  EXPECT_EQ(categorize(0.65), Category::satisfactory);
  EXPECT_EQ(categorize(0.60), Category::satisfactory);
  EXPECT_EQ(categorize(0.50), Category::acceptable);
  EXPECT_EQ(categorize(0.45), Category::acceptable);
  EXPECT_EQ(categorize(0.40), Category::unsatisfactory);
  EXPECT_EQ(categorize(-3.0), Category::unsatisfactory);
}

TEST(Categorize, Monotone) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(-1.0, 1.0), b = rng.uniform(-1.0, 1.0);
    if (a <= b) EXPECT_GE(static_cast<int>(categorize(a)), static_cast<int>(categorize(b)));
  }
}

TEST(Report, OverallIsMeanOfMatrix) {
  auto r = build_report(toy_series(), 3, "abc");
  ASSERT_EQ(r.nse.size(), 4u);
  double mean = 0.0;
  for (double v : r.nse) {
    EXPECT_LE(v, 1.0);
    mean += v / 4.0;
  }
  EXPECT_NEAR(r.overall_nse, mean, 1e-12);
  for (std::size_t k = 0; k < 2; ++k) {
    std::size_t total = 0;
    for (auto c : r.categories[k]) total += c;
    EXPECT_EQ(total, 2u);
  }
  EXPECT_EQ(r.at(0, 0), 1.0);
}

TEST(Report, ConstantSeriesNamesReservoir) {
  PooledSeries s({"FLAT"}, 1);
  s.add(0, 0, 1.0, 2.0);
  s.add(0, 0, 3.0, 2.0);
  try {
    build_report(s, 0, "");
    FAIL();
  } catch (const UndefinedVarianceError& e) {
    EXPECT_NE(std::string(e.what()).find("FLAT"), std::string::npos);
  }
  EXPECT_THROW(build_report(PooledSeries({}, 2), 0, ""), DataError);
}

TEST(Report, EmitWritesDeterministicFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "resflow_report_test";
  std::filesystem::remove_all(dir);
  auto r = build_report(toy_series(), 3, "abc");
  std::vector<EdgeRow> edges{{"A", "B", 0.4, false}, {"B", "A", NAN, true}};
  emit_report(r, edges, {}, dir);
  for (auto f : {"report.json", "nse_by_day.csv", "categories.csv", "edges_final.csv", "nse_by_day.svg",
                 "categories.svg", "graph.svg"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  const auto first = slurp(dir / "report.json");
  emit_report(r, edges, {}, dir);
  EXPECT_EQ(first, slurp(dir / "report.json"));
  auto j = nlohmann::json::parse(first);
  EXPECT_EQ(j["config_hash"], "abc");
  EXPECT_DOUBLE_EQ(j["overall_nse"].get<double>(), r.overall_nse);

  std::ifstream csv(dir / "nse_by_day.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(csv, line);
  EXPECT_EQ(line, "reservoir,lead_day,nse,category");
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 2u * 2u);
  EXPECT_EQ(slurp(dir / "edges_final.csv"), "src,dst,alpha_tilde,pruned\nA,B,0.4,0\nB,A,nan,1\n");
  std::filesystem::remove_all(dir);
}

TEST(Report, EmptyReportWritesNothing) {
  const auto dir = std::filesystem::temp_directory_path() / "resflow_report_empty";
  std::filesystem::remove_all(dir);
  EXPECT_THROW(emit_report(EvalReport{}, {}, {}, dir), DataError);
  EXPECT_FALSE(std::filesystem::exists(dir));
}
