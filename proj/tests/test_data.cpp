#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "resflow/data.hpp"
#include "resflow/errors.hpp"
#include "resflow/synth.hpp"

using namespace resflow;
using namespace resflow::data;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("resflow_data_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Pearson correlation of x[t - lag] against y[t], written out longhand.
double lagged_correlation(const std::vector<double>& x, const std::vector<double>& y, std::size_t lag) {
  const std::size_t n = y.size() - lag;
  long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const long double a = x[t], b = y[t + lag];
    sx += a;
    sy += b;
    sxx += a * a;
    syy += b * b;
    sxy += a * b;
  }
  const long double cov = sxy - sx * sy / n;
  return static_cast<double>(cov / std::sqrt((sxx - sx * sx / n) * (syy - sy * sy / n)));
}

RecordPanel ramp_panel(std::size_t reservoirs, std::size_t days) {
  RecordPanel p;
  for (std::size_t r = 0; r < reservoirs; ++r) p.ids.push_back("R" + std::to_string(r));
  for (std::size_t t = 0; t < days; ++t) p.dates.push_back(parse_date("2001-03-01") + std::chrono::days(int(t)));
  p.values.resize(reservoirs * days * kFeatureCount);
  for (std::size_t r = 0; r < reservoirs; ++r)
    for (std::size_t t = 0; t < days; ++t)
      for (std::size_t f = 0; f < kFeatureCount; ++f)
        p.at(r, t, f) = 100.0 * (r + 1) + std::sin(0.3 * t + f) * (f + 2.0) + 0.01 * t;
  return p;
}

}  // namespace

TEST(Dates, ParseFormatRoundTrip) {
  EXPECT_EQ(format_date(parse_date("2012-02-29")), "2012-02-29");
  EXPECT_EQ(day_of_year(parse_date("2013-12-31")), 365);
  EXPECT_EQ(day_of_year(parse_date("2013-01-01")), 1);
  EXPECT_THROW(parse_date("2013-02-30"), DataError);
  EXPECT_THROW(parse_date("13-2-3"), DataError);
}

TEST(Windows, CountFormula) {
  EXPECT_EQ(window_count(40, 30, 7), 4u);
  EXPECT_EQ(window_count(36, 30, 7), 0u);
  EXPECT_EQ(window_count(37, 30, 7), 1u);
  EXPECT_EQ(window_count(40, 30, 7, 2), 2u);
  for (std::size_t len = 0; len < 80; ++len) {
    std::size_t brute = 0;
    for (std::size_t s = 0; s + 37 <= len; ++s) ++brute;
    EXPECT_EQ(window_count(len, 30, 7), brute);
  }
}

TEST(Regularize, ShortGapIsInterpolated) {
  std::vector<std::pair<Date, DailyRow>> raw;
  const auto d0 = parse_date("2010-01-01");
  for (int t = 0; t < 10; ++t) {
    if (t >= 3 && t <= 5) continue;
    raw.push_back({d0 + std::chrono::days(t), {10.0 * t, 1.0, 2.0}});
  }
  auto s = regularize("A", raw, 10);
  ASSERT_EQ(s.rows.size(), 10u);
  EXPECT_DOUBLE_EQ(s.rows[2][kInflow], 20.0);
  EXPECT_DOUBLE_EQ(s.rows[3][kInflow], 30.0);
  EXPECT_DOUBLE_EQ(s.rows[4][kInflow], 40.0);
  EXPECT_DOUBLE_EQ(s.rows[5][kInflow], 50.0);
  EXPECT_DOUBLE_EQ(s.rows[6][kInflow], 60.0);
}

TEST(Regularize, TenDayGapAcceptedElevenRejected) {
  const auto d0 = parse_date("2010-01-01");
  auto make = [&](int gap) {
    std::vector<std::pair<Date, DailyRow>> raw{{d0, {1, 1, 1}}, {d0 + std::chrono::days(gap + 1), {2, 2, 2}}};
    return regularize("B", raw, 10);
  };
  EXPECT_NO_THROW(make(10));
  EXPECT_THROW(make(11), DataError);
}

TEST(Regularize, DuplicateDateRejected) {
  const auto d0 = parse_date("2010-01-01");
  EXPECT_THROW(regularize("C", {{d0, {1, 1, 1}}, {d0, {2, 2, 2}}}, 10), DataError);
}

TEST(Ingest, RejectsLongGapReservoirAndAligns) {
  const auto dir = scratch("ingest");
  std::ofstream(dir / "reservoirs.csv") << "id,lat,lon,elevation_m\nA,40,-110,2000\nB,40,-110.2,1900\nC,40,-110.4,1800\n";
  {
    std::ofstream a(dir / "A.csv");
    a << "date,inflow_cfs,precip_mm,temp_c,extra\n";
    for (int t = 0; t < 20; ++t) a << format_date(parse_date("2010-01-01") + std::chrono::days(t)) << "," << t << ",1,2,9\n";
    std::ofstream b(dir / "B.csv");
    b << "date,inflow_cfs,precip_mm,temp_c\n";
    for (int t = 5; t < 30; ++t) {
      if (t == 10 || t == 11) continue;
      b << format_date(parse_date("2010-01-01") + std::chrono::days(t)) << "," << 2 * t << ",,3\n";
    }
    std::ofstream c(dir / "C.csv");
    c << "date,inflow_cfs,precip_mm,temp_c\n";
    c << "2010-01-01,1,1,1\n2010-01-13,1,1,1\n";
  }
  // B's precipitation is blank throughout: rejected along with C's 11-day gap.
  auto res = ingest(dir, dir / "reservoirs.csv");
  ASSERT_EQ(res.panel.ids, std::vector<std::string>{"A"});
  EXPECT_EQ(res.metas.size(), 1u);
  int rejected = 0, warned = 0;
  for (const auto& d : res.diagnostics) {
    rejected += d.rfind("rejected", 0) == 0;
    warned += d.find("extra") != std::string::npos;
  }
  EXPECT_EQ(rejected, 2);
  EXPECT_EQ(warned, 1);
  std::filesystem::remove_all(dir);
}

TEST(Ingest, TrimsToCommonOverlapAndFillsGaps) {
  const auto dir = scratch("overlap");
  std::ofstream(dir / "reservoirs.csv") << "id,lat,lon,elevation_m\nA,40,-110,2000\nB,40,-110.2,1900\n";
  {
    std::ofstream a(dir / "A.csv");
    a << "date,inflow_cfs,precip_mm,temp_c\n";
    for (int t = 0; t < 20; ++t) a << format_date(parse_date("2010-01-01") + std::chrono::days(t)) << "," << t << ",1,2\n";
    std::ofstream b(dir / "B.csv");
    b << "date,inflow_cfs,precip_mm,temp_c\n";
    for (int t = 5; t < 30; ++t) {
      if (t >= 10 && t <= 12) continue;
      b << format_date(parse_date("2010-01-01") + std::chrono::days(t)) << "," << 2 * t << ",0.5,3\n";
    }
  }
  auto res = ingest(dir, dir / "reservoirs.csv");
  ASSERT_EQ(res.panel.reservoir_count(), 2u);
  EXPECT_EQ(format_date(res.panel.dates.front()), "2010-01-06");
  EXPECT_EQ(format_date(res.panel.dates.back()), "2010-01-20");
  EXPECT_DOUBLE_EQ(res.panel.at(1, 6, kInflow), 22.0);  // 2010-01-12 interpolated
  EXPECT_EQ(res.full_records[1].rows.size(), 25u);
  std::filesystem::remove_all(dir);
}

TEST(Ingest, DisjointRecordsHaveNoOverlap) {
  const auto dir = scratch("disjoint");
  std::ofstream(dir / "reservoirs.csv") << "id,lat,lon,elevation_m\nA,40,-110,2000\nB,40,-110.2,1900\n";
  std::ofstream(dir / "A.csv") << "date,inflow_cfs,precip_mm,temp_c\n2010-01-01,1,1,1\n2010-01-02,1,1,1\n";
  std::ofstream(dir / "B.csv") << "date,inflow_cfs,precip_mm,temp_c\n2011-01-01,1,1,1\n2011-01-02,1,1,1\n";
  EXPECT_THROW(ingest(dir, dir / "reservoirs.csv"), DataError);
  std::filesystem::remove_all(dir);
}

TEST(Ingest, IdempotentOnEmittedPanel) {
  const auto dir = scratch("idempotent");
  auto panel = ramp_panel(3, 50);
  write_panel(dir, panel);
  geo::write_metadata(dir / "reservoirs.csv",
                      {{"R0", 40, -110, 3000}, {"R1", 40, -110.1, 2900}, {"R2", 40, -110.2, 2800}});
  auto res = ingest(dir, dir / "reservoirs.csv");
  EXPECT_TRUE(res.diagnostics.empty());
  EXPECT_EQ(res.panel, panel);
  std::filesystem::remove_all(dir);
}

TEST(Scaling, TrainStatisticsAndInverse) {
  auto panel = ramp_panel(2, 200);
  auto plan = SplitPlan::chronological(200);
  auto ds = scale_and_window(panel, plan, {30, 7, 1});
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      double sum = 0, sq = 0;
      for (std::size_t t = 0; t < plan.train_end; ++t) sum += ds.stats.scale(r, f, panel.at(r, t, f));
      const double mu = sum / plan.train_end;
      for (std::size_t t = 0; t < plan.train_end; ++t) sq += std::pow(ds.stats.scale(r, f, panel.at(r, t, f)) - mu, 2);
      EXPECT_NEAR(mu, 0.0, 1e-6);
      EXPECT_NEAR(std::sqrt(sq / plan.train_end), 1.0, 1e-3);
      for (std::size_t t = 0; t < panel.day_count(); ++t) {
        const double x = panel.at(r, t, f);
        EXPECT_LE(std::abs(ds.stats.unscale(r, f, ds.stats.scale(r, f, x)) - x), 1e-6 * std::abs(x));
      }
    }
  }
}

TEST(Scaling, ConstantFeatureNamesReservoir) {
  auto panel = ramp_panel(2, 100);
  for (std::size_t t = 0; t < 100; ++t) panel.at(1, t, kTemp) = 4.0;
  try {
    fit_scaling(panel, 0, 70);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("R1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("temp_c"), std::string::npos);
  }
}

TEST(Windows, NoStraddlingAndNoLeakage) {
  auto panel = ramp_panel(2, 300);
  auto plan = SplitPlan::chronological(300);
  auto ds = scale_and_window(panel, plan, {30, 7, 1});
  for (auto s : {Split::train, Split::validation, Split::test}) {
    const auto [begin, end] = plan.range(s);
    EXPECT_EQ(ds.windows(s).size(), window_count(end - begin, 30, 7));
    for (auto start : ds.windows(s)) {
      EXPECT_GE(start, begin);
      EXPECT_LE(start + 37, end);
    }
  }
  auto w = make_window(ds, ds.validation.front());
  const auto hist_last = panel.dates[ds.validation.front() + 29];
  const auto target_first = panel.dates[ds.validation.front() + 30];
  EXPECT_LT(hist_last, target_first);
  EXPECT_EQ(w.start, panel.dates[ds.validation.front()]);
  EXPECT_DOUBLE_EQ(w.targets[1 * 7 + 0], ds.stats.scale(1, kInflow, panel.at(1, ds.validation.front() + 30, kInflow)));
  EXPECT_DOUBLE_EQ(w.history[(29 * 2 + 1) * 3 + 2], ds.stats.scale(1, 2, panel.at(1, ds.validation.front() + 29, 2)));

  auto batch = make_batch(ds, {ds.train[0], ds.train[5]});
  EXPECT_EQ(batch.history.shape(), (ad::Shape{2, 30, 2, 3}));
  EXPECT_EQ(batch.targets.shape(), (ad::Shape{2, 2, 7}));
}

TEST(Synth, DeterministicFiles) {
  synth::SynthConfig cfg;
  cfg.n_days = 400;
  const auto a = scratch("synth_a"), b = scratch("synth_b");
  synth::write_basin(a, synth::generate_basin(cfg));
  synth::write_basin(b, synth::generate_basin(cfg));
  for (const auto& entry : std::filesystem::directory_iterator(a)) {
    EXPECT_EQ(slurp(entry.path()), slurp(b / entry.path().filename())) << entry.path();
  }
  cfg.seed = 2;
  synth::write_basin(b, synth::generate_basin(cfg));
  EXPECT_NE(slurp(a / "S1.csv"), slurp(b / "S1.csv"));
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST(Synth, MainStemDescendsAndIngests) {
  synth::SynthConfig cfg;
  cfg.n_days = 500;
  auto basin = synth::generate_basin(cfg);
  const auto m = synth::main_stem_length(cfg.n_reservoirs);
  EXPECT_EQ(m, 6u);
  for (std::size_t s = 1; s < m; ++s) EXPECT_LT(basin.metas[s].elevation_m, basin.metas[s - 1].elevation_m);
  EXPECT_EQ(basin.truth.size(), cfg.n_reservoirs - 1);

  const auto dir = scratch("synth_ingest");
  synth::write_basin(dir, basin);
  auto res = ingest(dir, dir / "reservoirs.csv");
  EXPECT_EQ(res.panel.reservoir_count(), cfg.n_reservoirs);
  EXPECT_EQ(res.panel.day_count(), basin_panel(basin).day_count());
  std::filesystem::remove_all(dir);
  EXPECT_THROW(synth::generate_basin({.n_reservoirs = 1}), ConfigError);
}

TEST(Synth, LaggedParentChildCorrelation) {
  for (std::uint64_t seed : {1, 2, 3}) {
    synth::SynthConfig cfg;
    cfg.seed = seed;
    cfg.n_days = 1000;
    auto basin = synth::generate_basin(cfg);
    auto panel = synth::basin_panel(basin);
    auto index = [&](const std::string& id) {
      return std::size_t(std::find(panel.ids.begin(), panel.ids.end(), id) - panel.ids.begin());
    };
    for (const auto& e : basin.truth) {
      std::vector<double> x, y;
      for (std::size_t t = 0; t < panel.day_count(); ++t) {
        x.push_back(panel.at(index(e.src), t, kInflow));
        y.push_back(panel.at(index(e.dst), t, kInflow));
      }
      EXPECT_GT(lagged_correlation(x, y, e.lag_days), 0.5) << e.src << "->" << e.dst;
    }
  }
}
