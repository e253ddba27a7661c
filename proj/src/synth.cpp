#include "resflow/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "resflow/errors.hpp"
#include "resflow/rng.hpp"

namespace resflow::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

std::size_t main_stem_length(std::size_t n_reservoirs) { return n_reservoirs - (n_reservoirs - 1) / 3; }

SynthBasin generate_basin(const SynthConfig& cfg) {
  if (cfg.n_reservoirs < 2) throw ConfigError("synthetic basin needs at least 2 reservoirs");
  if (cfg.lag_days < 0) throw ConfigError("routing lag must be >= 0");
  if (cfg.max_start_offset < 0 || cfg.gaps_per_reservoir < 0) throw ConfigError("offsets and gap counts must be >= 0");
  if (cfg.n_days < static_cast<std::size_t>(cfg.max_start_offset) + 47) {
    throw ConfigError("synthetic basin needs n_days >= max_start_offset + 47");
  }
  if (!(cfg.attenuation >= 0.0) || !(cfg.local_share >= 0.0) || !(cfg.noise >= 0.0) || cfg.noise >= 0.5) {
    throw ConfigError("routing gains must be >= 0 and noise in [0, 0.5)");
  }
  const auto start = data::parse_date(cfg.start_date);
  auto rng = Rng::stream(cfg.seed, "data");

  const std::size_t n = cfg.n_reservoirs, m = main_stem_length(n), days = cfg.n_days;
  SynthBasin basin;
  std::vector<std::vector<std::size_t>> parents(n);
  for (std::size_t s = 0; s < m; ++s) {
    const double ds = static_cast<double>(s);
    basin.metas.push_back({"S" + std::to_string(s), 40.0, -110.0 - 0.25 * ds, 2800.0 - 150.0 * ds});
    if (s > 0) parents[s].push_back(s - 1);
  }
  for (std::size_t t = 0; t + m < n; ++t) {
    const auto joins = t + 1;
    const auto& main = basin.metas[joins];
    basin.metas.push_back({"T" + std::to_string(joins), 40.15, main.lon + 0.1, main.elevation_m + 120.0});
    parents[joins].push_back(m + t);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (auto p : parents[i]) {
      basin.truth.push_back({basin.metas[p].id, basin.metas[i].id, cfg.lag_days, cfg.attenuation});
    }
  }

  // Regional storms shared by every reservoir, plus local variation.
  std::vector<double> regional(days);
  double r = 0.0;
  for (auto& v : regional) {
    r = 0.6 * r + rng.normal();
    v = r;
  }

  std::vector<std::vector<double>> inflow(n, std::vector<double>(days)), precip(n, std::vector<double>(days)),
      temp(n, std::vector<double>(days));
  // Per-reservoir character: melt arrives later and sharper up high, and
  // catchments differ in how fast they drain and how local their storms are.
  std::vector<double> snow_amp(n), base(n), melt_shift(n), melt_power(n), recession(n), runoff_gain(n), coherence(n);
  for (std::size_t i = 0; i < n; ++i) {
    snow_amp[i] = rng.uniform(150.0, 350.0);
    base[i] = rng.uniform(30.0, 60.0);
    melt_shift[i] = kTwoPi * (30.0 * (basin.metas[i].elevation_m - 2000.0) / 1000.0 + rng.uniform(-5.0, 5.0)) / 365.25;
    melt_power[i] = rng.uniform(2.0, 6.0);
    recession[i] = rng.uniform(0.05, 0.35);
    runoff_gain[i] = rng.uniform(3.0, 12.0);
    coherence[i] = rng.uniform(0.6, 0.9);
  }
  // Headwaters come first in this order: tributaries, then the main stem.
  std::vector<std::size_t> order;
  for (std::size_t i = m; i < n; ++i) order.push_back(i);
  for (std::size_t i = 0; i < m; ++i) order.push_back(i);

  for (auto i : order) {
    const double elev = basin.metas[i].elevation_m;
    double storage = 0.0;
    for (std::size_t t = 0; t < days; ++t) {
      const auto date = start + std::chrono::days(static_cast<int>(t));
      const double phase = kTwoPi * (data::day_of_year(date) - 1) / 365.25;
      const double rho = coherence[i];
      const double p =
          std::max(0.0, 4.0 * (rho * regional[t] + std::sqrt(1.0 - rho * rho) * rng.normal()) - 2.0);
      precip[i][t] = p;
      temp[i][t] = 8.0 - 12.0 * std::cos(phase - 0.3) - 6.5 * (elev - 2000.0) / 1000.0 + rng.normal(0.0, 2.0);
      storage = (1.0 - recession[i]) * storage + p;
      const double melt = std::pow(std::max(0.0, std::sin(phase - 1.6 - melt_shift[i])), melt_power[i]);
      const double local = base[i] + snow_amp[i] * melt + runoff_gain[i] * recession[i] * storage;
      double q = local;
      if (!parents[i].empty()) {
        double routed = 0.0;
        const auto src_t = t >= static_cast<std::size_t>(cfg.lag_days) ? t - static_cast<std::size_t>(cfg.lag_days) : 0;
        for (auto pa : parents[i]) routed += inflow[pa][src_t];
        q = cfg.attenuation * routed + cfg.local_share * local;
      }
      inflow[i][t] = std::max(0.1, q * (1.0 + cfg.noise * rng.normal()));
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    const auto offset =
        i == 0 ? std::size_t{0} : static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(cfg.max_start_offset) + 1));
    data::ReservoirSeries s{basin.metas[i].id, start + std::chrono::days(static_cast<int>(offset)), {}};
    for (std::size_t t = offset; t < days; ++t) s.rows.push_back({inflow[i][t], precip[i][t], temp[i][t]});
    std::vector<std::size_t> missing;
    const auto len = s.rows.size();
    for (int g = 0; g < cfg.gaps_per_reservoir && len > 20; ++g) {
      const auto at = 5 + rng.below(len - 15);
      const auto width = 2 + rng.below(3);
      for (std::size_t k = 0; k < width; ++k) missing.push_back(at + k);
    }
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    basin.series.push_back(std::move(s));
    basin.gaps.push_back(std::move(missing));
  }
  return basin;
}

void write_basin(const std::filesystem::path& dir, const SynthBasin& basin) {
  std::filesystem::create_directories(dir);
  geo::write_metadata(dir / "reservoirs.csv", basin.metas);
  for (std::size_t i = 0; i < basin.series.size(); ++i) {
    const auto& s = basin.series[i];
    std::ofstream out(dir / (s.id + ".csv"), std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / (s.id + ".csv")).string());
    out << "date,inflow_cfs,precip_mm,temp_c\n";
    const auto& gaps = basin.gaps[i];
    for (std::size_t t = 0; t < s.rows.size(); ++t) {
      if (std::binary_search(gaps.begin(), gaps.end(), t)) continue;
      out << data::format_date(s.start + std::chrono::days(static_cast<int>(t))) << ',' << fixed3(s.rows[t][0]) << ','
          << fixed3(s.rows[t][1]) << ',' << fixed3(s.rows[t][2]) << '\n';
    }
  }
  std::ofstream truth(dir / "truth_edges.csv", std::ios::binary);
  if (!truth) throw DataError("cannot write " + (dir / "truth_edges.csv").string());
  truth << "src,dst,lag_days,gain\n";
  for (const auto& e : basin.truth) truth << e.src << ',' << e.dst << ',' << e.lag_days << ',' << fixed3(e.gain) << '\n';
}

data::RecordPanel basin_panel(const SynthBasin& basin) { return data::align(basin.series); }

}  // namespace resflow::synth
