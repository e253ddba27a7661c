#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "resflow/data.hpp"
#include "resflow/geo_graph.hpp"

namespace resflow::synth {

struct SynthConfig {
  std::size_t n_reservoirs = 8;
  std::size_t n_days = 1500;
  std::uint64_t seed = 1;
  int lag_days = 1;
  double attenuation = 0.6;     // share of summed parent inflow routed downstream
  double local_share = 0.4;     // weight of the reservoir's own runoff
  double noise = 0.05;          // multiplicative inflow noise (std)
  int max_start_offset = 180;   // records start up to this many days late
  int gaps_per_reservoir = 2;   // short (2-4 day) missing stretches per file
  std::string start_date = "2000-01-01";
};

/// Planted routing dependency: `dst` receives `gain` x inflow of `src`
/// lagged by `lag_days`.
struct TruthEdge {
  std::string src;
  std::string dst;
  int lag_days = 1;
  double gain = 0.0;
};

struct SynthBasin {
  std::vector<geo::ReservoirMeta> metas;
  std::vector<data::ReservoirSeries> series;    // complete records, before gaps
  std::vector<std::vector<std::size_t>> gaps;   // per reservoir: row indices left out of the file
  std::vector<TruthEdge> truth;
};

/// A main stem running west on an elevation gradient with short tributaries
/// joining it. Headwater inflow is seasonal snowmelt plus runoff of
/// regionally correlated precipitation; downstream inflow routes the lagged
/// parent inflow plus local runoff. Deterministic per seed.
SynthBasin generate_basin(const SynthConfig& cfg);

/// Writes `<id>.csv` per reservoir (gap rows omitted), `reservoirs.csv`, and
/// `truth_edges.csv` (`src,dst,lag_days,gain`).
void write_basin(const std::filesystem::path& dir, const SynthBasin& basin);

/// The gap-free records aligned on their common range.
data::RecordPanel basin_panel(const SynthBasin& basin);

/// Number of main-stem reservoirs for a basin of `n_reservoirs`; the rest
/// are tributaries.
std::size_t main_stem_length(std::size_t n_reservoirs);

}  // namespace resflow::synth
