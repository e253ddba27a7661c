#pragma once

// Small synthetic datasets and model sizes shared by the training tests and
// the acceptance suite.

#include "resflow/data.hpp"
#include "resflow/model.hpp"
#include "resflow/synth.hpp"

namespace resflow::fixture {

struct Basin {
  synth::SynthBasin basin;
  data::WindowedDataset ds;
};

inline Basin small_basin(std::size_t reservoirs, std::size_t days, std::uint64_t seed, std::size_t history,
                         std::size_t horizon, std::size_t stride = 1, std::size_t start_offset = 0) {
  synth::SynthConfig sc;
  sc.n_reservoirs = reservoirs;
  sc.n_days = days + start_offset;
  sc.seed = seed;
  sc.max_start_offset = start_offset;
  sc.gaps_per_reservoir = 0;
  Basin b;
  b.basin = synth::generate_basin(sc);
  auto panel = synth::basin_panel(b.basin);
  const auto plan = data::SplitPlan::chronological(panel.day_count());
  b.ds = data::scale_and_window(std::move(panel), plan, {history, horizon, stride});
  return b;
}

inline model::ModelConfig small_model(std::size_t history, std::size_t horizon, std::size_t width = 16) {
  model::ModelConfig cfg;
  cfg.embed = width;
  cfg.gat = {2, 2, width / 2, gat::HeadMerge::concat, 0.2, gat::EdgeDirection::reversed};
  cfg.tf_layers = 1;
  cfg.tf_heads = 2;
  cfg.ff = 2 * width;
  cfg.latent = width / 2;
  cfg.history = history;
  cfg.horizon = horizon;
  cfg.dropout = 0.0;
  return cfg;
}

}  // namespace resflow::fixture
