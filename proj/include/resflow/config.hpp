#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "resflow/data.hpp"
#include "resflow/encoder.hpp"
#include "resflow/model.hpp"
#include "resflow/synth.hpp"
#include "resflow/train.hpp"

namespace resflow::config {

/// Every tunable of a run. Defaults follow the reference setup.
struct RunConfig {
  std::uint64_t seed = 1;

  std::string data_dir = "data";
  std::string metadata = "";  // empty: <data_dir>/reservoirs.csv
  int gap_limit_days = 10;
  data::WindowSpec window{30, 7, 1};
  double train_fraction = 0.70;
  double validation_fraction = 0.15;

  model::ModelConfig model;
  encoder::PretrainConfig pretrain;
  train::TrainConfig train;
  std::string init_from = "";  // checkpoint whose matching parameters seed training

  synth::SynthConfig synth;

  std::vector<std::uint64_t> ablate_seeds{1, 2, 3};
  std::vector<train::Arm> ablate_arms{train::Arm::full, train::Arm::no_graph, train::Arm::static_graph,
                                      train::Arm::no_pretrain};
};

/// Sets one dotted key from its text form; ConfigError for unknown keys or
/// malformed values.
void set_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Every key with its canonical text value, sorted by key.
std::map<std::string, std::string> resolved_values(const RunConfig& cfg);
std::vector<std::string> known_keys();

/// Parses a key-value file: `[section]` headers, `key = value` lines, `#`
/// comments, quoted strings, dotted keys. Returns dotted key -> raw value.
std::map<std::string, std::string> parse_text(const std::string& text, const std::string& origin = "config");

/// defaults < file < overrides (`key=value`). Validates the result.
RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides);
RunConfig resolve(const std::string& file_text, const std::vector<std::string>& overrides);

/// Cross-field checks (widths, heads, fractions) after all keys are applied.
void validate(const RunConfig& cfg);

/// `key = value` lines sorted by key.
std::string resolved_text(const RunConfig& cfg);
/// Hex FNV-1a of resolved_text.
std::string config_hash(const RunConfig& cfg);

}  // namespace resflow::config
