#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "resflow/adam.hpp"
#include "resflow/data.hpp"
#include "resflow/encoder.hpp"
#include "resflow/gat.hpp"
#include "resflow/metrics.hpp"
#include "resflow/model.hpp"

namespace resflow::train {

/// Mean squared error over reservoirs and lead days. Shapes must match;
/// a NaN target is a DataError.
ad::Tensor training_loss(const ad::Tensor& predicted, const ad::Tensor& target);

struct TrainConfig {
  int epochs = 10;
  std::size_t batch_size = 4;
  double lr = 1e-3;
  double lr_decay = 0.5;  // lr(e) = lr * lr_decay^e
  int prune_interval = 4;
  double prune_threshold = 0.3;
  gat::PruneMode prune_mode = gat::PruneMode::global;
  bool no_graph = false;      // self-loops only, no pruning
  bool static_graph = false;  // initial graph, no pruning
  bool no_pretrain = false;
  std::size_t neighbors = 2;  // k
  std::size_t max_steps_per_epoch = 0;  // 0 = every training window once
  std::uint64_t seed = 1;
};

void validate(const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double train_mse = 0.0;
  double val_mse = 0.0;  // NaN without validation windows
  double active_edges = 0.0;  // mean over daily graphs
};

/// Everything needed to rebuild a model for inference or resume training.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  model::ModelConfig model;
  std::vector<std::pair<std::string, ad::Tensor>> parameters;
  std::vector<std::vector<double>> adam_m, adam_v;
  std::uint64_t adam_steps = 0;
  std::string shuffle_rng, dropout_rng;
  std::vector<geo::ReservoirMeta> metas;
  std::vector<geo::TemporalGraph> days;
  std::vector<double> edge_alpha;  // whole-run mean attention per edge, NaN when unobserved
  int epoch = 0;
  data::ScalingStats stats;
  data::WindowSpec spec;
  std::string config_hash;
};

/// Binary container: "RFCKPT01", u64 manifest length, JSON manifest, then
/// the little-endian f32 tensor payloads (parameters, then optimizer
/// moments) in manifest order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every checkpoint parameter whose name the model also has (e.g. an
/// encoder-only pretraining checkpoint). Returns how many were copied.
std::size_t load_matching_parameters(const model::InflowModel& m, const Checkpoint& ckpt);

std::string to_json(const model::ModelConfig& cfg);
model::ModelConfig model_config_from_json(const std::string& text);

/// Raised when training produces a non-finite value; the trainer's
/// last_good() then holds the state at the start of the failing epoch.
class TrainingDiverged : public ad::NumericError {
 public:
  using ad::NumericError::NumericError;
};

/// The graph a run starts from: built with k neighbors, reduced to
/// self-loops for no_graph, replicated per day for per-day pruning.
std::vector<geo::TemporalGraph> initial_days(const std::vector<geo::ReservoirMeta>& metas, const TrainConfig& cfg,
                                             std::size_t history);

/// Reorders metadata to the panel's reservoir order.
std::vector<geo::ReservoirMeta> metas_in_order(const std::vector<geo::ReservoirMeta>& metas,
                                               const std::vector<std::string>& ids);

/// Pretrains the model's encoder and auxiliary head on every reservoir's full
/// record, restricted to windows whose targets end before validation starts.
encoder::PretrainResult pretrain_model(model::InflowModel& m, const data::WindowedDataset& ds,
                                       const std::vector<data::ReservoirSeries>& full_records,
                                       const encoder::PretrainConfig& cfg, std::uint64_t seed);

class Trainer {
 public:
  Trainer(const data::WindowedDataset& ds, std::vector<geo::ReservoirMeta> metas, model::InflowModel m,
          const TrainConfig& cfg);

  /// One epoch of training, validation and (when due) pruning. Appends to
  /// the optional sinks: a metrics row and per-day attention rows.
  EpochRecord run_epoch(std::ostream* metrics = nullptr, std::ostream* attention = nullptr);
  /// Runs the remaining epochs. Writes the metrics header when given a sink.
  std::vector<EpochRecord> fit(std::ostream* metrics = nullptr, std::ostream* attention = nullptr);

  double evaluate_mse(data::Split split) const;

  const model::InflowModel& model() const { return model_; }
  const std::vector<geo::TemporalGraph>& days() const { return days_; }
  int epoch() const { return epoch_; }
  const std::vector<EpochRecord>& history() const { return history_; }
  gat::AttentionLedger& prune_ledger() { return prune_ledger_; }
  const gat::AttentionLedger& run_ledger() const { return run_ledger_; }
  std::size_t optimizer_steps() const { return optimizer_.step_count(); }
  bool pruning_enabled() const { return !cfg_.no_graph && !cfg_.static_graph; }

  Checkpoint checkpoint(const std::string& config_hash = "") const;
  const Checkpoint& last_good() const { return last_good_; }
  std::vector<metrics::EdgeRow> edge_summary() const;

 private:
  const data::WindowedDataset& ds_;
  std::vector<geo::ReservoirMeta> metas_;
  model::InflowModel model_;
  TrainConfig cfg_;
  Adam optimizer_;
  Rng shuffle_rng_, dropout_rng_;
  std::vector<geo::TemporalGraph> days_;
  gat::AttentionLedger prune_ledger_, run_ledger_;
  int epoch_ = 0;
  std::vector<EpochRecord> history_;
  Checkpoint last_good_;
};

/// `src,dst,alpha_tilde,pruned` rows for every non-self edge; an edge counts
/// as pruned when it is masked in any daily graph.
std::vector<metrics::EdgeRow> edge_rows(const std::vector<geo::TemporalGraph>& days, const std::vector<double>& alpha);

/// A trained model ready for inference with its frozen topology.
struct Forecaster {
  model::InflowModel model;
  std::vector<geo::TemporalGraph> days;
  std::vector<geo::ReservoirMeta> metas;
  data::ScalingStats stats;
  data::WindowSpec spec;

  static Forecaster from_checkpoint(const Checkpoint& ckpt);
};

/// Forecasts for scaled history [B, T, N, F] in original inflow units,
/// laid out [B, N, H]. DataError when scaling statistics are missing.
std::vector<double> predict(const Forecaster& f, const ad::Tensor& history);

/// Scaled history [B, T, N, F] for windows of a raw panel starting at
/// `starts`, using the forecaster's statistics (matched by reservoir id).
ad::Tensor scaled_history(const Forecaster& f, const data::RecordPanel& panel, const std::vector<std::size_t>& starts);

/// Pools forecasts and observations (original units) over the windows of
/// `split` for per-reservoir, per-lead-day scoring.
metrics::PooledSeries pooled_forecasts(const model::InflowModel& m, const std::vector<geo::TemporalGraph>& days,
                                       const data::WindowedDataset& ds, data::Split split);

enum class Arm { full, no_graph, static_graph, no_pretrain };
const char* arm_name(Arm a);
Arm parse_arm(const std::string& s);

struct AblationSettings {
  model::ModelConfig model;
  TrainConfig train;
  encoder::PretrainConfig pretrain;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<Arm> arms{Arm::full, Arm::no_graph, Arm::static_graph, Arm::no_pretrain};
};

struct AblationRow {
  Arm arm = Arm::full;
  std::uint64_t seed = 0;
  double overall_nse = 0.0;
  std::vector<double> nse_per_day;
  std::string split_hash;
  std::string init_hash;  // non-encoder parameters at epoch 0
  double final_active_edges = 0.0;
};

std::string split_hash(const data::WindowedDataset& ds);

/// Trains every arm for every seed on the same dataset and scores the test
/// split. Pretraining runs once per seed and is shared by the arms using it.
std::vector<AblationRow> run_ablation_suite(const data::WindowedDataset& ds,
                                            const std::vector<data::ReservoirSeries>& full_records,
                                            const std::vector<geo::ReservoirMeta>& metas,
                                            const AblationSettings& settings, std::ostream* log = nullptr);

/// `arm,seed,overall_nse,day1..dayH,split_hash,init_hash,active_edges`
void write_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows);

}  // namespace resflow::train
