#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "resflow/geo_graph.hpp"
#include "resflow/tensor.hpp"

namespace resflow::data {

using Date = std::chrono::sys_days;

Date parse_date(const std::string& iso);  // YYYY-MM-DD, DataError otherwise
std::string format_date(Date d);
int day_of_year(Date d);

inline constexpr std::size_t kFeatureCount = 3;
enum Feature : std::size_t { kInflow = 0, kPrecip = 1, kTemp = 2 };
const char* feature_name(std::size_t f);

using DailyRow = std::array<double, kFeatureCount>;

/// One reservoir's daily record, regularized to consecutive days.
struct ReservoirSeries {
  std::string id;
  Date start{};
  std::vector<DailyRow> rows;

  Date end() const { return start + std::chrono::days(static_cast<int>(rows.size()) - 1); }
};

/// Reservoirs aligned on a shared consecutive date range.
struct RecordPanel {
  std::vector<std::string> ids;
  std::vector<Date> dates;
  std::vector<double> values;  // [reservoir][day][feature]

  std::size_t reservoir_count() const { return ids.size(); }
  std::size_t day_count() const { return dates.size(); }
  double at(std::size_t r, std::size_t t, std::size_t f) const {
    return values[(r * dates.size() + t) * kFeatureCount + f];
  }
  double& at(std::size_t r, std::size_t t, std::size_t f) { return values[(r * dates.size() + t) * kFeatureCount + f]; }

  friend bool operator==(const RecordPanel&, const RecordPanel&) = default;
};

struct IngestResult {
  RecordPanel panel;
  std::vector<geo::ReservoirMeta> metas;       // accepted reservoirs, panel order
  std::vector<ReservoirSeries> full_records;   // gap-filled, before alignment
  std::vector<std::string> diagnostics;        // rejections and warnings
};

/// Reads `<dir>/<id>.csv` (`date,inflow_cfs,precip_mm,temp_c`) for every
/// reservoir in `metadata_path`. Missing days and blank/NaN fields are filled
/// by linear interpolation when a run of missing values is at most
/// `gap_limit_days` long; a longer run rejects the reservoir. Accepted
/// reservoirs are trimmed to their common date range.
IngestResult ingest(const std::filesystem::path& data_dir, const std::filesystem::path& metadata_path,
                    int gap_limit_days = 10);

/// Regularizes one raw record: sorts dates, fills short gaps. Throws DataError
/// for gaps longer than the limit or duplicate dates.
ReservoirSeries regularize(const std::string& id, std::vector<std::pair<Date, std::array<double, kFeatureCount>>> raw,
                           int gap_limit_days);

RecordPanel align(const std::vector<ReservoirSeries>& series);

void write_series_csv(const std::filesystem::path& path, const ReservoirSeries& series);
/// Writes every reservoir of the panel as `<dir>/<id>.csv`.
void write_panel(const std::filesystem::path& dir, const RecordPanel& panel);
ReservoirSeries panel_series(const RecordPanel& panel, std::size_t r);

enum class Split { train, validation, test };
const char* split_name(Split s);

/// Day-index ranges [begin, end) of the chronological split.
struct SplitPlan {
  std::size_t train_end = 0;
  std::size_t validation_end = 0;
  std::size_t day_count = 0;

  static SplitPlan chronological(std::size_t day_count, double train_fraction = 0.70,
                                 double validation_fraction = 0.15);
  std::pair<std::size_t, std::size_t> range(Split s) const;
};

/// Number of windows of T history + H target days in a series of `length`
/// days at `stride`.
std::size_t window_count(std::size_t length, std::size_t history, std::size_t horizon, std::size_t stride = 1);

/// Per reservoir, per feature z-score statistics from the training days.
struct ScalingStats {
  std::vector<std::string> ids;
  std::vector<double> mean;  // [reservoir][feature]
  std::vector<double> stddev;

  double scale(std::size_t r, std::size_t f, double v) const;
  double unscale(std::size_t r, std::size_t f, double z) const;
  bool empty() const { return mean.empty(); }
};

ScalingStats fit_scaling(const RecordPanel& panel, std::size_t begin_day, std::size_t end_day);

struct WindowSpec {
  std::size_t history = 30;
  std::size_t horizon = 7;
  std::size_t stride = 1;
};

/// A dataset ready for training: the aligned panel, train-split scaling,
/// and window start days per split. No window crosses a split boundary.
struct WindowedDataset {
  RecordPanel panel;
  ScalingStats stats;
  SplitPlan plan;
  WindowSpec spec;
  std::vector<std::size_t> train, validation, test;

  const std::vector<std::size_t>& windows(Split s) const;
  std::size_t reservoir_count() const { return panel.reservoir_count(); }
};

WindowedDataset scale_and_window(RecordPanel panel, const SplitPlan& plan, const WindowSpec& spec);

/// A single sample, scaled: history [T, N, F] and inflow targets [N, H].
struct SampleWindow {
  std::vector<double> history;
  std::vector<double> targets;
  Date start{};
};

SampleWindow make_window(const WindowedDataset& ds, std::size_t start_day);

/// Stacks windows into tensors: history [B, T, N, F], targets [B, N, H].
struct Batch {
  ad::Tensor history;
  ad::Tensor targets;
  std::vector<std::size_t> starts;
};

Batch make_batch(const WindowedDataset& ds, const std::vector<std::size_t>& starts);

}  // namespace resflow::data
