#include "resflow/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "resflow/csv.hpp"
#include "resflow/errors.hpp"

namespace resflow::data {

using namespace std::chrono;

Date parse_date(const std::string& iso) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  if (iso.size() != 10 || std::sscanf(iso.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3) {
    throw DataError("invalid ISO-8601 date '" + iso + "'");
  }
  const year_month_day ymd{year{y}, month{m}, day{d}};
  if (!ymd.ok()) throw DataError("invalid calendar date '" + iso + "'");
  return sys_days{ymd};
}

std::string format_date(Date d) {
  const year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

int day_of_year(Date d) {
  const year_month_day ymd{d};
  return static_cast<int>((d - sys_days{ymd.year() / January / 1}).count()) + 1;
}

const char* feature_name(std::size_t f) {
  switch (f) {
    case kInflow: return "inflow_cfs";
    case kPrecip: return "precip_mm";
    case kTemp: return "temp_c";
  }
  return "?";
}

ReservoirSeries regularize(const std::string& id, std::vector<std::pair<Date, DailyRow>> raw, int gap_limit_days) {
  if (raw.empty()) throw DataError("reservoir '" + id + "': no records");
  std::sort(raw.begin(), raw.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 1; i < raw.size(); ++i) {
    if (raw[i].first == raw[i - 1].first) {
      throw DataError("reservoir '" + id + "': duplicate date " + format_date(raw[i].first));
    }
  }
  const auto nan = std::numeric_limits<double>::quiet_NaN();
  const auto first = raw.front().first;
  const auto len = static_cast<std::size_t>((raw.back().first - first).count()) + 1;
  std::vector<DailyRow> rows(len, DailyRow{nan, nan, nan});
  for (const auto& [date, row] : raw) rows[static_cast<std::size_t>((date - first).count())] = row;

  auto complete = [](const DailyRow& r) { return std::all_of(r.begin(), r.end(), [](double v) { return std::isfinite(v); }); };
  std::size_t lo = 0, hi = rows.size();
  while (lo < hi && !complete(rows[lo])) ++lo;
  while (hi > lo && !complete(rows[hi - 1])) --hi;
  if (lo == hi) throw DataError("reservoir '" + id + "': no complete daily record");

  ReservoirSeries out{id, first + days(static_cast<int>(lo)), {rows.begin() + static_cast<std::ptrdiff_t>(lo),
                                                                rows.begin() + static_cast<std::ptrdiff_t>(hi)}};
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    std::size_t t = 0;
    while (t < out.rows.size()) {
      if (std::isfinite(out.rows[t][f])) {
        ++t;
        continue;
      }
      const auto begin = t;
      while (!std::isfinite(out.rows[t][f])) ++t;  // trailing rows are complete
      const auto gap = t - begin;
      if (gap > static_cast<std::size_t>(gap_limit_days)) {
        throw DataError("reservoir '" + id + "': " + std::to_string(gap) + "-day gap in " + feature_name(f) +
                        " starting " + format_date(out.start + days(static_cast<int>(begin))) +
                        " exceeds the " + std::to_string(gap_limit_days) + "-day limit");
      }
      const double left = out.rows[begin - 1][f], right = out.rows[t][f];
      for (std::size_t k = begin; k < t; ++k) {
        const double w = static_cast<double>(k - begin + 1) / static_cast<double>(gap + 1);
        out.rows[k][f] = left + w * (right - left);
      }
    }
  }
  return out;
}

RecordPanel align(const std::vector<ReservoirSeries>& series) {
  if (series.empty()) throw DataError("align: no reservoirs");
  Date lo = series.front().start, hi = series.front().end();
  for (const auto& s : series) {
    lo = std::max(lo, s.start);
    hi = std::min(hi, s.end());
  }
  if (hi < lo) throw DataError("align: reservoir records have no common overlapping date range");
  RecordPanel panel;
  const auto n_days = static_cast<std::size_t>((hi - lo).count()) + 1;
  for (std::size_t t = 0; t < n_days; ++t) panel.dates.push_back(lo + days(static_cast<int>(t)));
  panel.values.resize(series.size() * n_days * kFeatureCount);
  for (std::size_t r = 0; r < series.size(); ++r) {
    panel.ids.push_back(series[r].id);
    const auto offset = static_cast<std::size_t>((lo - series[r].start).count());
    for (std::size_t t = 0; t < n_days; ++t) {
      for (std::size_t f = 0; f < kFeatureCount; ++f) panel.at(r, t, f) = series[r].rows[offset + t][f];
    }
  }
  return panel;
}

IngestResult ingest(const std::filesystem::path& data_dir, const std::filesystem::path& metadata_path,
                    int gap_limit_days) {
  IngestResult result;
  const auto metas = geo::read_metadata(metadata_path);
  for (const auto& meta : metas) {
    const auto path = data_dir / (meta.id + ".csv");
    const auto table = csv::read(path);
    const auto c_date = table.column("date");
    const std::size_t cols[kFeatureCount] = {table.column("inflow_cfs"), table.column("precip_mm"),
                                             table.column("temp_c")};
    for (const auto& h : table.header) {
      if (h != "date" && h != "inflow_cfs" && h != "precip_mm" && h != "temp_c") {
        result.diagnostics.push_back("warning: " + path.filename().string() + ": ignoring extra column '" + h + "'");
      }
    }
    std::vector<std::pair<Date, DailyRow>> raw;
    for (const auto& row : table.rows) {
      DailyRow values;
      for (std::size_t f = 0; f < kFeatureCount; ++f) {
        const auto& field = row[cols[f]];
        values[f] = field.empty() || field == "NaN" || field == "nan"
                        ? std::numeric_limits<double>::quiet_NaN()
                        : csv::to_double(field, path.filename().string());
      }
      raw.emplace_back(parse_date(row[c_date]), values);
    }
    try {
      result.full_records.push_back(regularize(meta.id, std::move(raw), gap_limit_days));
      result.metas.push_back(meta);
    } catch (const DataError& e) {
      result.diagnostics.push_back(std::string("rejected: ") + e.what());
    }
  }
  if (result.full_records.empty()) throw DataError("ingest: every reservoir was rejected");
  result.panel = align(result.full_records);
  return result;
}

void write_series_csv(const std::filesystem::path& path, const ReservoirSeries& series) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "date,inflow_cfs,precip_mm,temp_c\n";
  for (std::size_t t = 0; t < series.rows.size(); ++t) {
    out << format_date(series.start + days(static_cast<int>(t)));
    for (double v : series.rows[t]) out << ',' << csv::format_double(v);
    out << '\n';
  }
}

ReservoirSeries panel_series(const RecordPanel& panel, std::size_t r) {
  ReservoirSeries s{panel.ids[r], panel.dates.front(), {}};
  for (std::size_t t = 0; t < panel.day_count(); ++t) {
    s.rows.push_back({panel.at(r, t, 0), panel.at(r, t, 1), panel.at(r, t, 2)});
  }
  return s;
}

void write_panel(const std::filesystem::path& dir, const RecordPanel& panel) {
  std::filesystem::create_directories(dir);
  for (std::size_t r = 0; r < panel.reservoir_count(); ++r) {
    write_series_csv(dir / (panel.ids[r] + ".csv"), panel_series(panel, r));
  }
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

SplitPlan SplitPlan::chronological(std::size_t day_count, double train_fraction, double validation_fraction) {
  if (!(train_fraction > 0.0) || !(validation_fraction >= 0.0) || train_fraction + validation_fraction > 1.0) {
    throw ConfigError("split fractions must be positive and sum to at most 1");
  }
  SplitPlan p;
  p.day_count = day_count;
  p.train_end = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(day_count)));
  p.validation_end =
      static_cast<std::size_t>(std::floor((train_fraction + validation_fraction) * static_cast<double>(day_count)));
  return p;
}

std::pair<std::size_t, std::size_t> SplitPlan::range(Split s) const {
  switch (s) {
    case Split::train: return {0, train_end};
    case Split::validation: return {train_end, validation_end};
    case Split::test: return {validation_end, day_count};
  }
  return {0, 0};
}

std::size_t window_count(std::size_t length, std::size_t history, std::size_t horizon, std::size_t stride) {
  if (stride == 0) throw ConfigError("window stride must be >= 1");
  if (length < history + horizon) return 0;
  return (length - history - horizon) / stride + 1;
}

double ScalingStats::scale(std::size_t r, std::size_t f, double v) const {
  return (v - mean[r * kFeatureCount + f]) / stddev[r * kFeatureCount + f];
}

double ScalingStats::unscale(std::size_t r, std::size_t f, double z) const {
  return z * stddev[r * kFeatureCount + f] + mean[r * kFeatureCount + f];
}

ScalingStats fit_scaling(const RecordPanel& panel, std::size_t begin_day, std::size_t end_day) {
  if (end_day <= begin_day || end_day > panel.day_count()) throw DataError("fit_scaling: empty training range");
  ScalingStats s;
  s.ids = panel.ids;
  const auto n = static_cast<double>(end_day - begin_day);
  for (std::size_t r = 0; r < panel.reservoir_count(); ++r) {
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      double mu = 0.0;
      for (std::size_t t = begin_day; t < end_day; ++t) mu += panel.at(r, t, f);
      mu /= n;
      double var = 0.0;
      for (std::size_t t = begin_day; t < end_day; ++t) var += (panel.at(r, t, f) - mu) * (panel.at(r, t, f) - mu);
      const double sd = std::sqrt(var / n);
      if (!(sd > 0.0)) {
        throw DataError("reservoir '" + panel.ids[r] + "': feature " + feature_name(f) +
                        " is constant over the training split");
      }
      s.mean.push_back(mu);
      s.stddev.push_back(sd);
    }
  }
  return s;
}

const std::vector<std::size_t>& WindowedDataset::windows(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::validation: return validation;
    case Split::test: return test;
  }
  return train;
}

WindowedDataset scale_and_window(RecordPanel panel, const SplitPlan& plan, const WindowSpec& spec) {
  if (spec.history == 0 || spec.horizon == 0) throw ConfigError("window history and horizon must be >= 1");
  if (plan.day_count != panel.day_count()) throw DataError("split plan does not match panel length");
  WindowedDataset ds;
  ds.stats = fit_scaling(panel, 0, plan.train_end);
  ds.panel = std::move(panel);
  ds.plan = plan;
  ds.spec = spec;
  for (auto s : {Split::train, Split::validation, Split::test}) {
    const auto [begin, end] = plan.range(s);
    auto& out = s == Split::train ? ds.train : s == Split::validation ? ds.validation : ds.test;
    const auto count = window_count(end - begin, spec.history, spec.horizon, spec.stride);
    for (std::size_t w = 0; w < count; ++w) out.push_back(begin + w * spec.stride);
  }
  if (ds.train.empty()) throw DataError("training split is shorter than one window");
  return ds;
}

SampleWindow make_window(const WindowedDataset& ds, std::size_t start_day) {
  const auto T = ds.spec.history, H = ds.spec.horizon, N = ds.reservoir_count();
  if (start_day + T + H > ds.panel.day_count()) throw DataError("window exceeds panel range");
  SampleWindow w;
  w.start = ds.panel.dates[start_day];
  w.history.resize(T * N * kFeatureCount);
  w.targets.resize(N * H);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t r = 0; r < N; ++r) {
      for (std::size_t f = 0; f < kFeatureCount; ++f) {
        w.history[(t * N + r) * kFeatureCount + f] = ds.stats.scale(r, f, ds.panel.at(r, start_day + t, f));
      }
    }
  }
  for (std::size_t r = 0; r < N; ++r) {
    for (std::size_t k = 0; k < H; ++k) {
      w.targets[r * H + k] = ds.stats.scale(r, kInflow, ds.panel.at(r, start_day + T + k, kInflow));
    }
  }
  return w;
}

Batch make_batch(const WindowedDataset& ds, const std::vector<std::size_t>& starts) {
  const auto T = ds.spec.history, H = ds.spec.horizon, N = ds.reservoir_count();
  std::vector<double> hist, targ;
  for (auto s : starts) {
    auto w = make_window(ds, s);
    hist.insert(hist.end(), w.history.begin(), w.history.end());
    targ.insert(targ.end(), w.targets.begin(), w.targets.end());
  }
  const auto B = starts.size();
  return {ad::Tensor({B, T, N, kFeatureCount}, std::move(hist)), ad::Tensor({B, N, H}, std::move(targ)), starts};
}

}  // namespace resflow::data
