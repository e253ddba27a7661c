#include "resflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "resflow/csv.hpp"
#include "resflow/errors.hpp"

namespace resflow::metrics {

namespace {

void check_pair(std::span<const double> p, std::span<const double> o, const char* what) {
  if (p.size() != o.size()) {
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(p.size()) + " predictions for " +
                                std::to_string(o.size()) + " observations");
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::string fmt(double v) { return std::isnan(v) ? std::string("nan") : csv::format_double(v); }

std::string fixed(double v, int digits = 1) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

const char* kCategoryColors[kCategoryCount] = {"#1a9850", "#91cf60", "#fee08b", "#fc8d59", "#d73027"};

std::string svg_open(int w, int h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" +
         std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " + std::to_string(h) +
         "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

std::string nse_bars_svg(const EvalReport& r) {
  const int w = 80 + 60 * static_cast<int>(r.horizon), h = 300, base = 250, top = 40;
  double lo = 0.0;
  for (double v : r.nse_per_day) lo = std::min(lo, v);
  lo = std::floor(lo * 4.0) / 4.0;
  auto y_of = [&](double v) { return base - (v - lo) / (1.0 - lo) * (base - top); };
  std::string s = svg_open(w, h);
  s += "<text x=\"10\" y=\"20\">Mean NSE by lead day (overall " + fixed(r.overall_nse, 3) + ")</text>\n";
  s += "<line x1=\"50\" y1=\"" + fixed(y_of(0.0)) + "\" x2=\"" + std::to_string(w - 10) + "\" y2=\"" +
       fixed(y_of(0.0)) + "\" stroke=\"black\"/>\n";
  for (double tick = lo; tick <= 1.0 + 1e-9; tick += 0.25) {
    s += "<text x=\"8\" y=\"" + fixed(y_of(tick) + 4) + "\">" + fixed(tick, 2) + "</text>\n";
  }
  for (std::size_t k = 0; k < r.horizon; ++k) {
    const double v = r.nse_per_day[k];
    const double x = 60 + 60 * static_cast<double>(k);
    const double y0 = y_of(0.0), y1 = y_of(v);
    s += "<rect x=\"" + fixed(x) + "\" y=\"" + fixed(std::min(y0, y1)) + "\" width=\"40\" height=\"" +
         fixed(std::abs(y1 - y0)) + "\" fill=\"" + kCategoryColors[static_cast<int>(categorize(v))] + "\"/>\n";
    s += "<text x=\"" + fixed(x + 8) + "\" y=\"" + std::to_string(base + 20) + "\">d" + std::to_string(k + 1) +
         "</text>\n";
  }
  return s + "</svg>\n";
}

std::string categories_svg(const EvalReport& r) {
  const int w = 80 + 60 * static_cast<int>(r.horizon), h = 320, base = 250, top = 40;
  const double n = static_cast<double>(r.ids.size());
  std::string s = svg_open(w, h);
  s += "<text x=\"10\" y=\"20\">Reservoirs per performance category</text>\n";
  for (std::size_t k = 0; k < r.horizon; ++k) {
    double y = base;
    const double x = 60 + 60 * static_cast<double>(k);
    for (std::size_t c = 0; c < kCategoryCount; ++c) {
      const double hgt = static_cast<double>(r.categories[k][c]) / n * (base - top);
      if (hgt <= 0.0) continue;
      y -= hgt;
      s += "<rect x=\"" + fixed(x) + "\" y=\"" + fixed(y) + "\" width=\"40\" height=\"" + fixed(hgt) + "\" fill=\"" +
           kCategoryColors[c] + "\"/>\n";
    }
    s += "<text x=\"" + fixed(x + 8) + "\" y=\"" + std::to_string(base + 20) + "\">d" + std::to_string(k + 1) +
         "</text>\n";
  }
  for (std::size_t c = 0; c < kCategoryCount; ++c) {
    const auto x = 10 + 110 * static_cast<int>(c);
    s += "<rect x=\"" + std::to_string(x) + "\" y=\"290\" width=\"10\" height=\"10\" fill=\"" + kCategoryColors[c] +
         "\"/><text x=\"" + std::to_string(x + 14) + "\" y=\"300\">" + category_name(static_cast<Category>(c)) +
         "</text>\n";
  }
  return s + "</svg>\n";
}

std::string graph_svg(const std::vector<std::string>& ids, const std::vector<EdgeRow>& edges,
                      const std::vector<geo::ReservoirMeta>& metas) {
  const int w = 480, h = 400;
  std::map<std::string, std::pair<double, double>> pos;
  bool placed = !metas.empty();
  if (placed) {
    double lat_lo = 90, lat_hi = -90, lon_lo = 180, lon_hi = -180;
    for (const auto& m : metas) {
      lat_lo = std::min(lat_lo, m.lat), lat_hi = std::max(lat_hi, m.lat);
      lon_lo = std::min(lon_lo, m.lon), lon_hi = std::max(lon_hi, m.lon);
    }
    const double dx = std::max(lon_hi - lon_lo, 1e-6), dy = std::max(lat_hi - lat_lo, 1e-6);
    for (const auto& m : metas) pos[m.id] = {40 + (m.lon - lon_lo) / dx * (w - 80), h - 40 - (m.lat - lat_lo) / dy * (h - 100)};
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (pos.count(ids[i])) continue;
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(ids.size());
    pos[ids[i]] = {w / 2.0 + 150 * std::cos(a), h / 2.0 + 150 * std::sin(a)};
  }
  std::string s = svg_open(w, h);
  s += "<text x=\"10\" y=\"20\">Final graph (dashed: pruned), width ~ mean attention</text>\n";
  for (const auto& e : edges) {
    if (!pos.count(e.src) || !pos.count(e.dst)) continue;
    const auto [x1, y1] = pos[e.src];
    const auto [x2, y2] = pos[e.dst];
    const double width = std::isnan(e.alpha_tilde) ? 1.0 : 1.0 + 4.0 * e.alpha_tilde;
    s += "<line x1=\"" + fixed(x1) + "\" y1=\"" + fixed(y1) + "\" x2=\"" + fixed(x2) + "\" y2=\"" + fixed(y2) +
         "\" stroke=\"" + (e.pruned ? "#bbbbbb" : "#2166ac") + "\" stroke-width=\"" + fixed(width, 2) + "\"" +
         (e.pruned ? " stroke-dasharray=\"4 3\"" : "") + "/>\n";
  }
  for (const auto& id : ids) {
    const auto [x, y] = pos[id];
    s += "<circle cx=\"" + fixed(x) + "\" cy=\"" + fixed(y) + "\" r=\"6\" fill=\"#333333\"/><text x=\"" +
         fixed(x + 8) + "\" y=\"" + fixed(y - 8) + "\">" + id + "</text>\n";
  }
  return s + "</svg>\n";
}

}  // namespace

double nse(std::span<const double> predicted, std::span<const double> observed) {
  check_pair(predicted, observed, "nse");
  if (observed.size() < 2) throw std::invalid_argument("nse: needs at least 2 observations");
  double mean = 0.0;
  for (double o : observed) mean += o;
  mean /= static_cast<double>(observed.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    num += (predicted[i] - observed[i]) * (predicted[i] - observed[i]);
    den += (observed[i] - mean) * (observed[i] - mean);
  }
  if (den == 0.0) throw UndefinedVarianceError("undefined-variance: observations are constant");
  return 1.0 - num / den;
}

double mse(std::span<const double> predicted, std::span<const double> observed) {
  check_pair(predicted, observed, "mse");
  if (observed.empty()) throw std::invalid_argument("mse: empty series");
  double s = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) s += (predicted[i] - observed[i]) * (predicted[i] - observed[i]);
  return s / static_cast<double>(observed.size());
}

Category categorize(double v) {
  if (v > 0.75) return Category::very_good;
  if (v > 0.65) return Category::good;
  if (v > 0.5) return Category::satisfactory;
  if (v > 0.4) return Category::acceptable;
  return Category::unsatisfactory;
}

const char* category_name(Category c) {
  switch (c) {
    case Category::very_good: return "Very good";
    case Category::good: return "Good";
    case Category::satisfactory: return "Satisfactory";
    case Category::acceptable: return "Acceptable";
    case Category::unsatisfactory: return "Unsatisfactory";
  }
  return "?";
}

PooledSeries::PooledSeries(std::vector<std::string> ids_, std::size_t horizon_)
    : ids(std::move(ids_)), horizon(horizon_), predicted(ids.size() * horizon_), observed(ids.size() * horizon_) {}

void PooledSeries::add(std::size_t reservoir, std::size_t k, double pred, double obs) {
  predicted.at(reservoir * horizon + k).push_back(pred);
  observed.at(reservoir * horizon + k).push_back(obs);
}

EvalReport build_report(const PooledSeries& series, std::uint64_t seed, const std::string& config_hash) {
  if (series.ids.empty() || series.horizon == 0) throw DataError("report: no reservoirs to evaluate");
  EvalReport r;
  r.ids = series.ids;
  r.horizon = series.horizon;
  r.seed = seed;
  r.config_hash = config_hash;
  r.nse_per_day.assign(r.horizon, 0.0);
  r.categories.assign(r.horizon, std::vector<std::size_t>(kCategoryCount, 0));
  double sq = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < r.ids.size(); ++i) {
    for (std::size_t k = 0; k < r.horizon; ++k) {
      const auto& p = series.predicted[i * r.horizon + k];
      const auto& o = series.observed[i * r.horizon + k];
      double v;
      try {
        v = nse(p, o);
      } catch (const UndefinedVarianceError&) {
        throw UndefinedVarianceError("undefined-variance: observed inflow of '" + r.ids[i] + "' at lead day " +
                                     std::to_string(k + 1) + " is constant");
      }
      r.nse.push_back(v);
      r.nse_per_day[k] += v / static_cast<double>(r.ids.size());
      ++r.categories[k][static_cast<std::size_t>(categorize(v))];
      sq += mse(p, o) * static_cast<double>(o.size());
      count += o.size();
    }
  }
  for (double v : r.nse_per_day) r.overall_nse += v / static_cast<double>(r.horizon);
  r.mse = sq / static_cast<double>(count);
  return r;
}

void emit_report(const EvalReport& report, const std::vector<EdgeRow>& edges,
                 const std::vector<geo::ReservoirMeta>& metas, const std::filesystem::path& dir) {
  if (report.ids.empty() || report.horizon == 0) throw DataError("report: no reservoirs to emit");
  if (report.nse.size() != report.ids.size() * report.horizon) throw DataError("report: NSE matrix is incomplete");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (!std::filesystem::is_directory(dir)) throw DataError("cannot create report directory " + dir.string());

  nlohmann::json j;
  j["reservoirs"] = report.ids;
  j["horizon"] = report.horizon;
  j["overall_nse"] = report.overall_nse;
  j["overall_definition"] = "mean over lead days of the per-day mean NSE";
  j["nse_per_day"] = report.nse_per_day;
  j["mse"] = report.mse;
  j["seed"] = report.seed;
  j["config_hash"] = report.config_hash;
  nlohmann::json per_res;
  for (std::size_t i = 0; i < report.ids.size(); ++i) {
    std::vector<double> row(report.nse.begin() + static_cast<std::ptrdiff_t>(i * report.horizon),
                            report.nse.begin() + static_cast<std::ptrdiff_t>((i + 1) * report.horizon));
    per_res[report.ids[i]] = row;
  }
  j["nse"] = per_res;
  nlohmann::json cats;
  for (std::size_t c = 0; c < kCategoryCount; ++c) {
    std::vector<std::size_t> counts;
    for (std::size_t k = 0; k < report.horizon; ++k) counts.push_back(report.categories[k][c]);
    cats[category_name(static_cast<Category>(c))] = counts;
  }
  j["categories"] = cats;
  open_out(dir / "report.json") << j.dump(2) << '\n';

  auto by_day = open_out(dir / "nse_by_day.csv");
  by_day << "reservoir,lead_day,nse,category\n";
  for (std::size_t i = 0; i < report.ids.size(); ++i) {
    for (std::size_t k = 0; k < report.horizon; ++k) {
      by_day << report.ids[i] << ',' << k + 1 << ',' << fmt(report.at(i, k)) << ','
             << category_name(categorize(report.at(i, k))) << '\n';
    }
  }

  auto cat = open_out(dir / "categories.csv");
  cat << "lead_day,category,count\n";
  for (std::size_t k = 0; k < report.horizon; ++k) {
    for (std::size_t c = 0; c < kCategoryCount; ++c) {
      cat << k + 1 << ',' << category_name(static_cast<Category>(c)) << ',' << report.categories[k][c] << '\n';
    }
  }

  auto ed = open_out(dir / "edges_final.csv");
  ed << "src,dst,alpha_tilde,pruned\n";
  for (const auto& e : edges) ed << e.src << ',' << e.dst << ',' << fmt(e.alpha_tilde) << ',' << (e.pruned ? 1 : 0) << '\n';

  open_out(dir / "nse_by_day.svg") << nse_bars_svg(report);
  open_out(dir / "categories.svg") << categories_svg(report);
  open_out(dir / "graph.svg") << graph_svg(report.ids, edges, metas);
}

}  // namespace resflow::metrics
