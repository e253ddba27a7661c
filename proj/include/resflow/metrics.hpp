#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "resflow/geo_graph.hpp"

namespace resflow::metrics {

/// Raised by nse when the observations have zero variance.
class UndefinedVarianceError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Nash-Sutcliffe efficiency 1 - sum (p - o)^2 / sum (o - mean o)^2.
double nse(std::span<const double> predicted, std::span<const double> observed);
double mse(std::span<const double> predicted, std::span<const double> observed);

enum class Category { very_good, good, satisfactory, acceptable, unsatisfactory };
inline constexpr std::size_t kCategoryCount = 5;

/// Very good > 0.75 >= Good > 0.65 >= Satisfactory > 0.5 >= Acceptable > 0.4 >= Unsatisfactory.
Category categorize(double nse_value);
const char* category_name(Category c);

/// Forecast/observation pairs pooled per reservoir and lead day.
struct PooledSeries {
  std::vector<std::string> ids;
  std::size_t horizon = 0;
  std::vector<std::vector<double>> predicted;  // [reservoir * horizon + k]
  std::vector<std::vector<double>> observed;

  PooledSeries(std::vector<std::string> ids, std::size_t horizon);
  void add(std::size_t reservoir, std::size_t k, double pred, double obs);
};

struct EvalReport {
  std::vector<std::string> ids;
  std::size_t horizon = 0;
  std::vector<double> nse;          // [reservoir][k]
  std::vector<double> nse_per_day;  // mean over reservoirs, [k]
  double overall_nse = 0.0;         // mean of nse_per_day
  std::vector<std::vector<std::size_t>> categories;  // [k][category]
  double mse = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;

  double at(std::size_t r, std::size_t k) const { return nse[r * horizon + k]; }
};

/// Throws DataError when there are no reservoirs, and UndefinedVarianceError
/// naming the reservoir and lead day when one pooled series is constant.
EvalReport build_report(const PooledSeries& series, std::uint64_t seed, const std::string& config_hash);

struct EdgeRow {
  std::string src, dst;
  double alpha_tilde = 0.0;  // NaN when never observed
  bool pruned = false;
};

/// Writes report.json, nse_by_day.csv, categories.csv, edges_final.csv and
/// three SVG figures (nse_by_day.svg, categories.svg, graph.svg) into `dir`.
/// `metas` places nodes in the graph figure; it may be empty.
void emit_report(const EvalReport& report, const std::vector<EdgeRow>& edges,
                 const std::vector<geo::ReservoirMeta>& metas, const std::filesystem::path& dir);

}  // namespace resflow::metrics
