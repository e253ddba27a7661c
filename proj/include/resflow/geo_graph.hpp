#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace resflow::geo {

inline constexpr double kEarthRadiusKm = 6371.0;

struct GeoPoint {
  double lat = 0.0;  // degrees, [-90, 90]
  double lon = 0.0;  // degrees, [-180, 180]
};

struct ReservoirMeta {
  std::string id;
  double lat = 0.0;
  double lon = 0.0;
  double elevation_m = 0.0;

  GeoPoint position() const { return {lat, lon}; }
};

/// Great-circle distance in km on a sphere of radius kEarthRadiusKm.
/// Throws std::invalid_argument for out-of-range coordinates.
double haversine_km(GeoPoint a, GeoPoint b);

/// Directed edge (src, dst) between node indices. Built edges run from a
/// reservoir to a strictly lower one, plus one self-loop per node.
struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;

  bool self_loop() const { return src == dst; }
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Immutable graph snapshot: node ids, edge list, and the live prune mask.
/// The adjacency a_ij is 1 exactly for active edges (i, j).
class TemporalGraph {
 public:
  TemporalGraph() = default;
  TemporalGraph(std::vector<std::string> node_ids, std::vector<Edge> edges, std::vector<bool> active);

  std::size_t node_count() const { return node_ids_.size(); }
  const std::vector<std::string>& node_ids() const { return node_ids_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<bool>& active() const { return active_; }

  bool adjacent(std::size_t i, std::size_t j) const { return adjacency_[i * node_count() + j] != 0; }
  const std::vector<std::uint8_t>& adjacency() const { return adjacency_; }
  std::optional<std::size_t> edge_index(std::size_t src, std::size_t dst) const;

  std::size_t active_edge_count() const;
  std::size_t active_non_self_count() const;
  std::vector<Edge> active_non_self_edges() const;

  friend bool operator==(const TemporalGraph&, const TemporalGraph&) = default;

 private:
  std::vector<std::string> node_ids_;
  std::vector<Edge> edges_;
  std::vector<bool> active_;
  std::vector<std::uint8_t> adjacency_;
};

/// k nearest other reservoirs of `i` by haversine distance, ties broken by
/// ascending id.
std::vector<std::size_t> nearest_candidates(const std::vector<ReservoirMeta>& metas, std::size_t i, std::size_t k);

/// Static initial graph: for each i, candidates C_i = k nearest, neighbors
/// N_i = {j in C_i : h_j < h_i}, edges {(i, j) : j in N_i} plus all self-loops.
TemporalGraph build_graph(const std::vector<ReservoirMeta>& metas, std::size_t k);

/// New snapshot with `removed` masked out. Removing a self-loop or an edge not
/// in the graph is an error; removing an already-masked edge is a no-op.
TemporalGraph apply_prune_mask(const TemporalGraph& graph, const std::vector<Edge>& removed);

/// Reads `id,lat,lon,elevation_m`; validates ranges and id uniqueness.
std::vector<ReservoirMeta> read_metadata(const std::filesystem::path& path);
void write_metadata(const std::filesystem::path& path, const std::vector<ReservoirMeta>& metas);
void validate_metadata(const std::vector<ReservoirMeta>& metas);

/// Edge list export `src,dst,active` using reservoir ids.
void write_edge_list(const std::filesystem::path& path, const TemporalGraph& graph);

}  // namespace resflow::geo
