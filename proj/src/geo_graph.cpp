#include "resflow/geo_graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <stdexcept>

#include "resflow/csv.hpp"
#include "resflow/errors.hpp"

namespace resflow::geo {

namespace {

void check_point(GeoPoint p) {
  if (!(p.lat >= -90.0 && p.lat <= 90.0) || !(p.lon >= -180.0 && p.lon <= 180.0)) {
    throw std::invalid_argument("haversine: coordinate out of range (" + std::to_string(p.lat) + ", " +
                                std::to_string(p.lon) + ")");
  }
}

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

}  // namespace

double haversine_km(GeoPoint a, GeoPoint b) {
  check_point(a);
  check_point(b);
  const double dlat = radians(b.lat - a.lat);
  const double dlon = radians(b.lon - a.lon);
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlon / 2.0);
  const double h = s1 * s1 + std::cos(radians(a.lat)) * std::cos(radians(b.lat)) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(std::min(1.0, h)));
}

TemporalGraph::TemporalGraph(std::vector<std::string> node_ids, std::vector<Edge> edges, std::vector<bool> active)
    : node_ids_(std::move(node_ids)), edges_(std::move(edges)), active_(std::move(active)) {
  const auto n = node_ids_.size();
  if (active_.size() != edges_.size()) throw std::invalid_argument("graph: prune mask size differs from edge count");
  adjacency_.assign(n * n, 0);
  std::vector<bool> has_self(n, false);
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const auto& edge = edges_[e];
    if (edge.src >= n || edge.dst >= n) throw std::invalid_argument("graph: edge endpoint out of range");
    if (edge.self_loop()) {
      if (!active_[e]) throw std::invalid_argument("graph: self-loops cannot be masked");
      has_self[edge.src] = true;
    }
    if (adjacency_[edge.src * n + edge.dst] || (e > 0 && edge_index(edge.src, edge.dst).value() != e)) {
      throw std::invalid_argument("graph: duplicate edge");
    }
    if (active_[e]) adjacency_[edge.src * n + edge.dst] = 1;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!has_self[i]) throw std::invalid_argument("graph: node " + node_ids_[i] + " lacks its self-loop");
  }
}

std::optional<std::size_t> TemporalGraph::edge_index(std::size_t src, std::size_t dst) const {
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    if (edges_[e].src == src && edges_[e].dst == dst) return e;
  }
  return std::nullopt;
}

std::size_t TemporalGraph::active_edge_count() const {
  return static_cast<std::size_t>(std::count(active_.begin(), active_.end(), true));
}

std::size_t TemporalGraph::active_non_self_count() const { return active_edge_count() - node_count(); }

std::vector<Edge> TemporalGraph::active_non_self_edges() const {
  std::vector<Edge> out;
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    if (active_[e] && !edges_[e].self_loop()) out.push_back(edges_[e]);
  }
  return out;
}

std::vector<std::size_t> nearest_candidates(const std::vector<ReservoirMeta>& metas, std::size_t i, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> dist;
  for (std::size_t j = 0; j < metas.size(); ++j) {
    if (j != i) dist.emplace_back(haversine_km(metas[i].position(), metas[j].position()), j);
  }
  std::sort(dist.begin(), dist.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return metas[a.second].id < metas[b.second].id;
  });
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < std::min(k, dist.size()); ++r) out.push_back(dist[r].second);
  return out;
}

TemporalGraph build_graph(const std::vector<ReservoirMeta>& metas, std::size_t k) {
  if (metas.empty()) throw std::invalid_argument("build_graph: no reservoirs");
  validate_metadata(metas);
  std::vector<std::string> ids;
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < metas.size(); ++i) {
    ids.push_back(metas[i].id);
    edges.push_back({i, i});
    auto candidates = nearest_candidates(metas, i, k);
    std::sort(candidates.begin(), candidates.end());
    for (auto j : candidates) {
      if (metas[j].elevation_m < metas[i].elevation_m) edges.push_back({i, j});
    }
  }
  std::vector<bool> active(edges.size(), true);
  return TemporalGraph(std::move(ids), std::move(edges), std::move(active));
}

TemporalGraph apply_prune_mask(const TemporalGraph& graph, const std::vector<Edge>& removed) {
  auto active = graph.active();
  for (const auto& edge : removed) {
    if (edge.self_loop()) throw std::invalid_argument("apply_prune_mask: self-loops are never prunable");
    auto idx = graph.edge_index(edge.src, edge.dst);
    if (!idx) {
      throw std::invalid_argument("apply_prune_mask: edge (" + std::to_string(edge.src) + "," +
                                  std::to_string(edge.dst) + ") is not in the graph");
    }
    active[*idx] = false;
  }
  return TemporalGraph(graph.node_ids(), graph.edges(), std::move(active));
}

void validate_metadata(const std::vector<ReservoirMeta>& metas) {
  std::set<std::string> seen;
  for (const auto& m : metas) {
    if (m.id.empty()) throw DataError("reservoir metadata: empty id");
    if (!seen.insert(m.id).second) throw DataError("reservoir metadata: duplicate id '" + m.id + "'");
    if (!(m.lat >= -90.0 && m.lat <= 90.0) || !(m.lon >= -180.0 && m.lon <= 180.0)) {
      throw DataError("reservoir metadata: coordinates of '" + m.id + "' out of range");
    }
    if (!std::isfinite(m.elevation_m)) throw DataError("reservoir metadata: elevation of '" + m.id + "' not finite");
  }
}

std::vector<ReservoirMeta> read_metadata(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto c_id = table.column("id"), c_lat = table.column("lat"), c_lon = table.column("lon"),
             c_elev = table.column("elevation_m");
  std::vector<ReservoirMeta> out;
  for (const auto& row : table.rows) {
    const auto ctx = path.filename().string() + " row '" + row[c_id] + "'";
    out.push_back({row[c_id], csv::to_double(row[c_lat], ctx), csv::to_double(row[c_lon], ctx),
                   csv::to_double(row[c_elev], ctx)});
  }
  validate_metadata(out);
  return out;
}

void write_metadata(const std::filesystem::path& path, const std::vector<ReservoirMeta>& metas) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "id,lat,lon,elevation_m\n";
  for (const auto& m : metas) {
    out << m.id << ',' << csv::format_double(m.lat) << ',' << csv::format_double(m.lon) << ','
        << csv::format_double(m.elevation_m) << '\n';
  }
}

void write_edge_list(const std::filesystem::path& path, const TemporalGraph& graph) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "src,dst,active\n";
  for (std::size_t e = 0; e < graph.edges().size(); ++e) {
    const auto& edge = graph.edges()[e];
    out << graph.node_ids()[edge.src] << ',' << graph.node_ids()[edge.dst] << ',' << (graph.active()[e] ? 1 : 0)
        << '\n';
  }
}

}  // namespace resflow::geo
