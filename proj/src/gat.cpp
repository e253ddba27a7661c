#include "resflow/gat.hpp"

#include <cmath>
#include <fstream>
#include <ostream>

#include "resflow/csv.hpp"
#include "resflow/errors.hpp"
#include "resflow/ops.hpp"

namespace resflow::gat {

using ad::Tensor;
using geo::TemporalGraph;

GatLayer::GatLayer(std::size_t d_in, std::size_t heads_, std::size_t head_dim_, HeadMerge merge_, Rng& rng)
    : w(nn::xavier({d_in, heads_ * head_dim_}, d_in, head_dim_, rng)),
      a_dst(nn::xavier({heads_, head_dim_}, head_dim_, 1, rng)),
      a_src(nn::xavier({heads_, head_dim_}, head_dim_, 1, rng)),
      heads(heads_),
      head_dim(head_dim_),
      merge(merge_) {
  if (heads_ == 0 || head_dim_ == 0) throw ConfigError("GAT heads and head width must be >= 1");
}

void GatLayer::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".w", w});
  out.push_back({prefix + ".a_dst", a_dst});
  out.push_back({prefix + ".a_src", a_src});
}

GatStack::GatStack(std::size_t d_in, const GatConfig& cfg, Rng& rng) : config(cfg) {
  if (cfg.layers == 0) throw ConfigError("GAT needs at least 1 layer");
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    layers.emplace_back(l == 0 ? d_in : layers.back().out_dim(), cfg.heads, cfg.head_dim, cfg.merge, rng);
  }
}

void GatStack::collect(const std::string& prefix, ParameterList& out) const {
  for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(prefix + ".layer" + std::to_string(l), out);
}

std::pair<std::size_t, std::size_t> attention_cell(const geo::Edge& e, EdgeDirection dir) {
  return dir == EdgeDirection::as_built ? std::pair{e.src, e.dst} : std::pair{e.dst, e.src};
}

ad::Mask attention_mask(const std::vector<TemporalGraph>& days, EdgeDirection dir) {
  if (days.empty()) throw std::invalid_argument("attention_mask: no graphs");
  const auto n = days.front().node_count();
  ad::Mask mask;
  mask.shape = days.size() == 1 ? ad::Shape{n, n} : ad::Shape{1, days.size(), 1, n, n};
  mask.keep.assign(days.size() * n * n, 0);
  for (std::size_t t = 0; t < days.size(); ++t) {
    if (days[t].node_count() != n) throw std::invalid_argument("attention_mask: daily graphs differ in size");
    for (std::size_t e = 0; e < days[t].edges().size(); ++e) {
      if (!days[t].active()[e]) continue;
      const auto [r, c] = attention_cell(days[t].edges()[e], dir);
      mask.keep[(t * n + r) * n + c] = 1;
    }
  }
  return mask;
}

LayerOutput gat_layer(const Tensor& x, const ad::Mask& mask, const GatLayer& layer, double negative_slope) {
  if (x.rank() != 4 || x.dim(3) != layer.w.dim(0)) {
    throw ad::ShapeError("gat_layer: input " + ad::to_string(x.shape()) + " does not match weight " +
                         ad::to_string(layer.w.shape()));
  }
  const auto b = x.dim(0), t = x.dim(1), n = x.dim(2), k = layer.heads, dh = layer.head_dim;
  const auto wh = ad::permute(ad::reshape(ad::matmul(x, layer.w), {b, t, n, k, dh}), {0, 1, 3, 2, 4});
  const auto s_dst = ad::sum(ad::mul(wh, ad::reshape(layer.a_dst, {k, 1, dh})), -1);
  const auto s_src = ad::sum(ad::mul(wh, ad::reshape(layer.a_src, {k, 1, dh})), -1);
  const auto logits =
      ad::leaky_relu(ad::add(ad::reshape(s_dst, {b, t, k, n, 1}), ad::reshape(s_src, {b, t, k, 1, n})), negative_slope);
  LayerOutput out;
  out.alpha = ad::masked_softmax(logits, mask);
  const auto mixed = ad::matmul(out.alpha, wh);  // [B, T, K, N, dh]
  const auto merged = layer.merge == HeadMerge::concat
                          ? ad::reshape(ad::permute(mixed, {0, 1, 3, 2, 4}), {b, t, n, k * dh})
                          : ad::mean(mixed, 2);
  out.h = ad::relu(merged);
  return out;
}

std::vector<double> condense(const std::vector<Tensor>& alphas, const std::vector<TemporalGraph>& days,
                             EdgeDirection dir) {
  if (alphas.empty()) return {};
  const auto& shape = alphas.front().shape();
  const auto b = shape[0], t = shape[1], k = shape[2], n = shape[3];
  const auto& edges = days.front().edges();
  const auto e_count = edges.size();
  std::vector<double> out(b * t * e_count, 0.0);
  const double norm = 1.0 / static_cast<double>(alphas.size() * k);
  for (const auto& alpha : alphas) {
    const auto v = alpha.values();
    for (std::size_t bi = 0; bi < b; ++bi) {
      for (std::size_t ti = 0; ti < t; ++ti) {
        const auto& g = days.size() == 1 ? days[0] : days[ti];
        for (std::size_t e = 0; e < e_count; ++e) {
          if (!g.active()[e]) continue;
          const auto [r, c] = attention_cell(edges[e], dir);
          double acc = 0.0;
          for (std::size_t h = 0; h < k; ++h) acc += v[(((bi * t + ti) * k + h) * n + r) * n + c];
          out[(bi * t + ti) * e_count + e] += acc * norm;
        }
      }
    }
  }
  return out;
}

GatOutput gat_forward(const Tensor& x, const std::vector<TemporalGraph>& days, const GatStack& stack,
                      const nn::ForwardContext& ctx) {
  if (days.size() != 1 && days.size() != x.dim(1)) {
    throw ad::ShapeError("gat_forward: " + std::to_string(days.size()) + " daily graphs for " + std::to_string(x.dim(1)) +
                         " days");
  }
  if (days.front().node_count() != x.dim(2)) {
    throw ad::ShapeError("gat_forward: graph has " + std::to_string(days.front().node_count()) + " nodes, input " +
                         ad::to_string(x.shape()));
  }
  const auto mask = attention_mask(days, stack.config.direction);
  GatOutput out;
  out.h = x;
  for (const auto& layer : stack.layers) {
    auto lo = gat_layer(out.h, mask, layer, stack.config.negative_slope);
    out.h = nn::dropout(lo.h, ctx);
    out.alphas.push_back(lo.alpha);
  }
  out.alpha_bar = condense(out.alphas, days, stack.config.direction);
  return out;
}

AttentionLedger::AttentionLedger(std::size_t edge_count, std::size_t days, PruneMode mode)
    : mode_(mode),
      days_(days),
      sums_(mode == PruneMode::global ? 1 : days, std::vector<double>(edge_count, 0.0)),
      counts_(sums_.size(), std::vector<std::size_t>(edge_count, 0)) {}

void AttentionLedger::record(std::size_t slot, std::size_t edge, double value) {
  sums_.at(slot).at(edge) += value;
  ++counts_[slot][edge];
}

void AttentionLedger::observe(const std::vector<TemporalGraph>& days, const std::vector<double>& alpha_bar) {
  const auto& edges = days.front().edges();
  const auto e_count = edges.size();
  const auto per_window = days_ * e_count;
  if (per_window == 0 || alpha_bar.size() % per_window != 0) {
    throw std::invalid_argument("ledger: condensed attention does not match " + std::to_string(days_) + " days x " +
                                std::to_string(e_count) + " edges");
  }
  const auto windows = alpha_bar.size() / per_window;
  for (std::size_t b = 0; b < windows; ++b) {
    for (std::size_t t = 0; t < days_; ++t) {
      const auto& g = days.size() == 1 ? days[0] : days[t];
      const auto slot = mode_ == PruneMode::global ? 0 : t;
      for (std::size_t e = 0; e < e_count; ++e) {
        if (edges[e].self_loop() || !g.active()[e]) continue;
        record(slot, e, alpha_bar[(b * days_ + t) * e_count + e]);
      }
    }
  }
}

double AttentionLedger::mean(std::size_t slot, std::size_t edge) const {
  const auto c = counts_.at(slot).at(edge);
  return c == 0 ? NAN : sums_[slot][edge] / static_cast<double>(c);
}

void AttentionLedger::reset() {
  for (auto& s : sums_) std::fill(s.begin(), s.end(), 0.0);
  for (auto& c : counts_) std::fill(c.begin(), c.end(), 0);
}

std::size_t PruneResult::removed_count() const {
  std::size_t n = 0;
  for (const auto& r : removed) n += r.size();
  return n;
}

PruneResult prune_step(AttentionLedger& ledger, const std::vector<TemporalGraph>& days, double tau) {
  if (ledger.mode() == PruneMode::global && days.size() != 1) {
    throw std::invalid_argument("prune_step: global mode keeps a single shared graph");
  }
  if (ledger.mode() == PruneMode::per_day && days.size() != ledger.slots()) {
    throw std::invalid_argument("prune_step: per-day mode needs one graph per ledger slot");
  }
  PruneResult result;
  for (std::size_t s = 0; s < days.size(); ++s) {
    const auto& g = days[s];
    std::vector<geo::Edge> removed;
    for (std::size_t e = 0; e < g.edges().size(); ++e) {
      if (g.edges()[e].self_loop() || !g.active()[e] || ledger.count(s, e) == 0) continue;
      if (ledger.mean(s, e) < tau) removed.push_back(g.edges()[e]);
    }
    result.days.push_back(geo::apply_prune_mask(g, removed));
    result.removed.push_back(std::move(removed));
  }
  ledger.reset();
  return result;
}

bool prune_due(int completed_epochs, int interval) {
  return interval > 0 && completed_epochs > 0 && completed_epochs % interval == 0;
}

void append_attention_rows(std::ostream& out, int epoch, const AttentionLedger& per_day, const TemporalGraph& graph) {
  const auto& ids = graph.node_ids();
  for (std::size_t t = 0; t < per_day.slots(); ++t) {
    for (std::size_t e = 0; e < graph.edges().size(); ++e) {
      if (graph.edges()[e].self_loop() || per_day.count(t, e) == 0) continue;
      out << epoch << ',' << t + 1 << ',' << ids[graph.edges()[e].src] << ',' << ids[graph.edges()[e].dst] << ','
          << csv::format_double(per_day.mean(t, e)) << '\n';
    }
  }
}

void write_edge_summary(const std::filesystem::path& path, const AttentionLedger& global,
                        const std::vector<TemporalGraph>& final_days) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "src,dst,alpha_tilde,pruned\n";
  const auto& g = final_days.front();
  for (std::size_t e = 0; e < g.edges().size(); ++e) {
    if (g.edges()[e].self_loop()) continue;
    bool pruned = false;
    for (const auto& d : final_days) pruned = pruned || !d.active()[e];
    const double m = global.count(0, e) == 0 ? NAN : global.mean(0, e);
    out << g.node_ids()[g.edges()[e].src] << ',' << g.node_ids()[g.edges()[e].dst] << ','
        << (std::isnan(m) ? std::string("nan") : csv::format_double(m)) << ',' << (pruned ? 1 : 0) << '\n';
  }
}

EdgeDirection parse_direction(const std::string& s) {
  if (s == "as_built") return EdgeDirection::as_built;
  if (s == "reversed") return EdgeDirection::reversed;
  throw ConfigError("edge_direction must be as_built or reversed, got '" + s + "'");
}

HeadMerge parse_merge(const std::string& s) {
  if (s == "concat") return HeadMerge::concat;
  if (s == "mean") return HeadMerge::mean;
  throw ConfigError("head_merge must be concat or mean, got '" + s + "'");
}

PruneMode parse_prune_mode(const std::string& s) {
  if (s == "global") return PruneMode::global;
  if (s == "per_day") return PruneMode::per_day;
  throw ConfigError("prune_mode must be global or per_day, got '" + s + "'");
}

}  // namespace resflow::gat
