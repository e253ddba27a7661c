#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "resflow/geo_graph.hpp"
#include "resflow/nn.hpp"

namespace resflow::gat {

/// Which way messages travel along a built edge (i, j), where j is the lower
/// reservoir. `as_built`: node i aggregates from j. `reversed`: node j
/// aggregates from i, i.e. information flows downstream.
enum class EdgeDirection { as_built, reversed };
enum class HeadMerge { concat, mean };
enum class PruneMode { global, per_day };

struct GatConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t head_dim = 32;
  HeadMerge merge = HeadMerge::concat;
  double negative_slope = 0.2;
  EdgeDirection direction = EdgeDirection::as_built;
};

struct GatLayer {
  ad::Tensor w;      // [d_in, K * d_head]
  ad::Tensor a_dst;  // [K, d_head], scores the aggregating node
  ad::Tensor a_src;  // [K, d_head], scores the source node
  std::size_t heads = 0, head_dim = 0;
  HeadMerge merge = HeadMerge::concat;

  GatLayer() = default;
  GatLayer(std::size_t d_in, std::size_t heads, std::size_t head_dim, HeadMerge merge, Rng& rng);

  std::size_t out_dim() const { return merge == HeadMerge::concat ? heads * head_dim : head_dim; }
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct GatStack {
  GatConfig config;
  std::vector<GatLayer> layers;

  GatStack() = default;
  GatStack(std::size_t d_in, const GatConfig& cfg, Rng& rng);

  std::size_t out_dim() const { return layers.back().out_dim(); }
  void collect(const std::string& prefix, ParameterList& out) const;
};

/// (row, column) of the attention matrix holding edge `e`'s coefficient:
/// row = aggregating node, column = source.
std::pair<std::size_t, std::size_t> attention_cell(const geo::Edge& e, EdgeDirection dir);

/// Keep-mask over attention logits. One graph gives [N, N]; T daily graphs
/// give [1, T, 1, N, N] for inputs laid out [B, T, K, N, N].
ad::Mask attention_mask(const std::vector<geo::TemporalGraph>& days, EdgeDirection dir);

struct LayerOutput {
  ad::Tensor h;      // [B, T, N, d_out], after ReLU
  ad::Tensor alpha;  // [B, T, K, N, N]
};

/// One attention layer over x [B, T, N, d_in].
/// e_ij = LeakyReLU(a_dst . W h_i + a_src . W h_j), softmax over the kept
/// sources of i, heads merged by concatenation or mean, then ReLU.
LayerOutput gat_layer(const ad::Tensor& x, const ad::Mask& mask, const GatLayer& layer, double negative_slope);

struct GatOutput {
  ad::Tensor h;                     // [B, T, N, d_out]
  std::vector<ad::Tensor> alphas;   // per layer [B, T, K, N, N]
  std::vector<double> alpha_bar;    // [B, T, E] condensed, E = graph edge count
};

/// Both layers in sequence with dropout after each; condenses attention.
GatOutput gat_forward(const ad::Tensor& x, const std::vector<geo::TemporalGraph>& days, const GatStack& stack,
                      const nn::ForwardContext& ctx);

/// Mean over layers and heads of each edge's coefficient: [B, T, E].
/// Inactive edges get 0.
std::vector<double> condense(const std::vector<ad::Tensor>& alphas, const std::vector<geo::TemporalGraph>& days,
                             EdgeDirection dir);

/// Running sums of condensed attention per non-self edge. In global mode one
/// slot pools all days; in per-day mode slot t holds day t.
class AttentionLedger {
 public:
  AttentionLedger() = default;
  AttentionLedger(std::size_t edge_count, std::size_t days, PruneMode mode);

  /// Adds every active non-self edge of every (window, day) in alpha_bar [B, T, E].
  void observe(const std::vector<geo::TemporalGraph>& days, const std::vector<double>& alpha_bar);
  void record(std::size_t slot, std::size_t edge, double value);

  std::size_t slots() const { return sums_.size(); }
  std::size_t count(std::size_t slot, std::size_t edge) const { return counts_[slot][edge]; }
  /// Running mean; NaN when the edge was never observed in this slot.
  double mean(std::size_t slot, std::size_t edge) const;
  void reset();
  PruneMode mode() const { return mode_; }

 private:
  PruneMode mode_ = PruneMode::global;
  std::size_t days_ = 1;
  std::vector<std::vector<double>> sums_;
  std::vector<std::vector<std::size_t>> counts_;
};

struct PruneResult {
  std::vector<geo::TemporalGraph> days;
  std::vector<std::vector<geo::Edge>> removed;  // per graph slot

  std::size_t removed_count() const;
};

/// Masks every observed non-self edge whose running mean is strictly below
/// `tau`, then resets the ledger. Unobserved edges are kept.
PruneResult prune_step(AttentionLedger& ledger, const std::vector<geo::TemporalGraph>& days, double tau);

/// Pruning runs after `completed_epochs` epochs when it is a positive
/// multiple of `interval`.
bool prune_due(int completed_epochs, int interval);

/// Appends `epoch,day,src,dst,alpha_bar` rows from a per-day ledger.
void append_attention_rows(std::ostream& out, int epoch, const AttentionLedger& per_day,
                           const geo::TemporalGraph& graph);
/// Writes `src,dst,alpha_tilde,pruned` for every non-self edge. alpha_tilde is
/// the whole-run mean from a global ledger; `pruned` is 1 when the edge is
/// masked in any final daily graph.
void write_edge_summary(const std::filesystem::path& path, const AttentionLedger& global,
                        const std::vector<geo::TemporalGraph>& final_days);

EdgeDirection parse_direction(const std::string& s);
HeadMerge parse_merge(const std::string& s);
PruneMode parse_prune_mode(const std::string& s);

}  // namespace resflow::gat
