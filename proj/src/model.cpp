#include "resflow/model.hpp"

#include <cstring>
#include <map>

#include "resflow/errors.hpp"
#include "resflow/ops.hpp"

namespace resflow::model {

using ad::Tensor;

InflowModel::InflowModel(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
  if (cfg.history == 0 || cfg.horizon == 0) throw ConfigError("history and horizon must be >= 1");
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  auto enc_rng = Rng::stream(seed, "init.encoder");
  auto gat_rng = Rng::stream(seed, "init.gat");
  auto tf_rng = Rng::stream(seed, "init.temporal");
  auto head_rng = Rng::stream(seed, "init.head");
  encoder = encoder::FeatureEncoder(cfg.features, cfg.embed, cfg.encoder_depth, enc_rng);
  gat = gat::GatStack(cfg.embed, cfg.gat, gat_rng);
  transformer::TransformerConfig tc{gat.out_dim(), cfg.tf_layers, cfg.tf_heads, cfg.ff, cfg.latent, cfg.history};
  temporal = transformer::TemporalTransformer(tc, tf_rng);
  w_psi = nn::xavier({cfg.embed, cfg.horizon}, cfg.embed, cfg.horizon, head_rng);
}

ForwardOutput InflowModel::forward(const Tensor& history, const std::vector<geo::TemporalGraph>& days,
                               const nn::ForwardContext& ctx) const {
  if (history.rank() != 4 || history.dim(1) != config.history || history.dim(3) != config.features) {
    throw ad::ShapeError("forward: expected [B, " + std::to_string(config.history) + ", N, " +
                         std::to_string(config.features) + "], got " + ad::to_string(history.shape()));
  }
  const auto b = history.dim(0), t = history.dim(1), n = history.dim(2);
  ForwardOutput out;
  const auto h = encoder::encode(encoder, history);
  out.graph = gat_forward(h, days, gat, ctx);
  const auto width = gat.out_dim();
  const auto seq = ad::reshape(ad::permute(out.graph.h, {0, 2, 1, 3}), {b * n, t, width});
  auto* capture = ctx.capture ? &out.temporal : nullptr;
  const auto memory = temporal.encode_sequence(seq, ctx, capture);
  const auto rollout = temporal.decode_rollout(memory, config.horizon, ctx, capture);
  out.predictions = ad::reshape(rollout.predictions, {b, n, config.horizon});
  return out;
}

ParameterList InflowModel::parameters() const {
  ParameterList out;
  encoder.collect("encoder", out);
  gat.collect("gat", out);
  temporal.collect("temporal", out);
  out.push_back({"head.psi", w_psi});
  return out;
}

std::uint64_t parameter_hash(const ParameterList& params, const std::string& prefix) {
  std::uint64_t h = fnv1a("");
  for (const auto& p : params) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    h = fnv1a(p.name, h);
    h = fnv1a(ad::to_string(p.tensor.shape()), h);
    for (double v : p.tensor.values()) {
      char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      h = fnv1a(std::string_view(bytes, sizeof(double)), h);
    }
  }
  return h;
}

void assign_parameters(const ParameterList& params, const std::vector<std::pair<std::string, Tensor>>& values) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : values) by_name[name] = &t;
  for (const auto& p : params) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw DataError("checkpoint lacks parameter '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape()) {
      throw DataError("checkpoint parameter '" + p.name + "' has shape " + ad::to_string(it->second->shape()) +
                      ", model expects " + ad::to_string(p.tensor.shape()));
    }
    Tensor target = p.tensor;
    auto dst = target.mutable_values();
    const auto src = it->second->values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace resflow::model
