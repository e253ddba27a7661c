#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resflow/encoder.hpp"
#include "resflow/gat.hpp"
#include "resflow/transformer.hpp"

namespace resflow::model {

struct ModelConfig {
  std::size_t features = 3;
  std::size_t embed = 128;  // d
  std::size_t encoder_depth = 2;
  gat::GatConfig gat;
  std::size_t tf_layers = 2;
  std::size_t tf_heads = 4;
  std::size_t ff = 256;
  std::size_t latent = 64;  // r
  std::size_t history = 30;
  std::size_t horizon = 7;
  double dropout = 0.2;
};

struct ForwardOutput {
  ad::Tensor predictions;  // [B, N, H], scaled units
  gat::GatOutput graph;
  transformer::AttentionCapture temporal;
};

/// Feature encoder -> daily graph attention -> per-reservoir transformer.
/// Each component draws its initial values from its own sub-stream of the
/// seed, so re-initializing one leaves the others bit-identical.
struct InflowModel {
  ModelConfig config;
  encoder::FeatureEncoder encoder;
  gat::GatStack gat;
  transformer::TemporalTransformer temporal;
  ad::Tensor w_psi;  // auxiliary head d -> H used by pretraining

  InflowModel() = default;
  InflowModel(const ModelConfig& cfg, std::uint64_t seed);

  /// history [B, T, N, F] scaled -> forecasts [B, N, H].
  ForwardOutput forward(const ad::Tensor& history, const std::vector<geo::TemporalGraph>& days,
                        const nn::ForwardContext& ctx) const;

  /// Canonically named parameters in a fixed order.
  ParameterList parameters() const;
};

/// FNV-1a over names, shapes and values of the parameters whose name starts
/// with `prefix` (all when empty).
std::uint64_t parameter_hash(const ParameterList& params, const std::string& prefix = "");

/// Copies values into `params` by name; every name must be present.
void assign_parameters(const ParameterList& params, const std::vector<std::pair<std::string, ad::Tensor>>& values);

}  // namespace resflow::model
