#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "resflow/nn.hpp"

namespace resflow::transformer {

struct TransformerConfig {
  std::size_t width = 128;   // model width, equal to the graph layer output
  std::size_t layers = 2;    // encoder blocks; the decoder has as many
  std::size_t heads = 4;
  std::size_t ff = 256;
  std::size_t latent = 64;   // r, width of z
  std::size_t history = 30;  // T
};

/// Fixed sinusoidal table [rows, width].
ad::Tensor positional_encoding(std::size_t rows, std::size_t width);

/// Lower-triangular keep mask [len, len].
ad::Mask causal_mask(std::size_t len);

struct MultiHeadAttention {
  nn::Linear wq, wk, wv, wo;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t width, std::size_t heads, Rng& rng);

  /// q [S, Lq, D] attends over kv [S, Lk, D]. When `probs` is given it
  /// receives the attention weights [S, heads, Lq, Lk].
  ad::Tensor operator()(const ad::Tensor& q, const ad::Tensor& kv, const ad::Mask* mask, const nn::ForwardContext& ctx,
                        ad::Tensor* probs = nullptr) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct FeedForward {
  nn::Linear in, out;

  FeedForward() = default;
  FeedForward(std::size_t width, std::size_t hidden, Rng& rng);
  ad::Tensor operator()(const ad::Tensor& x, const nn::ForwardContext& ctx) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

/// Pre-norm block: x + SelfAttn(LN x), then x + FF(LN x).
struct EncoderBlock {
  nn::LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  FeedForward ff;

  EncoderBlock() = default;
  EncoderBlock(const TransformerConfig& cfg, Rng& rng);
  ad::Tensor operator()(const ad::Tensor& x, const nn::ForwardContext& ctx, ad::Tensor* probs = nullptr) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

/// Pre-norm block: causal self-attention, cross-attention to memory, FF.
struct DecoderBlock {
  nn::LayerNorm ln1, ln2, ln3;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ff;

  DecoderBlock() = default;
  DecoderBlock(const TransformerConfig& cfg, Rng& rng);
  ad::Tensor operator()(const ad::Tensor& x, const ad::Tensor& memory, const nn::ForwardContext& ctx,
                        ad::Tensor* self_probs = nullptr, ad::Tensor* cross_probs = nullptr) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

/// Attention maps kept for export when the forward context asks for them.
struct AttentionCapture {
  std::vector<ad::Tensor> encoder_self;  // per block [S, heads, T, T]
  std::vector<ad::Tensor> decoder_cross; // per block, last step [S, heads, H, T]
};

struct Rollout {
  ad::Tensor predictions;  // [S, H]
  ad::Tensor latents;      // [S, H, r]
};

struct TemporalTransformer {
  TransformerConfig config;
  std::vector<EncoderBlock> encoder;
  std::vector<DecoderBlock> decoder;
  nn::LayerNorm encoder_norm, decoder_norm;
  ad::Tensor start_token;  // [D]
  nn::Linear latent;       // D -> r
  ad::Tensor w_d;          // [r, 1]
  ad::Tensor pos_encoder;  // [T, D]

  TemporalTransformer() = default;
  TemporalTransformer(const TransformerConfig& cfg, Rng& rng);

  /// Memory M = Encoder(H + P) for sequences [S, T, D]; no causal mask.
  ad::Tensor encode_sequence(const ad::Tensor& seq, const nn::ForwardContext& ctx,
                             AttentionCapture* capture = nullptr) const;

  /// Decoder over fed states [S, L, D] (positional encoding added inside);
  /// returns the final-norm outputs [S, L, D]. Position k only sees fed
  /// states 1..k.
  ad::Tensor decode_states(const ad::Tensor& fed, const ad::Tensor& memory, const nn::ForwardContext& ctx,
                           AttentionCapture* capture = nullptr) const;

  /// Recursive rollout of H steps: step 1 feeds the start token, step k > 1
  /// additionally feeds the decoder state produced at step k - 1.
  /// z_k = latent(state_k), prediction_k = z_k w_d.
  Rollout decode_rollout(const ad::Tensor& memory, std::size_t horizon, const nn::ForwardContext& ctx,
                         AttentionCapture* capture = nullptr) const;

  void collect(const std::string& prefix, ParameterList& out) const;
};

/// Appends `reservoir,layer,head,query_step,key_step,beta` rows. `maps`
/// holds per-layer [S, heads, Lq, Lk] tensors with S = windows x reservoirs;
/// only window `window` is written.
void append_temporal_rows(std::ostream& out, const std::vector<ad::Tensor>& maps,
                          const std::vector<std::string>& reservoir_ids, std::size_t window);

}  // namespace resflow::transformer
