#include "resflow/transformer.hpp"

#include <cmath>

#include "resflow/csv.hpp"
#include "resflow/errors.hpp"
#include "resflow/ops.hpp"

namespace resflow::transformer {

using ad::Tensor;

Tensor positional_encoding(std::size_t rows, std::size_t width) {
  std::vector<double> v(rows * width);
  for (std::size_t p = 0; p < rows; ++p) {
    for (std::size_t i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(width));
      v[p * width + i] = i % 2 == 0 ? std::sin(static_cast<double>(p) * freq) : std::cos(static_cast<double>(p) * freq);
    }
  }
  return Tensor({rows, width}, std::move(v));
}

ad::Mask causal_mask(std::size_t len) {
  ad::Mask m{{len, len}, std::vector<std::uint8_t>(len * len, 0)};
  for (std::size_t q = 0; q < len; ++q) {
    for (std::size_t k = 0; k <= q; ++k) m.keep[q * len + k] = 1;
  }
  return m;
}

MultiHeadAttention::MultiHeadAttention(std::size_t width, std::size_t heads_, Rng& rng)
    : wq(width, width, rng), wk(width, width, rng), wv(width, width, rng), wo(width, width, rng), heads(heads_) {
  if (heads_ == 0 || width % heads_ != 0) {
    throw ConfigError("attention width " + std::to_string(width) + " is not divisible by " + std::to_string(heads_) +
                      " heads");
  }
}

Tensor MultiHeadAttention::operator()(const Tensor& q, const Tensor& kv, const ad::Mask* mask,
                                      const nn::ForwardContext& ctx, Tensor* probs) const {
  const auto s = q.dim(0), lq = q.dim(1), lk = kv.dim(1), d = q.dim(2), dk = d / heads;
  auto split = [&](const Tensor& x, std::size_t len) {
    return ad::permute(ad::reshape(x, {s, len, heads, dk}), {0, 2, 1, 3});
  };
  const auto qh = split(wq(q), lq), kh = split(wk(kv), lk), vh = split(wv(kv), lk);
  const auto scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dk)));
  const auto p = mask ? ad::masked_softmax(scores, *mask) : ad::softmax(scores, -1);
  if (probs) *probs = p;
  const auto mixed = ad::matmul(nn::dropout(p, ctx), vh);
  return wo(ad::reshape(ad::permute(mixed, {0, 2, 1, 3}), {s, lq, d}));
}

void MultiHeadAttention::collect(const std::string& prefix, ParameterList& out) const {
  wq.collect(prefix + ".wq", out);
  wk.collect(prefix + ".wk", out);
  wv.collect(prefix + ".wv", out);
  wo.collect(prefix + ".wo", out);
}

FeedForward::FeedForward(std::size_t width, std::size_t hidden, Rng& rng) : in(width, hidden, rng), out(hidden, width, rng) {}

Tensor FeedForward::operator()(const Tensor& x, const nn::ForwardContext&) const { return out(ad::relu(in(x))); }

void FeedForward::collect(const std::string& prefix, ParameterList& params) const {
  in.collect(prefix + ".in", params);
  out.collect(prefix + ".out", params);
}

EncoderBlock::EncoderBlock(const TransformerConfig& cfg, Rng& rng)
    : ln1(cfg.width), ln2(cfg.width), attn(cfg.width, cfg.heads, rng), ff(cfg.width, cfg.ff, rng) {}

Tensor EncoderBlock::operator()(const Tensor& x, const nn::ForwardContext& ctx, Tensor* probs) const {
  const auto n1 = ln1(x);
  const auto h = ad::add(x, nn::dropout(attn(n1, n1, nullptr, ctx, probs), ctx));
  return ad::add(h, nn::dropout(ff(ln2(h), ctx), ctx));
}

void EncoderBlock::collect(const std::string& prefix, ParameterList& out) const {
  ln1.collect(prefix + ".ln1", out);
  attn.collect(prefix + ".attn", out);
  ln2.collect(prefix + ".ln2", out);
  ff.collect(prefix + ".ff", out);
}

DecoderBlock::DecoderBlock(const TransformerConfig& cfg, Rng& rng)
    : ln1(cfg.width),
      ln2(cfg.width),
      ln3(cfg.width),
      self_attn(cfg.width, cfg.heads, rng),
      cross_attn(cfg.width, cfg.heads, rng),
      ff(cfg.width, cfg.ff, rng) {}

Tensor DecoderBlock::operator()(const Tensor& x, const Tensor& memory, const nn::ForwardContext& ctx,
                                Tensor* self_probs, Tensor* cross_probs) const {
  const auto mask = causal_mask(x.dim(1));
  const auto n1 = ln1(x);
  auto h = ad::add(x, nn::dropout(self_attn(n1, n1, &mask, ctx, self_probs), ctx));
  h = ad::add(h, nn::dropout(cross_attn(ln2(h), memory, nullptr, ctx, cross_probs), ctx));
  return ad::add(h, nn::dropout(ff(ln3(h), ctx), ctx));
}

void DecoderBlock::collect(const std::string& prefix, ParameterList& out) const {
  ln1.collect(prefix + ".ln1", out);
  self_attn.collect(prefix + ".self_attn", out);
  ln2.collect(prefix + ".ln2", out);
  cross_attn.collect(prefix + ".cross_attn", out);
  ln3.collect(prefix + ".ln3", out);
  ff.collect(prefix + ".ff", out);
}

TemporalTransformer::TemporalTransformer(const TransformerConfig& cfg, Rng& rng)
    : config(cfg), encoder_norm(cfg.width), decoder_norm(cfg.width) {
  if (cfg.layers == 0 || cfg.history == 0 || cfg.latent == 0) throw ConfigError("transformer sizes must be >= 1");
  for (std::size_t l = 0; l < cfg.layers; ++l) encoder.emplace_back(cfg, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) decoder.emplace_back(cfg, rng);
  std::vector<double> start(cfg.width);
  for (auto& v : start) v = rng.normal(0.0, 0.02);
  start_token = Tensor({cfg.width}, std::move(start), true);
  latent = nn::Linear(cfg.width, cfg.latent, rng);
  w_d = nn::xavier({cfg.latent, 1}, cfg.latent, 1, rng);
  pos_encoder = positional_encoding(cfg.history, cfg.width);
}

Tensor TemporalTransformer::encode_sequence(const Tensor& seq, const nn::ForwardContext& ctx,
                                            AttentionCapture* capture) const {
  if (seq.rank() != 3 || seq.dim(1) != config.history || seq.dim(2) != config.width) {
    throw ad::ShapeError("encode_sequence: expected [S, " + std::to_string(config.history) + ", " +
                         std::to_string(config.width) + "], got " + ad::to_string(seq.shape()));
  }
  auto x = ad::add(seq, pos_encoder);
  for (const auto& block : encoder) {
    Tensor probs;
    x = block(x, ctx, capture ? &probs : nullptr);
    if (capture) capture->encoder_self.push_back(probs);
  }
  return encoder_norm(x);
}

Tensor TemporalTransformer::decode_states(const Tensor& fed, const Tensor& memory, const nn::ForwardContext& ctx,
                                          AttentionCapture* capture) const {
  auto x = ad::add(fed, positional_encoding(fed.dim(1), config.width));
  for (const auto& block : decoder) {
    Tensor cross;
    x = block(x, memory, ctx, nullptr, capture ? &cross : nullptr);
    if (capture) capture->decoder_cross.push_back(cross);
  }
  return decoder_norm(x);
}

Rollout TemporalTransformer::decode_rollout(const Tensor& memory, std::size_t horizon, const nn::ForwardContext& ctx,
                                            AttentionCapture* capture) const {
  if (horizon == 0) throw ConfigError("forecast horizon must be >= 1");
  const auto s = memory.dim(0), d = config.width;
  auto fed = ad::add(Tensor::zeros({s, 1, d}), ad::reshape(start_token, {1, 1, d}));
  std::vector<Tensor> preds, zs;
  for (std::size_t k = 1; k <= horizon; ++k) {
    const auto states = decode_states(fed, memory, ctx, k == horizon ? capture : nullptr);
    const auto state = ad::slice(states, 1, k - 1, k);
    const auto z = latent(state);
    zs.push_back(z);
    preds.push_back(ad::matmul(z, w_d));
    if (k < horizon) fed = ad::concat({fed, state}, 1);
  }
  return {ad::reshape(ad::concat(preds, 1), {s, horizon}), ad::concat(zs, 1)};
}

void TemporalTransformer::collect(const std::string& prefix, ParameterList& out) const {
  for (std::size_t l = 0; l < encoder.size(); ++l) encoder[l].collect(prefix + ".encoder" + std::to_string(l), out);
  encoder_norm.collect(prefix + ".encoder_norm", out);
  for (std::size_t l = 0; l < decoder.size(); ++l) decoder[l].collect(prefix + ".decoder" + std::to_string(l), out);
  decoder_norm.collect(prefix + ".decoder_norm", out);
  out.push_back({prefix + ".start_token", start_token});
  latent.collect(prefix + ".latent", out);
  out.push_back({prefix + ".w_d", w_d});
}

void append_temporal_rows(std::ostream& out, const std::vector<Tensor>& maps,
                          const std::vector<std::string>& reservoir_ids, std::size_t window) {
  const auto n = reservoir_ids.size();
  for (std::size_t l = 0; l < maps.size(); ++l) {
    const auto& m = maps[l];
    const auto heads = m.dim(1), lq = m.dim(2), lk = m.dim(3);
    const auto v = m.values();
    for (std::size_t r = 0; r < n; ++r) {
      const auto s = window * n + r;
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t q = 0; q < lq; ++q) {
          for (std::size_t k = 0; k < lk; ++k) {
            out << reservoir_ids[r] << ',' << l << ',' << h << ',' << q + 1 << ',' << k + 1 << ','
                << csv::format_double(v[((s * heads + h) * lq + q) * lk + k]) << '\n';
          }
        }
      }
    }
  }
}

}  // namespace resflow::transformer
