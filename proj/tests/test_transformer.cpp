#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "resflow/errors.hpp"
#include "resflow/ops.hpp"
#include "resflow/transformer.hpp"
#include "support/gradcheck.hpp"

using namespace resflow;
using namespace resflow::transformer;
using ad::Tensor;

namespace {

TransformerConfig small_config() { return {8, 2, 2, 16, 4, 5}; }

Tensor random_tensor(ad::Shape shape, Rng& rng) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor(std::move(shape), std::move(v));
}

void expect_rows_normalized(const Tensor& probs) {
  const auto len = probs.dim(-1);
  const auto v = probs.values();
  for (std::size_t r = 0; r < v.size() / len; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < len; ++c) s += v[r * len + c];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

}  // namespace

TEST(PositionalEncoding, SinusoidTable) {
  auto p = positional_encoding(4, 6);
  EXPECT_EQ(p.shape(), (ad::Shape{4, 6}));
  EXPECT_EQ(p.at(0), 0.0);
  EXPECT_FLOAT_EQ(p.at(1), 1.0f);
  EXPECT_FLOAT_EQ(p.at(2 * 6 + 0), static_cast<float>(std::sin(2.0)));
  EXPECT_FLOAT_EQ(p.at(3 * 6 + 3), static_cast<float>(std::cos(3.0 * std::pow(10000.0, -2.0 / 6.0))));
}

TEST(CausalMask, LowerTriangle) {
  auto m = causal_mask(3);
  EXPECT_EQ(m.keep, (std::vector<std::uint8_t>{1, 0, 0, 1, 1, 0, 1, 1, 1}));
}

TEST(Encoder, AttentionRowsSumToOne) {
  Rng rng(1);
  TemporalTransformer tf(small_config(), rng);
  AttentionCapture cap;
  tf.encode_sequence(random_tensor({3, 5, 8}, rng), {}, &cap);
  ASSERT_EQ(cap.encoder_self.size(), 2u);
  for (const auto& p : cap.encoder_self) {
    EXPECT_EQ(p.shape(), (ad::Shape{3, 2, 5, 5}));
    expect_rows_normalized(p);
  }
}

TEST(Encoder, IdenticalTokensGiveIdenticalSteps) {
  Rng rng(2);
  TemporalTransformer tf(small_config(), rng);
  tf.pos_encoder = Tensor::zeros({5, 8});
  auto m = tf.encode_sequence(Tensor::zeros({2, 5, 8}), {});
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t t = 1; t < 5; ++t)
      for (std::size_t f = 0; f < 8; ++f) EXPECT_EQ(m.at((s * 5 + t) * 8 + f), m.at((s * 5) * 8 + f));
}

TEST(Encoder, WrongLengthIsRejected) {
  Rng rng(3);
  TemporalTransformer tf(small_config(), rng);
  EXPECT_THROW(tf.encode_sequence(Tensor::zeros({1, 4, 8}), {}), ad::ShapeError);
  EXPECT_THROW(tf.encode_sequence(Tensor::zeros({1, 5, 6}), {}), ad::ShapeError);
}

TEST(Decoder, ZeroHeadGivesZeroForecasts) {
  Rng rng(4);
  TemporalTransformer tf(small_config(), rng);
  for (auto& v : tf.w_d.mutable_values()) v = 0.0;
  auto out = tf.decode_rollout(tf.encode_sequence(random_tensor({3, 5, 8}, rng), {}), 7, {});
  EXPECT_EQ(out.predictions.shape(), (ad::Shape{3, 7}));
  EXPECT_EQ(out.latents.shape(), (ad::Shape{3, 7, 4}));
  for (double v : out.predictions.values()) EXPECT_EQ(v, 0.0);
}

TEST(Decoder, SingleStepHorizon) {
  Rng rng(5);
  TemporalTransformer tf(small_config(), rng);
  AttentionCapture cap;
  auto out = tf.decode_rollout(tf.encode_sequence(random_tensor({2, 5, 8}, rng), {}), 1, {}, &cap);
  EXPECT_EQ(out.predictions.shape(), (ad::Shape{2, 1}));
  ASSERT_EQ(cap.decoder_cross.size(), 2u);
  EXPECT_EQ(cap.decoder_cross[0].shape(), (ad::Shape{2, 2, 1, 5}));
  EXPECT_THROW(tf.decode_rollout(Tensor::zeros({1, 5, 8}), 0, {}), ConfigError);
}

TEST(Decoder, StepOutputIgnoresLaterFedStates) {
  Rng rng(6);
  TemporalTransformer tf(small_config(), rng);
  auto memory = tf.encode_sequence(random_tensor({2, 5, 8}, rng), {});
  auto fed = random_tensor({2, 4, 8}, rng);
  auto base = tf.decode_states(fed, memory, {});
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> changed(fed.values().begin(), fed.values().end());
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t p = k + 1; p < 4; ++p)
        for (std::size_t f = 0; f < 8; ++f) changed[(s * 4 + p) * 8 + f] = rng.uniform(-9.0, 9.0);
    auto other = tf.decode_states(Tensor({2, 4, 8}, changed), memory, {});
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t p = 0; p <= k; ++p)
        for (std::size_t f = 0; f < 8; ++f) EXPECT_EQ(base.at((s * 4 + p) * 8 + f), other.at((s * 4 + p) * 8 + f));
  }
}

TEST(Decoder, CrossAttentionRowsSumToOne) {
  Rng rng(7);
  TemporalTransformer tf(small_config(), rng);
  AttentionCapture cap;
  tf.decode_rollout(tf.encode_sequence(random_tensor({2, 5, 8}, rng), {}), 3, {}, &cap);
  for (const auto& p : cap.decoder_cross) {
    EXPECT_EQ(p.shape(), (ad::Shape{2, 2, 3, 5}));
    expect_rows_normalized(p);
  }
}

TEST(Decoder, EvaluationIsDeterministic) {
  Rng rng(8);
  TemporalTransformer tf(small_config(), rng);
  auto x = random_tensor({2, 5, 8}, rng);
  auto a = tf.decode_rollout(tf.encode_sequence(x, {}), 3, {}).predictions;
  auto b = tf.decode_rollout(tf.encode_sequence(x, {}), 3, {}).predictions;
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i));
}

TEST(Transformer, GradientsMatchFiniteDifferences) {
  ad::PrecisionScope f64(ad::Precision::f64);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(40 + seed);
    TemporalTransformer tf({4, 1, 2, 8, 3, 3}, rng);
    auto x = random_tensor({2, 3, 4}, rng);
    auto target = random_tensor({2, 2}, rng);
    ParameterList params;
    tf.collect("temporal", params);
    auto r = oracle::check_gradients(
        params, [&] { return ad::mse_loss(tf.decode_rollout(tf.encode_sequence(x, {}), 2, {}).predictions, target); });
    EXPECT_LT(r.rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(Export, TemporalRowsForOneWindow) {
  std::vector<double> v(2 * 1 * 2 * 2);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.125 * static_cast<double>(i);
  std::ostringstream out;
  append_temporal_rows(out, {Tensor({2, 1, 2, 2}, v)}, {"A"}, 1);
  EXPECT_EQ(out.str(),
            "A,0,0,1,1,0.5\n"
            "A,0,0,1,2,0.625\n"
            "A,0,0,2,1,0.75\n"
            "A,0,0,2,2,0.875\n");
}

TEST(Config, HeadsMustDivideWidth) {
  Rng rng(9);
  EXPECT_THROW(TemporalTransformer({6, 1, 4, 8, 2, 3}, rng), ConfigError);
}
