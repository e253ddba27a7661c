#include <gtest/gtest.h>

#include <cmath>

#include "resflow/errors.hpp"
#include "resflow/model.hpp"
#include "resflow/ops.hpp"
#include "support/gradcheck.hpp"

using namespace resflow;
using namespace resflow::model;
using ad::Tensor;
using geo::Edge;
using geo::TemporalGraph;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.embed = 8;
  cfg.gat = {2, 2, 4, gat::HeadMerge::concat, 0.2, gat::EdgeDirection::reversed};
  cfg.tf_layers = 1;
  cfg.tf_heads = 2;
  cfg.ff = 16;
  cfg.latent = 4;
  cfg.history = 5;
  cfg.horizon = 2;
  cfg.dropout = 0.0;
  return cfg;
}

TemporalGraph chain3() {
  std::vector<Edge> edges{{0, 0}, {1, 1}, {2, 2}, {0, 1}, {0, 2}, {1, 2}};
  return TemporalGraph({"A", "B", "C"}, edges, std::vector<bool>(edges.size(), true));
}

Tensor random_tensor(ad::Shape shape, Rng& rng) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor(std::move(shape), std::move(v));
}

double grad_norm(const Tensor& t) {
  double s = 0.0;
  for (double g : t.grad()) s += g * g;
  return std::sqrt(s);
}

}  // namespace

TEST(InflowModel, ForecastShape) {
  InflowModel m(tiny_config(), 1);
  Rng rng(1);
  auto out = m.forward(random_tensor({4, 5, 3, 3}, rng), {chain3()}, {});
  EXPECT_EQ(out.predictions.shape(), (ad::Shape{4, 3, 2}));
  EXPECT_EQ(out.graph.alpha_bar.size(), 4u * 5u * 6u);
  EXPECT_THROW(m.forward(random_tensor({1, 4, 3, 3}, rng), {chain3()}, {}), ad::ShapeError);
}

TEST(InflowModel, SymmetricReservoirsGetIdenticalForecasts) {
  // A and B both feed only into C; with equal features they are interchangeable.
  std::vector<Edge> edges{{0, 0}, {1, 1}, {2, 2}, {0, 2}, {1, 2}};
  TemporalGraph g({"A", "B", "C"}, edges, std::vector<bool>(edges.size(), true));
  auto cfg = tiny_config();
  cfg.gat.direction = gat::EdgeDirection::as_built;
  InflowModel m(cfg, 2);
  Rng rng(2);
  auto x = random_tensor({2, 5, 3, 3}, rng);
  std::vector<double> v(x.values().begin(), x.values().end());
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t f = 0; f < 3; ++f) v[((b * 5 + t) * 3 + 1) * 3 + f] = v[((b * 5 + t) * 3 + 0) * 3 + f];
  auto p = m.forward(Tensor({2, 5, 3, 3}, v), {g}, {}).predictions;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t h = 0; h < 2; ++h) EXPECT_EQ(p.at((b * 3 + 0) * 2 + h), p.at((b * 3 + 1) * 2 + h));
}

TEST(InflowModel, EveryForecastParameterReceivesGradient) {
  InflowModel m(tiny_config(), 3);
  Rng rng(3);
  auto params = m.parameters();
  ad::Tape tape;
  Tensor loss;
  {
    ad::TapeScope scope(tape);
    loss = ad::mean_all(m.forward(random_tensor({2, 5, 3, 3}, rng), {chain3()}, {}).predictions);
  }
  tape.backward(loss);
  for (const auto& p : params) {
    if (p.name == "head.psi") {
      EXPECT_EQ(grad_norm(p.tensor), 0.0);
      continue;
    }
    EXPECT_GT(grad_norm(p.tensor), 0.0) << p.name;
  }
}

TEST(InflowModel, EndToEndGradientsMatchFiniteDifferences) {
  ad::PrecisionScope f64(ad::Precision::f64);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    InflowModel m(tiny_config(), seed);
    Rng rng(500 + seed);
    auto x = random_tensor({1, 5, 3, 3}, rng);
    auto y = random_tensor({1, 3, 2}, rng);
    auto params = m.parameters();
    params.pop_back();  // head.psi is pretraining-only
    auto r = oracle::check_gradients(params, [&] { return ad::mse_loss(m.forward(x, {chain3()}, {}).predictions, y); });
    EXPECT_LT(r.rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(InflowModel, EvaluationIsDeterministicAndTrainingDropoutIsNot) {
  auto cfg = tiny_config();
  cfg.dropout = 0.3;
  InflowModel m(cfg, 4);
  Rng rng(4);
  auto x = random_tensor({2, 5, 3, 3}, rng);
  auto a = m.forward(x, {chain3()}, {}).predictions;
  auto b = m.forward(x, {chain3()}, {}).predictions;
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i));

  Rng drop(9);
  nn::ForwardContext train{true, &drop, 0.3, false};
  auto c = m.forward(x, {chain3()}, train).predictions;
  bool differs = false;
  for (std::size_t i = 0; i < a.numel(); ++i) differs = differs || a.at(i) != c.at(i);
  EXPECT_TRUE(differs);
}

TEST(InflowModel, InitializationStreamsAreIndependentPerComponent) {
  auto a = InflowModel(tiny_config(), 7).parameters();
  auto cfg = tiny_config();
  cfg.tf_layers = 2;
  auto b = InflowModel(cfg, 7).parameters();
  EXPECT_EQ(parameter_hash(a, "encoder"), parameter_hash(b, "encoder"));
  EXPECT_EQ(parameter_hash(a, "gat"), parameter_hash(b, "gat"));
  EXPECT_NE(parameter_hash(a, "temporal"), parameter_hash(b, "temporal"));
  EXPECT_NE(parameter_hash(a), parameter_hash(InflowModel(tiny_config(), 8).parameters()));
}

TEST(InflowModel, AssignParametersByName) {
  InflowModel src(tiny_config(), 1), dst(tiny_config(), 2);
  std::vector<std::pair<std::string, Tensor>> values;
  for (const auto& p : src.parameters()) values.emplace_back(p.name, p.tensor.detach());
  assign_parameters(dst.parameters(), values);
  EXPECT_EQ(parameter_hash(src.parameters()), parameter_hash(dst.parameters()));
  values.pop_back();
  EXPECT_THROW(assign_parameters(dst.parameters(), values), DataError);
  values.emplace_back("head.psi", Tensor::zeros({2, 2}));
  EXPECT_THROW(assign_parameters(dst.parameters(), values), DataError);
}
