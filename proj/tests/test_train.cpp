#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "resflow/errors.hpp"
#include "resflow/ops.hpp"
#include "resflow/train.hpp"
#include "support/fixtures.hpp"

using namespace resflow;
using namespace resflow::train;
using ad::Tensor;

namespace {

const fixture::Basin& basin() {
  static const auto b = fixture::small_basin(3, 160, 4, 8, 3, 2);
  return b;
}

TrainConfig quick_config(int epochs) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 4;
  tc.lr = 3e-3;
  tc.max_steps_per_epoch = 4;
  tc.seed = 11;
  return tc;
}

Trainer make_trainer(const TrainConfig& tc, std::uint64_t seed = 5) {
  return Trainer(basin().ds, basin().basin.metas, model::InflowModel(fixture::small_model(8, 3), seed), tc);
}

}  // namespace

TEST(TrainingLoss, Examples) {
  Tensor y({1, 1, 2}, {0.0, 0.0}), yhat({1, 1, 2}, {1.0, 1.0});
  EXPECT_EQ(training_loss(yhat, y).item(), 1.0);
  EXPECT_EQ(training_loss(y, y).item(), 0.0);
  Tensor a({1, 3, 2}, {1, 2, 3, 4, 5, 6}), b({1, 3, 2}, {0, 2, 5, 4, 1, 1});
  Tensor pa({1, 3, 2}, {5, 6, 1, 2, 3, 4}), pb({1, 3, 2}, {1, 1, 0, 2, 5, 4});
  EXPECT_EQ(training_loss(a, b).item(), training_loss(pa, pb).item());
  EXPECT_THROW(training_loss(y, Tensor({1, 1, 2}, {0.0, NAN})), DataError);
  EXPECT_THROW(training_loss(y, Tensor({1, 2, 1}, {0.0, 0.0})), ad::ShapeError);
}

TEST(Trainer, ZeroEpochsKeepsInitialization) {
  auto t = make_trainer(quick_config(0));
  std::ostringstream metrics;
  t.fit(&metrics);
  EXPECT_EQ(metrics.str(), "epoch,lr,train_mse,val_mse,active_edges\n");
  EXPECT_EQ(t.optimizer_steps(), 0u);
  EXPECT_EQ(model::parameter_hash(t.model().parameters()),
            model::parameter_hash(model::InflowModel(fixture::small_model(8, 3), 5).parameters()));
  const auto ck = t.checkpoint();
  ASSERT_EQ(ck.days.size(), 1u);
  EXPECT_EQ(ck.days[0], geo::build_graph(train::metas_in_order(basin().basin.metas, basin().ds.panel.ids), 2));
}

TEST(Trainer, LearningRateHalvesEachEpoch) {
  auto t = make_trainer(quick_config(4));
  auto hist = t.fit();
  ASSERT_EQ(hist.size(), 4u);
  for (int e = 0; e < 4; ++e) EXPECT_EQ(hist[e].lr, 3e-3 * std::pow(0.5, e));
  EXPECT_EQ(t.optimizer_steps(), 16u);
}

TEST(Trainer, StaticAndNoGraphArmsKeepTheirTopology) {
  auto tc = quick_config(4);
  tc.prune_interval = 1;
  tc.prune_threshold = 0.99;
  tc.static_graph = true;
  auto s = make_trainer(tc);
  const auto initial = s.days();
  for (const auto& r : s.fit()) EXPECT_EQ(r.active_edges, static_cast<double>(initial[0].active_edge_count()));
  EXPECT_EQ(s.days(), initial);

  tc.static_graph = false;
  tc.no_graph = true;
  auto n = make_trainer(tc);
  EXPECT_EQ(n.days()[0].active_non_self_count(), 0u);
  n.fit();
  EXPECT_EQ(n.days()[0].active_edge_count(), 3u);
}

TEST(Trainer, PruningFiresOnlyOnScheduledEpochs) {
  auto tc = quick_config(4);
  tc.prune_interval = 2;
  tc.prune_threshold = 0.99;  // every observed edge falls below
  auto t = make_trainer(tc);
  const auto initial = static_cast<double>(t.days()[0].active_edge_count());
  ASSERT_GT(t.days()[0].active_non_self_count(), 0u);
  auto hist = t.fit();
  EXPECT_EQ(hist[0].active_edges, initial);
  EXPECT_EQ(hist[1].active_edges, 3.0);
  EXPECT_EQ(hist[3].active_edges, 3.0);
  for (std::size_t i = 1; i < hist.size(); ++i) EXPECT_LE(hist[i].active_edges, hist[i - 1].active_edges);
}

TEST(Trainer, PerDayModeKeepsOneGraphPerDay) {
  auto tc = quick_config(2);
  tc.prune_interval = 2;
  tc.prune_threshold = 0.99;
  tc.prune_mode = gat::PruneMode::per_day;
  auto t = make_trainer(tc);
  EXPECT_EQ(t.days().size(), 8u);
  std::ostringstream attention;
  t.fit(nullptr, &attention);
  for (const auto& g : t.days()) EXPECT_EQ(g.active_non_self_count(), 0u);
  EXPECT_EQ(attention.str().rfind("epoch,day,src,dst,alpha_bar\n", 0), 0u);
  EXPECT_NE(attention.str().find("\n2,8,"), std::string::npos);
}

TEST(Trainer, SameSeedGivesIdenticalLogs) {
  auto run = [] {
    auto tc = quick_config(3);
    tc.prune_interval = 1;
    auto t = make_trainer(tc);
    std::ostringstream m, a;
    t.fit(&m, &a);
    return m.str() + a.str() + hex64(model::parameter_hash(t.model().parameters()));
  };
  const auto first = run();
  EXPECT_EQ(first, run());
  EXPECT_NE(first.find("\n3,"), std::string::npos);
}

TEST(Trainer, DivergenceRestoresLastGoodState) {
  auto tc = quick_config(3);
  tc.lr = 1e38;
  tc.lr_decay = 1.0;
  auto t = make_trainer(tc);
  EXPECT_THROW(t.fit(), TrainingDiverged);
  for (double v : t.model().parameters()[0].tensor.values()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(model::parameter_hash(t.model().parameters()),
            model::parameter_hash([&] {
              model::InflowModel m(fixture::small_model(8, 3), 0);
              model::assign_parameters(m.parameters(), t.last_good().parameters);
              return m.parameters();
            }()));
}

TEST(Checkpoint, RoundTripPredictsBitIdentically) {
  auto t = make_trainer(quick_config(2));
  t.fit();
  const auto path = std::filesystem::temp_directory_path() / "resflow_ckpt_test.bin";
  const auto ck = t.checkpoint("cafe");
  save_checkpoint(path, ck);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.config_hash, "cafe");
  EXPECT_EQ(back.epoch, 2);
  EXPECT_EQ(back.days, ck.days);
  EXPECT_EQ(back.adam_m, ck.adam_m);
  EXPECT_EQ(back.adam_v, ck.adam_v);
  EXPECT_EQ(back.stats.mean, ck.stats.mean);
  EXPECT_EQ(back.shuffle_rng, ck.shuffle_rng);

  const auto before = Forecaster::from_checkpoint(ck);
  const auto after = Forecaster::from_checkpoint(back);
  const auto& ds = basin().ds;
  const auto hist = scaled_history(before, ds.panel, ds.test);
  const auto p1 = predict(before, hist);
  EXPECT_EQ(p1, predict(before, hist));
  EXPECT_EQ(p1, predict(after, hist));
  const auto direct = t.model().forward(data::make_batch(ds, ds.test).history, t.days(), {}).predictions;
  EXPECT_EQ(p1.size(), direct.numel());
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  const auto path = std::filesystem::temp_directory_path() / "resflow_ckpt_bad.bin";
  { std::ofstream(path) << "not a checkpoint"; }
  EXPECT_THROW(load_checkpoint(path), DataError);
  auto t = make_trainer(quick_config(0));
  save_checkpoint(path, t.checkpoint());
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  EXPECT_THROW(load_checkpoint(path), DataError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), DataError);
}

TEST(Predict, ZeroHeadMapsToTrainingMeanInflow) {
  auto t = make_trainer(quick_config(0));
  auto f = Forecaster::from_checkpoint(t.checkpoint());
  for (auto& v : f.model.temporal.w_d.mutable_values()) v = 0.0;
  const auto& ds = basin().ds;
  const auto out = predict(f, scaled_history(f, ds.panel, {ds.test.front()}));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(out[r * 3 + k], ds.stats.mean[r * data::kFeatureCount + data::kInflow]);

  f.stats = {};
  EXPECT_THROW(predict(f, Tensor::zeros({1, 8, 3, 3})), DataError);
}

TEST(Ablation, ArmsShareSplitsAndNonEncoderInitialization) {
  AblationSettings s;
  s.model = fixture::small_model(8, 3);
  s.train = quick_config(1);
  s.train.max_steps_per_epoch = 2;
  s.pretrain.epochs = 1;
  s.pretrain.max_steps_per_epoch = 2;
  s.seeds = {3};
  auto rows = run_ablation_suite(basin().ds, {}, basin().basin.metas, s);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.split_hash, rows[0].split_hash);
    EXPECT_EQ(r.init_hash, rows[0].init_hash);
    EXPECT_EQ(r.nse_per_day.size(), 3u);
    EXPECT_TRUE(std::isfinite(r.overall_nse));
  }
  EXPECT_EQ(rows[1].final_active_edges, 3.0);
  std::ostringstream table;
  write_ablation_table(table, rows);
  EXPECT_EQ(table.str().rfind("arm,seed,overall_nse,day1_nse,day2_nse,day3_nse,split_hash,init_hash,active_edges\n", 0), 0u);
}

TEST(ModelConfigJson, RoundTrip) {
  auto cfg = fixture::small_model(8, 3);
  cfg.gat.merge = gat::HeadMerge::mean;
  const auto back = model_config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
  EXPECT_THROW(model_config_from_json("{}"), DataError);
}
