// resflow: command-line driver for generating basins, training, forecasting
// and evaluating the multi-reservoir inflow model.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "resflow/config.hpp"
#include "resflow/csv.hpp"
#include "resflow/errors.hpp"
#include "resflow/metrics.hpp"
#include "resflow/synth.hpp"
#include "resflow/train.hpp"

namespace fs = std::filesystem;
using namespace resflow;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = ".";
};

struct Run {
  config::RunConfig cfg;
  std::string hash;
  fs::path out;
  std::vector<std::string> written;

  fs::path at(const std::string& p) const { return fs::path(p).is_absolute() ? fs::path(p) : out / p; }

  std::ofstream create(const std::string& name) {
    std::ofstream f(out / name);
    if (!f) throw DataError("cannot write " + (out / name).string());
    written.push_back(name);
    return f;
  }
};

Run start(const Common& c, const std::string& command) {
  Run run;
  run.cfg = config::load(c.config_path, c.overrides);
  run.hash = config::config_hash(run.cfg);
  run.out = c.out_dir;
  fs::create_directories(run.out);
  auto f = run.create("run_config.resolved");
  f << "# " << command << "\n# config_hash = " << run.hash << "\n" << config::resolved_text(run.cfg);
  std::cerr << command << ": config hash " << run.hash << "\n";
  return run;
}

void finish(const Run& run, const std::string& command) {
  nlohmann::json j;
  j["command"] = command;
  j["config_hash"] = run.hash;
  j["files"] = run.written;
  std::ofstream(run.out / (command + ".manifest.json")) << j.dump(2) << "\n";
}

struct Loaded {
  data::IngestResult ingest;
  data::WindowedDataset ds;
};

data::IngestResult read_records(const Run& run) {
  const auto dir = run.at(run.cfg.data_dir);
  const auto meta = run.cfg.metadata.empty() ? dir / "reservoirs.csv" : run.at(run.cfg.metadata);
  auto in = data::ingest(dir, meta, run.cfg.gap_limit_days);
  for (const auto& d : in.diagnostics) std::cerr << "data: " << d << "\n";
  if (in.panel.reservoir_count() == 0) throw DataError("no usable reservoir records under " + dir.string());
  return in;
}

data::SplitPlan plan_for(const Run& run, std::size_t days) {
  return data::SplitPlan::chronological(days, run.cfg.train_fraction, run.cfg.validation_fraction);
}

Loaded load_dataset(const Run& run) {
  Loaded l;
  l.ingest = read_records(run);
  const auto plan = plan_for(run, l.ingest.panel.day_count());
  l.ds = data::scale_and_window(l.ingest.panel, plan, run.cfg.window);
  if (l.ds.train.empty()) throw DataError("the training split holds no complete window");
  std::cerr << "data: " << l.ds.reservoir_count() << " reservoirs, " << l.ds.panel.day_count() << " days, windows "
            << l.ds.train.size() << "/" << l.ds.validation.size() << "/" << l.ds.test.size() << "\n";
  return l;
}

data::Split parse_split(const std::string& s) {
  for (auto sp : {data::Split::train, data::Split::validation, data::Split::test}) {
    if (s == data::split_name(sp)) return sp;
  }
  throw ConfigError("--split must be train, validation or test, got '" + s + "'");
}

int cmd_generate(const Common& c) {
  auto run = start(c, "generate");
  const auto basin = synth::generate_basin(run.cfg.synth);
  const auto dir = run.at(run.cfg.data_dir);
  synth::write_basin(dir, basin);
  std::cout << "wrote " << basin.metas.size() << " reservoirs and " << basin.truth.size() << " routing edges to "
            << dir.string() << "\n";
  finish(run, "generate");
  return kOk;
}

int cmd_pretrain(const Common& c) {
  auto run = start(c, "pretrain");
  const auto data = load_dataset(run);
  model::InflowModel m(run.cfg.model, run.cfg.seed);
  const auto result = train::pretrain_model(m, data.ds, data.ingest.full_records, run.cfg.pretrain, run.cfg.seed);

  auto log = run.create("pretrain_log.csv");
  log << "epoch,probe_loss,contrastive,supervised\n";
  for (std::size_t e = 0; e < result.probe_loss.size(); ++e) {
    log << e << "," << csv::format_double(result.probe_loss[e]) << "," << csv::format_double(result.contrastive[e])
        << "," << csv::format_double(result.supervised[e]) << "\n";
  }

  train::Checkpoint ck;
  ck.model = run.cfg.model;
  for (const auto& p : m.parameters()) {
    if (p.name.rfind("encoder.", 0) == 0 || p.name == "head.psi") ck.parameters.emplace_back(p.name, p.tensor);
  }
  ck.metas = data.ingest.metas;
  ck.stats = data.ds.stats;
  ck.spec = data.ds.spec;
  ck.config_hash = run.hash;
  train::save_checkpoint(run.out / "encoder.ckpt", ck);
  run.written.push_back("encoder.ckpt");
  std::cout << "pretrained " << result.steps << " steps, probe loss " << result.probe_loss.front() << " -> "
            << result.probe_loss.back() << "\n";
  finish(run, "pretrain");
  return kOk;
}

void write_temporal_attention(Run& run, const train::Trainer& t, const data::WindowedDataset& ds) {
  const auto& windows = !ds.test.empty() ? ds.test : !ds.validation.empty() ? ds.validation : ds.train;
  const auto batch = data::make_batch(ds, {windows.front()});
  nn::ForwardContext ctx;
  ctx.capture = true;
  const auto out = t.model().forward(batch.history, t.days(), ctx);
  auto enc = run.create("temporal_attention_encoder.csv");
  enc << "reservoir,layer,head,query_step,key_step,beta\n";
  transformer::append_temporal_rows(enc, out.temporal.encoder_self, ds.panel.ids, 0);
  auto cross = run.create("temporal_attention_cross.csv");
  cross << "reservoir,layer,head,query_step,key_step,beta\n";
  transformer::append_temporal_rows(cross, out.temporal.decoder_cross, ds.panel.ids, 0);
}

int cmd_train(const Common& c) {
  auto run = start(c, "train");
  const auto data = load_dataset(run);
  const auto& cfg = run.cfg;
  model::InflowModel m(cfg.model, cfg.seed);
  if (!cfg.init_from.empty()) {
    const auto donor = train::load_checkpoint(run.at(cfg.init_from));
    const auto n = train::load_matching_parameters(m, donor);
    std::cerr << "train: initialized " << n << " parameters from " << cfg.init_from << "\n";
  } else if (!cfg.train.no_pretrain && cfg.pretrain.epochs > 0) {
    const auto r = train::pretrain_model(m, data.ds, data.ingest.full_records, cfg.pretrain, cfg.seed);
    std::cerr << "train: pretrained encoder, probe loss " << r.probe_loss.front() << " -> " << r.probe_loss.back()
              << "\n";
  }

  train::Trainer t(data.ds, data.ingest.metas, std::move(m), cfg.train);
  geo::write_edge_list(run.out / "graph_initial.csv", t.days().front());
  run.written.push_back("graph_initial.csv");
  auto metrics = run.create("metrics.csv");
  auto attention = run.create("attention.csv");
  try {
    t.fit(&metrics, &attention);
  } catch (const train::TrainingDiverged&) {
    metrics.flush();
    train::save_checkpoint(run.out / "last_good.ckpt", t.last_good());
    run.written.push_back("last_good.ckpt");
    finish(run, "train");
    throw;
  }
  train::save_checkpoint(run.out / "model.ckpt", t.checkpoint(run.hash));
  run.written.push_back("model.ckpt");
  geo::write_edge_list(run.out / "graph_final.csv", t.days().back());
  run.written.push_back("graph_final.csv");
  gat::write_edge_summary(run.out / "edges_final.csv", t.run_ledger(), t.days());
  run.written.push_back("edges_final.csv");
  write_temporal_attention(run, t, data.ds);

  std::cout << "trained " << t.epoch() << " epochs, " << t.optimizer_steps() << " optimizer steps";
  if (!t.history().empty()) {
    const auto& last = t.history().back();
    std::cout << ", train mse " << last.train_mse << ", val mse " << last.val_mse << ", active edges "
              << last.active_edges;
  }
  std::cout << "\n";
  finish(run, "train");
  return kOk;
}

int cmd_predict(const Common& c, const std::string& checkpoint, const std::string& split_name) {
  auto run = start(c, "predict");
  const auto split = parse_split(split_name);
  const auto ck = train::load_checkpoint(run.at(checkpoint));
  const auto f = train::Forecaster::from_checkpoint(ck);
  const auto in = read_records(run);
  const auto ds = data::scale_and_window(in.panel, plan_for(run, in.panel.day_count()), f.spec);
  const auto& starts = ds.windows(split);
  if (starts.empty()) throw DataError(std::string("no complete ") + data::split_name(split) + " window to forecast");

  auto out = run.create("forecasts.csv");
  out << "reservoir,lead_day,date,inflow_cfs\n";
  const auto N = f.stats.ids.size(), H = f.spec.horizon, T = f.spec.history;
  constexpr std::size_t kChunk = 64;
  for (std::size_t b0 = 0; b0 < starts.size(); b0 += kChunk) {
    const std::vector<std::size_t> chunk(starts.begin() + b0, starts.begin() + std::min(starts.size(), b0 + kChunk));
    const auto pred = train::predict(f, train::scaled_history(f, in.panel, chunk));
    for (std::size_t b = 0; b < chunk.size(); ++b)
      for (std::size_t r = 0; r < N; ++r)
        for (std::size_t k = 0; k < H; ++k) {
          out << f.stats.ids[r] << "," << k + 1 << "," << data::format_date(in.panel.dates[chunk[b] + T + k]) << ","
              << csv::format_double(pred[(b * N + r) * H + k]) << "\n";
        }
  }
  std::cout << "wrote " << starts.size() * N * H << " forecasts for " << starts.size() << " "
            << data::split_name(split) << " windows\n";
  finish(run, "predict");
  return kOk;
}

int cmd_evaluate(const Common& c, const std::string& forecasts, const std::string& checkpoint) {
  auto run = start(c, "evaluate");
  const auto in = read_records(run);
  const auto table = csv::read(run.at(forecasts));
  const auto c_res = table.column("reservoir"), c_lead = table.column("lead_day"), c_date = table.column("date"),
             c_val = table.column("inflow_cfs");

  std::map<std::string, std::size_t> panel_index;
  for (std::size_t r = 0; r < in.panel.ids.size(); ++r) panel_index[in.panel.ids[r]] = r;
  std::size_t horizon = 0;
  std::vector<bool> present(in.panel.ids.size(), false);
  for (const auto& row : table.rows) {
    const auto it = panel_index.find(row[c_res]);
    if (it == panel_index.end()) throw DataError("forecast for unknown reservoir '" + row[c_res] + "'");
    present[it->second] = true;
    const auto lead = csv::to_double(row[c_lead], "lead_day");
    if (!(lead >= 1.0) || lead != std::floor(lead)) throw DataError("lead_day must be a positive integer");
    horizon = std::max(horizon, static_cast<std::size_t>(lead));
  }
  std::vector<std::string> ids;
  std::vector<std::size_t> slot(in.panel.ids.size(), 0);
  for (std::size_t r = 0; r < present.size(); ++r) {
    if (present[r]) {
      slot[r] = ids.size();
      ids.push_back(in.panel.ids[r]);
    }
  }
  metrics::PooledSeries series(ids, horizon);
  const auto first = in.panel.dates.front();
  for (const auto& row : table.rows) {
    const auto r = panel_index.at(row[c_res]);
    const auto day = (data::parse_date(row[c_date]) - first).count();
    if (day < 0 || static_cast<std::size_t>(day) >= in.panel.day_count())
      throw DataError("forecast date " + row[c_date] + " lies outside the observed record");
    const auto k = static_cast<std::size_t>(csv::to_double(row[c_lead], "lead_day")) - 1;
    series.add(slot[r], k, csv::to_double(row[c_val], "inflow_cfs"),
               in.panel.at(r, static_cast<std::size_t>(day), data::kInflow));
  }
  const auto report = metrics::build_report(series, run.cfg.seed, run.hash);

  std::vector<metrics::EdgeRow> edges;
  auto metas = in.metas;
  const auto ck_path = run.at(checkpoint);
  if (fs::exists(ck_path)) {
    const auto ck = train::load_checkpoint(ck_path);
    edges = train::edge_rows(ck.days, ck.edge_alpha);
    metas = ck.metas;
  }
  metrics::emit_report(report, edges, metas, run.out / "report");
  run.written.push_back("report/report.json");
  std::cout << "overall NSE " << report.overall_nse << " over " << ids.size() << " reservoirs, " << horizon
            << " lead days\n";
  finish(run, "evaluate");
  return kOk;
}

int cmd_ablate(const Common& c) {
  auto run = start(c, "ablate");
  const auto data = load_dataset(run);
  train::AblationSettings s;
  s.model = run.cfg.model;
  s.train = run.cfg.train;
  s.pretrain = run.cfg.pretrain;
  s.seeds = run.cfg.ablate_seeds;
  s.arms = run.cfg.ablate_arms;
  auto log = run.create("ablation_log.txt");
  const auto rows = train::run_ablation_suite(data.ds, data.ingest.full_records, data.ingest.metas, s, &log);
  auto table = run.create("ablation.csv");
  train::write_ablation_table(table, rows);

  for (auto arm : s.arms) {
    std::vector<double> v;
    for (const auto& r : rows)
      if (r.arm == arm) v.push_back(r.overall_nse);
    std::sort(v.begin(), v.end());
    std::cout << train::arm_name(arm) << ": median overall NSE " << v[v.size() / 2] << "\n";
  }
  finish(run, "ablate");
  return kOk;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "run configuration file")->required()->check(CLI::ExistingFile);
  sub->add_option("--set", c.overrides, "override a configuration key, key=value (repeatable)");
  sub->add_option("--out-dir", c.out_dir, "directory for outputs; relative paths resolve against it");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"resflow: multi-reservoir inflow forecasting"};
  app.require_subcommand(1, 1);

  Common common;
  std::string checkpoint = "model.ckpt", split = "test", forecasts = "forecasts.csv";
  auto* generate = app.add_subcommand("generate", "write a synthetic basin to data.dir");
  auto* pretrain = app.add_subcommand("pretrain", "pretrain the feature encoder, write encoder.ckpt");
  auto* trainc = app.add_subcommand("train", "train the model, write model.ckpt and logs");
  auto* predict = app.add_subcommand("predict", "write forecasts.csv for one split");
  auto* evaluate = app.add_subcommand("evaluate", "score a forecast file, write report/");
  auto* ablate = app.add_subcommand("ablate", "train every ablation arm, write ablation.csv");
  for (auto* sub : {generate, pretrain, trainc, predict, evaluate, ablate}) add_common(sub, common);
  predict->add_option("--checkpoint", checkpoint, "trained checkpoint");
  predict->add_option("--split", split, "train, validation or test");
  evaluate->add_option("--forecasts", forecasts, "forecast file to score");
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint for the edge summary (optional)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    if (generate->parsed()) return cmd_generate(common);
    if (pretrain->parsed()) return cmd_pretrain(common);
    if (trainc->parsed()) return cmd_train(common);
    if (predict->parsed()) return cmd_predict(common, checkpoint, split);
    if (evaluate->parsed()) return cmd_evaluate(common, forecasts, checkpoint);
    if (ablate->parsed()) return cmd_ablate(common);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const ad::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
