#include "resflow/train.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"
#include "resflow/csv.hpp"
#include "resflow/errors.hpp"
#include "resflow/ops.hpp"

namespace resflow::train {

using ad::Tensor;
using geo::TemporalGraph;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'R', 'F', 'C', 'K', 'P', 'T', '0', '1'};

std::string nan_or(double v) { return std::isnan(v) ? std::string("nan") : csv::format_double(v); }

json number_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

void put_u64(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    const int c = in.get();
    if (c == EOF) throw DataError("checkpoint: truncated header");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

void put_f32s(std::ostream& out, std::span<const double> values) {
  for (double d : values) {
    const float f = static_cast<float>(d);
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

std::vector<double> get_f32s(std::istream& in, std::size_t count, const std::string& name) {
  std::vector<double> out(count);
  for (auto& d : out) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) {
      const int c = in.get();
      if (c == EOF) throw DataError("checkpoint: payload of '" + name + "' is truncated");
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    float f;
    std::memcpy(&f, &bits, sizeof f);
    d = f;
  }
  return out;
}

ParameterList trainable(const model::InflowModel& m) {
  ParameterList out;
  for (auto& p : m.parameters()) {
    if (p.name != "head.psi") out.push_back(p);
  }
  return out;
}

std::vector<std::size_t> shuffled(std::vector<std::size_t> v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  return v;
}

double mean_active_edges(const std::vector<TemporalGraph>& days) {
  double s = 0.0;
  for (const auto& g : days) s += static_cast<double>(g.active_edge_count());
  return s / static_cast<double>(days.size());
}

json graph_json(const std::vector<TemporalGraph>& days) {
  json edges = json::array(), active = json::array();
  for (const auto& e : days.front().edges()) edges.push_back({e.src, e.dst});
  for (const auto& g : days) {
    std::vector<int> a;
    for (bool b : g.active()) a.push_back(b ? 1 : 0);
    active.push_back(a);
  }
  return {{"edges", edges}, {"active", active}};
}

}  // namespace

Tensor training_loss(const Tensor& predicted, const Tensor& target) {
  if (predicted.shape() != target.shape()) {
    throw ad::ShapeError("training_loss: predictions " + ad::to_string(predicted.shape()) + " vs targets " +
                         ad::to_string(target.shape()));
  }
  for (double v : target.values()) {
    if (std::isnan(v)) throw DataError("training_loss: NaN target");
  }
  return ad::mse_loss(predicted, target);
}

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (cfg.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (cfg.prune_interval < 1) throw ConfigError("train.prune_interval must be >= 1");
  if (!(cfg.lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (!(cfg.lr_decay > 0.0)) throw ConfigError("train.lr_decay must be > 0");
  if (cfg.neighbors == 0) throw ConfigError("graph.k must be >= 1");
  if (cfg.no_graph && cfg.static_graph) throw ConfigError("no_graph and static_graph are exclusive");
}

std::string to_json(const model::ModelConfig& c) {
  json j{{"features", c.features},
         {"embed", c.embed},
         {"encoder_depth", c.encoder_depth},
         {"gat_layers", c.gat.layers},
         {"gat_heads", c.gat.heads},
         {"gat_head_dim", c.gat.head_dim},
         {"head_merge", c.gat.merge == gat::HeadMerge::concat ? "concat" : "mean"},
         {"negative_slope", c.gat.negative_slope},
         {"edge_direction", c.gat.direction == gat::EdgeDirection::as_built ? "as_built" : "reversed"},
         {"tf_layers", c.tf_layers},
         {"tf_heads", c.tf_heads},
         {"ff", c.ff},
         {"latent", c.latent},
         {"history", c.history},
         {"horizon", c.horizon},
         {"dropout", c.dropout}};
  return j.dump();
}

model::ModelConfig model_config_from_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    model::ModelConfig c;
    c.features = j.at("features");
    c.embed = j.at("embed");
    c.encoder_depth = j.at("encoder_depth");
    c.gat.layers = j.at("gat_layers");
    c.gat.heads = j.at("gat_heads");
    c.gat.head_dim = j.at("gat_head_dim");
    c.gat.merge = gat::parse_merge(j.at("head_merge"));
    c.gat.negative_slope = j.at("negative_slope");
    c.gat.direction = gat::parse_direction(j.at("edge_direction"));
    c.tf_layers = j.at("tf_layers");
    c.tf_heads = j.at("tf_heads");
    c.ff = j.at("ff");
    c.latent = j.at("latent");
    c.history = j.at("history");
    c.horizon = j.at("horizon");
    c.dropout = j.at("dropout");
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("model configuration: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json tensors = json::array();
  for (const auto& [name, t] : ckpt.parameters) tensors.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f32"}});
  for (std::size_t i = 0; i < ckpt.adam_m.size(); ++i) {
    tensors.push_back({{"name", "adam.m." + std::to_string(i)}, {"shape", {ckpt.adam_m[i].size()}}, {"dtype", "f32"}});
    tensors.push_back({{"name", "adam.v." + std::to_string(i)}, {"shape", {ckpt.adam_v[i].size()}}, {"dtype", "f32"}});
  }
  json metas = json::array();
  for (const auto& m : ckpt.metas) {
    metas.push_back({{"id", m.id}, {"lat", m.lat}, {"lon", m.lon}, {"elevation_m", m.elevation_m}});
  }
  json alpha = json::array();
  for (double a : ckpt.edge_alpha) alpha.push_back(number_or_null(a));
  json manifest{{"format", "resflow-checkpoint"},
                {"version", Checkpoint::kFormatVersion},
                {"model", json::parse(to_json(ckpt.model))},
                {"epoch", ckpt.epoch},
                {"config_hash", ckpt.config_hash},
                {"window", {{"history", ckpt.spec.history}, {"horizon", ckpt.spec.horizon}, {"stride", ckpt.spec.stride}}},
                {"scaling", {{"ids", ckpt.stats.ids}, {"mean", ckpt.stats.mean}, {"stddev", ckpt.stats.stddev}}},
                {"reservoirs", metas},
                {"edge_alpha", alpha},
                {"rng", {{"shuffle", ckpt.shuffle_rng}, {"dropout", ckpt.dropout_rng}}},
                {"adam_steps", ckpt.adam_steps},
                {"tensors", tensors}};
  if (!ckpt.days.empty()) manifest["graph"] = graph_json(ckpt.days);
  const auto text = manifest.dump(1);

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : ckpt.parameters) put_f32s(out, t.values());
    for (std::size_t i = 0; i < ckpt.adam_m.size(); ++i) {
      put_f32s(out, ckpt.adam_m[i]);
      put_f32s(out, ckpt.adam_v[i]);
    }
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw DataError(path.string() + " is not a checkpoint");
  const auto len = get_u64(in);
  if (len > (1ULL << 32)) throw DataError("checkpoint: implausible manifest length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("checkpoint: truncated manifest");

  Checkpoint c;
  try {
    const auto j = json::parse(text);
    if (j.at("version") != Checkpoint::kFormatVersion) {
      throw DataError("checkpoint format version " + j.at("version").dump() + " is not supported");
    }
    c.model = model_config_from_json(j.at("model").dump());
    c.epoch = j.at("epoch");
    c.config_hash = j.at("config_hash");
    c.spec = {j.at("window").at("history"), j.at("window").at("horizon"), j.at("window").at("stride")};
    c.stats.ids = j.at("scaling").at("ids").get<std::vector<std::string>>();
    c.stats.mean = j.at("scaling").at("mean").get<std::vector<double>>();
    c.stats.stddev = j.at("scaling").at("stddev").get<std::vector<double>>();
    for (const auto& m : j.at("reservoirs")) c.metas.push_back({m.at("id"), m.at("lat"), m.at("lon"), m.at("elevation_m")});
    for (const auto& a : j.at("edge_alpha")) c.edge_alpha.push_back(a.is_null() ? NAN : a.get<double>());
    c.shuffle_rng = j.at("rng").at("shuffle");
    c.dropout_rng = j.at("rng").at("dropout");
    c.adam_steps = j.at("adam_steps");
    if (j.contains("graph")) {
      std::vector<std::string> ids;
      for (const auto& m : c.metas) ids.push_back(m.id);
      std::vector<geo::Edge> edges;
      for (const auto& e : j.at("graph").at("edges")) edges.push_back({e.at(0), e.at(1)});
      for (const auto& a : j.at("graph").at("active")) {
        std::vector<bool> active;
        for (int v : a) active.push_back(v != 0);
        c.days.emplace_back(ids, edges, active);
      }
    }
    for (const auto& t : j.at("tensors")) {
      const std::string name = t.at("name");
      if (t.at("dtype") != "f32") throw DataError("checkpoint: unsupported dtype for '" + name + "'");
      const auto shape = t.at("shape").get<ad::Shape>();
      auto values = get_f32s(in, ad::numel(shape), name);
      if (name.rfind("adam.m.", 0) == 0) {
        c.adam_m.push_back(std::move(values));
      } else if (name.rfind("adam.v.", 0) == 0) {
        c.adam_v.push_back(std::move(values));
      } else {
        c.parameters.emplace_back(name, Tensor(shape, std::move(values)));
      }
    }
  } catch (const json::exception& e) {
    throw DataError("checkpoint manifest: " + std::string(e.what()));
  } catch (const std::invalid_argument& e) {
    throw DataError("checkpoint: " + std::string(e.what()));
  }
  if (in.peek() != EOF) throw DataError("checkpoint: trailing bytes after payload");
  return c;
}

std::size_t load_matching_parameters(const model::InflowModel& m, const Checkpoint& ckpt) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ckpt.parameters) by_name[name] = &t;
  std::size_t loaded = 0;
  for (const auto& p : m.parameters()) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) continue;
    if (it->second->shape() != p.tensor.shape()) {
      throw DataError("checkpoint parameter '" + p.name + "' has shape " + ad::to_string(it->second->shape()) +
                      ", model expects " + ad::to_string(p.tensor.shape()));
    }
    Tensor target = p.tensor;
    const auto src = it->second->values();
    std::copy(src.begin(), src.end(), target.mutable_values().begin());
    ++loaded;
  }
  return loaded;
}

std::vector<geo::ReservoirMeta> metas_in_order(const std::vector<geo::ReservoirMeta>& metas,
                                               const std::vector<std::string>& ids) {
  std::vector<geo::ReservoirMeta> out;
  for (const auto& id : ids) {
    const auto it = std::find_if(metas.begin(), metas.end(), [&](const auto& m) { return m.id == id; });
    if (it == metas.end()) throw DataError("no metadata for reservoir '" + id + "'");
    out.push_back(*it);
  }
  return out;
}

std::vector<TemporalGraph> initial_days(const std::vector<geo::ReservoirMeta>& metas, const TrainConfig& cfg,
                                        std::size_t history) {
  auto g = geo::build_graph(metas, cfg.neighbors);
  if (cfg.no_graph) g = geo::apply_prune_mask(g, g.active_non_self_edges());
  const bool per_day = cfg.prune_mode == gat::PruneMode::per_day && !cfg.no_graph && !cfg.static_graph;
  return std::vector<TemporalGraph>(per_day ? history : 1, g);
}

encoder::PretrainResult pretrain_model(model::InflowModel& m, const data::WindowedDataset& ds,
                                       const std::vector<data::ReservoirSeries>& full_records,
                                       const encoder::PretrainConfig& cfg, std::uint64_t seed) {
  std::vector<data::ReservoirSeries> records = full_records;
  if (records.empty()) {
    for (std::size_t r = 0; r < ds.reservoir_count(); ++r) records.push_back(data::panel_series(ds.panel, r));
  }
  const auto cutoff = ds.panel.dates.at(ds.plan.train_end);
  const auto set = encoder::build_pretrain_set(records, ds.stats, cutoff, ds.spec);
  return encoder::pretrain(set, cfg, m.encoder, m.w_psi, seed);
}

Trainer::Trainer(const data::WindowedDataset& ds, std::vector<geo::ReservoirMeta> metas, model::InflowModel m,
                 const TrainConfig& cfg)
    : ds_(ds),
      metas_(metas_in_order(metas, ds.panel.ids)),
      model_(std::move(m)),
      cfg_(cfg),
      optimizer_(trainable(model_), {cfg.lr}),
      shuffle_rng_(Rng::stream(cfg.seed, "shuffle")),
      dropout_rng_(Rng::stream(cfg.seed, "dropout")) {
  validate(cfg);
  const auto& mc = model_.config;
  if (mc.history != ds.spec.history || mc.horizon != ds.spec.horizon || mc.features != data::kFeatureCount) {
    throw ConfigError("model window (" + std::to_string(mc.history) + ", " + std::to_string(mc.horizon) +
                      ") does not match the dataset (" + std::to_string(ds.spec.history) + ", " +
                      std::to_string(ds.spec.horizon) + ")");
  }
  days_ = initial_days(metas_, cfg, ds.spec.history);
  const auto edges = days_.front().edges().size();
  prune_ledger_ = gat::AttentionLedger(edges, ds.spec.history, days_.size() == 1 ? gat::PruneMode::global : gat::PruneMode::per_day);
  run_ledger_ = gat::AttentionLedger(edges, ds.spec.history, gat::PruneMode::global);
  last_good_ = checkpoint();
}

double Trainer::evaluate_mse(data::Split split) const {
  const auto& windows = ds_.windows(split);
  if (windows.empty()) return NAN;
  const nn::ForwardContext ctx;
  double sq = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < windows.size(); b += cfg_.batch_size) {
    std::vector<std::size_t> starts(windows.begin() + static_cast<std::ptrdiff_t>(b),
                                    windows.begin() + static_cast<std::ptrdiff_t>(std::min(windows.size(), b + cfg_.batch_size)));
    const auto batch = data::make_batch(ds_, starts);
    const auto out = model_.forward(batch.history, days_, ctx);
    const auto pred = out.predictions.values();
    const auto targ = batch.targets.values();
    for (std::size_t i = 0; i < pred.size(); ++i) sq += (pred[i] - targ[i]) * (pred[i] - targ[i]);
    count += pred.size();
  }
  return sq / static_cast<double>(count);
}

EpochRecord Trainer::run_epoch(std::ostream* metrics, std::ostream* attention) {
  last_good_ = checkpoint();
  EpochRecord rec;
  rec.epoch = epoch_ + 1;
  rec.lr = scheduled_lr(cfg_.lr, cfg_.lr_decay, epoch_);
  optimizer_.set_lr(rec.lr);

  const auto order = shuffled(ds_.train, shuffle_rng_);
  std::size_t steps = (order.size() + cfg_.batch_size - 1) / cfg_.batch_size;
  if (cfg_.max_steps_per_epoch > 0) steps = std::min(steps, cfg_.max_steps_per_epoch);
  gat::AttentionLedger epoch_ledger(days_.front().edges().size(), ds_.spec.history, gat::PruneMode::per_day);
  const nn::ForwardContext ctx{true, &dropout_rng_, model_.config.dropout, false};
  double sq = 0.0;
  std::size_t seen = 0;
  try {
    for (std::size_t s = 0; s < steps; ++s) {
      const auto begin = s * cfg_.batch_size;
      std::vector<std::size_t> starts(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                      order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), begin + cfg_.batch_size)));
      const auto batch = data::make_batch(ds_, starts);
      ad::Tape tape;
      Tensor loss;
      model::ForwardOutput out;
      {
        ad::TapeScope scope(tape);
        out = model_.forward(batch.history, days_, ctx);
        loss = training_loss(out.predictions, batch.targets);
      }
      optimizer_.zero_grad();
      tape.backward(loss);
      optimizer_.step();
      sq += loss.item() * static_cast<double>(starts.size());
      seen += starts.size();
      if (pruning_enabled()) prune_ledger_.observe(days_, out.graph.alpha_bar);
      run_ledger_.observe(days_, out.graph.alpha_bar);
      if (attention) epoch_ledger.observe(days_, out.graph.alpha_bar);
    }
  } catch (const ad::NumericError& e) {
    model::assign_parameters(model_.parameters(), last_good_.parameters);
    throw TrainingDiverged("training diverged in epoch " + std::to_string(rec.epoch) + ": " + e.what());
  }
  rec.train_mse = seen ? sq / static_cast<double>(seen) : NAN;
  rec.val_mse = evaluate_mse(data::Split::validation);
  ++epoch_;
  if (pruning_enabled() && gat::prune_due(epoch_, cfg_.prune_interval)) {
    days_ = gat::prune_step(prune_ledger_, days_, cfg_.prune_threshold).days;
  }
  rec.active_edges = mean_active_edges(days_);
  history_.push_back(rec);
  if (metrics) {
    *metrics << rec.epoch << ',' << csv::format_double(rec.lr) << ',' << nan_or(rec.train_mse) << ','
             << nan_or(rec.val_mse) << ',' << csv::format_double(rec.active_edges) << '\n';
  }
  if (attention) gat::append_attention_rows(*attention, rec.epoch, epoch_ledger, days_.front());
  return rec;
}

std::vector<EpochRecord> Trainer::fit(std::ostream* metrics, std::ostream* attention) {
  if (metrics) *metrics << "epoch,lr,train_mse,val_mse,active_edges\n";
  if (attention) *attention << "epoch,day,src,dst,alpha_bar\n";
  while (epoch_ < cfg_.epochs) run_epoch(metrics, attention);
  return history_;
}

Checkpoint Trainer::checkpoint(const std::string& config_hash) const {
  Checkpoint c;
  c.model = model_.config;
  for (const auto& p : model_.parameters()) c.parameters.emplace_back(p.name, p.tensor.detach());
  c.adam_m = optimizer_.first_moments();
  c.adam_v = optimizer_.second_moments();
  c.adam_steps = optimizer_.step_count();
  c.shuffle_rng = shuffle_rng_.state();
  c.dropout_rng = dropout_rng_.state();
  c.metas = metas_;
  c.days = days_;
  for (std::size_t e = 0; e < days_.front().edges().size(); ++e) {
    c.edge_alpha.push_back(run_ledger_.count(0, e) == 0 ? NAN : run_ledger_.mean(0, e));
  }
  c.epoch = epoch_;
  c.stats = ds_.stats;
  c.spec = ds_.spec;
  c.config_hash = config_hash;
  return c;
}

std::vector<metrics::EdgeRow> edge_rows(const std::vector<TemporalGraph>& days, const std::vector<double>& alpha) {
  std::vector<metrics::EdgeRow> out;
  const auto& g = days.front();
  for (std::size_t e = 0; e < g.edges().size(); ++e) {
    const auto& edge = g.edges()[e];
    if (edge.self_loop()) continue;
    bool pruned = false;
    for (const auto& d : days) pruned = pruned || !d.active()[e];
    out.push_back({g.node_ids()[edge.src], g.node_ids()[edge.dst], e < alpha.size() ? alpha[e] : NAN, pruned});
  }
  return out;
}

std::vector<metrics::EdgeRow> Trainer::edge_summary() const {
  return edge_rows(days_, checkpoint().edge_alpha);
}

Forecaster Forecaster::from_checkpoint(const Checkpoint& ckpt) {
  Forecaster f;
  f.model = model::InflowModel(ckpt.model, 0);
  model::assign_parameters(f.model.parameters(), ckpt.parameters);
  if (ckpt.days.empty()) throw DataError("checkpoint has no graph; it cannot be used for forecasting");
  f.days = ckpt.days;
  f.metas = ckpt.metas;
  f.stats = ckpt.stats;
  f.spec = ckpt.spec;
  return f;
}

std::vector<double> predict(const Forecaster& f, const Tensor& history) {
  if (f.stats.empty()) throw DataError("predict: scaling statistics are missing");
  const auto pred = f.model.forward(history, f.days, {}).predictions;
  const auto b = pred.dim(0), n = pred.dim(1), h = pred.dim(2);
  if (f.stats.ids.size() != n) throw DataError("predict: scaling statistics cover a different reservoir set");
  std::vector<double> out(pred.numel());
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < h; ++k) {
        const auto idx = (i * n + r) * h + k;
        out[idx] = f.stats.unscale(r, data::kInflow, pred.at(idx));
      }
  return out;
}

Tensor scaled_history(const Forecaster& f, const data::RecordPanel& panel, const std::vector<std::size_t>& starts) {
  if (f.stats.empty()) throw DataError("scaling statistics are missing");
  const auto T = f.spec.history, N = f.stats.ids.size(), F = data::kFeatureCount;
  std::vector<std::size_t> row(N);
  for (std::size_t r = 0; r < N; ++r) {
    const auto it = std::find(panel.ids.begin(), panel.ids.end(), f.stats.ids[r]);
    if (it == panel.ids.end()) throw DataError("data lacks reservoir '" + f.stats.ids[r] + "' required by the model");
    row[r] = static_cast<std::size_t>(it - panel.ids.begin());
  }
  std::vector<double> v;
  v.reserve(starts.size() * T * N * F);
  for (auto s : starts) {
    if (s + T > panel.day_count()) throw DataError("window exceeds the data range");
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t r = 0; r < N; ++r)
        for (std::size_t c = 0; c < F; ++c) v.push_back(f.stats.scale(r, c, panel.at(row[r], s + t, c)));
  }
  return Tensor({starts.size(), T, N, F}, std::move(v));
}

metrics::PooledSeries pooled_forecasts(const model::InflowModel& m, const std::vector<TemporalGraph>& days,
                                       const data::WindowedDataset& ds, data::Split split) {
  const auto& windows = ds.windows(split);
  const auto N = ds.reservoir_count(), H = ds.spec.horizon, T = ds.spec.history;
  metrics::PooledSeries out(ds.panel.ids, H);
  const std::size_t chunk = 16;
  for (std::size_t b = 0; b < windows.size(); b += chunk) {
    std::vector<std::size_t> starts(windows.begin() + static_cast<std::ptrdiff_t>(b),
                                    windows.begin() + static_cast<std::ptrdiff_t>(std::min(windows.size(), b + chunk)));
    const auto batch = data::make_batch(ds, starts);
    const auto pred = m.forward(batch.history, days, {}).predictions;
    for (std::size_t i = 0; i < starts.size(); ++i)
      for (std::size_t r = 0; r < N; ++r)
        for (std::size_t k = 0; k < H; ++k) {
          const double p = ds.stats.unscale(r, data::kInflow, pred.at((i * N + r) * H + k));
          out.add(r, k, p, ds.panel.at(r, starts[i] + T + k, data::kInflow));
        }
  }
  return out;
}

const char* arm_name(Arm a) {
  switch (a) {
    case Arm::full: return "full";
    case Arm::no_graph: return "no_graph";
    case Arm::static_graph: return "static_graph";
    case Arm::no_pretrain: return "no_pretrain";
  }
  return "?";
}

Arm parse_arm(const std::string& s) {
  for (auto a : {Arm::full, Arm::no_graph, Arm::static_graph, Arm::no_pretrain}) {
    if (s == arm_name(a)) return a;
  }
  throw ConfigError("unknown ablation arm '" + s + "' (full, no_graph, static_graph, no_pretrain)");
}

std::string split_hash(const data::WindowedDataset& ds) {
  std::uint64_t h = fnv1a("");
  for (auto s : {data::Split::train, data::Split::validation, data::Split::test}) {
    h = fnv1a(data::split_name(s), h);
    for (auto w : ds.windows(s)) h = fnv1a(std::to_string(w) + ",", h);
  }
  return hex64(h);
}

std::vector<AblationRow> run_ablation_suite(const data::WindowedDataset& ds,
                                            const std::vector<data::ReservoirSeries>& full_records,
                                            const std::vector<geo::ReservoirMeta>& metas,
                                            const AblationSettings& settings, std::ostream* log) {
  std::vector<AblationRow> rows;
  const auto shash = split_hash(ds);
  for (auto seed : settings.seeds) {
    const bool any_pretrained =
        std::any_of(settings.arms.begin(), settings.arms.end(), [](Arm a) { return a != Arm::no_pretrain; });
    std::vector<std::pair<std::string, Tensor>> pretrained;
    if (any_pretrained) {
      model::InflowModel donor(settings.model, seed);
      pretrain_model(donor, ds, full_records, settings.pretrain, seed);
      for (const auto& p : donor.parameters()) pretrained.emplace_back(p.name, p.tensor.detach());
    }
    for (auto arm : settings.arms) {
      model::InflowModel m(settings.model, seed);
      if (arm != Arm::no_pretrain) model::assign_parameters(m.parameters(), pretrained);
      ParameterList core;
      for (const auto& p : m.parameters()) {
        if (p.name.rfind("encoder", 0) != 0 && p.name != "head.psi") core.push_back(p);
      }
      auto tc = settings.train;
      tc.seed = seed;
      tc.no_graph = arm == Arm::no_graph;
      tc.static_graph = arm == Arm::static_graph;
      tc.no_pretrain = arm == Arm::no_pretrain;
      AblationRow row;
      row.arm = arm;
      row.seed = seed;
      row.split_hash = shash;
      row.init_hash = hex64(model::parameter_hash(core));
      Trainer trainer(ds, metas, std::move(m), tc);
      trainer.fit();
      const auto report =
          metrics::build_report(pooled_forecasts(trainer.model(), trainer.days(), ds, data::Split::test), seed, "");
      row.overall_nse = report.overall_nse;
      row.nse_per_day = report.nse_per_day;
      row.final_active_edges = mean_active_edges(trainer.days());
      if (log) {
        *log << "ablate seed=" << seed << " arm=" << arm_name(arm) << " overall_nse=" << csv::format_double(row.overall_nse)
             << " day" << row.nse_per_day.size() << "_nse=" << csv::format_double(row.nse_per_day.back())
             << " active_edges=" << csv::format_double(row.final_active_edges) << '\n';
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "arm,seed,overall_nse";
  const auto h = rows.empty() ? 0 : rows.front().nse_per_day.size();
  for (std::size_t k = 0; k < h; ++k) out << ",day" << k + 1 << "_nse";
  out << ",split_hash,init_hash,active_edges\n";
  for (const auto& r : rows) {
    out << arm_name(r.arm) << ',' << r.seed << ',' << csv::format_double(r.overall_nse);
    for (double v : r.nse_per_day) out << ',' << csv::format_double(v);
    out << ',' << r.split_hash << ',' << r.init_hash << ',' << csv::format_double(r.final_active_edges) << '\n';
  }
}

}  // namespace resflow::train
