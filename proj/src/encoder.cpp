#include "resflow/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "resflow/errors.hpp"
#include "resflow/ops.hpp"

namespace resflow::encoder {

using ad::Tensor;

FeatureEncoder::FeatureEncoder(std::size_t features, std::size_t width, std::size_t depth, Rng& rng) {
  if (depth < 2) throw ConfigError("feature encoder needs at least 2 layers");
  for (std::size_t l = 0; l < depth; ++l) layers.emplace_back(l == 0 ? features : width, width, rng);
}

Tensor FeatureEncoder::operator()(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    h = layers[l](h);
    if (l + 1 < layers.size()) h = ad::relu(h);
  }
  return h;
}

void FeatureEncoder::collect(const std::string& prefix, ParameterList& out) const {
  for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(prefix + ".layer" + std::to_string(l), out);
}

void check_features(const Tensor& x) {
  const auto v = x.values();
  const auto f = x.dim(-1);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::isfinite(v[i])) continue;
    const auto row = i / f;
    if (x.rank() == 4) {
      const auto n = x.dim(2), t = x.dim(1);
      throw DataError("non-finite input feature " + std::string(data::feature_name(i % f)) + " at reservoir " +
                      std::to_string(row % n) + ", day " + std::to_string((row / n) % t) + " of window " +
                      std::to_string(row / (n * t)));
    }
    throw DataError("non-finite input feature " + std::string(data::feature_name(i % f)) + " at reservoir " +
                    std::to_string(row));
  }
}

Tensor encode(const FeatureEncoder& enc, const Tensor& x) {
  check_features(x);
  return enc(x);
}

Tensor augment(const Tensor& x, const std::vector<std::string>& channels, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("augment: sigma must be >= 0");
  std::vector<std::size_t> idx;
  for (const auto& c : channels) {
    if (c == "temperature" || c == "temp_c") {
      idx.push_back(data::kTemp);
    } else if (c == "precipitation" || c == "precip_mm") {
      idx.push_back(data::kPrecip);
    } else {
      throw std::invalid_argument("augment: unknown channel '" + c + "'");
    }
  }
  if (sigma == 0.0 || idx.empty()) return x;
  std::vector<double> v(x.values().begin(), x.values().end());
  const auto f = x.dim(-1);
  for (std::size_t row = 0; row < v.size() / f; ++row) {
    for (auto c : idx) v[row * f + c] += rng.normal(0.0, sigma);
  }
  return Tensor(x.shape(), std::move(v));
}

Tensor infonce_batch(const Tensor& anchors, const Tensor& positives, const Tensor& bank,
                     const std::vector<std::size_t>& owner, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("infonce: temperature must be > 0");
  if (anchors.rank() != 2 || positives.shape() != anchors.shape() || bank.rank() != 2 ||
      bank.dim(1) != anchors.dim(1) || owner.size() != anchors.dim(0)) {
    throw ad::ShapeError("infonce: anchors " + ad::to_string(anchors.shape()) + ", positives " +
                         ad::to_string(positives.shape()) + ", bank " + ad::to_string(bank.shape()));
  }
  const auto s = anchors.dim(0), m = bank.dim(0);
  for (std::size_t r = 0; r < s; ++r) {
    if (m - (owner[r] < m ? 1 : 0) == 0) throw std::invalid_argument("infonce: no negatives for row " + std::to_string(r));
  }
  const auto a = ad::l2_normalize(anchors);
  const auto pos = ad::sum(ad::mul(a, ad::l2_normalize(positives)), -1, true);
  const auto neg = ad::matmul(a, ad::transpose(ad::l2_normalize(bank)));
  auto logits = ad::scale(ad::concat({pos, neg}, 1), 1.0 / temperature);
  std::vector<double> exclude(s * (m + 1), 0.0);
  bool any = false;
  for (std::size_t r = 0; r < s; ++r) {
    if (owner[r] < m) {
      exclude[r * (m + 1) + 1 + owner[r]] = -1e30;
      any = true;
    }
  }
  if (any) logits = ad::add(logits, Tensor({s, m + 1}, std::move(exclude)));
  return ad::scale(ad::mean_all(ad::slice(ad::log_softmax(logits), 1, 0, 1)), -1.0);
}

Tensor infonce_loss(const Tensor& anchor, const Tensor& positive, const Tensor& negatives, double temperature) {
  if (anchor.rank() != 1 || negatives.rank() != 2 || negatives.dim(0) == 0) {
    throw ad::ShapeError("infonce: anchor " + ad::to_string(anchor.shape()) + ", negatives " +
                         ad::to_string(negatives.shape()));
  }
  const auto d = anchor.dim(0);
  return infonce_batch(ad::reshape(anchor, {1, d}), ad::reshape(positive, {1, d}), negatives, {negatives.dim(0)},
                       temperature);
}

Tensor supervised_head_loss(const Tensor& hbar, const Tensor& y, const Tensor& w_psi) {
  const auto h2 = hbar.rank() == 1 ? ad::reshape(hbar, {1, hbar.dim(0)}) : hbar;
  const auto y2 = y.rank() == 1 ? ad::reshape(y, {1, y.dim(0)}) : y;
  if (h2.rank() != 2 || w_psi.rank() != 2 || h2.dim(1) != w_psi.dim(0) || y2.shape() != ad::Shape{h2.dim(0), w_psi.dim(1)}) {
    throw ad::ShapeError("supervised_head_loss: hbar " + ad::to_string(hbar.shape()) + ", y " + ad::to_string(y.shape()) +
                         ", w_psi " + ad::to_string(w_psi.shape()));
  }
  const auto resid = ad::sub(ad::matmul(h2, w_psi), y2);
  return ad::scale(ad::sum_all(ad::square(resid)), 1.0 / static_cast<double>(h2.dim(0)));
}

PrototypeBank::PrototypeBank(std::size_t count, std::size_t dim, double momentum)
    : count_(count), dim_(dim), momentum_(momentum), c_(count * dim, 0.0) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("prototype momentum must be in [0, 1]");
}

void PrototypeBank::initialize(const std::vector<double>& rows) {
  if (rows.size() != c_.size()) throw ad::ShapeError("prototype bank: wrong initializer size");
  c_ = rows;
  initialized_ = true;
}

void PrototypeBank::update(std::size_t i, const std::vector<double>& batch_mean) {
  if (batch_mean.size() != dim_ || i >= count_) throw ad::ShapeError("prototype bank: bad update");
  for (std::size_t k = 0; k < dim_; ++k) {
    c_[i * dim_ + k] = ad::quantize(momentum_ * c_[i * dim_ + k] + (1.0 - momentum_) * batch_mean[k]);
  }
}

Tensor PrototypeBank::tensor() const { return Tensor({count_, dim_}, c_); }

void validate(const PretrainConfig& cfg) {
  if (cfg.epochs < 0) throw ConfigError("pretrain.epochs must be >= 0");
  if (cfg.per_reservoir_batch == 0) throw ConfigError("pretrain.per_reservoir_batch must be >= 1");
  if (!(cfg.temperature > 0.0)) throw ConfigError("pretrain.temperature must be > 0");
  if (!(cfg.w_contrastive >= 0.0) || !(cfg.w_supervised >= 0.0) ||
      (cfg.w_contrastive == 0.0 && cfg.w_supervised == 0.0)) {
    throw ConfigError("pretrain loss weights must be >= 0 and not both zero");
  }
  if (!(cfg.sigma_aug >= 0.0)) throw ConfigError("pretrain.sigma_aug must be >= 0");
  if (!(cfg.lr > 0.0)) throw ConfigError("pretrain.lr must be > 0");
  if (!(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0)) throw ConfigError("pretrain.lr_decay must be in (0, 1]");
}

std::size_t PretrainSet::total() const {
  std::size_t n = 0;
  for (const auto& s : samples) n += s.size();
  return n;
}

PretrainSet build_pretrain_set(const std::vector<data::ReservoirSeries>& records, const data::ScalingStats& stats,
                               data::Date cutoff, const data::WindowSpec& spec) {
  PretrainSet set;
  set.history = spec.history;
  set.horizon = spec.horizon;
  const auto span = spec.history + spec.horizon;
  for (const auto& rec : records) {
    const auto it = std::find(stats.ids.begin(), stats.ids.end(), rec.id);
    if (it == stats.ids.end()) throw DataError("pretraining: no scaling statistics for '" + rec.id + "'");
    const auto r = static_cast<std::size_t>(it - stats.ids.begin());
    set.ids.push_back(rec.id);
    auto& out = set.samples.emplace_back();
    for (std::size_t s = 0; s + span <= rec.rows.size(); s += spec.stride) {
      if (rec.start + std::chrono::days(static_cast<int>(s + span - 1)) >= cutoff) break;
      PretrainSample sample;
      for (std::size_t t = 0; t < spec.history; ++t) {
        for (std::size_t f = 0; f < data::kFeatureCount; ++f) sample.history.push_back(stats.scale(r, f, rec.rows[s + t][f]));
      }
      for (std::size_t k = 0; k < spec.horizon; ++k) {
        sample.targets.push_back(stats.scale(r, data::kInflow, rec.rows[s + spec.history + k][data::kInflow]));
      }
      out.push_back(std::move(sample));
    }
  }
  return set;
}

Tensor window_embedding(const FeatureEncoder& enc, const Tensor& windows) { return ad::mean(enc(windows), 1); }

PretrainLoss pretrain_loss(const FeatureEncoder& enc, const Tensor& w_psi, const Tensor& view1, const Tensor& view2,
                           const Tensor& targets, const Tensor& bank, const std::vector<std::size_t>& owner,
                           const PretrainConfig& cfg) {
  const auto e1 = window_embedding(enc, view1);
  PretrainLoss out;
  out.supervised = supervised_head_loss(e1, targets, w_psi);
  if (cfg.w_contrastive > 0.0) {
    out.contrastive = infonce_batch(e1, window_embedding(enc, view2), bank, owner, cfg.temperature);
    out.total = ad::add(ad::scale(out.contrastive, cfg.w_contrastive), ad::scale(out.supervised, cfg.w_supervised));
  } else {
    out.contrastive = Tensor::scalar(0.0);
    out.total = ad::scale(out.supervised, cfg.w_supervised);
  }
  return out;
}

namespace {

struct Draw {
  Tensor history, targets;
  Tensor partners;  // row s holds another window of row s's reservoir
  std::vector<std::size_t> owner;
};

Draw assemble(const PretrainSet& set, const std::vector<std::vector<std::size_t>>& order, std::size_t step,
              std::size_t b) {
  Draw d;
  std::vector<double> h, y, partner;
  for (std::size_t r = 0; r < set.samples.size(); ++r) {
    const auto& pool = set.samples[r];
    if (pool.empty()) continue;
    auto pick = [&](std::size_t q) -> const PretrainSample& { return pool[order[r][(step * b + q) % pool.size()]]; };
    for (std::size_t q = 0; q < b; ++q) {
      const auto& s = pick(q);
      const auto& mate = pick((q + 1) % b);
      h.insert(h.end(), s.history.begin(), s.history.end());
      partner.insert(partner.end(), mate.history.begin(), mate.history.end());
      y.insert(y.end(), s.targets.begin(), s.targets.end());
      d.owner.push_back(r);
    }
  }
  const auto n = d.owner.size();
  d.history = Tensor({n, set.history, data::kFeatureCount}, std::move(h));
  d.partners = Tensor({n, set.history, data::kFeatureCount}, std::move(partner));
  d.targets = Tensor({n, set.horizon}, std::move(y));
  return d;
}

// Per-reservoir means of the rows of `emb` [S, d].
std::vector<std::vector<double>> owner_means(const Tensor& emb, const std::vector<std::size_t>& owner, std::size_t n) {
  const auto d = emb.dim(1);
  std::vector<std::vector<double>> mean(n, std::vector<double>(d, 0.0));
  std::vector<std::size_t> count(n, 0);
  const auto v = emb.values();
  for (std::size_t s = 0; s < owner.size(); ++s) {
    ++count[owner[s]];
    for (std::size_t k = 0; k < d; ++k) mean[owner[s]][k] += v[s * d + k];
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (count[i] == 0) continue;
    for (auto& x : mean[i]) x /= static_cast<double>(count[i]);
  }
  return mean;
}

const std::vector<std::string> kAugmented{"temperature", "precipitation"};

}  // namespace

PretrainResult pretrain(const PretrainSet& set, const PretrainConfig& cfg, FeatureEncoder& enc, Tensor& w_psi,
                        std::uint64_t seed) {
  validate(cfg);
  if (set.total() == 0) throw DataError("pretraining: empty dataset");
  const auto n = set.samples.size();
  std::size_t populated = 0;
  for (const auto& s : set.samples) populated += !s.empty();
  if (cfg.w_contrastive > 0.0 && populated < 2) {
    throw DataError("pretraining: contrastive loss needs windows from at least 2 reservoirs");
  }
  PretrainResult result;
  if (cfg.epochs == 0) return result;

  auto aug_rng = Rng::stream(seed, "augmentation");
  auto shuffle_rng = Rng::stream(seed, "shuffle");
  ParameterList params;
  enc.collect("encoder", params);
  params.push_back({"head.psi", w_psi});
  Adam opt(params, {cfg.lr});
  PrototypeBank bank(n, enc.width(), cfg.momentum);

  std::vector<std::vector<std::size_t>> identity(n);
  std::size_t longest = 0;
  for (std::size_t r = 0; r < n; ++r) {
    identity[r].resize(set.samples[r].size());
    std::iota(identity[r].begin(), identity[r].end(), 0);
    longest = std::max(longest, set.samples[r].size());
  }
  auto init_bank = [&](const Draw& d) {
    const auto means = owner_means(window_embedding(enc, d.history), d.owner, n);
    std::vector<double> rows;
    for (const auto& m : means) rows.insert(rows.end(), m.begin(), m.end());
    bank.initialize(rows);
  };

  // Fixed probe batch with its own augmentation stream, scored after each epoch.
  const auto probe = assemble(set, identity, 0, cfg.per_reservoir_batch);
  auto score_probe = [&] {
    auto probe_rng = Rng::stream(seed, "probe");
    const auto v1 = augment(probe.history, kAugmented, cfg.sigma_aug, probe_rng);
    const auto v2 = augment(probe.partners, kAugmented, cfg.sigma_aug, probe_rng);
    const auto loss = pretrain_loss(enc, w_psi, v1, v2, probe.targets, bank.tensor(), probe.owner, cfg);
    result.probe_loss.push_back(loss.total.item());
    result.contrastive.push_back(loss.contrastive.item());
    result.supervised.push_back(loss.supervised.item());
  };
  init_bank(probe);
  score_probe();

  std::size_t steps = (longest + cfg.per_reservoir_batch - 1) / cfg.per_reservoir_batch;
  if (cfg.max_steps_per_epoch > 0) steps = std::min(steps, cfg.max_steps_per_epoch);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(scheduled_lr(cfg.lr, cfg.lr_decay, epoch));
    auto order = identity;
    for (auto& o : order) std::shuffle(o.begin(), o.end(), shuffle_rng.engine());
    for (std::size_t step = 0; step < steps; ++step) {
      const auto d = assemble(set, order, step, cfg.per_reservoir_batch);
      const auto v1 = augment(d.history, kAugmented, cfg.sigma_aug, aug_rng);
      const auto v2 = augment(d.partners, kAugmented, cfg.sigma_aug, aug_rng);
      ad::Tape tape;
      PretrainLoss loss;
      {
        ad::TapeScope scope(tape);
        loss = pretrain_loss(enc, w_psi, v1, v2, d.targets, bank.tensor(), d.owner, cfg);
      }
      opt.zero_grad();
      tape.backward(loss.total);
      opt.step();
      ++result.steps;
      const auto means = owner_means(window_embedding(enc, v1), d.owner, n);
      for (std::size_t r = 0; r < n; ++r) {
        if (!set.samples[r].empty()) bank.update(r, means[r]);
      }
    }
    score_probe();
  }
  result.prototypes = bank.values();
  return result;
}

}  // namespace resflow::encoder
