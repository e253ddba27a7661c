#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resflow/data.hpp"
#include "resflow/nn.hpp"

namespace resflow::encoder {

/// Shared MLP F -> d -> ... -> d with ReLU between layers, applied
/// row-wise over the last axis.
struct FeatureEncoder {
  std::vector<nn::Linear> layers;

  FeatureEncoder() = default;
  FeatureEncoder(std::size_t features, std::size_t width, std::size_t depth, Rng& rng);

  std::size_t width() const { return layers.back().weight.dim(-1); }
  ad::Tensor operator()(const ad::Tensor& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

/// Rejects non-finite inputs, naming the reservoir and day. `x` is [N, F]
/// for one day or [B, T, N, F] for a batch of windows.
void check_features(const ad::Tensor& x);

/// Checked encoder application.
ad::Tensor encode(const FeatureEncoder& enc, const ad::Tensor& x);

/// Adds N(0, sigma^2) noise to the named channels ("temperature",
/// "precipitation") of x [..., F]. Inflow is never touched.
ad::Tensor augment(const ad::Tensor& x, const std::vector<std::string>& channels, double sigma, Rng& rng);

/// InfoNCE with cosine similarity for one anchor: positive [d], negatives [M, d].
ad::Tensor infonce_loss(const ad::Tensor& anchor, const ad::Tensor& positive, const ad::Tensor& negatives,
                        double temperature);

/// Batched InfoNCE: anchor row s is contrasted with positive row s and with
/// every bank row except `owner[s]`. Mean over rows. The bank is constant.
ad::Tensor infonce_batch(const ad::Tensor& anchors, const ad::Tensor& positives, const ad::Tensor& bank,
                         const std::vector<std::size_t>& owner, double temperature);

/// Mean over samples of sum_k (hbar W_psi - y)_k^2. hbar [S, d] or [d];
/// y [S, H] or [H]; w_psi [d, H].
ad::Tensor supervised_head_loss(const ad::Tensor& hbar, const ad::Tensor& y, const ad::Tensor& w_psi);

/// Momentum-updated per-reservoir centroids of window embeddings.
class PrototypeBank {
 public:
  PrototypeBank(std::size_t count, std::size_t dim, double momentum);

  bool initialized() const { return initialized_; }
  void initialize(const std::vector<double>& rows);  // [count, dim]
  /// c_i <- mu c_i + (1 - mu) batch_mean
  void update(std::size_t i, const std::vector<double>& batch_mean);
  ad::Tensor tensor() const;
  const std::vector<double>& values() const { return c_; }
  std::size_t count() const { return count_; }

 private:
  std::size_t count_, dim_;
  double momentum_;
  bool initialized_ = false;
  std::vector<double> c_;
};

struct PretrainConfig {
  int epochs = 5;
  std::size_t per_reservoir_batch = 4;
  double temperature = 0.1;
  double sigma_aug = 0.05;
  double w_contrastive = 4.0;
  double w_supervised = 1.0;
  double momentum = 0.99;
  double lr = 1e-3;
  double lr_decay = 0.5;  // per epoch
  std::size_t max_steps_per_epoch = 0;  // 0 = every window once per epoch
};

void validate(const PretrainConfig& cfg);

struct PretrainSample {
  std::vector<double> history;  // [T, F] scaled
  std::vector<double> targets;  // [H] scaled inflow
};

/// Windows of every reservoir's full (pre-alignment) record whose targets
/// end before `cutoff`.
struct PretrainSet {
  std::vector<std::string> ids;
  std::size_t history = 0, horizon = 0;
  std::vector<std::vector<PretrainSample>> samples;

  std::size_t total() const;
};

PretrainSet build_pretrain_set(const std::vector<data::ReservoirSeries>& records, const data::ScalingStats& stats,
                               data::Date cutoff, const data::WindowSpec& spec);

struct PretrainLoss {
  ad::Tensor total, contrastive, supervised;
};

/// w_c L_c + w_s L_s. Row s of `view1` is an augmented window of reservoir
/// owner[s]; row s of `view2` an augmented, different window of the same
/// reservoir, forming the positive pair.
PretrainLoss pretrain_loss(const FeatureEncoder& enc, const ad::Tensor& w_psi, const ad::Tensor& view1,
                           const ad::Tensor& view2, const ad::Tensor& targets, const ad::Tensor& bank,
                           const std::vector<std::size_t>& owner, const PretrainConfig& cfg);

struct PretrainResult {
  std::vector<double> probe_loss;  // index e: after e epochs
  std::vector<double> contrastive, supervised;
  std::vector<double> prototypes;
  std::size_t steps = 0;
};

/// Trains the encoder and the auxiliary head in place.
PretrainResult pretrain(const PretrainSet& set, const PretrainConfig& cfg, FeatureEncoder& enc, ad::Tensor& w_psi,
                        std::uint64_t seed);

/// Mean over T of the encoded windows: [S, T, F] -> [S, d].
ad::Tensor window_embedding(const FeatureEncoder& enc, const ad::Tensor& windows);

}  // namespace resflow::encoder
