#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "flowplan/corpus.hpp"
#include "flowplan/errors.hpp"
#include "flowplan/globalplan.hpp"
#include "flowplan/localplan.hpp"
#include "flowplan/model.hpp"

namespace flowplan {

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 8;
  std::size_t epochs = 50;
  std::size_t max_utterance_len = 64;
  double kl_free_bits = 0.1;         // beta
  bool free_bits_per_dimension = false;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double clip_norm = 0.0;  // 0 disables clipping
  std::uint64_t seed = 1;
  std::size_t d_z = 32;
  std::size_t vocab_max = 8000;
  BackboneConfig backbone;

  void validate() const;
  ModelConfig model_config() const;
};

// Structured config file: a JSON object whose keys mirror TrainConfig, with
// the backbone fields nested under "backbone". Unknown keys are rejected.
TrainConfig train_config_from_json(std::string_view text, TrainConfig base = {});
std::string train_config_to_json(const TrainConfig& config);

// One (node, sub-dialogue) pair, pre-tokenized.
struct TrainingItem {
  std::string dialogue_id;
  std::size_t node_index = 0;
  std::vector<TokenId> node;  // x_i
  std::vector<TokenId> turn;  // y_i concatenated
  std::vector<DialogueAct> acts;
  std::vector<std::vector<TokenId>> utterances;
};

std::vector<TrainingItem> build_items(const Model& model, const Dialogue& dialogue,
                                      const Flowchart& chart);
std::vector<TrainingItem> build_items(const Model& model, const Corpus& corpus,
                                      const ChartMap& charts);

// Standard-normal draws for one item: one global vector, one per utterance.
struct ItemNoise {
  std::vector<double> global;
  std::vector<std::vector<double>> local;
};
ItemNoise draw_noise(const TrainingItem& item, std::size_t d_z, std::mt19937_64& rng);

double apply_free_bits(double kl, double beta);
// Thresholds the summed KL, or each dimension when per_dimension is set.
ag::Tensor apply_free_bits(const ag::Tensor& kl_terms, double beta, bool per_dimension);

struct LossOptions {
  double free_bits = 0.0;
  bool per_dimension = false;
};

// Act encodings are shared by every item of a forward pass.
class ActEncodingCache {
 public:
  ActEncodingCache(const Model& model, const nn::Context& ctx) : model_(model), ctx_(ctx) {}
  const PooledVec& get(DialogueAct act);

 private:
  const Model& model_;
  nn::Context ctx_;
  std::array<std::optional<PooledVec>, kNumActs> cache_;
};

struct ItemLoss {
  ag::Tensor total;  // ((kl_global' + act_nll) + kl_local') + token_nll
  ag::Tensor kl_global_thresholded;
  ag::Tensor kl_local_thresholded;
  double kl_global = 0.0;  // raw
  double act_nll = 0.0;
  double kl_local = 0.0;  // raw, summed over utterances
  double token_nll = 0.0;
  double kl_global_t = 0.0;
  double kl_local_t = 0.0;
};

ItemLoss item_loss(const Model& model, const TrainingItem& item, const ItemNoise& noise,
                   ActEncodingCache& acts, const LossOptions& options,
                   const nn::Context& ctx = nn::Context::eval());

struct LossReport {
  std::size_t epoch = 0;
  std::size_t items = 0;
  // Per-item means over the epoch.
  double total = 0.0;
  double kl_global = 0.0;
  double kl_global_thresholded = 0.0;
  double act_nll = 0.0;
  double kl_local = 0.0;
  double kl_local_thresholded = 0.0;
  double token_nll = 0.0;

  std::string to_json_line() const;
};

struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

class AdamW {
 public:
  AdamW(const TrainConfig& config, const nn::ParamStore& params);
  AdamW(const TrainConfig& config, AdamState state);

  void step(nn::ParamStore& params);
  const AdamState& state() const noexcept { return state_; }

 private:
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  AdamState state_;
};

// Scales every gradient so the global norm is at most max_norm; returns the
// norm before clipping.
double clip_grad_norm(nn::ParamStore& params, double max_norm);

class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

struct TrainState {
  TrainConfig config;
  std::unique_ptr<Model> model;
  AdamState optimizer;
  std::size_t epoch = 0;
  std::string rng_state;
  std::vector<LossReport> reports;
};

using ReportCallback = std::function<void(const LossReport&)>;

Vocabulary build_vocabulary(const Corpus& corpus, const ChartMap& charts, std::size_t max_size);

// Mini-batch AdamW on the summed thresholded ELBOs. Deterministic given seed.
TrainState train(const Corpus& corpus, const ChartMap& charts, const TrainConfig& config,
                 const ReportCallback& on_epoch = {});

// Single-sample ELBO (log-likelihood scale, no free bits) of one dialogue.
double elbo_sample(const Model& model, const std::vector<TrainingItem>& items,
                   std::mt19937_64& rng);

struct LikelihoodEstimate {
  double log_likelihood = 0.0;
  // Delta-method Monte Carlo standard error of log_likelihood.
  double standard_error = 0.0;
  std::vector<double> log_weights;
};

// K-sample importance-weighted estimate of log p(y, a | x) with the
// posteriors as proposals.
LikelihoodEstimate estimate_log_likelihood(const Model& model,
                                           const std::vector<TrainingItem>& items,
                                           std::size_t samples, std::mt19937_64& rng);

double log_mean_exp(const std::vector<double>& values);

}  // namespace flowplan
