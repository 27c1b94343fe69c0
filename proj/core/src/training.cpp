#include "flowplan/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "flowplan/log.hpp"

namespace flowplan {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("config: learning_rate must be positive");
  if (batch_size == 0) throw ValidationError("config: batch_size must be positive");
  if (epochs == 0) throw ValidationError("config: epochs must be positive");
  if (max_utterance_len < 2) throw ValidationError("config: max_utterance_len must be >= 2");
  if (!(kl_free_bits >= 0.0)) throw ValidationError("config: kl_free_bits must be >= 0");
  if (weight_decay < 0.0) throw ValidationError("config: weight_decay must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ValidationError("config: Adam betas must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw ValidationError("config: adam_epsilon must be positive");
  if (clip_norm < 0.0) throw ValidationError("config: clip_norm must be >= 0");
  if (d_z == 0) throw ValidationError("config: d_z must be positive");
  if (vocab_max < Vocabulary::kReserved) throw ValidationError("config: vocab_max too small");
  // vocab_size is only known once the vocabulary is built
  BackboneConfig shape = model_config().backbone;
  shape.vocab_size = Vocabulary::kReserved;
  shape.validate();
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig mc;
  mc.backbone = backbone;
  mc.backbone.max_len = max_utterance_len;
  mc.d_z = d_z;
  mc.seed = seed;
  return mc;
}

namespace {

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
  if (auto it = obj.find(key); it != obj.end()) {
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ValidationError(std::string("config: field '") + key + "' has the wrong type");
    }
  }
}

void reject_unknown(const json& obj, std::initializer_list<const char*> known, const char* where) {
  for (const auto& [k, v] : obj.items()) {
    bool ok = std::any_of(known.begin(), known.end(), [&](const char* n) { return k == n; });
    if (!ok) throw ValidationError(std::string("config: unknown field '") + k + "' in " + where);
  }
}

}  // namespace

TrainConfig train_config_from_json(std::string_view text, TrainConfig base) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("config must be a JSON object");
  reject_unknown(doc,
                 {"learning_rate", "batch_size", "epochs", "max_utterance_len", "kl_free_bits",
                  "free_bits_per_dimension", "weight_decay", "adam_beta1", "adam_beta2",
                  "adam_epsilon", "clip_norm", "seed", "d_z", "vocab_max", "backbone"},
                 "config");
  TrainConfig c = std::move(base);
  read_field(doc, "learning_rate", c.learning_rate);
  read_field(doc, "batch_size", c.batch_size);
  read_field(doc, "epochs", c.epochs);
  read_field(doc, "max_utterance_len", c.max_utterance_len);
  read_field(doc, "kl_free_bits", c.kl_free_bits);
  read_field(doc, "free_bits_per_dimension", c.free_bits_per_dimension);
  read_field(doc, "weight_decay", c.weight_decay);
  read_field(doc, "adam_beta1", c.adam_beta1);
  read_field(doc, "adam_beta2", c.adam_beta2);
  read_field(doc, "adam_epsilon", c.adam_epsilon);
  read_field(doc, "clip_norm", c.clip_norm);
  read_field(doc, "seed", c.seed);
  read_field(doc, "d_z", c.d_z);
  read_field(doc, "vocab_max", c.vocab_max);
  if (auto it = doc.find("backbone"); it != doc.end()) {
    if (!it->is_object()) throw ValidationError("config: 'backbone' must be an object");
    reject_unknown(*it,
                   {"d_model", "encoder_layers", "decoder_layers", "heads", "ffn", "dropout",
                    "max_turn_len", "slot_embeddings"},
                   "backbone");
    read_field(*it, "d_model", c.backbone.d_model);
    read_field(*it, "encoder_layers", c.backbone.encoder_layers);
    read_field(*it, "decoder_layers", c.backbone.decoder_layers);
    read_field(*it, "heads", c.backbone.heads);
    read_field(*it, "ffn", c.backbone.ffn);
    read_field(*it, "dropout", c.backbone.dropout);
    read_field(*it, "max_turn_len", c.backbone.max_turn_len);
    read_field(*it, "slot_embeddings", c.backbone.slot_embeddings);
  }
  c.validate();
  return c;
}

std::string train_config_to_json(const TrainConfig& c) {
  json doc{{"learning_rate", c.learning_rate},
           {"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"max_utterance_len", c.max_utterance_len},
           {"kl_free_bits", c.kl_free_bits},
           {"free_bits_per_dimension", c.free_bits_per_dimension},
           {"weight_decay", c.weight_decay},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_epsilon", c.adam_epsilon},
           {"clip_norm", c.clip_norm},
           {"seed", c.seed},
           {"d_z", c.d_z},
           {"vocab_max", c.vocab_max},
           {"backbone",
            {{"d_model", c.backbone.d_model},
             {"encoder_layers", c.backbone.encoder_layers},
             {"decoder_layers", c.backbone.decoder_layers},
             {"heads", c.backbone.heads},
             {"ffn", c.backbone.ffn},
             {"dropout", c.backbone.dropout},
             {"max_turn_len", c.backbone.max_turn_len},
             {"slot_embeddings", c.backbone.slot_embeddings}}}};
  return doc.dump(2);
}

std::vector<TrainingItem> build_items(const Model& model, const Dialogue& dialogue,
                                      const Flowchart& chart) {
  const FlowPath path = path_for_dialogue(dialogue, chart);
  const auto& cfg = model.config().backbone;
  std::vector<TrainingItem> items;
  for (std::size_t i = 0; i < dialogue.sub_dialogues.size(); ++i) {
    const SubDialogue& sub = dialogue.sub_dialogues[i];
    TrainingItem item;
    item.dialogue_id = dialogue.id;
    item.node_index = i;
    item.node = node_tokens(model, chart.node(sub.node_id), path.steps[i].response);
    item.turn = turn_tokens(sub, model.vocab(), cfg.max_len, cfg.max_turn_len);
    for (const auto& u : sub.utterances) {
      item.acts.push_back(u.act);
      item.utterances.push_back(tokenize(u.text, model.vocab(), cfg.max_len));
    }
    items.push_back(std::move(item));
  }
  return items;
}

std::vector<TrainingItem> build_items(const Model& model, const Corpus& corpus,
                                      const ChartMap& charts) {
  std::vector<TrainingItem> items;
  for (const auto& d : corpus.dialogues) {
    auto part = build_items(model, d, chart_for(d, charts));
    items.insert(items.end(), std::make_move_iterator(part.begin()),
                 std::make_move_iterator(part.end()));
  }
  return items;
}

ItemNoise draw_noise(const TrainingItem& item, std::size_t d_z, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  ItemNoise noise;
  noise.global.resize(d_z);
  for (double& e : noise.global) e = normal(rng);
  noise.local.resize(item.utterances.size(), std::vector<double>(d_z));
  for (auto& row : noise.local)
    for (double& e : row) e = normal(rng);
  return noise;
}

double apply_free_bits(double kl, double beta) {
  if (kl < 0.0 || std::isnan(kl)) throw std::invalid_argument("apply_free_bits: negative kl");
  return std::max(kl, beta);
}

ag::Tensor apply_free_bits(const ag::Tensor& kl_terms, double beta, bool per_dimension) {
  if (per_dimension) return ag::sum(ag::maximum(kl_terms, beta));
  return ag::maximum(ag::sum(kl_terms), beta);
}

const PooledVec& ActEncodingCache::get(DialogueAct act) {
  auto& slot = cache_[static_cast<std::size_t>(act)];
  if (!slot) slot = encode_act_pooled(model_, act, ctx_);
  return *slot;
}

ItemLoss item_loss(const Model& model, const TrainingItem& item, const ItemNoise& noise,
                   ActEncodingCache& acts, const LossOptions& options, const nn::Context& ctx) {
  ItemLoss out;
  const PooledVec h_x = encode_pooled(model, item.node, ctx);
  const PooledVec h_y = encode_pooled(model, item.turn, ctx);
  GlobalElbo g = elbo_global(model, h_x, item.acts, h_y, noise.global);
  out.kl_global_thresholded = apply_free_bits(g.kl_terms, options.free_bits, options.per_dimension);
  out.kl_global = g.kl.item();
  out.kl_global_t = out.kl_global_thresholded.item();
  out.act_nll = g.act_nll.item();

  PooledVec prev = model.backbone().sentinel();
  std::vector<ag::Tensor> kl_parts, nll_parts;
  for (std::size_t j = 0; j < item.utterances.size(); ++j) {
    const PooledVec& h_a = acts.get(item.acts[j]);
    PooledVec h_yj = encode_pooled(model, item.utterances[j], ctx);
    LocalElbo l =
        elbo_local(model, h_x, h_a, item.utterances[j], h_yj, prev, noise.local[j], ctx);
    kl_parts.push_back(apply_free_bits(l.kl_terms, options.free_bits, options.per_dimension));
    nll_parts.push_back(l.token_nll);
    out.kl_local += l.kl.item();
    out.token_nll += l.token_nll.item();
    prev = std::move(h_yj);
  }
  out.kl_local_thresholded = ag::sum(ag::concat_cols(kl_parts));
  ag::Tensor token_nll = ag::sum(ag::concat_cols(nll_parts));
  out.kl_local_t = out.kl_local_thresholded.item();
  out.token_nll = token_nll.item();
  out.total = ((out.kl_global_thresholded + g.act_nll) + out.kl_local_thresholded) + token_nll;
  return out;
}

std::string LossReport::to_json_line() const {
  json doc{{"epoch", epoch},
           {"items", items},
           {"total", total},
           {"kl_global", kl_global},
           {"kl_global_thresholded", kl_global_thresholded},
           {"act_nll", act_nll},
           {"kl_local", kl_local},
           {"kl_local_thresholded", kl_local_thresholded},
           {"token_nll", token_nll}};
  return doc.dump();
}

AdamW::AdamW(const TrainConfig& config, const nn::ParamStore& params)
    : lr_(config.learning_rate),
      beta1_(config.adam_beta1),
      beta2_(config.adam_beta2),
      eps_(config.adam_epsilon),
      weight_decay_(config.weight_decay) {
  for (const auto& e : params.entries()) {
    state_.m.emplace_back(e.tensor.size(), 0.0);
    state_.v.emplace_back(e.tensor.size(), 0.0);
  }
}

AdamW::AdamW(const TrainConfig& config, AdamState state)
    : lr_(config.learning_rate),
      beta1_(config.adam_beta1),
      beta2_(config.adam_beta2),
      eps_(config.adam_epsilon),
      weight_decay_(config.weight_decay),
      state_(std::move(state)) {}

void AdamW::step(nn::ParamStore& params) {
  const auto& entries = params.entries();
  if (entries.size() != state_.m.size()) throw std::logic_error("AdamW: parameter set changed");
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(beta1_, t);
  const double c2 = 1.0 - std::pow(beta2_, t);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    ag::Tensor p = entries[i].tensor;
    auto grad = p.grad();
    auto& value = p.mutable_value();
    auto& m = state_.m[i];
    auto& v = state_.v[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = grad[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      value[k] -= lr_ * weight_decay_ * value[k];
      value[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

double clip_grad_norm(nn::ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& e : params.entries())
    for (double g : e.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& e : params.entries()) {
      auto& g = e.tensor.node()->grad;
      for (double& x : g) x *= s;
    }
  }
  return norm;
}

Vocabulary build_vocabulary(const Corpus& corpus, const ChartMap& charts, std::size_t max_size) {
  std::vector<std::string> texts;
  for (const auto& [id, chart] : charts) {
    for (const auto& n : chart.nodes()) texts.push_back(n.text);
    for (const auto& e : chart.edges()) texts.push_back(e.response);
  }
  for (const auto& d : corpus.dialogues)
    for (const auto& s : d.sub_dialogues)
      for (const auto& u : s.utterances) texts.push_back(u.text);
  return Vocabulary::build(texts, max_size);
}

namespace {

void accumulate(LossReport& r, const ItemLoss& l) {
  r.total += l.total.item();
  r.kl_global += l.kl_global;
  r.kl_global_thresholded += l.kl_global_t;
  r.act_nll += l.act_nll;
  r.kl_local += l.kl_local;
  r.kl_local_thresholded += l.kl_local_t;
  r.token_nll += l.token_nll;
  ++r.items;
}

void finalize(LossReport& r) {
  if (r.items == 0) return;
  const double n = static_cast<double>(r.items);
  r.total /= n;
  r.kl_global /= n;
  r.kl_global_thresholded /= n;
  r.act_nll /= n;
  r.kl_local /= n;
  r.kl_local_thresholded /= n;
  r.token_nll /= n;
}

}  // namespace

TrainState train(const Corpus& corpus, const ChartMap& charts, const TrainConfig& config,
                 const ReportCallback& on_epoch) {
  config.validate();
  if (corpus.empty()) throw ValidationError("train: empty corpus");
  TrainState state;
  state.config = config;
  state.model = std::make_unique<Model>(config.model_config(),
                                        build_vocabulary(corpus, charts, config.vocab_max));
  Model& model = *state.model;
  const auto items = build_items(model, corpus, charts);
  log::info("training on ", items.size(), " items from ", corpus.size(), " dialogues; ",
            model.params().scalar_count(), " parameters");

  std::mt19937_64 rng(config.seed);
  AdamW optimizer(config, model.params());
  nn::Context ctx{true, &rng, config.backbone.dropout};
  const LossOptions options{config.kl_free_bits, config.free_bits_per_dimension};

  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LossReport report;
    report.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      model.params().zero_grad();
      ActEncodingCache act_cache(model, ctx);
      std::vector<ag::Tensor> totals;
      for (std::size_t b = start; b < end; ++b) {
        const TrainingItem& item = items[order[b]];
        ItemNoise noise = draw_noise(item, config.d_z, rng);
        ItemLoss l = item_loss(model, item, noise, act_cache, options, ctx);
        if (!std::isfinite(l.total.item())) {
          throw TrainingError("non-finite loss in epoch " + std::to_string(epoch) +
                              " at dialogue '" + item.dialogue_id + "' node " +
                              std::to_string(item.node_index) + " (kl_global=" +
                              std::to_string(l.kl_global) + ", act_nll=" +
                              std::to_string(l.act_nll) + ", kl_local=" +
                              std::to_string(l.kl_local) + ", token_nll=" +
                              std::to_string(l.token_nll) + ")");
        }
        accumulate(report, l);
        totals.push_back(l.total);
      }
      ag::Tensor batch_loss =
          ag::scale(ag::sum(ag::concat_cols(totals)), 1.0 / static_cast<double>(totals.size()));
      ag::backward(batch_loss);
      if (config.clip_norm > 0.0) clip_grad_norm(model.params(), config.clip_norm);
      optimizer.step(model.params());
    }
    finalize(report);
    log::info("epoch ", epoch, " total=", report.total, " act_nll=", report.act_nll,
              " token_nll=", report.token_nll, " kl_global=", report.kl_global,
              " kl_local=", report.kl_local);
    state.reports.push_back(report);
    if (on_epoch) on_epoch(report);
  }
  state.optimizer = optimizer.state();
  state.epoch = config.epochs;
  std::ostringstream rs;
  rs << rng;
  state.rng_state = rs.str();
  return state;
}

double log_mean_exp(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("log_mean_exp: no values");
  const double mx = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double v : values) s += std::exp(v - mx);
  return mx + std::log(s / static_cast<double>(values.size()));
}

namespace {

struct UtteranceCache {
  PooledVec h_a;
  PooledVec prev;
  GaussianParams prior;
  GaussianParams posterior;
  const std::vector<TokenId>* target = nullptr;
};

struct NodeCache {
  PooledVec h_x;
  GaussianParams prior;
  GaussianParams posterior;
  const std::vector<DialogueAct>* acts = nullptr;
  std::vector<UtteranceCache> utterances;
};

std::vector<NodeCache> build_cache(const Model& model, const std::vector<TrainingItem>& items) {
  const nn::Context ctx = nn::Context::eval();
  ActEncodingCache act_cache(model, ctx);
  std::vector<NodeCache> nodes;
  for (const auto& item : items) {
    NodeCache n;
    n.h_x = encode_pooled(model, item.node, ctx);
    PooledVec h_y = encode_pooled(model, item.turn, ctx);
    n.prior = prior_global(model, n.h_x);
    n.posterior = posterior_global(model, n.h_x, h_y);
    n.acts = &item.acts;
    PooledVec prev = model.backbone().sentinel();
    for (std::size_t j = 0; j < item.utterances.size(); ++j) {
      UtteranceCache u;
      u.h_a = act_cache.get(item.acts[j]);
      PooledVec h_yj = encode_pooled(model, item.utterances[j], ctx);
      u.prior = prior_local(model, n.h_x, u.h_a);
      u.posterior = posterior_local(model, n.h_x, u.h_a, h_yj);
      u.prev = prev;
      u.target = &item.utterances[j];
      prev = h_yj;
      n.utterances.push_back(std::move(u));
    }
    nodes.push_back(std::move(n));
  }
  return nodes;
}

std::vector<double> sample_from(const GaussianParams& q, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(q.dim());
  for (std::size_t k = 0; k < z.size(); ++k)
    z[k] = q.mu.value()[k] + q.sigma.value()[k] * normal(rng);
  return z;
}

double act_log_likelihood(const Model& model, const NodeCache& n, const std::vector<double>& z) {
  std::vector<std::optional<DialogueAct>> prev{std::nullopt};
  std::vector<std::size_t> targets;
  const auto& acts = *n.acts;
  for (std::size_t j = 0; j < acts.size(); ++j) {
    if (j + 1 < acts.size()) prev.push_back(acts[j]);
    targets.push_back(static_cast<std::size_t>(acts[j]));
  }
  ag::Tensor logits = act_logits(model, prev, n.h_x, ag::Tensor::row(z));
  return -ag::nll_rows(ag::log_softmax_rows(logits), targets).item();
}

double token_log_likelihood(const Model& model, const NodeCache& n, const UtteranceCache& u,
                            const std::vector<double>& z) {
  PlanVector plan = make_plan_vector(u.h_a, ag::Tensor::row(z));
  return -utterance_nll(model, u.prev, n.h_x, plan, *u.target).item();
}

}  // namespace

double elbo_sample(const Model& model, const std::vector<TrainingItem>& items,
                   std::mt19937_64& rng) {
  ag::NoGradGuard guard;
  const auto nodes = build_cache(model, items);
  double elbo = 0.0;
  for (const auto& n : nodes) {
    auto z = sample_from(n.posterior, rng);
    elbo += act_log_likelihood(model, n, z) - kl_diag_gaussian_value(n.posterior, n.prior);
    for (const auto& u : n.utterances) {
      auto zy = sample_from(u.posterior, rng);
      elbo += token_log_likelihood(model, n, u, zy) - kl_diag_gaussian_value(u.posterior, u.prior);
    }
  }
  return elbo;
}

LikelihoodEstimate estimate_log_likelihood(const Model& model,
                                           const std::vector<TrainingItem>& items,
                                           std::size_t samples, std::mt19937_64& rng) {
  if (samples == 0) throw std::invalid_argument("estimate_log_likelihood: K must be >= 1");
  ag::NoGradGuard guard;
  const auto nodes = build_cache(model, items);
  LikelihoodEstimate out;
  out.log_weights.reserve(samples);
  for (std::size_t k = 0; k < samples; ++k) {
    double lw = 0.0;
    for (const auto& n : nodes) {
      auto z = sample_from(n.posterior, rng);
      lw += log_normal_density(z, n.prior) - log_normal_density(z, n.posterior) +
            act_log_likelihood(model, n, z);
      for (const auto& u : n.utterances) {
        auto zy = sample_from(u.posterior, rng);
        lw += log_normal_density(zy, u.prior) - log_normal_density(zy, u.posterior) +
              token_log_likelihood(model, n, u, zy);
      }
    }
    out.log_weights.push_back(lw);
  }
  out.log_likelihood = log_mean_exp(out.log_weights);
  if (samples > 1) {
    const double mx = *std::max_element(out.log_weights.begin(), out.log_weights.end());
    double mean = 0.0, sq = 0.0;
    for (double lw : out.log_weights) mean += std::exp(lw - mx);
    mean /= static_cast<double>(samples);
    for (double lw : out.log_weights) sq += std::pow(std::exp(lw - mx) - mean, 2);
    const double sd = std::sqrt(sq / static_cast<double>(samples - 1));
    out.standard_error = sd / (std::sqrt(static_cast<double>(samples)) * mean);
  }
  return out;
}

}  // namespace flowplan
